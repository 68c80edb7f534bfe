import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from entqkd.errors import IntegrityError
from entqkd.estimation import (
    Decision,
    abort_threshold,
    apply_estimate,
    estimate_qber,
    make_estimate,
    sample_seed,
    sample_size,
    select_sample,
)
from entqkd.sifting import KeyBlock, Stage


def test_sample_size_of_a_full_block():
    assert sample_size(2500) == 625
    assert sample_size(2500, 0.25) + 1875 == 2500


def test_sample_size_rounds_half_up():
    assert sample_size(10, 0.25) == 3  # 2.5 -> 3
    assert sample_size(6, 0.25) == 2  # 1.5 -> 2
    with pytest.raises(ValueError):
        sample_size(10, 1.0)


def test_estimate_from_counts():
    est = make_estimate(625, 40)
    assert est.q_est == pytest.approx(0.064)
    assert est.q_channel == pytest.approx(0.027)
    assert make_estimate(625, 10).q_channel == 0.0


def test_estimate_from_samples():
    a = np.array([0, 1, 1, 0, 1, 0, 0, 0])
    b = np.array([0, 1, 0, 0, 1, 1, 0, 0])
    assert estimate_qber(a, b).mismatches == 2
    with pytest.raises(IntegrityError):
        estimate_qber(a, b[:-1])
    with pytest.raises(IntegrityError):
        make_estimate(0, 0)


def test_abort_threshold_is_strict():
    assert abort_threshold(0.11) == Decision.PROCEED
    assert abort_threshold(0.1101) == Decision.ABORT


def test_sample_depends_on_session_and_block():
    a = select_sample(2500, 0.25, sample_seed(1, 0))
    assert len(a) == 625
    assert np.array_equal(a, select_sample(2500, 0.25, sample_seed(1, 0)))
    assert not np.array_equal(a, select_sample(2500, 0.25, sample_seed(1, 1)))
    assert not np.array_equal(a, select_sample(2500, 0.25, sample_seed(2, 0)))


def test_apply_estimate_drops_sample_and_records_leak():
    block = KeyBlock(3, np.arange(2500) % 2, 0, 2499)
    idx = select_sample(2500, 0.25, sample_seed(9, 3))
    apply_estimate(block, idx, make_estimate(625, 30))
    assert len(block.bits) == 1875
    assert block.leak.estimation_disclosed == 625
    assert block.stage == Stage.ESTIMATED
    assert block.qber_estimated == pytest.approx(0.048)


@given(st.integers(1, 2000), st.floats(0.0, 1.0))
def test_estimate_bounds(size, frac):
    mism = int(frac * size)
    est = make_estimate(size, mism)
    assert 0.0 <= est.q_channel <= est.q_est <= 1.0


def test_estimator_unbiased_on_simulated_errors():
    rng = np.random.default_rng(1)
    qs = []
    for b in range(400):
        a = rng.integers(0, 2, 2500, dtype=np.uint8)
        e = (rng.random(2500) < 0.062).astype(np.uint8)
        idx = select_sample(2500, 0.25, sample_seed(5, b))
        qs.append(estimate_qber(a[idx], (a ^ e)[idx]).q_est)
    sd = math.sqrt(0.062 * 0.938 / 625)
    assert abs(np.mean(qs) - 0.062) < 4 * sd / math.sqrt(400)
    assert abs(np.std(qs, ddof=1) - sd) < 0.15 * sd
