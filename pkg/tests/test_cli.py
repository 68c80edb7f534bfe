import subprocess
import sys

import numpy as np
import pytest

from entqkd.cli import build_parser, main
from entqkd.keystore import KeyStore
from entqkd.report import SessionReport


@pytest.fixture(scope="module")
def session(tmp_path_factory):
    d = tmp_path_factory.mktemp("sess")
    assert main(["simulate", "--duration", "40", "--seed", "6", "--session", str(d)]) == 0
    return d


def test_simulate_writes_session(session):
    names = {p.name for p in session.iterdir()}
    assert {"report.csv", "report.png", "keys_alice.bin", "keys_bob.bin", "transcript_alice.bin",
            "transcript_bob.bin", "pool_alice.bin", "pool_bob.bin"} <= names
    a = KeyStore.load(session / "keys_alice.bin")
    b = KeyStore.load(session / "keys_bob.bin")
    assert a.total == b.total > 0
    assert np.array_equal(a.take_range(0, a.total).bits, b.take_range(0, b.total).bits)


def test_report_command(session, capsys):
    capsys.readouterr()
    assert main(["report", "--session", str(session), "--sort-qber"]) == 0
    out = capsys.readouterr().out
    printed = [int(line.split(",")[0]) for line in out.splitlines()[1:] if not line.startswith("#")]
    expected = [r.block_id for r in SessionReport.load(session / "report.csv").sorted_by_qber()]
    assert printed == expected
    assert (session / "report.png").stat().st_size > 0


def test_encrypt_decrypt(session, tmp_path):
    msg = tmp_path / "m.txt"
    msg.write_bytes(b"one-time pad test message")
    enc, dec = tmp_path / "m.enc", tmp_path / "m.dec"
    assert main(["encrypt", "--in", str(msg), "--out", str(enc), "--session", str(session)]) == 0
    assert main(["decrypt", "--in", str(enc), "--out", str(dec), "--session", str(session)]) == 0
    assert dec.read_bytes() == msg.read_bytes()
    # the same key range cannot be used twice
    assert main(["decrypt", "--in", str(enc), "--out", str(dec), "--session", str(session)]) == 2
    enc2 = tmp_path / "m2.enc"
    assert main(["encrypt", "--in", str(msg), "--out", str(enc2), "--session", str(session)]) == 0
    assert enc2.read_bytes()[8:16] != enc.read_bytes()[8:16]


def test_encrypt_without_key(tmp_path):
    f = tmp_path / "f"
    f.write_bytes(b"x")
    assert main(["encrypt", "--in", str(f), "--out", str(tmp_path / "o"), "--session", str(tmp_path)]) == 2


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "entqkd", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
