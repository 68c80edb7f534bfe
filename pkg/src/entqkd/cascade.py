"""CASCADE interactive error correction.

Alice holds the reference key and only answers parity queries; Bob owns
the search and flips his bits. Each pass shuffles the key with a
permutation both peers derive from the session context, cuts it into
blocks of ``k_i = k1 * 2**i`` bits, and binary-searches every block whose
parities disagree. Correcting a bit re-opens the blocks of earlier passes
that contain it (the cascade step).

Searches run in lockstep: all searches of a round ask their next parity in
one batch, so one network round trip serves every open block. Blocks
searched in the same round never share a position. Alice's parity of any
range is fixed, so every parity learned or implied is cached and never
asked twice.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import drbg
from .errors import IntegrityError
from .privacy_amp import toeplitz_hash
from .sifting import KeyBlock, Stage

K1_FACTOR = 0.73
DEFAULT_PASSES = 4
VERIFY_TAG_BITS = 64

Query = tuple[int, int, int]  # (pass index, start, length) in shuffled order


@dataclass(frozen=True)
class CascadeConfig:
    passes: int = DEFAULT_PASSES
    k1_factor: float = K1_FACTOR

    def __post_init__(self):
        if self.passes < 2:
            raise ValueError("CASCADE needs at least two passes")

    def block_sizes(self, q: float, n: int) -> list[int]:
        k1 = initial_block_size(q, n, self.k1_factor)
        return [min(k1 << i, n) for i in range(self.passes)]


def initial_block_size(q: float, n: int | None = None, factor: float = K1_FACTOR) -> int:
    if q < 0:
        raise ValueError("error rate must be >= 0")
    if q == 0:
        if n is None:
            raise ValueError("key length required when q == 0")
        return max(n, 1)
    if q > 0.25:
        warnings.warn(f"error rate {q:.3f} above 0.25; clamping initial block size to 4", stacklevel=2)
        k = 4
    else:
        k = math.ceil(factor / q)
    k = max(k, 1)
    return min(k, n) if n is not None else k


def shuffle_seed(session_id: int, block_id: int, pass_index: int) -> bytes:
    return drbg.derive("cascade-shuffle", session_id, block_id, pass_index)


def verify_seed(session_id: int, block_id: int) -> bytes:
    return drbg.derive("cascade-verify", session_id, block_id)


class ParityTransport(Protocol):
    def top_level(self, pass_index: int, block_size: int) -> np.ndarray: ...

    def ask(self, queries: Sequence[Query]) -> list[int]: ...


class CascadeResponder:
    """Alice's side: answers parity queries over her shuffled key."""

    def __init__(self, bits: np.ndarray, perms: Sequence[np.ndarray]):
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.perms = list(perms)
        self._cum = [None] * len(self.perms)
        self.disclosed = 0

    def _prefix(self, p: int) -> np.ndarray:
        if not 0 <= p < len(self.perms):
            raise IntegrityError(f"parity query for unknown pass {p}")
        if self._cum[p] is None:
            c = np.zeros(len(self.bits) + 1, dtype=np.int64)
            np.cumsum(self.bits[self.perms[p]], out=c[1:])
            self._cum[p] = c
        return self._cum[p]

    def top_level(self, pass_index: int, block_size: int) -> np.ndarray:
        """Block parities of one pass. From the second pass on, the last
        block is left out: the peer infers it from the whole-key parity."""
        if block_size < 1:
            raise IntegrityError("block size must be >= 1")
        c = self._prefix(pass_index)
        n = len(self.bits)
        starts = np.arange(0, n, block_size)
        ends = np.minimum(starts + block_size, n)
        out = ((c[ends] - c[starts]) & 1).astype(np.uint8)
        if pass_index > 0:
            out = out[:-1]
        self.disclosed += len(out)
        return out

    def ask(self, queries: Sequence[Query]) -> list[int]:
        n = len(self.bits)
        out = []
        for p, s, l in queries:
            if l < 1 or s < 0 or s + l > n:
                raise IntegrityError(f"parity range ({s}, {l}) outside key")
            c = self._prefix(p)
            out.append(int((c[s + l] - c[s]) & 1))
        self.disclosed += len(out)
        return out


class LocalTransport:
    """In-process transport to a :class:`CascadeResponder`."""

    def __init__(self, responder: CascadeResponder):
        self.responder = responder
        self.round_trips = 0

    def top_level(self, pass_index, block_size):
        self.round_trips += 1
        return self.responder.top_level(pass_index, block_size)

    def ask(self, queries):
        self.round_trips += 1
        return self.responder.ask(queries)


@dataclass
class CascadeResult:
    bits: np.ndarray
    corrections: int
    parities: int
    rounds: int
    trace: list[list[Query]] = field(default_factory=list)


class CascadeCorrector:
    """Bob's side of CASCADE."""

    def __init__(self, bits, block_sizes: Sequence[int], perms: Sequence[np.ndarray],
                 transport: ParityTransport, record_trace: bool = False):
        if len(block_sizes) != len(perms):
            raise ValueError("one permutation per pass required")
        self.bits = np.array(bits, dtype=np.uint8)
        self.n = len(self.bits)
        self.ks = list(block_sizes)
        self.perms = [np.asarray(p, dtype=np.int64) for p in perms]
        self.transport = transport
        self.cache: dict[Query, int] = {}
        self.parities = 0
        self.corrections = 0
        self.rounds = 0
        self.record_trace = record_trace
        self.trace: list[list[Query]] = [[] for _ in self.ks]
        self._top: list[np.ndarray] = []
        self._key_parity = 0

    def _bob_parity(self, p: int, s: int, l: int) -> int:
        return int(self.bits[self.perms[p][s:s + l]].sum() & 1)

    def _ask(self, queries: list[Query]) -> None:
        answers = self.transport.ask(queries)
        if len(answers) != len(queries):
            raise IntegrityError("parity response does not match request")
        self.rounds += 1
        self.parities += len(queries)
        for q, a in zip(queries, answers):
            self.cache[q] = int(a)
            if self.record_trace:
                self.trace[q[0]].append(q)

    def _odd_blocks(self, upto: int) -> list[Query]:
        odd = []
        for p in range(upto + 1):
            k = self.ks[p]
            starts = np.arange(0, self.n, k)
            bob = np.add.reduceat(self.bits[self.perms[p]], starts) & 1
            for j in np.nonzero(bob != self._top[p])[0].tolist():
                s = j * k
                odd.append((p, s, min(k, self.n - s)))
        return odd

    def _disjoint(self, blocks: list[Query]) -> list[Query]:
        used = np.zeros(self.n, dtype=bool)
        chosen = []
        for p, s, l in blocks:
            idx = self.perms[p][s:s + l]
            if used[idx].any():
                continue
            used[idx] = True
            chosen.append((p, s, l))
        return chosen

    def _search(self, blocks: list[Query]) -> None:
        active = [list(b) for b in blocks]
        while active:
            pending = []
            for srch in active:
                p, s, l = srch
                while l > 1:
                    h = (l + 1) // 2
                    left = self.cache.get((p, s, h))
                    if left is None:
                        break
                    parent = self.cache[(p, s, l)]
                    if left != self._bob_parity(p, s, h):
                        l = h
                    else:
                        self.cache.setdefault((p, s + h, l - h), parent ^ left)
                        s, l = s + h, l - h
                srch[1], srch[2] = s, l
                if l == 1:
                    self.bits[self.perms[p][s]] ^= 1
                    self.corrections += 1
                else:
                    pending.append(srch)
            if pending:
                self._ask([(p, s, (l + 1) // 2) for p, s, l in pending])
            active = pending

    def run(self) -> CascadeResult:
        for p, k in enumerate(self.ks):
            top = np.asarray(self.transport.top_level(p, k), dtype=np.uint8)
            nb = math.ceil(self.n / k) if self.n else 0
            if len(top) != (nb if p == 0 else nb - 1):
                raise IntegrityError("top-level parity count mismatch")
            self.rounds += 1
            self.parities += len(top)
            if p == 0:
                self._key_parity = int(top.sum() & 1)
            else:
                top = np.append(top, (self._key_parity + int(top.sum())) & 1).astype(np.uint8)
            self._top.append(top)
            for j, par in enumerate(top.tolist()):
                s = j * k
                self.cache[(p, s, min(k, self.n - s))] = par
            if self.record_trace:
                disclosed = len(top) if p == 0 else len(top) - 1
                self.trace[p].extend((p, j * k, min(k, self.n - j * k)) for j in range(disclosed))
            while True:
                odd = self._odd_blocks(p)
                if not odd:
                    break
                self._search(self._disjoint(odd))
        return CascadeResult(self.bits, self.corrections, self.parities, self.rounds, self.trace)


def pass_permutations(n: int, session_id: int, block_id: int, passes: int) -> list[np.ndarray]:
    return [drbg.fisher_yates(n, shuffle_seed(session_id, block_id, p)) for p in range(passes)]


def reconcile(reference, noisy, q: float, config: CascadeConfig = CascadeConfig(),
              session_id: int = 0, block_id: int = 0, perms=None, record_trace: bool = False):
    """Run both roles in-process. Returns ``(CascadeResult, responder)``."""
    reference = np.asarray(reference, dtype=np.uint8)
    n = len(reference)
    if len(noisy) != n:
        raise IntegrityError("keys differ in length")
    sizes = config.block_sizes(q, n)
    if perms is None:
        perms = pass_permutations(n, session_id, block_id, len(sizes))
    responder = CascadeResponder(reference, perms)
    corrector = CascadeCorrector(noisy, sizes, perms, LocalTransport(responder), record_trace)
    return corrector.run(), responder


def run_cascade(block: KeyBlock, q_est: float, transport: ParityTransport, perms,
                config: CascadeConfig = CascadeConfig()) -> CascadeResult:
    """Bob's side on a block: corrects bits in place and moves it to CORRECTED."""
    if block.stage != Stage.ESTIMATED:
        raise IntegrityError("CASCADE needs an ESTIMATED block")
    sizes = config.block_sizes(q_est, len(block.bits))
    result = CascadeCorrector(block.bits, sizes, perms, transport).run()
    block.bits = result.bits
    block.leak.cascade_parities += result.parities
    block.advance(Stage.CORRECTED)
    return result


def verify_tag(bits, seed: bytes, m: int = VERIFY_TAG_BITS) -> np.ndarray:
    """Toeplitz hash of a corrected key under a session-derived seed."""
    n = len(bits)
    return toeplitz_hash(bits, drbg.random_bits(n + m - 1, seed), m)


def verify_keys(local_tag, remote_tag) -> bool:
    return bool(np.array_equal(np.asarray(local_tag), np.asarray(remote_tag)))
