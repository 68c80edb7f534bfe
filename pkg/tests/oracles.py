"""Independent reference implementations the package is checked against.

Deliberately naive: quadratic loops, explicit matrices, plain lists.
"""

import numpy as np


def brute_force_match(sync_ticks, event_ticks, window):
    """All-pairs matcher: keep pulse/event pairs that are each other's only candidate."""
    cand_s = [[j for j, e in enumerate(event_ticks) if abs(int(e) - int(s)) <= window] for s in sync_ticks]
    cand_e = [[i for i, s in enumerate(sync_ticks) if abs(int(e) - int(s)) <= window] for e in event_ticks]
    pairs = []
    for i, cs in enumerate(cand_s):
        if len(cs) == 1 and len(cand_e[cs[0]]) == 1:
            pairs.append((i, cs[0]))
    return pairs


def naive_toeplitz(seed, x, m):
    """Explicit m x n matrix with T[i][j] = seed[i - j + n - 1], product mod 2."""
    n = len(x)
    t = [[int(seed[i - j + n - 1]) for j in range(n)] for i in range(m)]
    return [sum(t[i][j] * int(x[j]) for j in range(n)) % 2 for i in range(m)]


def cascade_first_pass(alice, bob, perm, k):
    """Queries of CASCADE's first pass on shuffled keys: top-level parities,
    then a left-first binary search (left half = ceil(len / 2)) of each odd block."""
    a = [int(alice[i]) for i in perm]
    b = [int(bob[i]) for i in perm]
    n = len(a)
    queries = [(0, s, min(k, n - s)) for s in range(0, n, k)]
    flips = []
    for s0 in range(0, n, k):
        l0 = min(k, n - s0)
        if sum(a[s0:s0 + l0]) % 2 == sum(b[s0:s0 + l0]) % 2:
            continue
        s, l = s0, l0
        while l > 1:
            h = (l + 1) // 2
            queries.append((0, s, h))
            if sum(a[s:s + h]) % 2 != sum(b[s:s + h]) % 2:
                l = h
            else:
                s, l = s + h, l - h
        flips.append(int(perm[s]))
    return queries, flips


def binary_entropy(x):
    from mpmath import log, mpf

    x = mpf(x)
    return float(-x * log(x, 2) - (1 - x) * log(1 - x, 2))


def brute_force_match_matrix(sync_ticks, event_ticks, window):
    """Same rule as :func:`brute_force_match` on the full distance matrix."""
    s = np.asarray(sync_ticks, dtype=np.int64)
    e = np.asarray(event_ticks, dtype=np.int64)
    if not len(s) or not len(e):
        return []
    near = np.abs(s[:, None] - e[None, :]) <= window
    deg_s = near.sum(axis=1)
    deg_e = near.sum(axis=0)
    pairs = []
    for i in np.flatnonzero(deg_s == 1):
        j = int(np.flatnonzero(near[i])[0])
        if deg_e[j] == 1:
            pairs.append((int(i), j))
    return pairs
