"""Independent reference implementations used as test oracles.

Written with plain loops and the standard library so they share no code
path with the package under test.
"""

import itertools
import math


def naive_matmul(a, b):
    n, m = len(a), len(a[0])
    p = len(b[0])
    assert len(b) == m
    out = [[0.0] * p for _ in range(n)]
    for i in range(n):
        for j in range(p):
            s = 0.0
            for t in range(m):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def pair_cindex(eta, time, event):
    """Harrell's C by enumerating ordered pairs (i had the event, t_i < t_j)."""
    num = 0.0
    den = 0
    for i, j in itertools.permutations(range(len(eta)), 2):
        if event[i] and time[i] < time[j]:
            den += 1
            if eta[i] > eta[j]:
                num += 1.0
            elif eta[i] == eta[j]:
                num += 0.5
    return None if den == 0 else num / den


def breslow_nll(eta, time, event):
    total = 0.0
    for i in range(len(eta)):
        if not event[i]:
            continue
        denom = sum(math.exp(eta[j]) for j in range(len(eta)) if time[j] >= time[i])
        total -= eta[i] - math.log(denom)
    return total


def histogram_entropy(values):
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    n = len(values)
    return -sum((c / n) * math.log2(c / n) for c in counts.values())


def smqf_reference(primary, supporting, theta_groups, bias):
    """Concat supporting channels, multiply by the full theta, gate, stack under primary.

    ``primary`` and each supporting entry are k x d nested lists; theta_groups
    are d x d nested lists (out x in) in supporting order.
    """
    k = len(primary)
    d = len(primary[0])
    cat_x = [sum((s[t] for s in supporting), []) for t in range(k)]
    W = [sum((g[o] for g in theta_groups), []) for o in range(d)]  # d x (n-1)d
    Wt = [list(col) for col in zip(*W)]
    proj = naive_matmul(cat_x, Wt)
    gated = [[sigmoid(v + bias[c]) * (v + bias[c]) for c, v in enumerate(row)] for row in proj]
    return [list(r) for r in primary] + gated
