"""Pure-Python versions of the compiled kernels (same contracts)."""

import math

import numpy as np


def concordance_counts(rank, time, event, n_ranks):
    tree = [0] * (n_ranks + 1)
    conc = tied = perm = inserted = 0
    n = len(rank)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and time[stop] == time[start]:
            stop += 1
        for i in range(start, stop):
            if not event[i]:
                continue
            below = 0
            j = int(rank[i])
            while j > 0:
                below += tree[j]
                j -= j & -j
            upto = 0
            j = int(rank[i]) + 1
            while j > 0:
                upto += tree[j]
                j -= j & -j
            conc += below
            tied += upto - below
            perm += inserted
        for i in range(start, stop):
            j = int(rank[i]) + 1
            while j <= n_ranks:
                tree[j] += 1
                j += j & -j
            inserted += 1
        start = stop
    return conc, tied, perm


def cox_loss_grad(eta, time, event):
    n = len(eta)
    shift = max(eta)
    grad = np.zeros(n)
    inv_risk = [0.0] * n
    risk = loss = acc = 0.0
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and time[stop] == time[start]:
            stop += 1
        for i in range(start, stop):
            risk += math.exp(eta[i] - shift)
        for i in range(start, stop):
            inv_risk[i] = 1.0 / risk
            if event[i]:
                loss += math.log(risk) + shift - eta[i]
        start = stop
    stop = n
    while stop > 0:
        start = stop - 1
        while start > 0 and time[start - 1] == time[stop - 1]:
            start -= 1
        for i in range(start, stop):
            if event[i]:
                acc += inv_risk[i]
        for i in range(start, stop):
            grad[i] = math.exp(eta[i] - shift) * acc - (1.0 if event[i] else 0.0)
        stop = start
    return loss, grad


def histogram_entropy(pixels):
    counts = [0] * 256
    for v in pixels.tolist():
        counts[v] += 1
    n = len(pixels)
    h = 0.0
    for c in counts:
        if c:
            p = c / n
            h -= p * math.log2(p)
    return h
