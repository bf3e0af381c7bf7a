# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled survival and histogram kernels.

Inputs are pre-sorted / pre-ranked by the Python wrappers in
``evoqformer._kernels``; these loops only do the O(n log n) or O(n) sweeps.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log2

cnp.import_array()


def concordance_counts(const cnp.int64_t[::1] rank,
                       const double[::1] time,
                       const cnp.uint8_t[::1] event,
                       Py_ssize_t n_ranks):
    """Counts over patients sorted by time, descending.

    Returns (concordant, tied, permissible) where a permissible pair has the
    earlier time with an observed event and a strictly later partner.
    """
    cdef Py_ssize_t n = rank.shape[0]
    cdef cnp.int64_t[::1] tree = np.zeros(n_ranks + 1, dtype=np.int64)
    cdef cnp.int64_t conc = 0, tied = 0, perm = 0, inserted = 0
    cdef cnp.int64_t below, upto
    cdef Py_ssize_t start = 0, stop, i, j
    while start < n:
        stop = start + 1
        while stop < n and time[stop] == time[start]:
            stop += 1
        for i in range(start, stop):
            if not event[i]:
                continue
            below = 0
            j = rank[i]
            while j > 0:
                below += tree[j]
                j -= j & (-j)
            upto = 0
            j = rank[i] + 1
            while j > 0:
                upto += tree[j]
                j -= j & (-j)
            conc += below
            tied += upto - below
            perm += inserted
        for i in range(start, stop):
            j = rank[i] + 1
            while j <= n_ranks:
                tree[j] += 1
                j += j & (-j)
            inserted += 1
        start = stop
    return conc, tied, perm


def cox_loss_grad(const double[::1] eta,
                  const double[::1] time,
                  const cnp.uint8_t[::1] event):
    """Breslow negative log partial likelihood and its gradient.

    Patients must be sorted by time, descending. Returns (loss, grad) with
    grad in the same (sorted) order.
    """
    cdef Py_ssize_t n = eta.shape[0]
    cdef double[::1] grad = np.zeros(n, dtype=np.float64)
    cdef double[::1] inv_risk = np.zeros(n, dtype=np.float64)
    cdef double shift = eta[0]
    cdef double risk = 0.0, loss = 0.0, acc = 0.0
    cdef Py_ssize_t start, stop, i
    for i in range(n):
        if eta[i] > shift:
            shift = eta[i]
    # descending sweep: risk set sums, one value per tie group
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and time[stop] == time[start]:
            stop += 1
        for i in range(start, stop):
            risk += exp(eta[i] - shift)
        for i in range(start, stop):
            inv_risk[i] = 1.0 / risk
            if event[i]:
                loss += log(risk) + shift - eta[i]
        start = stop
    # ascending sweep: accumulate 1/S over events with time <= t_k
    stop = n
    while stop > 0:
        start = stop - 1
        while start > 0 and time[start - 1] == time[stop - 1]:
            start -= 1
        for i in range(start, stop):
            if event[i]:
                acc += inv_risk[i]
        for i in range(start, stop):
            grad[i] = exp(eta[i] - shift) * acc - (1.0 if event[i] else 0.0)
        stop = start
    return loss, np.asarray(grad)


def histogram_entropy(const cnp.uint8_t[::1] pixels):
    """Base-2 Shannon entropy of the 256-bin histogram of ``pixels``."""
    cdef cnp.int64_t counts[256]
    cdef Py_ssize_t i, n = pixels.shape[0]
    cdef double p, h = 0.0
    for i in range(256):
        counts[i] = 0
    for i in range(n):
        counts[pixels[i]] += 1
    for i in range(256):
        if counts[i]:
            p = <double>counts[i] / n
            h -= p * log2(p)
    return h
