"""Cox partial-likelihood loss and Harrell's concordance index.

Pairs are permissible when the earlier time carries an observed event and the
partner's time is strictly later; pairs with equal times never count. Tied
risk scores score one half.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyInput, LengthMismatch, NonFiniteInput, NoPermissiblePairs, NonPositiveTime
from .tensor import Tensor, as_tensor, custom_op

log = logging.getLogger(__name__)

CINDEX_VARIANT = "harrell"


@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    event: bool

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time <= 0:
            raise NonPositiveTime(f"survival time must be positive and finite, got {self.time}")


def _arrays(etas, times, events):
    eta = np.asarray(etas.data if isinstance(etas, Tensor) else etas, dtype=np.float64).reshape(-1)
    time = np.asarray(times, dtype=np.float64).reshape(-1)
    event = np.asarray(events, dtype=bool).reshape(-1)
    if not (eta.size == time.size == event.size):
        raise LengthMismatch(f"lengths differ: eta={eta.size}, time={time.size}, event={event.size}")
    if not np.all(np.isfinite(time)) or np.any(time <= 0):
        raise NonPositiveTime("survival times must be positive and finite")
    if not np.all(np.isfinite(eta)):
        raise NonFiniteInput("risk scores must be finite")
    return eta, time, event


def _split_records(records):
    times = [r.time for r in records]
    events = [r.event for r in records]
    return times, events


def cox_loss(eta, time, event, backend=None) -> Tensor:
    """Negative log partial likelihood (Breslow ties) as a graph op.

    ``eta`` is a tensor of risk scores (any shape with n entries). Returns a
    1-element tensor; zero when no events are observed.
    """
    eta_t = as_tensor(eta)
    eta_v, time_v, event_v = _arrays(eta_t, time, event)
    if eta_v.size < 1:
        raise LengthMismatch("need at least one patient")
    if not event_v.any():
        log.warning("all patients censored; Cox loss is 0")
        shape = eta_t.shape
        return custom_op("cox", np.zeros(1), (eta_t,), lambda g: (np.zeros(shape),))
    kernels = backend or _kernels
    order = np.argsort(-time_v, kind="stable")
    loss, grad_sorted = kernels.cox_loss_grad(
        np.ascontiguousarray(eta_v[order]),
        np.ascontiguousarray(time_v[order]),
        np.ascontiguousarray(event_v[order], dtype=np.uint8),
    )
    grad = np.empty_like(eta_v)
    grad[order] = grad_sorted
    grad = grad.reshape(eta_t.shape)
    return custom_op("cox", np.array([loss]), (eta_t,), lambda g: (g.reshape(-1)[0] * grad,))


def cox_partial_likelihood(etas, records) -> float:
    """Loss value for a list of risk scores and :class:`SurvivalRecord`."""
    times, events = _split_records(records)
    return cox_loss(np.asarray(etas, dtype=np.float64), times, events).item()


def cox_loss_reference(eta, time, event) -> float:
    """Direct O(n^2) evaluation of the partial-likelihood formula."""
    eta, time, event = _arrays(eta, time, event)
    total = 0.0
    for i in np.flatnonzero(event):
        at_risk = time >= time[i]
        total -= eta[i] - np.log(np.sum(np.exp(eta[at_risk])))
    return float(total)


def concordance_counts(eta, time, event, backend=None) -> tuple[int, int, int]:
    """(concordant, tied-risk, permissible) pair counts in O(n log n)."""
    eta, time, event = _arrays(eta, time, event)
    kernels = backend or _kernels
    _, rank = np.unique(eta, return_inverse=True)
    order = np.argsort(-time, kind="stable")
    return kernels.concordance_counts(
        np.ascontiguousarray(rank[order], dtype=np.int64),
        np.ascontiguousarray(time[order]),
        np.ascontiguousarray(event[order], dtype=np.uint8),
        int(rank.max()) + 1 if rank.size else 0,
    )


def concordance_index(etas, times, events=None, backend=None) -> float:
    """Harrell's C. Accepts ``(etas, records)`` or ``(etas, times, events)``."""
    if events is None:
        times, events = _split_records(times)
    eta = np.asarray(etas.data if isinstance(etas, Tensor) else etas).reshape(-1)
    if eta.size < 2:
        raise NoPermissiblePairs("need at least two patients")
    conc, tied, perm = concordance_counts(eta, times, events, backend=backend)
    if perm == 0:
        raise NoPermissiblePairs("no pair has an observed event before a later time")
    return (2 * conc + tied) / (2 * perm)


def concordance_bruteforce(etas, times, events=None) -> float:
    """Literal pair enumeration; the oracle for :func:`concordance_index`."""
    if events is None:
        times, events = _split_records(times)
    eta, time, event = _arrays(etas, times, events)
    n = eta.size
    score = 0.0
    perm = 0
    for i in range(n):
        if not event[i]:
            continue
        for j in range(n):
            if time[i] < time[j]:
                perm += 1
                if eta[i] > eta[j]:
                    score += 1.0
                elif eta[i] == eta[j]:
                    score += 0.5
    if perm == 0:
        raise NoPermissiblePairs("no pair has an observed event before a later time")
    return score / perm


def aggregate_mean(per_split_cindex) -> float:
    """Arithmetic mean, rounded to 3 decimals like a results-table MEAN column."""
    values = [float(v) for v in per_split_cindex]
    if not values:
        raise EmptyInput("nothing to average")
    return round(sum(values) / len(values), 3)
