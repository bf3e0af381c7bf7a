import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from evoqformer import tensor as T
from evoqformer.errors import EmptyInput, LengthMismatch, NoPermissiblePairs, NonFiniteInput, NonPositiveTime
from evoqformer.survival import (
    SurvivalRecord,
    aggregate_mean,
    concordance_bruteforce,
    concordance_index,
    cox_loss,
    cox_loss_reference,
    cox_partial_likelihood,
)


@st.composite
def instances(draw, n_max=40):
    n = draw(st.integers(2, n_max))
    times = draw(st.lists(st.integers(1, 12), min_size=n, max_size=n))
    events = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    etas = draw(st.lists(st.integers(-4, 4), min_size=n, max_size=n))
    scale = draw(st.sampled_from([1.0, 0.25, 0.1]))
    return np.array(etas) * scale, np.array(times, dtype=float), np.array(events)


def test_single_patient_loss_zero():
    assert cox_loss(T.Tensor([1.3]), [5.0], [True]).item() == 0.0


def test_all_censored_loss_zero(caplog):
    with caplog.at_level(logging.WARNING):
        assert cox_loss(T.Tensor([1.0, 2.0]), [1.0, 2.0], [False, False]).item() == 0.0
    assert "censored" in caplog.text


def test_two_events_ln2():
    recs = [SurvivalRecord(1.0, True), SurvivalRecord(2.0, True)]
    assert abs(cox_partial_likelihood([0.0, 0.0], recs) - math.log(2)) < 1e-15


@given(instances(16))
def test_cox_loss_matches_formula(inst):
    eta, time, event = inst
    got = cox_loss(T.Tensor(eta), time, event).item()
    np.testing.assert_allclose(got, oracles.breslow_nll(eta.tolist(), time.tolist(), event.tolist()), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(got, cox_loss_reference(eta, time, event), rtol=1e-10, atol=1e-12)


def test_cox_gradient_fd(rng):
    time = np.array([3.0, 1.0, 2.0, 2.0, 5.0, 4.0])
    event = np.array([1, 1, 0, 1, 1, 0], dtype=bool)
    rep = T.grad_check(lambda e: cox_loss(e, time, event), T.Tensor(rng.normal(size=6)), tol=1e-7)
    assert rep.passed


def test_cindex_examples():
    assert concordance_index([3, 2, 1], [1, 2, 3], [1, 1, 1]) == 1.0
    assert concordance_index([0.8, 0.9, 0.5], [2, 4, 3], [1, 0, 1]) == pytest.approx(1 / 3, abs=1e-15)
    assert concordance_bruteforce([0.8, 0.9, 0.5], [2, 4, 3], [1, 0, 1]) == pytest.approx(1 / 3, abs=1e-15)
    assert concordance_index([0.2] * 5, [1, 2, 3, 4, 5], [1] * 5) == 0.5


def test_record_form():
    recs = [SurvivalRecord(t, e) for t, e in [(2, True), (4, False), (3, True)]]
    assert concordance_index([0.8, 0.9, 0.5], recs) == pytest.approx(1 / 3)


def test_no_permissible_pairs():
    with pytest.raises(NoPermissiblePairs):
        concordance_index([0.1, 0.2], [1.0, 2.0], [False, True])
    with pytest.raises(NoPermissiblePairs):
        concordance_bruteforce([0.1, 0.2], [1.0, 2.0], [False, True])


def test_input_errors():
    with pytest.raises(LengthMismatch):
        concordance_index([1, 2], [1, 2, 3], [1, 1, 1])
    with pytest.raises(NonPositiveTime):
        concordance_index([1, 2], [0, 2], [1, 1])
    with pytest.raises(NonPositiveTime):
        SurvivalRecord(-1.0, True)
    with pytest.raises(NonFiniteInput):
        cox_loss(T.Tensor([np.nan, 1.0]), [1, 2], [1, 1])


@given(instances())
def test_fast_cindex_equals_bruteforce(inst):
    eta, time, event = inst
    ref = oracles.pair_cindex(eta.tolist(), time.tolist(), event.tolist())
    if ref is None:
        with pytest.raises(NoPermissiblePairs):
            concordance_index(eta, time, event)
        return
    assert concordance_index(eta, time, event) == ref
    assert concordance_bruteforce(eta, time, event) == ref


@given(instances(), st.sampled_from(["exp", "affine", "cube"]))
def test_cindex_invariant_to_monotone_transform(inst, kind):
    eta, time, event = inst
    if oracles.pair_cindex(eta.tolist(), time.tolist(), event.tolist()) is None:
        return
    f = {"exp": np.exp, "affine": lambda x: 3.0 * x + 7.0, "cube": lambda x: x**3}[kind]
    assert concordance_index(f(eta), time, event) == concordance_index(eta, time, event)


@given(instances())
def test_cindex_negated_is_complement(inst):
    eta, time, event = inst
    if oracles.pair_cindex(eta.tolist(), time.tolist(), event.tolist()) is None:
        return
    assert concordance_index(-eta, time, event) == pytest.approx(1 - concordance_index(eta, time, event), abs=1e-12)


def test_aggregate_mean():
    assert aggregate_mean([0.863, 0.658, 0.687, 0.781, 0.775]) == 0.753
    assert aggregate_mean([0.795, 0.674, 0.771, 0.736, 0.578]) == 0.711
    assert aggregate_mean([0.5]) == 0.5
    with pytest.raises(EmptyInput):
        aggregate_mean([])
