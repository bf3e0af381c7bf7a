import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from evoqformer import tensor as T
from evoqformer.errors import BadConfig, DuplicateModality, NonFiniteInput, ShapeMismatch, UnknownModality, WrongModalityCount
from evoqformer.smqf import FusionConfig, ProjectionTheta, SMQFusion, fuse_queries, project_supporting, self_gate

wide = st.floats(-1e6, 1e6, allow_nan=False, width=64)


def test_config_validation():
    with pytest.raises(BadConfig):
        FusionConfig(["a", "a"])
    with pytest.raises(BadConfig):
        FusionConfig(["a", "b"], primary=2)
    with pytest.raises(BadConfig):
        FusionConfig([])


def test_identity_theta_passes_single_supporting(rng):
    theta = ProjectionTheta.init(["b"], 4, identity=True)
    x = rng.normal(size=(2, 4))
    assert np.array_equal(project_supporting(theta, [x]).data, x)


def test_three_modalities_project_to_k_by_d(rng):
    theta = ProjectionTheta.init(["b", "c"], 4, seed=1)
    out = project_supporting(theta, [rng.normal(size=(2, 4)), rng.normal(size=(2, 4))])
    assert out.shape == (2, 4)


def test_matches_concat_then_matmul_oracle(rng):
    k, d = 3, 4
    theta = ProjectionTheta.init(["b", "c", "e"], d, seed=2)
    theta.bias.data = rng.normal(size=d)
    fusion = SMQFusion(FusionConfig(["a", "b", "c", "e"], 0, k, d), seed=0)
    fusion.theta = theta
    q = {m: rng.normal(size=(k, d)) for m in "abce"}
    got = fusion({m: T.Tensor(v) for m, v in q.items()}).tokens.data
    ref = oracles.smqf_reference(q["a"].tolist(), [q[m].tolist() for m in "bce"],
                                 [theta.groups[m].data.tolist() for m in "bce"], theta.bias.data.tolist())
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-13)


def test_gate_examples():
    assert np.all(self_gate(np.zeros(5)).data == 0.0)
    assert abs(self_gate([1.0]).item() - 0.7310585786) < 1e-9
    assert abs(self_gate([-20.0]).item()) < 1e-7
    with pytest.raises(NonFiniteInput):
        self_gate([np.inf])


@given(arrays(np.float64, st.integers(1, 64), elements=wide))
def test_gate_bounded_by_input(x):
    g = self_gate(x).data
    assert np.all(np.abs(g) <= np.abs(x))
    assert np.all(g >= np.minimum(0.0, x)) and np.all(g <= np.maximum(0.0, x))


@pytest.mark.parametrize("n", [2, 3, 5])
def test_token_count_is_2k(n, rng):
    k, d = 4, 6
    names = [f"m{i}" for i in range(n)]
    fusion = SMQFusion(FusionConfig(names, 1, k, d), seed=n)
    out = fusion({m: T.Tensor(rng.normal(size=(k, d))) for m in names})
    assert out.n_tokens == 2 * k


def test_primary_rows_bit_equal_and_value_semantics(rng):
    k, d = 4, 3
    x_p, x_g = rng.normal(size=(k, d)), rng.normal(size=(k, d))
    fused = fuse_queries(T.Tensor(x_p), T.Tensor(x_g))
    assert fused.n_tokens == 8 and np.array_equal(fused.primary, x_p)
    x_g[:] = 1e9
    assert np.array_equal(fused.primary, x_p)
    assert not np.any(fused.gated == 1e9)


def test_single_modality_returns_primary(rng):
    fusion = SMQFusion(FusionConfig(["a"], 0, 2, 3))
    x = rng.normal(size=(2, 3))
    out = fusion({"a": T.Tensor(x)})
    assert out.n_tokens == 2 and np.array_equal(out.tokens.data, x)


def test_absent_supporting_skips_its_columns(rng):
    fusion = SMQFusion(FusionConfig(["a", "b", "c"], 0, 2, 3), seed=1)
    q = {m: T.Tensor(rng.normal(size=(2, 3))) for m in "ab"}
    ref = project_supporting(fusion.theta, [q["b"]], ["b"])
    np.testing.assert_array_equal(fusion(q).tokens.data[2:], self_gate(ref).data)


def test_extend_adds_zero_group(rng):
    fusion = SMQFusion(FusionConfig(["a", "b"], 0, 2, 3), seed=1)
    q = {m: T.Tensor(rng.normal(size=(2, 3))) for m in "ab"}
    before = fusion(q).tokens.data
    fusion.add_modality("c")
    assert np.all(fusion.theta.groups["c"].data == 0)
    assert np.array_equal(fusion(q).tokens.data, before)
    q["c"] = T.Tensor(rng.normal(size=(2, 3)))
    assert np.array_equal(fusion(q).tokens.data, before)
    with pytest.raises(DuplicateModality):
        fusion.add_modality("c")


def test_errors(rng):
    fusion = SMQFusion(FusionConfig(["a", "b"], 0, 2, 3))
    with pytest.raises(UnknownModality):
        fusion({"b": T.Tensor(np.zeros((2, 3)))})
    with pytest.raises(UnknownModality):
        fusion({"a": T.Tensor(np.zeros((2, 3))), "z": T.Tensor(np.zeros((2, 3)))})
    with pytest.raises(WrongModalityCount):
        project_supporting(fusion.theta, [np.zeros((2, 3)), np.zeros((2, 3))])
    with pytest.raises(ShapeMismatch):
        fuse_queries(np.zeros((2, 3)), np.zeros((3, 3)))
