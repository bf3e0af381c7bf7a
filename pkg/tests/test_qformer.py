import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoqformer import tensor as T
from evoqformer.errors import BadConfig, DuplicateModality, EmptyFeatures, NonFiniteInput, UnknownModality
from evoqformer.lora import AdapterRegistry, attach_modality_adapters
from evoqformer.qformer import (
    DEFAULT_LORA_SITE_KINDS,
    QFormerConfig,
    attention,
    init_qformer,
    qformer_forward,
    site_names,
)

CFG = QFormerConfig(depth=1, embed_dim=8, heads=2, queries_per_modality=3, ffn_multiplier=2)
MODS = [["a", 5], ["b", 3]]


def weights(seed=0, cfg=CFG):
    return init_qformer(cfg, MODS, seed)


def test_config_validation():
    with pytest.raises(BadConfig):
        QFormerConfig(embed_dim=10, heads=4)
    with pytest.raises(BadConfig):
        QFormerConfig(depth=0)


def test_same_seed_bit_identical_weights():
    w1, w2 = weights(3), weights(3)
    assert list(w1.params) == list(w2.params)
    for n in w1.params:
        assert np.array_equal(w1[n].data, w2[n].data)
    assert not np.array_equal(weights(4)["layers.0.self.q"].data, w1["layers.0.self.q"].data)


def test_projection_shapes():
    w = weights()
    assert w["layers.0.self.q"].shape == (8, 8)
    assert w["layers.0.cross.k"].shape == (8, 8)
    assert w["queries.a"].shape == (3, 8)
    assert w["input.a.weight"].shape == (8, 5)


def test_zero_output_projection_contributes_nothing(rng):
    w = weights()
    for kind in ("self", "cross"):
        assert np.all(w[f"layers.0.{kind}.o"].data == 0.0)
    q = T.Tensor(rng.normal(size=(3, 8)))
    kv = T.Tensor(rng.normal(size=(7, 8)))
    out = attention(w, None, "a", "layers.0.cross", q, kv, CFG.heads)
    assert np.all(out.data == 0.0)


@given(st.integers(1, 40))
def test_output_is_k_by_d_for_any_length(n_tokens):
    w = weights()
    x = np.linspace(-1, 1, n_tokens * 5).reshape(n_tokens, 5)
    assert qformer_forward(w, x, "a").shape == (3, 8)


def test_batched_matches_unbatched(rng):
    w = weights()
    x = rng.normal(size=(4, 6, 5))
    batched = qformer_forward(w, x, "a").data
    for i in range(4):
        np.testing.assert_allclose(batched[i], qformer_forward(w, x[i], "a").data, rtol=0, atol=1e-12)


def test_zero_b_adapters_identical_output(rng):
    w = weights()
    reg = AdapterRegistry(w)
    attach_modality_adapters(reg, "a", site_names(CFG, DEFAULT_LORA_SITE_KINDS), rank=2, seed=5)
    x = rng.normal(size=(6, 5))
    assert np.array_equal(qformer_forward(w, x, "a").data, qformer_forward(w, x, "a", reg).data)


def test_forward_deterministic(rng):
    x = rng.normal(size=(6, 5))
    assert np.array_equal(qformer_forward(weights(1), x, "a").data, qformer_forward(weights(1), x, "a").data)


def test_register_modality_and_errors():
    w = weights()
    w.register_modality("c", 4, seed=1)
    assert "c" in w.modalities and w["queries.c"].shape == (3, 8)
    with pytest.raises(DuplicateModality):
        w.register_modality("c", 4, seed=1)
    with pytest.raises(UnknownModality):
        qformer_forward(w, np.zeros((2, 4)), "zzz")
    with pytest.raises(EmptyFeatures):
        qformer_forward(w, np.zeros((0, 5)), "a")
    with pytest.raises(NonFiniteInput):
        qformer_forward(w, np.full((2, 5), np.nan), "a")


def test_token_cap():
    cfg = QFormerConfig(depth=1, embed_dim=8, heads=2, queries_per_modality=2, max_tokens=4)
    w = init_qformer(cfg, MODS, 0)
    with pytest.raises(EmptyFeatures):
        qformer_forward(w, np.zeros((5, 5)), "a")
