"""Shared query transformer.

Each registered modality owns a bank of ``k`` learnable query tokens and a
linear input adapter from its native feature width to ``d``. The transformer
blocks themselves are shared: pre-norm residual blocks of query
self-attention, cross-attention from queries to the modality's feature
tokens, and a GELU feed-forward layer. Projections are stored PyTorch style
as (out, in) matrices; every one of them is routed through the LoRA registry
so a modality's adapters apply on its own forward pass only.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import BadConfig, DuplicateModality, EmptyFeatures, NonFiniteInput, UnknownModality
from .rng import philox

ATTN_SITES = ("q", "k", "v", "o")
LORA_SITE_KINDS = tuple(f"{blk}.{p}" for blk in ("self", "cross") for p in ATTN_SITES) + ("ffn1", "ffn2")
DEFAULT_LORA_SITE_KINDS = ("self.q", "self.k", "self.v", "cross.q", "cross.k", "cross.v")


@dataclass(frozen=True)
class QFormerConfig:
    depth: int = 2
    embed_dim: int = 64
    heads: int = 4
    queries_per_modality: int = 8
    ffn_multiplier: int = 2
    max_tokens: int = 4096

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise BadConfig(f"{name} must be a positive integer, got {value!r}")
        if self.embed_dim % self.heads:
            raise BadConfig(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def site_names(config: QFormerConfig, kinds=LORA_SITE_KINDS) -> list[str]:
    """Fully qualified projection names, e.g. ``layers.0.cross.q``."""
    return [f"layers.{i}.{kind}" for i in range(config.depth) for kind in kinds]


class QFormerWeights:
    """Named parameter tensors plus the modality table."""

    def __init__(self, config: QFormerConfig):
        self.config = config
        self.params: OrderedDict[str, T.Tensor] = OrderedDict()
        self.modalities: OrderedDict[str, int] = OrderedDict()

    def __getitem__(self, name: str) -> T.Tensor:
        return self.params[name]

    def base_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("layers.") or n.startswith("out_ln.")]

    def modality_names(self, modality: str) -> list[str]:
        return [f"queries.{modality}", f"input.{modality}.weight", f"input.{modality}.bias"]

    def register_modality(self, name: str, native_dim: int, seed: int) -> None:
        if name in self.modalities:
            raise DuplicateModality(f"modality {name!r} already registered")
        if not isinstance(native_dim, (int, np.integer)) or native_dim < 1:
            raise BadConfig(f"native dim for {name!r} must be >= 1")
        cfg = self.config
        rng = philox(seed)
        self.params[f"queries.{name}"] = T.Tensor(
            rng.normal(0.0, 1.0, (cfg.queries_per_modality, cfg.embed_dim)), True, f"queries.{name}"
        )
        self.params[f"input.{name}.weight"] = T.Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(native_dim), (cfg.embed_dim, native_dim)),
            True,
            f"input.{name}.weight",
        )
        self.params[f"input.{name}.bias"] = T.Tensor(np.zeros(cfg.embed_dim), True, f"input.{name}.bias")
        self.modalities[name] = int(native_dim)


def init_qformer(config: QFormerConfig, modalities, seed: int) -> QFormerWeights:
    """Seeded initialisation. Attention output projections start at zero."""
    names = [m for m, _ in modalities]
    if len(set(names)) != len(names):
        raise DuplicateModality(f"duplicate modality names in {names}")
    w = QFormerWeights(config)
    d, f = config.embed_dim, config.embed_dim * config.ffn_multiplier
    rng = philox(seed)

    def add(name, arr):
        w.params[name] = T.Tensor(arr, True, name)

    for i in range(config.depth):
        p = f"layers.{i}"
        for blk in ("self", "cross"):
            add(f"{p}.ln_{blk}.gamma", np.ones(d))
            add(f"{p}.ln_{blk}.beta", np.zeros(d))
            for site in ("q", "k", "v"):
                add(f"{p}.{blk}.{site}", rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)))
            add(f"{p}.{blk}.o", np.zeros((d, d)))
        add(f"{p}.ln_feat.gamma", np.ones(d))
        add(f"{p}.ln_feat.beta", np.zeros(d))
        add(f"{p}.ln_ffn.gamma", np.ones(d))
        add(f"{p}.ln_ffn.beta", np.zeros(d))
        add(f"{p}.ffn1", rng.normal(0.0, 1.0 / math.sqrt(d), (f, d)))
        add(f"{p}.ffn1_bias", np.zeros(f))
        add(f"{p}.ffn2", rng.normal(0.0, 1.0 / math.sqrt(f), (d, f)))
        add(f"{p}.ffn2_bias", np.zeros(d))
    add("out_ln.gamma", np.ones(d))
    add("out_ln.beta", np.zeros(d))
    for idx, (name, native_dim) in enumerate(modalities):
        w.register_modality(name, native_dim, seed=seed * 1009 + idx + 1)
    return w


def _project(weights, adapters, modality, name, x):
    if adapters is None:
        return T.linear(x, weights[name])
    from .lora import route_forward

    return route_forward(adapters, modality, name, weights[name], x)


def _split_heads(x, heads):
    # (..., n, d) -> (..., h, n, d/h)
    *lead, n, d = x.shape
    x = T.reshape(x, tuple(lead) + (n, heads, d // heads))
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return T.transpose(x, axes)


def _merge_heads(x):
    *lead, h, n, dh = x.shape
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = T.transpose(x, axes)
    return T.reshape(x, tuple(lead) + (n, h * dh))


def attention(weights, adapters, modality, prefix, queries, keys_values, heads):
    """Multi-head attention from ``queries`` to ``keys_values``."""
    q = _split_heads(_project(weights, adapters, modality, f"{prefix}.q", queries), heads)
    k = _split_heads(_project(weights, adapters, modality, f"{prefix}.k", keys_values), heads)
    v = _split_heads(_project(weights, adapters, modality, f"{prefix}.v", keys_values), heads)
    dh = q.shape[-1]
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(dh))
    ctx = _merge_heads(T.matmul(T.softmax(scores, axis=-1), v))
    return _project(weights, adapters, modality, f"{prefix}.o", ctx)


def embed_features(weights: QFormerWeights, features, modality: str) -> T.Tensor:
    """Map native-width feature tokens to the model width."""
    if modality not in weights.modalities:
        raise UnknownModality(f"modality {modality!r} is not registered")
    feats = T.as_tensor(features)
    if feats.ndim not in (2, 3) or feats.shape[-2] == 0:
        raise EmptyFeatures(f"features for {modality!r} must be (tokens, dim) or (batch, tokens, dim), got {feats.shape}")
    if feats.shape[-2] > weights.config.max_tokens:
        raise EmptyFeatures(f"{feats.shape[-2]} tokens exceeds cap {weights.config.max_tokens}")
    if not np.all(np.isfinite(feats.data)):
        raise NonFiniteInput(f"non-finite features for {modality!r}")
    p = f"input.{modality}"
    return T.linear(feats, weights[f"{p}.weight"], weights[f"{p}.bias"])


def qformer_forward(weights: QFormerWeights, features, modality: str, adapters=None) -> T.Tensor:
    """Query embeddings for one modality: (k, d), or (B, k, d) for batched input."""
    cfg = weights.config
    if adapters is not None and modality not in adapters.modalities:
        raise UnknownModality(f"modality {modality!r} is not known to the adapter registry")
    h = embed_features(weights, features, modality)
    q = weights[f"queries.{modality}"]
    if h.ndim == 3:
        q = T.expand(q, h.shape[0])
    for i in range(cfg.depth):
        p = f"layers.{i}"
        x = T.layernorm(q, weights[f"{p}.ln_self.gamma"], weights[f"{p}.ln_self.beta"])
        q = T.add(q, attention(weights, adapters, modality, f"{p}.self", x, x, cfg.heads))
        x = T.layernorm(q, weights[f"{p}.ln_cross.gamma"], weights[f"{p}.ln_cross.beta"])
        kv = T.layernorm(h, weights[f"{p}.ln_feat.gamma"], weights[f"{p}.ln_feat.beta"])
        q = T.add(q, attention(weights, adapters, modality, f"{p}.cross", x, kv, cfg.heads))
        x = T.layernorm(q, weights[f"{p}.ln_ffn.gamma"], weights[f"{p}.ln_ffn.beta"])
        x = T.gelu(T.add(_project(weights, adapters, modality, f"{p}.ffn1", x), weights[f"{p}.ffn1_bias"]))
        x = T.add(_project(weights, adapters, modality, f"{p}.ffn2", x), weights[f"{p}.ffn2_bias"])
        q = T.add(q, x)
    return T.layernorm(q, weights["out_ln.gamma"], weights["out_ln.beta"])
