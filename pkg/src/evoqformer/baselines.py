"""Reference fusion methods for head-to-head comparison.

All methods consume per-modality tensors: query tokens ``(B, k, d)`` or
pooled vectors ``(B, D)``. Methods that need vectors mean-pool tokens
first. ``LateFusion`` returns a risk score per patient; the others return a
``(B, out_dim)`` representation for the shared prediction head.

MulT and MAGGate are represented by simplified stand-ins
(:class:`CrossModalTransformerFusion`, :class:`GatedFusion`) following their
one-line descriptions: per-modality cross-attention to every other modality
followed by concatenation, and a sigmoid gate on non-primary contributions
added to the primary.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .errors import BadConfig, ShapeMismatch, UnknownModality, UnsupportedArity
from .qformer import attention
from .rng import philox
from .smqf import FusionConfig, SMQFusion

FUSION_KINDS = ("early", "late", "cross_attention", "tensor_fusion", "gated", "crossmodal_transformer", "smqf")
MAX_TENSOR_FUSION_MODALITIES = 3


def _pooled(x) -> T.Tensor:
    x = T.as_tensor(x)
    if x.ndim == 3:
        return T.mean_pool(x, axis=1)
    if x.ndim == 2:
        return x
    if x.ndim == 1:
        return T.reshape(x, (1, -1))
    raise ShapeMismatch(f"expected tokens (B, k, d) or vectors (B, D), got {x.shape}")


def _tokens(x) -> T.Tensor:
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"attention fusion needs tokens (B, k, d), got {x.shape}")
    return x


class _Module:
    kind = ""
    outputs_risk = False

    def __init__(self, modalities, dims, seed):
        if not modalities:
            raise BadConfig("fusion needs at least one modality")
        self.modalities = list(modalities)
        self.dims = dict(zip(self.modalities, dims))
        self._rng = philox(seed)
        self._params: OrderedDict[str, T.Tensor] = OrderedDict()

    def _weight(self, name, shape, std=None):
        std = 1.0 / math.sqrt(shape[-1]) if std is None else std
        t = T.Tensor(self._rng.normal(0.0, std, shape), True, f"fusion.{name}")
        self._params[f"fusion.{name}"] = t
        return t

    def _zeros(self, name, shape):
        t = T.Tensor(np.zeros(shape), True, f"fusion.{name}")
        self._params[f"fusion.{name}"] = t
        return t

    def params(self) -> OrderedDict:
        return self._params

    def _check(self, embeddings: dict):
        missing = [m for m in embeddings if m not in self.dims]
        if missing:
            raise UnknownModality(f"fusion has no weights for {missing}")
        if not embeddings:
            raise BadConfig("no modalities supplied")
        return [m for m in self.modalities if m in embeddings]


class EarlyFusion(_Module):
    kind = "early"

    def __init__(self, modalities, dims, out_dim, seed=0):
        super().__init__(modalities, dims, seed)
        self.concat_dim = sum(dims)
        self.offsets = dict(zip(self.modalities, np.cumsum([0] + list(dims))[:-1].tolist()))
        self.W = self._weight("early.W", (out_dim, self.concat_dim))
        self.b = self._zeros("early.b", (out_dim,))

    def concat(self, embeddings: dict) -> T.Tensor:
        names = self._check(embeddings)
        if len(names) != len(self.modalities):
            raise ShapeMismatch("early fusion needs every configured modality")
        return T.concat([_pooled(embeddings[m]) for m in names], axis=-1)

    def __call__(self, embeddings: dict) -> T.Tensor:
        names = self._check(embeddings)
        if len(names) == len(self.modalities):
            return T.linear(self.concat(embeddings), self.W, self.b)
        # subset: use only the weight columns of the supplied modalities
        cols = [T.slice_(self.W, (slice(None), slice(self.offsets[m], self.offsets[m] + self.dims[m]))) for m in names]
        x = T.concat([_pooled(embeddings[m]) for m in names], axis=-1)
        return T.linear(x, T.concat(cols, axis=1), self.b)


def late_average(scores) -> T.Tensor:
    """Unweighted mean of per-modality risk scores."""
    scores = [T.reshape(T.as_tensor(s), (-1, 1)) for s in scores]
    return T.mean_pool(T.concat(scores, axis=1), axis=1)


class LateFusion(_Module):
    kind = "late"
    outputs_risk = True

    def __init__(self, modalities, dims, out_dim=None, seed=0):
        super().__init__(modalities, dims, seed)
        self.heads = {
            m: (self._weight(f"late.{m}.W", (1, dim)), self._zeros(f"late.{m}.b", (1,)))
            for m, dim in self.dims.items()
        }

    def scores(self, embeddings: dict) -> dict:
        names = self._check(embeddings)
        return {m: T.reshape(T.linear(_pooled(embeddings[m]), *self.heads[m]), (-1,)) for m in names}

    def __call__(self, embeddings: dict) -> T.Tensor:
        return late_average(list(self.scores(embeddings).values()))


class _AttentionBlock:
    """q/k/v/o projections with a residual connection."""

    def __init__(self, owner: _Module, prefix: str, dim: int, heads: int):
        self.prefix = f"fusion.{prefix}"
        self.heads = heads
        self.weights = {
            f"{self.prefix}.{s}": owner._weight(f"{prefix}.{s}", (dim, dim)) for s in ("q", "k", "v", "o")
        }

    def __call__(self, queries, keys_values):
        return T.add(queries, attention(self.weights, None, None, self.prefix, queries, keys_values, self.heads))


class CrossAttentionFusion(_Module):
    kind = "cross_attention"

    def __init__(self, modalities, dims, out_dim, primary, heads=4, seed=0):
        super().__init__(modalities, dims, seed)
        if primary not in self.dims:
            raise BadConfig(f"primary {primary!r} not among {self.modalities}")
        if len(set(dims)) != 1:
            raise ShapeMismatch("cross-attention fusion needs equal token widths")
        self.primary = primary
        d = dims[0]
        self.block = _AttentionBlock(self, "xattn", d, heads)
        self.W = self._weight("xattn.out", (out_dim, d))
        self.b = self._zeros("xattn.out_b", (out_dim,))

    def __call__(self, embeddings: dict) -> T.Tensor:
        names = self._check(embeddings)
        x_p = _tokens(embeddings[self.primary])
        others = [_tokens(embeddings[m]) for m in names if m != self.primary]
        kv = x_p if not others else (others[0] if len(others) == 1 else T.concat(others, axis=1))
        return T.linear(T.mean_pool(self.block(x_p, kv), axis=1), self.W, self.b)


class TensorFusion(_Module):
    """Outer product of 1-appended pooled vectors, flattened then projected.

    ``reduce_dim`` optionally maps each pooled vector to a small width first;
    without it the flattened size is the product of ``(dim + 1)``.
    """

    kind = "tensor_fusion"

    def __init__(self, modalities, dims, out_dim, reduce_dim=None, seed=0):
        if len(modalities) > MAX_TENSOR_FUSION_MODALITIES:
            raise UnsupportedArity(f"tensor fusion supports at most {MAX_TENSOR_FUSION_MODALITIES} modalities")
        super().__init__(modalities, dims, seed)
        self.reduce = {}
        widths = []
        for m, dim in self.dims.items():
            if reduce_dim:
                self.reduce[m] = (self._weight(f"tf.{m}.W", (reduce_dim, dim)), self._zeros(f"tf.{m}.b", (reduce_dim,)))
                widths.append(reduce_dim)
            else:
                widths.append(dim)
        self.flat_dim = int(np.prod([w + 1 for w in widths]))
        self.W = self._weight("tf.out", (out_dim, self.flat_dim))
        self.b = self._zeros("tf.out_b", (out_dim,))

    def flatten(self, embeddings: dict) -> T.Tensor:
        names = self._check(embeddings)
        if len(names) != len(self.modalities):
            raise UnsupportedArity("tensor fusion needs every configured modality")
        z = None
        for m in names:
            h = _pooled(embeddings[m])
            if m in self.reduce:
                h = T.linear(h, *self.reduce[m])
            h = T.concat([h, T.Tensor(np.ones((h.shape[0], 1)))], axis=1)
            if z is None:
                z = h
                continue
            outer = T.matmul(T.reshape(z, (z.shape[0], -1, 1)), T.reshape(h, (h.shape[0], 1, -1)))
            z = T.reshape(outer, (z.shape[0], -1))
        return z

    def __call__(self, embeddings: dict) -> T.Tensor:
        return T.linear(self.flatten(embeddings), self.W, self.b)


class GatedFusion(_Module):
    kind = "gated"

    def __init__(self, modalities, dims, out_dim, primary, seed=0):
        super().__init__(modalities, dims, seed)
        if primary not in self.dims:
            raise BadConfig(f"primary {primary!r} not among {self.modalities}")
        self.primary = primary
        dp = self.dims[primary]
        self.proj, self.gate = {}, {}
        for m, dim in self.dims.items():
            if m == primary:
                continue
            self.proj[m] = (self._weight(f"gated.{m}.proj", (dp, dim)), self._zeros(f"gated.{m}.proj_b", (dp,)))
            self.gate[m] = (self._weight(f"gated.{m}.gate", (dp, dp + dim)), self._zeros(f"gated.{m}.gate_b", (dp,)))
        self.W = self._weight("gated.out", (out_dim, dp))
        self.b = self._zeros("gated.out_b", (out_dim,))

    def __call__(self, embeddings: dict) -> T.Tensor:
        names = self._check(embeddings)
        h_p = _pooled(embeddings[self.primary])
        fused = h_p
        for m in names:
            if m == self.primary:
                continue
            h_m = _pooled(embeddings[m])
            g = T.sigmoid(T.linear(T.concat([h_p, h_m], axis=-1), *self.gate[m]))
            fused = T.add(fused, T.hadamard(g, T.linear(h_m, *self.proj[m])))
        return T.linear(fused, self.W, self.b)


class CrossModalTransformerFusion(_Module):
    kind = "crossmodal_transformer"

    def __init__(self, modalities, dims, out_dim, heads=4, seed=0):
        super().__init__(modalities, dims, seed)
        if len(set(dims)) != 1:
            raise ShapeMismatch("cross-modal transformer needs equal token widths")
        d = dims[0]
        n = len(self.modalities)
        self.blocks = {}
        for t in self.modalities:
            sources = [s for s in self.modalities if s != t] or [t]
            for s in sources:
                self.blocks[(t, s)] = _AttentionBlock(self, f"mult.{t}.{s}", d, heads)
        self.W = self._weight("mult.out", (out_dim, d * max(n * (n - 1), 1)))
        self.b = self._zeros("mult.out_b", (out_dim,))
        self.d = d

    def __call__(self, embeddings: dict) -> T.Tensor:
        names = self._check(embeddings)
        pieces, cols = [], []
        order = list(self.blocks)
        for idx, (t, s) in enumerate(order):
            if t not in names or (s not in names):
                continue
            if s == t and len(names) > 1:
                continue
            out = self.blocks[(t, s)](_tokens(embeddings[t]), _tokens(embeddings[s]))
            pieces.append(T.mean_pool(out, axis=1))
            cols.append(idx)
        if not pieces:
            # lone modality whose only blocks target other modalities
            t = names[0]
            pieces.append(T.mean_pool(_tokens(embeddings[t]), axis=1))
            cols.append(0)
        x = pieces[0] if len(pieces) == 1 else T.concat(pieces, axis=-1)
        W = T.concat([T.slice_(self.W, (slice(None), slice(c * self.d, (c + 1) * self.d))) for c in cols], axis=1)
        return T.linear(x, W, self.b)


def build_fusion(kind: str, modalities, dims, out_dim, primary=None, heads=4, seed=0,
                 queries_per_modality=8, tensor_reduce_dim=8):
    """Instantiate a fusion method by kind name."""
    modalities = list(modalities)
    primary = primary if primary is not None else modalities[0]
    if kind == "early":
        return EarlyFusion(modalities, dims, out_dim, seed)
    if kind == "late":
        return LateFusion(modalities, dims, out_dim, seed)
    if kind == "cross_attention":
        return CrossAttentionFusion(modalities, dims, out_dim, primary, heads, seed)
    if kind == "tensor_fusion":
        return TensorFusion(modalities, dims, out_dim, tensor_reduce_dim, seed)
    if kind == "gated":
        return GatedFusion(modalities, dims, out_dim, primary, seed)
    if kind == "crossmodal_transformer":
        return CrossModalTransformerFusion(modalities, dims, out_dim, heads, seed)
    if kind == "smqf":
        cfg = FusionConfig(modalities, modalities.index(primary), queries_per_modality, dims[0])
        return SMQFusion(cfg, seed)
    raise BadConfig(f"unknown fusion kind {kind!r}; expected one of {FUSION_KINDS}")


def baseline_fuse(method, embeddings: dict):
    """Run a fusion method on ``{modality: tensor}``."""
    return method(embeddings)
