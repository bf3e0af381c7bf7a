"""Per-modality low-rank adapters on shared projections.

A projection ``W`` (out, in) used by modality ``m`` at a given site becomes
``W + (alpha / r) * B_m @ A_m``. ``B_m`` starts at zero, so attaching an
adapter never changes the model's output until training moves it.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DuplicateAdapter, RankTooLarge, ShapeMismatch, UnknownAdapter, UnknownModality
from .rng import philox

INIT_STD = 0.02


@dataclass(eq=False)
class LoraAdapter:
    modality: str
    site: str
    A: T.Tensor  # (r, in)
    B: T.Tensor  # (out, r)
    rank: int
    alpha: float

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        return self.scaling * (self.B.data @ self.A.data)

    def n_params(self) -> int:
        return self.A.size + self.B.size

    def param_names(self) -> tuple[str, str]:
        p = f"lora.{self.modality}.{self.site}"
        return f"{p}.A", f"{p}.B"


class AdapterRegistry:
    """Adapters keyed by ``(modality, site)`` over one set of base weights.

    ``base`` may be ``None`` for standalone use, in which case the known
    modalities are passed explicitly.
    """

    def __init__(self, base=None, modalities=()):
        self.base = base
        self._extra_modalities = list(modalities)
        self.adapters: OrderedDict[tuple[str, str], LoraAdapter] = OrderedDict()

    @property
    def modalities(self) -> list[str]:
        names = list(self.base.modalities) if self.base is not None else []
        return names + [m for m in self._extra_modalities if m not in names]

    def add_modality(self, name: str) -> None:
        if name not in self.modalities:
            self._extra_modalities.append(name)

    def get(self, modality: str, site: str) -> LoraAdapter | None:
        return self.adapters.get((modality, site))

    def for_modality(self, modality: str) -> list[LoraAdapter]:
        return [a for (m, _), a in self.adapters.items() if m == modality]

    def params(self) -> OrderedDict:
        out = OrderedDict()
        for a in self.adapters.values():
            na, nb = a.param_names()
            out[na] = a.A
            out[nb] = a.B
        return out

    def trainable_mask(self) -> dict[str, bool]:
        mask = {}
        if self.base is not None:
            mask.update({n: self.base[n].requires_grad for n in self.base.base_names()})
        mask.update({n: t.requires_grad for n, t in self.params().items()})
        return mask


def attach_adapter(registry: AdapterRegistry, modality: str, site: str, rank: int,
                   alpha: float | None = None, seed: int = 0, shape=None) -> LoraAdapter:
    """Create the adapter for ``(modality, site)``: gaussian A, zero B."""
    if modality not in registry.modalities:
        raise UnknownModality(f"modality {modality!r} is not registered")
    if (modality, site) in registry.adapters:
        raise DuplicateAdapter(f"adapter already attached at ({modality!r}, {site!r})")
    if shape is None:
        if registry.base is None:
            raise ShapeMismatch("shape is required when the registry has no base weights")
        shape = registry.base[site].shape
    out_dim, in_dim = shape
    if not 1 <= rank < min(out_dim, in_dim):
        raise RankTooLarge(f"rank {rank} must satisfy 1 <= r < {min(out_dim, in_dim)}")
    alpha = float(rank if alpha is None else alpha)
    rng = philox(seed)
    name = f"lora.{modality}.{site}"
    adapter = LoraAdapter(
        modality=modality,
        site=site,
        A=T.Tensor(rng.normal(0.0, INIT_STD, (rank, in_dim)), True, f"{name}.A"),
        B=T.Tensor(np.zeros((out_dim, rank)), True, f"{name}.B"),
        rank=int(rank),
        alpha=alpha,
    )
    registry.adapters[(modality, site)] = adapter
    return adapter


def attach_modality_adapters(registry: AdapterRegistry, modality: str, sites, rank: int,
                             alpha: float | None = None, seed: int = 0) -> list[LoraAdapter]:
    """Attach one adapter per fully-qualified site, with per-site seeds."""
    return [
        attach_adapter(registry, modality, site, rank, alpha, seed=seed * 7919 + i + 1)
        for i, site in enumerate(sites)
    ]


def effective_projection(W, adapter: LoraAdapter) -> T.Tensor:
    """``W + (alpha / r) * B @ A`` as a differentiable tensor."""
    W = T.as_tensor(W)
    if W.shape != (adapter.B.shape[0], adapter.A.shape[1]):
        raise ShapeMismatch(f"base {W.shape} vs adapter B{adapter.B.shape} A{adapter.A.shape}")
    delta = T.matmul(adapter.B, adapter.A)
    if adapter.scaling != 1.0:
        delta = T.scale(delta, adapter.scaling)
    return T.add(W, delta)


def route_forward(registry: AdapterRegistry, modality: str, site: str, W, q) -> T.Tensor:
    """Apply the (possibly adapted) projection for ``modality`` to ``q``.

    A 1-D ``q`` is treated as a column vector (``W @ q``); higher-rank inputs
    hold one vector per row (``q @ W.T``).
    """
    if modality not in registry.modalities:
        raise UnknownModality(f"modality {modality!r} is not registered")
    adapter = registry.adapters.get((modality, site))
    W_eff = W if adapter is None else effective_projection(W, adapter)
    q = T.as_tensor(q)
    if q.ndim == 1:
        return T.reshape(T.linear(T.reshape(q, (1, -1)), W_eff), (-1,))
    return T.linear(q, W_eff)


def set_trainable(registry: AdapterRegistry, spec: dict) -> None:
    """Flip ``requires_grad`` on base weights and adapters.

    ``spec`` may contain ``"base": bool`` and ``"adapters"``, a mapping from
    either a modality name or a ``(modality, site)`` pair to bool. Keys not
    mentioned keep their current flag.
    """
    flags = spec.get("adapters", {}) or {}
    for key in flags:
        if isinstance(key, tuple):
            if key not in registry.adapters:
                raise UnknownAdapter(f"no adapter at {key}")
        elif not registry.for_modality(key):
            raise UnknownAdapter(f"no adapters for modality {key!r}")
    if "base" in spec and spec["base"] is not None:
        if registry.base is None:
            raise UnknownAdapter("registry has no base weights")
        for name in registry.base.base_names():
            registry.base[name].requires_grad = bool(spec["base"])
    for key, flag in flags.items():
        targets = [registry.adapters[key]] if isinstance(key, tuple) else registry.for_modality(key)
        for a in targets:
            a.A.requires_grad = bool(flag)
            a.B.requires_grad = bool(flag)


def numerical_rank(matrix: np.ndarray, rel_tol: float = 1e-8) -> int:
    s = np.linalg.svd(np.asarray(matrix), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s >= rel_tol * s[0]))


def adapter_param_count(registry: AdapterRegistry, modality: str) -> int:
    return sum(a.n_params() for a in registry.for_modality(modality))
