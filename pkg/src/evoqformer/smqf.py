"""Self-gated multimodal query fusion.

Supporting-modality query outputs are concatenated along the channel axis,
mapped back to width ``d`` by one linear layer, passed through the self-gate
``sigmoid(x) * x`` and appended after the primary modality's untouched query
tokens. The token count is therefore ``2k`` however many supporting
modalities there are.

The projection weight is kept as one (d, d) column group per supporting
modality, so a new modality can be appended later as a zero group.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import BadConfig, DuplicateModality, NonFiniteInput, ShapeMismatch, UnknownModality, WrongModalityCount
from .rng import philox


@dataclass
class FusionConfig:
    modalities: list
    primary: int = 0
    queries_per_modality: int = 8
    embed_dim: int = 64

    def __post_init__(self):
        if not self.modalities:
            raise BadConfig("fusion needs at least one modality")
        if len(set(self.modalities)) != len(self.modalities):
            raise BadConfig(f"duplicate modality names: {self.modalities}")
        if not 0 <= self.primary < len(self.modalities):
            raise BadConfig(f"primary index {self.primary} out of range")

    @property
    def primary_name(self) -> str:
        return self.modalities[self.primary]

    @property
    def supporting(self) -> list:
        return [m for i, m in enumerate(self.modalities) if i != self.primary]


@dataclass(eq=False)
class ProjectionTheta:
    embed_dim: int
    groups: OrderedDict = field(default_factory=OrderedDict)  # modality -> (d, d)
    bias: T.Tensor | None = None

    @classmethod
    def init(cls, supporting, embed_dim: int, seed: int = 0, identity: bool = False):
        theta = cls(embed_dim)
        rng = philox(seed)
        m = max(len(supporting), 1)
        for name in supporting:
            if identity:
                w = np.eye(embed_dim)
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(m * embed_dim), (embed_dim, embed_dim))
            theta.groups[name] = T.Tensor(w, True, f"fusion.theta.{name}")
        theta.bias = T.Tensor(np.zeros(embed_dim), True, "fusion.theta.bias")
        return theta

    @property
    def names(self) -> list:
        return list(self.groups)

    def weight(self, names=None) -> T.Tensor:
        names = self.names if names is None else names
        return T.concat([self.groups[n] for n in names], axis=1)

    def extend(self, name: str) -> None:
        """Append a zero column group for a new supporting modality."""
        if name in self.groups:
            raise DuplicateModality(f"theta already has a column group for {name!r}")
        d = self.embed_dim
        self.groups[name] = T.Tensor(np.zeros((d, d)), True, f"fusion.theta.{name}")

    def params(self) -> OrderedDict:
        out = OrderedDict((f"fusion.theta.{n}", t) for n, t in self.groups.items())
        out["fusion.theta.bias"] = self.bias
        return out


@dataclass(eq=False)
class FusedQuery:
    tokens: T.Tensor  # (..., 2k, d), or (..., k, d) with no supporting modality
    k: int

    @property
    def primary(self) -> np.ndarray:
        return self.tokens.data[..., : self.k, :]

    @property
    def gated(self) -> np.ndarray:
        return self.tokens.data[..., self.k :, :]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-2]


def project_supporting(theta: ProjectionTheta, supporting, names=None) -> T.Tensor:
    """Concatenate supporting queries along channels and map to width d.

    ``names`` selects which column groups the inputs correspond to; by
    default all groups, in order.
    """
    names = theta.names if names is None else list(names)
    for n in names:
        if n not in theta.groups:
            raise UnknownModality(f"theta has no column group for {n!r}")
    supporting = [T.as_tensor(s) for s in supporting]
    if len(supporting) != len(names) or not supporting:
        raise WrongModalityCount(f"expected {len(names)} supporting tensors, got {len(supporting)}")
    ref = supporting[0].shape
    for s in supporting:
        if s.shape != ref or s.shape[-1] != theta.embed_dim:
            raise ShapeMismatch(f"supporting queries must share shape (..., k, {theta.embed_dim}); got {s.shape}")
    x = supporting[0] if len(supporting) == 1 else T.concat(supporting, axis=-1)
    return T.linear(x, theta.weight(names), theta.bias)


def self_gate(x) -> T.Tensor:
    x = T.as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteInput("self_gate input must be finite")
    return T.hadamard(T.sigmoid(x), x)


def fuse_queries(x_p, x_gated=None) -> FusedQuery:
    """Primary tokens first, gated supporting tokens after."""
    x_p = T.as_tensor(x_p)
    k = x_p.shape[-2]
    if x_gated is None:
        return FusedQuery(x_p, k)
    x_gated = T.as_tensor(x_gated)
    if x_gated.shape != x_p.shape:
        raise ShapeMismatch(f"primary {x_p.shape} vs gated {x_gated.shape}")
    return FusedQuery(T.concat([x_p, x_gated], axis=-2), k)


class SMQFusion:
    """Fusion module used by the full model."""

    kind = "smqf"

    def __init__(self, config: FusionConfig, seed: int = 0):
        self.config = config
        self.theta = ProjectionTheta.init(config.supporting, config.embed_dim, seed=seed)

    @property
    def primary(self) -> str:
        return self.config.primary_name

    def params(self) -> OrderedDict:
        return self.theta.params()

    def add_modality(self, name: str) -> None:
        self.theta.extend(name)
        self.config.modalities.append(name)

    def __call__(self, queries: dict) -> FusedQuery:
        if self.primary not in queries:
            raise UnknownModality(f"primary modality {self.primary!r} missing from inputs")
        names = [n for n in self.theta.names if n in queries]
        unknown = set(queries) - set(names) - {self.primary}
        if unknown:
            raise UnknownModality(f"no fusion weights for {sorted(unknown)}")
        if not names:
            return fuse_queries(queries[self.primary])
        x_s = project_supporting(self.theta, [queries[n] for n in names], names)
        return fuse_queries(queries[self.primary], self_gate(x_s))
