"""Full survival model: shared Q-Former + MM-LoRA routing + fusion + risk head."""

from __future__ import annotations

import copy
import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .baselines import build_fusion
from .errors import BadConfig, DuplicateModality, UnknownModality
from .lora import AdapterRegistry, attach_modality_adapters
from .qformer import DEFAULT_LORA_SITE_KINDS, LORA_SITE_KINDS, QFormerConfig, init_qformer, qformer_forward, site_names
from .rng import philox
from .smqf import FusedQuery
from .survival import concordance_index, cox_loss

HEAD_MODES = ("fork", "shared")


@dataclass
class ModelConfig:
    modalities: list  # [[name, native_dim], ...] in routing order
    primary: str | None = None
    fusion: str = "smqf"
    qformer: QFormerConfig = field(default_factory=QFormerConfig)
    lora_rank: int = 4
    lora_alpha: float | None = None
    lora_sites: list = field(default_factory=lambda: list(DEFAULT_LORA_SITE_KINDS))
    tensor_reduce_dim: int = 8
    head_mode: str = "fork"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.qformer, dict):
            self.qformer = QFormerConfig(**self.qformer)
        self.modalities = [[str(n), int(d)] for n, d in self.modalities]
        names = [n for n, _ in self.modalities]
        if not names:
            raise BadConfig("model needs at least one modality")
        if len(set(names)) != len(names):
            raise BadConfig(f"duplicate modality names: {names}")
        if self.primary is None:
            self.primary = names[0]
        if self.primary not in names:
            raise BadConfig(f"primary modality {self.primary!r} not in {names}")
        bad = [s for s in self.lora_sites if s not in LORA_SITE_KINDS]
        if bad:
            raise BadConfig(f"unknown LoRA sites {bad}; choose from {LORA_SITE_KINDS}")
        self.lora_sites = list(self.lora_sites)
        if self.head_mode not in HEAD_MODES:
            raise BadConfig(f"head_mode must be one of {HEAD_MODES}")
        if self.lora_rank < 1:
            raise BadConfig("lora_rank must be >= 1")

    @property
    def names(self) -> list:
        return [n for n, _ in self.modalities]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qformer"] = self.qformer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadConfig(str(exc)) from None


def _set_key(modalities) -> str:
    return "+".join(sorted(modalities))


class MultimodalSurvivalModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        qcfg = config.qformer
        seed = config.seed
        self.weights = init_qformer(qcfg, config.modalities, seed)
        self.registry = AdapterRegistry(self.weights)
        self._sites = site_names(qcfg, config.lora_sites)
        for idx, name in enumerate(config.names):
            attach_modality_adapters(self.registry, name, self._sites, config.lora_rank, config.lora_alpha,
                                     seed=seed * 31 + idx + 1)
        d = qcfg.embed_dim
        self.fusion = build_fusion(
            config.fusion, config.names, [d] * len(config.names), d, primary=config.primary,
            heads=qcfg.heads, seed=seed + 17, queries_per_modality=qcfg.queries_per_modality,
            tensor_reduce_dim=config.tensor_reduce_dim,
        )
        self.heads: OrderedDict[str, tuple] = OrderedDict()
        self.head_for: OrderedDict[str, str] = OrderedDict()
        self.added: list = []  # modalities registered after construction, for checkpoint replay
        self._new_head("h0", config.names, philox(seed, stream=3))
        self.lineage = hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    # -- structure ---------------------------------------------------------

    @property
    def modalities(self) -> list:
        return list(self.weights.modalities)

    def _new_head(self, name, modalities, rng=None, copy_from=None):
        d = self.config.qformer.embed_dim
        if copy_from is not None:
            W0, b0 = (t.data.copy() for t in self.heads[copy_from])
        else:
            W0, b0 = rng.normal(0.0, 1.0 / np.sqrt(d), (1, d)), np.zeros(1)
        self.heads[name] = (T.Tensor(W0, True, f"head.{name}.W"), T.Tensor(b0, True, f"head.{name}.b"))
        self.head_for[_set_key(modalities)] = name
        return name

    def fork_head(self, modalities, source: str | None = None) -> str:
        """New head for ``modalities`` initialised as a copy of ``source``."""
        source = source or self.head_name(modalities)
        name = f"h{len(self.heads)}"
        return self._new_head(name, modalities, copy_from=source)

    def head_name(self, modalities) -> str:
        """Head registered for exactly this modality set, else the largest subset's."""
        key = _set_key(modalities)
        if key in self.head_for:
            return self.head_for[key]
        wanted = set(modalities)
        best = None
        for k, name in self.head_for.items():
            members = set(k.split("+"))
            if members <= wanted and (best is None or len(members) > best[0]):
                best = (len(members), name)
        return best[1] if best else next(iter(self.heads))

    def add_modality(self, name: str, native_dim: int, rank: int | None = None, seed: int = 0) -> None:
        if name in self.weights.modalities:
            raise DuplicateModality(f"modality {name!r} already registered")
        if not hasattr(self.fusion, "add_modality"):
            raise BadConfig(f"fusion kind {self.config.fusion!r} cannot be extended with a modality")
        rank = self.config.lora_rank if rank is None else rank
        self.weights.register_modality(name, native_dim, seed=seed)
        attach_modality_adapters(self.registry, name, self._sites, rank, self.config.lora_alpha, seed=seed * 31 + 7)
        self.fusion.add_modality(name)
        self.added.append({"name": name, "native_dim": int(native_dim), "rank": int(rank), "seed": int(seed)})

    def parameters(self) -> OrderedDict:
        out = OrderedDict((f"qformer.{n}", t) for n, t in self.weights.params.items())
        out.update(self.registry.params())
        out.update(self.fusion.params())
        for name, (W, b) in self.heads.items():
            out[f"head.{name}.W"] = W
            out[f"head.{name}.b"] = b
        return out

    def base_param_names(self) -> list:
        return [f"qformer.{n}" for n in self.weights.base_names()]

    def modality_param_names(self, modality: str) -> list:
        names = [f"qformer.{n}" for n in self.weights.modality_names(modality)]
        for a in self.registry.for_modality(modality):
            names.extend(a.param_names())
        return names

    def state_hash(self, names=None) -> str:
        params = self.parameters()
        h = hashlib.sha256()
        for n in sorted(params if names is None else names):
            h.update(n.encode())
            h.update(params[n].data.tobytes())
        return h.hexdigest()

    def set_trainable(self, names) -> None:
        """Make exactly ``names`` trainable."""
        names = set(names)
        params = self.parameters()
        unknown = names - set(params)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)[:5]}")
        for n, t in params.items():
            t.requires_grad = n in names

    def n_params(self, names=None) -> int:
        params = self.parameters()
        return sum(params[n].size for n in (params if names is None else names))

    def snapshot(self) -> "MultimodalSurvivalModel":
        return copy.deepcopy(self)

    # -- forward -----------------------------------------------------------

    def encode(self, features: dict) -> dict:
        out = {}
        for m in self.modalities:
            if m in features:
                out[m] = qformer_forward(self.weights, features[m], m, self.registry)
        unknown = set(features) - set(out)
        if unknown:
            raise UnknownModality(f"unregistered modalities {sorted(unknown)}")
        return out

    def forward(self, features: dict, modalities=None) -> T.Tensor:
        """Risk scores ``(B,)`` for batched features ``{name: (B, T, D)}``."""
        if modalities is not None:
            missing = [m for m in modalities if m not in features]
            if missing:
                raise UnknownModality(f"features missing for {missing}")
            features = {m: features[m] for m in modalities}
        queries = self.encode(features)
        out = self.fusion(queries)
        if getattr(self.fusion, "outputs_risk", False):
            return out
        rep = T.mean_pool(out.tokens, axis=-2) if isinstance(out, FusedQuery) else out
        W, b = self.heads[self.head_name(list(features))]
        return T.reshape(T.linear(rep, W, b), (-1,))

    def predict(self, features: dict, modalities=None) -> np.ndarray:
        with T.no_grad():
            return self.forward(features, modalities).data.copy()


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: dict = {}

    def step(self, params: dict) -> None:
        if self.lr == 0.0:
            return
        for name, p in params.items():
            if not p.requires_grad or p.grad is None:
                continue
            m, v, t = self.state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
            t += 1
            g = p.grad
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self.state[name] = (m, v, t)


@dataclass
class History:
    loss: list = field(default_factory=list)
    val_cindex: list = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def final_val_cindex(self):
        return self.val_cindex[-1] if self.val_cindex else None

    @property
    def best_val_cindex(self):
        return None if self.best_epoch is None else self.val_cindex[self.best_epoch]


def safe_cindex(eta, batch) -> float | None:
    try:
        return concordance_index(eta, batch.time, batch.event)
    except Exception:  # too few usable pairs in a tiny split
        return None


def fit(model: MultimodalSurvivalModel, train, val=None, epochs: int = 100, lr: float = 1e-3,
        modalities=None, optimizer: Adam | None = None, restore_best: bool = False,
        callback=None) -> History:
    """Full-batch Cox training; only ``requires_grad`` parameters move.

    With ``restore_best`` and a validation batch, the trainable parameters
    are reset at the end to the epoch with the highest validation c-index
    (earliest on ties).
    """
    mods = list(modalities) if modalities is not None else [m for m in model.modalities if m in train.features]
    opt = optimizer or Adam(lr)
    params = model.parameters()
    hist = History()
    best = None
    for epoch in range(epochs):
        eta = model.forward(train.features, mods)
        loss = cox_loss(eta, train.time, train.event)
        if loss.node is not None:
            T.backward(loss)
            opt.step(params)
        for p in params.values():
            p.grad = None
        hist.loss.append(loss.item())
        if val is not None:
            c = safe_cindex(model.predict(val.features, mods), val)
            hist.val_cindex.append(c)
            if c is not None and (hist.best_epoch is None or c > hist.val_cindex[hist.best_epoch]):
                hist.best_epoch = epoch
                if restore_best:
                    best = {n: p.data.copy() for n, p in params.items() if p.requires_grad}
        if callback is not None:
            callback(epoch, hist)
    if restore_best and best is not None:
        for n, arr in best.items():
            params[n].data = arr
    return hist
