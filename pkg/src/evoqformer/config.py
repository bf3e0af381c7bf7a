"""Run configuration (YAML) and its canonical hash.

Schema (all sections optional except ``seed``)::

    seed: 0
    data:
      cohort_path: cohort.jsonl
      manifest: {modalities: [[text, 768], ...], size: 512, censoring_rate: 0.3, ...}
    model:
      modalities: [text, image, rna]   # dims come from the cohort manifest
      primary: image
      fusion: smqf
      qformer: {depth: 1, embed_dim: 32, heads: 4, queries_per_modality: 4, ffn_multiplier: 2}
      lora: {rank: 4, alpha: null, sites: [self.q, self.k, self.v, cross.q, cross.k, cross.v]}
      head_mode: fork
      tensor_reduce_dim: 8
    training:
      epochs: 200
      lr: 0.001
      restore_best: true
      stages: [{modalities: [image, text]}, {modalities: [image, text, rna]}]
    compare:
      methods: [smqf, early, late, cross_attention, tensor_fusion, gated, crossmodal_transformer]
      single_modality: true
      seeds: [0]
    output:
      dir: runs
      checkpoint: model.ckpt
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

from .baselines import FUSION_KINDS
from .data import CohortManifest
from .errors import BadConfig, BadManifest, ConfigInvalid
from .model import ModelConfig
from .qformer import QFormerConfig

ENV_CONFIG = "EVOQFORMER_CONFIG"

_SECTIONS = {"seed", "data", "model", "training", "compare", "output"}


@dataclass
class RunConfig:
    raw: dict
    seed: int
    cohort_path: str
    manifest: CohortManifest
    model: dict
    training: dict
    compare: dict
    output: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def model_config(self, dims: dict, modalities=None, fusion=None, primary=None) -> ModelConfig:
        """Build a :class:`ModelConfig` using native dims from a cohort manifest."""
        m = self.model
        names = list(modalities if modalities is not None else m.get("modalities") or list(dims))
        unknown = [n for n in names if n not in dims]
        if unknown:
            raise ConfigInvalid(f"model modalities {unknown} not in cohort ({sorted(dims)})")
        prim = primary if primary is not None else m.get("primary")
        if prim not in names:
            prim = names[0]
        lora = m.get("lora", {}) or {}
        kwargs = dict(
            modalities=[[n, dims[n]] for n in names],
            primary=prim,
            fusion=fusion or m.get("fusion", "smqf"),
            qformer=QFormerConfig(**(m.get("qformer") or {})),
            lora_rank=lora.get("rank", 4),
            lora_alpha=lora.get("alpha"),
            head_mode=m.get("head_mode", "fork"),
            tensor_reduce_dim=m.get("tensor_reduce_dim", 8),
            seed=self.seed,
        )
        if lora.get("sites") is not None:
            kwargs["lora_sites"] = list(lora["sites"])
        try:
            return ModelConfig(**kwargs)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def parse_config(raw: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    raw = copy.deepcopy(raw)
    extra = set(raw) - _SECTIONS
    if extra:
        raise ConfigInvalid(f"unknown config sections {sorted(extra)}")
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    if "seed" not in raw or not isinstance(raw["seed"], int):
        raise ConfigInvalid("an integer 'seed' is required")
    seed = raw["seed"]
    data = raw.get("data") or {}
    man_raw = dict(data.get("manifest") or {})
    man_raw.setdefault("seed", seed)
    try:
        manifest = CohortManifest.from_dict(man_raw)
        manifest.validate()
    except BadManifest as exc:
        raise ConfigInvalid(f"data.manifest: {exc}") from None
    model = raw.get("model") or {}
    fusion = model.get("fusion", "smqf")
    if fusion not in FUSION_KINDS:
        raise ConfigInvalid(f"model.fusion must be one of {FUSION_KINDS}")
    try:
        QFormerConfig(**(model.get("qformer") or {}))
    except (TypeError, BadConfig) as exc:
        raise ConfigInvalid(f"model.qformer: {exc}") from None
    training = {"epochs": 200, "lr": 1e-3, "restore_best": True, **(raw.get("training") or {})}
    compare = {"methods": list(FUSION_KINDS), "single_modality": True, "seeds": [seed], **(raw.get("compare") or {})}
    bad = [k for k in compare["methods"] if k not in FUSION_KINDS]
    if bad:
        raise ConfigInvalid(f"compare.methods: unknown kinds {bad}")
    output = {"dir": ".", "checkpoint": "model.ckpt", **(raw.get("output") or {})}
    names = model.get("modalities")
    if names is not None:
        known = set(manifest.dims)
        for stage in training.get("stages") or []:
            missing = set(stage.get("modalities", [])) - known
            if missing:
                raise ConfigInvalid(f"training.stages references unknown modalities {sorted(missing)}")
        if set(names) - known:
            raise ConfigInvalid(f"model.modalities {sorted(set(names) - known)} not in data.manifest")
    return RunConfig(raw, seed, data.get("cohort_path", "cohort.jsonl"), manifest, model, training, compare, output)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigInvalid(f"config file {path!r} not found")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    return parse_config(raw, seed_override)
