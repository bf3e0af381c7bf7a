"""Stage-wise training with modality addition.

Stage 1 trains everything on the initial modality set. Later stages register
a new modality (query bank, input adapter, LoRA adapters with zero ``B``, a
zero column group in the fusion projection) and, by default, train only
those new parameters plus a prediction head forked for the enlarged modality
set. Predictions routed through the old modalities alone keep using the old
head, so they are bit-identical before and after the stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadConfig, LineageMismatch, MissingModalityInCohort, UnknownModality
from .model import Adam, MultimodalSurvivalModel, _set_key, fit, safe_cindex

# trainability groups understood by StagePlan
#   base              shared transformer blocks
#   modality:<m>      query bank + input adapter of <m>
#   adapters:<m>      LoRA adapters of <m>
#   theta:<m>         fusion column group of supporting modality <m>
#   theta_bias        fusion projection bias
#   head              head for the stage's modality set (forked in "fork" mode)
#   fusion            every fusion parameter (baseline kinds)


@dataclass
class StagePlan:
    index: int
    modalities: list
    trainable: list | None = None  # None = default for the stage
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    restore_best: bool = True
    new_modalities: list = field(default_factory=list)  # [[name, native_dim], ...] added before training

    @classmethod
    def from_dict(cls, d: dict) -> "StagePlan":
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadConfig(str(exc)) from None


def default_trainable(plan: StagePlan, previous_modalities) -> list:
    if plan.index == 1:
        return ["base", "fusion", "head"] + [g for m in plan.modalities for g in (f"modality:{m}", f"adapters:{m}")]
    new = [m for m in plan.modalities if m not in previous_modalities]
    groups = ["head"]
    for m in new:
        groups += [f"modality:{m}", f"adapters:{m}", f"theta:{m}"]
    return groups


def validate_plans(plans) -> None:
    """Modality sets must strictly grow; the base trains in stage 1 only."""
    prev = None
    for i, plan in enumerate(plans, start=1):
        if plan.index != i:
            raise BadConfig(f"stage plans must be numbered 1..n, got {plan.index} at position {i}")
        mods = set(plan.modalities)
        if prev is not None and not prev < mods:
            raise BadConfig(f"stage {i} modalities {sorted(mods)} must strictly contain {sorted(prev)}")
        if i > 1 and plan.trainable and "base" in plan.trainable:
            raise BadConfig(f"stage {i}: the base transformer is trainable only in stage 1")
        prev = mods


def resolve_groups(model: MultimodalSurvivalModel, groups, modalities) -> list:
    """Expand trainability groups to parameter names."""
    params = model.parameters()
    names = []
    for g in groups:
        kind, _, arg = g.partition(":")
        if kind == "base":
            names += model.base_param_names()
        elif kind == "modality":
            if arg not in model.modalities:
                raise UnknownModality(f"trainable group {g!r}: unknown modality")
            names += [f"qformer.{n}" for n in model.weights.modality_names(arg)]
        elif kind == "adapters":
            if arg not in model.modalities:
                raise UnknownModality(f"trainable group {g!r}: unknown modality")
            for a in model.registry.for_modality(arg):
                names += list(a.param_names())
        elif kind == "theta":
            n = f"fusion.theta.{arg}"
            if n not in params:
                raise UnknownModality(f"trainable group {g!r}: no fusion column group")
            names.append(n)
        elif kind == "theta_bias":
            names.append("fusion.theta.bias")
        elif kind == "fusion":
            names += list(model.fusion.params())
        elif kind == "head":
            h = model.head_name(modalities)
            names += [f"head.{h}.W", f"head.{h}.b"]
        else:
            raise BadConfig(f"unknown trainable group {g!r}")
    return names


def add_modality(model: MultimodalSurvivalModel, name: str, native_dim: int, rank: int | None = None,
                 seed: int = 0) -> None:
    """Register a new modality with zero-effect initialisation."""
    model.add_modality(name, native_dim, rank=rank, seed=seed)


@dataclass
class StageReport:
    stage: int
    modalities: list
    trainable_groups: list
    n_trainable: int
    loss: list
    val_cindex: list
    best_epoch: int | None
    selected_val_cindex: float | None
    test_cindex: float | None
    hash_before: dict
    hash_after: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train_stage(model: MultimodalSurvivalModel, plan: StagePlan, cohort, previous_modalities=()) -> StageReport:
    for m in plan.modalities:
        if m not in cohort.manifest.dims:
            raise MissingModalityInCohort(f"cohort does not provide modality {m!r}")
    for name, dim in plan.new_modalities:
        if name not in model.modalities:
            add_modality(model, name, dim, seed=plan.seed)
    for m in plan.modalities:
        if m not in model.modalities:
            raise UnknownModality(f"stage {plan.index}: modality {m!r} is not registered")

    groups = plan.trainable if plan.trainable is not None else default_trainable(plan, previous_modalities)
    if "head" in groups and model.config.head_mode == "fork":
        if _set_key(plan.modalities) not in model.head_for:
            model.fork_head(plan.modalities)
    names = resolve_groups(model, groups, plan.modalities)
    model.set_trainable(names)

    frozen = [n for n in model.parameters() if n not in set(names)]
    hash_before = {"trainable": model.state_hash(names), "frozen": model.state_hash(frozen),
                   "base": model.state_hash(model.base_param_names())}
    train = cohort.batch("train", plan.modalities)
    val = cohort.batch("val", plan.modalities)
    test = cohort.batch("test", plan.modalities)
    hist = fit(model, train, val, epochs=plan.epochs, lr=plan.lr, modalities=plan.modalities,
               optimizer=Adam(plan.lr), restore_best=plan.restore_best)
    hash_after = {"trainable": model.state_hash(names), "frozen": model.state_hash(frozen),
                  "base": model.state_hash(model.base_param_names())}
    selected = hist.best_val_cindex if plan.restore_best else hist.final_val_cindex
    return StageReport(
        stage=plan.index,
        modalities=list(plan.modalities),
        trainable_groups=list(groups),
        n_trainable=model.n_params(names),
        loss=hist.loss,
        val_cindex=hist.val_cindex,
        best_epoch=hist.best_epoch,
        selected_val_cindex=selected,
        test_cindex=safe_cindex(model.predict(test.features, plan.modalities), test) if len(test) else None,
        hash_before=hash_before,
        hash_after=hash_after,
    )


@dataclass
class NonInterferenceReport:
    modalities: list
    max_abs_diff: float
    cindex_before: float | None
    cindex_after: float | None

    @property
    def cindex_delta(self):
        if self.cindex_before is None or self.cindex_after is None:
            return None
        return self.cindex_after - self.cindex_before

    @property
    def identical(self) -> bool:
        return self.max_abs_diff == 0.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["cindex_delta"] = self.cindex_delta
        d["identical"] = self.identical
        return d


def non_interference_check(model_before, model_after, probe, modalities) -> NonInterferenceReport:
    """Compare predictions of two lineage-sharing models on ``probe`` restricted to ``modalities``."""
    if model_before.lineage != model_after.lineage:
        raise LineageMismatch("models do not share a stage-1 lineage")
    batch = probe.only(modalities)
    before = model_before.predict(batch.features, modalities)
    after = model_after.predict(batch.features, modalities)
    return NonInterferenceReport(
        modalities=list(modalities),
        max_abs_diff=float(np.max(np.abs(after - before))) if before.size else 0.0,
        cindex_before=safe_cindex(before, batch),
        cindex_after=safe_cindex(after, batch),
    )


def run_continual(model: MultimodalSurvivalModel, plans, cohort, probe_split: str = "test") -> dict:
    """Run every stage, checking non-interference on the previous modality set after each later stage."""
    validate_plans(plans)
    stages, checks = [], []
    previous: list = []
    for plan in plans:
        before = model.snapshot() if previous else None
        stages.append(train_stage(model, plan, cohort, previous))
        if before is not None:
            probe = cohort.batch(probe_split, previous)
            checks.append({"after_stage": plan.index, **non_interference_check(before, model, probe, previous).to_dict()})
        previous = list(plan.modalities)
    return {"stages": [s.to_dict() for s in stages], "non_interference": checks}
