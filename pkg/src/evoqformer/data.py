"""Synthetic multimodal survival cohorts and their on-disk format.

Each modality carries its own latent factor. The log-hazard is a weighted sum
of one direction of every modality's factor, survival times are exponential
with rate ``exp(risk) / base_time``, and each modality's feature tokens are a
noisy linear image of that modality's factor. A model therefore needs all
modalities to recover the full risk.

File format: line 1 is a header object ``{"format", "schema_version",
"manifest"}``; every following line is one patient record. Floats are
written with ``repr`` precision so a round trip is bit-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BadManifest, CorruptFile, MissingModalityInCohort, NoPermissiblePairs, VersionMismatch
from .rng import PRNG_ALGORITHM, philox
from .survival import concordance_index

FORMAT_NAME = "evoqformer-cohort"
SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")

# embedding widths of the text, slide-image and bulk-RNA encoders
DEFAULT_MODALITIES = (("text", 768), ("image", 2048), ("rna", 256))


@dataclass
class CohortManifest:
    modalities: list = field(default_factory=lambda: [list(m) for m in DEFAULT_MODALITIES])
    size: int = 512
    seed: int = 0
    hazard_weights: dict = field(default_factory=lambda: {"text": 6.0, "image": 6.0, "rna": 6.0})
    censoring_rate: float = 0.3
    tokens_per_modality: int = 4
    latent_dim: int = 4
    noise_std: float = 1.0
    base_time: float = 365.0
    split_fractions: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    prng: str = PRNG_ALGORITHM
    oracle_cindex: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modalities = [[str(n), int(d)] for n, d in self.modalities]
        self.hazard_weights = {str(k): float(v) for k, v in self.hazard_weights.items()}
        self.split_fractions = [float(f) for f in self.split_fractions]

    @property
    def dims(self) -> dict:
        return {n: d for n, d in self.modalities}

    @property
    def names(self) -> list:
        return [n for n, _ in self.modalities]

    def validate(self) -> None:
        names = self.names
        if self.size < 2:
            raise BadManifest("cohort size must be >= 2")
        if len(set(names)) != len(names) or not names:
            raise BadManifest(f"modality names must be unique and non-empty: {names}")
        if any(d < 1 for _, d in self.modalities):
            raise BadManifest("modality dims must be >= 1")
        if set(self.hazard_weights) - set(names):
            raise BadManifest(f"hazard weights for unknown modalities: {set(self.hazard_weights) - set(names)}")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise BadManifest("censoring rate must be in [0, 1)")
        if self.tokens_per_modality < 1 or self.latent_dim < 1:
            raise BadManifest("tokens_per_modality and latent_dim must be >= 1")
        if self.noise_std < 0 or self.base_time <= 0:
            raise BadManifest("noise_std must be >= 0 and base_time > 0")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions) or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise BadManifest("split_fractions must be three non-negative numbers summing to 1")
        if self.prng != PRNG_ALGORITHM:
            raise BadManifest(f"unsupported prng {self.prng!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortManifest":
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadManifest(str(exc)) from None


@dataclass(eq=False)
class PatientRecord:
    patient_id: str
    modalities: dict  # name -> (tokens, native_dim) float64
    time: float
    event: bool
    split: str
    latent_risk: float | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatientRecord):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.split == other.split
            and np.float64(self.time).tobytes() == np.float64(other.time).tobytes()
            and self.event == other.event
            and (self.latent_risk is None) == (other.latent_risk is None)
            and (self.latent_risk is None or np.float64(self.latent_risk).tobytes() == np.float64(other.latent_risk).tobytes())
            and list(self.modalities) == list(other.modalities)
            and all(
                self.modalities[m].shape == other.modalities[m].shape
                and self.modalities[m].tobytes() == other.modalities[m].tobytes()
                for m in self.modalities
            )
        )


@dataclass(eq=False)
class Cohort:
    manifest: CohortManifest
    records: list

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.manifest.to_dict() == other.manifest.to_dict() and len(self) == len(other) and all(
            a == b for a, b in zip(self.records, other.records)
        )

    def select(self, split: str | None = None) -> list:
        return [r for r in self.records if split is None or r.split == split]

    def batch(self, split: str | None = None, modalities=None) -> "Batch":
        recs = self.select(split)
        names = list(modalities) if modalities is not None else self.manifest.names
        for m in names:
            if m not in self.manifest.dims:
                raise MissingModalityInCohort(f"cohort has no modality {m!r}")
        feats = {m: np.stack([r.modalities[m] for r in recs]) if recs else np.zeros((0, 1, self.manifest.dims[m])) for m in names}
        return Batch(
            features=feats,
            time=np.array([r.time for r in recs], dtype=np.float64),
            event=np.array([r.event for r in recs], dtype=bool),
            ids=[r.patient_id for r in recs],
            latent_risk=np.array([np.nan if r.latent_risk is None else r.latent_risk for r in recs]),
        )


@dataclass(eq=False)
class Batch:
    features: dict  # name -> (B, T, D)
    time: np.ndarray
    event: np.ndarray
    ids: list
    latent_risk: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    def only(self, modalities) -> "Batch":
        missing = [m for m in modalities if m not in self.features]
        if missing:
            raise MissingModalityInCohort(f"batch lacks modalities {missing}")
        return Batch({m: self.features[m] for m in modalities}, self.time, self.event, self.ids, self.latent_risk)


def _split_labels(n: int, fractions, rng) -> list:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    labels = np.array(["test"] * n, dtype=object)
    perm = rng.permutation(n)
    labels[perm[:n_train]] = "train"
    labels[perm[n_train : n_train + n_val]] = "val"
    return labels.tolist()


def generate_cohort(manifest: CohortManifest) -> Cohort:
    """Draw a cohort; the manifest's ``oracle_cindex`` is filled in."""
    manifest.validate()
    names, dims = manifest.names, manifest.dims
    weights = {m: manifest.hazard_weights.get(m, 0.0) for m in names}
    g = philox(manifest.seed, stream=0)
    loadings, directions = {}, {}
    for m in names:
        loadings[m] = g.normal(0.0, 1.0 / np.sqrt(manifest.latent_dim), (manifest.latent_dim, dims[m]))
        v = g.normal(0.0, 1.0, manifest.latent_dim)
        directions[m] = v / np.linalg.norm(v)
    splits = _split_labels(manifest.size, manifest.split_fractions, g)
    width = len(str(manifest.size - 1))

    records, parts = [], []
    for i in range(manifest.size):
        r = philox(manifest.seed, stream=i + 1)
        part = {}
        feats = {}
        for m in names:
            z = r.normal(0.0, 1.0, manifest.latent_dim)
            part[m] = weights[m] * float(directions[m] @ z)
            signal = z @ loadings[m]
            noise = r.normal(0.0, 1.0, (manifest.tokens_per_modality, dims[m]))
            feats[m] = signal[None, :] + manifest.noise_std * noise
        risk = sum(part[m] for m in names)
        t = r.exponential(1.0) * np.exp(-risk) * manifest.base_time
        event = True
        if r.random() < manifest.censoring_rate:
            event = False
            t = t * (1.0 - r.random())
        t = max(t, np.finfo(float).tiny)
        records.append(PatientRecord(f"P{i:0{width}d}", feats, float(t), event, splits[i], float(risk)))
        parts.append(part)

    cohort = Cohort(manifest, records)
    manifest.oracle_cindex = oracle_cindex(cohort, parts)
    return cohort


def oracle_cindex(cohort: Cohort, parts=None) -> dict:
    """C-index of the true risk, overall and per single modality component."""
    time = np.array([r.time for r in cohort.records])
    event = np.array([r.event for r in cohort.records])
    out = {}
    try:
        out["all"] = concordance_index([r.latent_risk for r in cohort.records], time, event)
        if parts is not None:
            for m in cohort.manifest.names:
                out[m] = concordance_index([p[m] for p in parts], time, event)
    except NoPermissiblePairs:
        pass
    return out


# ---------------------------------------------------------------------------
# persistence


def save_cohort(path, cohort: Cohort) -> None:
    header = {"format": FORMAT_NAME, "schema_version": SCHEMA_VERSION, "manifest": cohort.manifest.to_dict()}
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, allow_nan=False, sort_keys=True) + "\n")
        for r in cohort.records:
            row = {
                "patient_id": r.patient_id,
                "split": r.split,
                "time": r.time,
                "event": bool(r.event),
                "latent_risk": r.latent_risk,
                "modalities": {m: a.tolist() for m, a in r.modalities.items()},
            }
            fh.write(json.dumps(row, allow_nan=False) + "\n")
    os.replace(tmp, path)


def load_cohort(path) -> Cohort:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptFile(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: bad header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CorruptFile(f"{path}: not a cohort file")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise VersionMismatch(f"{path}: schema version {header.get('schema_version')} != {SCHEMA_VERSION}")
    try:
        manifest = CohortManifest.from_dict(header["manifest"])
        manifest.validate()
    except (KeyError, BadManifest) as exc:
        raise CorruptFile(f"{path}: bad manifest: {exc}") from None
    dims = manifest.dims
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            mods = {}
            for m, values in row["modalities"].items():
                arr = np.array(values, dtype=np.float64)
                if m not in dims or arr.ndim != 2 or arr.shape[1] != dims[m] or arr.shape[0] < 1:
                    raise CorruptFile(f"modality {m!r} shape {arr.shape} disagrees with manifest")
                if not np.all(np.isfinite(arr)):
                    raise CorruptFile(f"non-finite values in {m!r}")
                mods[m] = arr
            if list(mods) != manifest.names:
                raise CorruptFile(f"modalities {list(mods)} != manifest {manifest.names}")
            time = float(row["time"])
            if not np.isfinite(time) or time <= 0:
                raise CorruptFile(f"bad time {time}")
            if row["split"] not in SPLITS or not isinstance(row["event"], bool):
                raise CorruptFile("bad split or event field")
            risk = row.get("latent_risk")
            records.append(
                PatientRecord(str(row["patient_id"]), mods, time, row["event"], row["split"],
                              None if risk is None else float(risk))
            )
        except CorruptFile as exc:
            raise CorruptFile(f"{path}:{lineno}: {exc}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptFile(f"{path}:{lineno}: {exc}") from None
    if len(records) != manifest.size:
        raise CorruptFile(f"{path}: {len(records)} records, manifest says {manifest.size}")
    return Cohort(manifest, records)


def dataset_io(path, cohort: Cohort | None = None):
    """Save when ``cohort`` is given, otherwise load."""
    if cohort is not None:
        save_cohort(path, cohort)
        return None
    return load_cohort(path)
