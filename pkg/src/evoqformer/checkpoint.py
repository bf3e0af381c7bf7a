"""Checkpoint archive: a zip of ``<param>.npy`` float64 arrays plus ``meta.json``.

Entries are stored uncompressed with a fixed timestamp and sorted names so
identical models produce byte-identical files. ``numpy.load`` can read the
arrays directly.
"""

from __future__ import annotations

import io
import json
import os
import zipfile

import numpy as np

from . import tensor as T
from .errors import CorruptFile, VersionMismatch
from .model import ModelConfig, MultimodalSurvivalModel

FORMAT_NAME = "evoqformer-checkpoint"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def model_meta(model: MultimodalSurvivalModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "added_modalities": model.added,
        "heads": list(model.heads),
        "head_for": dict(model.head_for),
        "lineage": model.lineage,
        "lora": [
            {"modality": a.modality, "site": a.site, "rank": a.rank, "alpha": a.alpha}
            for a in model.registry.adapters.values()
        ],
        "fusion_groups": list(getattr(getattr(model.fusion, "theta", None), "names", [])),
    }


def save_checkpoint(path, model: MultimodalSurvivalModel, extra: dict | None = None) -> None:
    meta = model_meta(model)
    if extra:
        meta["extra"] = extra
    params = model.parameters()
    tmp = f"{path}.tmp"
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        _entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(params):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(params[name].data, dtype=np.float64), allow_pickle=False)
            _entry(zf, f"{name}.npy", buf.getvalue())
    os.replace(tmp, path)


def read_arrays(path) -> tuple[dict, dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for info in zf.infolist():
                if info.filename.endswith(".npy"):
                    arrays[info.filename[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(info)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CorruptFile(f"{path}: unreadable checkpoint: {exc}") from None
    if meta.get("format") != FORMAT_NAME:
        raise CorruptFile(f"{path}: not a checkpoint")
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {meta.get('format_version')} != {FORMAT_VERSION}")
    return meta, arrays


def load_checkpoint(path) -> MultimodalSurvivalModel:
    meta, arrays = read_arrays(path)
    model = MultimodalSurvivalModel(ModelConfig.from_dict(meta["model_config"]))
    for rec in meta.get("added_modalities", []):
        model.add_modality(rec["name"], rec["native_dim"], rank=rec["rank"], seed=rec["seed"])
    d = model.config.qformer.embed_dim
    for name in meta["heads"]:
        if name not in model.heads:
            model.heads[name] = (T.Tensor(np.zeros((1, d)), True, f"head.{name}.W"),
                                 T.Tensor(np.zeros(1), True, f"head.{name}.b"))
    model.head_for.clear()
    model.head_for.update(meta["head_for"])
    params = model.parameters()
    if set(params) != set(arrays):
        missing = sorted(set(params) ^ set(arrays))[:5]
        raise CorruptFile(f"{path}: parameter set mismatch, e.g. {missing}")
    for name, t in params.items():
        arr = arrays[name]
        if arr.shape != t.shape or not np.all(np.isfinite(arr)):
            raise CorruptFile(f"{path}: bad array for {name}")
        t.data = arr.astype(np.float64)
    model.lineage = meta["lineage"]
    return model
