import json

import numpy as np
import pytest

from evoqformer.data import (
    CohortManifest,
    dataset_io,
    generate_cohort,
    load_cohort,
    save_cohort,
)
from evoqformer.errors import BadManifest, CorruptFile, MissingModalityInCohort, VersionMismatch


def small(**kw):
    base = dict(modalities=[["text", 6], ["image", 5], ["rna", 4]], size=40, seed=3,
                hazard_weights={"text": 1.0, "image": 1.0, "rna": 1.0})
    base.update(kw)
    return CohortManifest(**base)


def test_default_dims():
    m = CohortManifest(size=8)
    cohort = generate_cohort(m)
    for r in cohort.records:
        assert {k: v.shape[1] for k, v in r.modalities.items()} == {"text": 768, "image": 2048, "rna": 256}
        assert all(np.all(np.isfinite(v)) for v in r.modalities.values())


def test_same_seed_bit_identical():
    assert generate_cohort(small()) == generate_cohort(small())
    assert generate_cohort(small()) != generate_cohort(small(seed=4))


def test_oracle_cindex_uncensored():
    cohort = generate_cohort(CohortManifest(size=400, censoring_rate=0.0, seed=11))
    assert cohort.manifest.oracle_cindex["all"] > 0.95


def test_censoring_rate_approx():
    cohort = generate_cohort(small(size=2000, censoring_rate=0.3))
    rate = 1 - np.mean([r.event for r in cohort.records])
    assert abs(rate - 0.3) < 0.04
    assert all(r.time > 0 for r in cohort.records)


def test_splits_partition():
    cohort = generate_cohort(small(size=100))
    sizes = {s: len(cohort.select(s)) for s in ("train", "val", "test")}
    assert sizes == {"train": 60, "val": 20, "test": 20}
    b = cohort.batch("val", ["image"])
    assert b.features["image"].shape == (20, 4, 5) and len(b) == 20
    with pytest.raises(MissingModalityInCohort):
        cohort.batch("val", ["audio"])


def test_manifest_validation():
    with pytest.raises(BadManifest):
        small(size=1).validate()
    with pytest.raises(BadManifest):
        small(censoring_rate=1.0).validate()
    with pytest.raises(BadManifest):
        small(split_fractions=[0.5, 0.5, 0.5]).validate()
    with pytest.raises(BadManifest):
        CohortManifest.from_dict({"bogus": 1})


def test_roundtrip_bit_identical(tmp_path):
    cohort = generate_cohort(small(size=3))
    path = tmp_path / "c.jsonl"
    dataset_io(path, cohort)
    assert dataset_io(path) == cohort


def test_truncated_file(tmp_path):
    path = tmp_path / "c.jsonl"
    save_cohort(path, generate_cohort(small(size=3)))
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptFile):
        load_cohort(path)


def test_dims_disagree(tmp_path):
    path = tmp_path / "c.jsonl"
    save_cohort(path, generate_cohort(small(size=3)))
    lines = path.read_text().splitlines()
    row = json.loads(lines[1])
    row["modalities"]["rna"] = [v[:-1] for v in row["modalities"]["rna"]]
    lines[1] = json.dumps(row)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptFile):
        load_cohort(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "c.jsonl"
    save_cohort(path, generate_cohort(small(size=3)))
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["schema_version"] = 99
    lines[0] = json.dumps(header)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(VersionMismatch):
        load_cohort(path)


def test_hazard_loading_shows_in_oracle():
    m = small(size=600, censoring_rate=0.0, hazard_weights={"text": 0.0, "image": 3.0, "rna": 0.0})
    oc = generate_cohort(m).manifest.oracle_cindex
    assert oc["image"] > 0.8 and abs(oc["text"] - 0.5) < 0.08
