"""Command-line entry point.

    evoqformer gen-data  --config cfg.yaml [--seed N] [--out DIR]
    evoqformer train     --config cfg.yaml [--out DIR]
    evoqformer eval      --config cfg.yaml [--out DIR] [--checkpoint PATH]
    evoqformer continual --config cfg.yaml [--out DIR]
    evoqformer compare   --config cfg.yaml [--out DIR] [--jobs N]
    evoqformer gradcheck [--fusion smqf ...]

Relative cohort and checkpoint paths resolve against ``--out`` (default: the
config's ``output.dir``). Reports are JSON with sorted keys and contain no
wall-clock data, so reruns are byte-identical; timings go to a
``<report>.timing.json`` sidecar. Failures print one JSON object on stderr and
exit 2 (bad arguments), 3 (invalid config), 4 (data error) or 5 (numerical
failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import errors as E
from ._kernels import BACKEND
from .baselines import FUSION_KINDS, MAX_TENSOR_FUSION_MODALITIES
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ENV_CONFIG, RunConfig, config_hash, load_config, parse_config
from .continual import StagePlan, run_continual
from .data import SPLITS, generate_cohort, load_cohort, oracle_cindex, save_cohort
from .gradcheck import run_suite
from .model import Adam, MultimodalSurvivalModel, fit, safe_cindex
from .survival import CINDEX_VARIANT, aggregate_mean

log = logging.getLogger("evoqformer")

COMMANDS = ("gen-data", "train", "eval", "continual", "compare", "gradcheck")

# errors without a family of their own, grouped by what usually causes them
_CONFIG_LIKE = (E.UnknownModality, E.DuplicateModality, E.DuplicateAdapter, E.UnknownAdapter,
                E.RankTooLarge, E.WrongModalityCount, E.UnsupportedArity, E.UnknownKind)
_DATA_LIKE = (E.ShapeMismatch, E.LineageMismatch)


class BadArgs(E.EvoError):
    exit_code = 2


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (E.ConfigInvalid, E.DataError, E.NumericalFailure, BadArgs)):
        return exc.exit_code
    if isinstance(exc, _CONFIG_LIKE):
        return 3
    if isinstance(exc, _DATA_LIKE):
        return 4
    if isinstance(exc, E.EvoError):
        return 5
    return 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadArgs(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evoqformer", description="Multimodal Q-Former survival models on synthetic cohorts.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"YAML run config (default: ${ENV_CONFIG})")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: output.dir from the config)")
    common.add_argument("--report", help="report file name or path")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers (compare only)")
    common.add_argument("-v", "--verbose", action="store_true")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("train", "eval", "continual", "compare"):
            sp.add_argument("--cohort", help="cohort file (default: data.cohort_path)")
        if name in ("train", "eval", "continual"):
            sp.add_argument("--checkpoint", help="checkpoint path (default: output.checkpoint)")
        if name == "gen-data":
            sp.add_argument("--cohort", help="cohort file to write (default: data.cohort_path)")
        if name == "gradcheck":
            sp.add_argument("--fusion", action="append", choices=FUSION_KINDS,
                            help="fusion kinds for the full-model check (repeatable; default smqf)")
            sp.add_argument("--tol", type=float, default=1e-4)
            sp.add_argument("--step", type=float, default=1e-5)
    return p


# ---------------------------------------------------------------------------
# helpers


def _load(args) -> RunConfig:
    path = args.config or os.environ.get(ENV_CONFIG)
    if path:
        return load_config(path, args.seed)
    if args.seed is None:
        raise E.ConfigInvalid(f"no config given (--config or ${ENV_CONFIG}) and no --seed")
    return parse_config({"seed": args.seed})


def _out_dir(args, cfg: RunConfig | None) -> str:
    out = args.out or (cfg.output.get("dir", ".") if cfg else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _resolve(out: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(out, path)


def _read_cohort(path: str):
    if not os.path.exists(path):
        raise E.DataError(f"cohort file {path!r} not found")
    return load_cohort(path)


def _check_finite(values, what: str) -> None:
    bad = [v for v in values if v is not None and not math.isfinite(v)]
    if bad:
        raise E.NonFiniteOutput(f"{what} became non-finite")


def _write_report(out: str, args, default_name: str, report: dict, seconds: float) -> str:
    path = _resolve(out, args.report or default_name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")
    with open(path + ".timing.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_clock_seconds": seconds, "kernel_backend": BACKEND}, fh, sort_keys=True)
        fh.write("\n")
    return path


def _header(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config_hash": cfg.hash, "seed": cfg.seed, "cindex_variant": CINDEX_VARIANT}


def _split_cindex(model: MultimodalSurvivalModel, cohort, modalities) -> dict:
    out = {}
    for split in SPLITS:
        b = cohort.batch(split, modalities)
        out[split] = safe_cindex(model.predict(b.features, modalities), b) if len(b) else None
    return out


def _train_model(cfg: RunConfig, cohort, modalities, fusion=None, seed=None, primary=None):
    if seed is not None and seed != cfg.seed:
        cfg = parse_config(cfg.raw, seed)
    mcfg = cfg.model_config(cohort.manifest.dims, modalities, fusion, primary)
    model = MultimodalSurvivalModel(mcfg)
    tr = cfg.training
    train = cohort.batch("train", mcfg.names)
    val = cohort.batch("val", mcfg.names)
    opt = Adam(tr["lr"], tuple(tr.get("betas", (0.9, 0.999))), tr.get("eps", 1e-8))
    hist = fit(model, train, val, epochs=int(tr["epochs"]), lr=tr["lr"], modalities=mcfg.names,
               optimizer=opt, restore_best=bool(tr.get("restore_best", True)))
    _check_finite(hist.loss, "training loss")
    return model, hist


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> dict:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    cohort = generate_cohort(cfg.manifest)
    path = _resolve(out, args.cohort or cfg.cohort_path)
    save_cohort(path, cohort)
    report = {**_header(cfg, "gen-data"), "cohort_path": os.path.basename(path), "n": len(cohort),
              "manifest": cohort.manifest.to_dict(),
              "split_sizes": {s: len(cohort.select(s)) for s in SPLITS},
              "event_rate": float(np.mean([r.event for r in cohort.records]))}
    _write_report(out, args, "gen-data_report.json", report, time.perf_counter() - t0)
    return report


def cmd_train(args) -> dict:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    cohort = _read_cohort(_resolve(out, args.cohort or cfg.cohort_path))
    model, hist = _train_model(cfg, cohort, cfg.model.get("modalities"))
    names = model.config.names
    ckpt = _resolve(out, args.checkpoint or cfg.output["checkpoint"])
    save_checkpoint(ckpt, model, extra={"config_hash": cfg.hash})
    report = {
        **_header(cfg, "train"),
        "modalities": names,
        "fusion": model.config.fusion,
        "n_params": model.n_params(),
        "loss": hist.loss,
        "val_cindex": hist.val_cindex,
        "best_epoch": hist.best_epoch,
        "cindex": _split_cindex(model, cohort, names),
        "checkpoint": os.path.basename(ckpt),
    }
    _write_report(out, args, "train_report.json", report, time.perf_counter() - t0)
    return report


def cmd_eval(args) -> dict:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    cohort = _read_cohort(_resolve(out, args.cohort or cfg.cohort_path))
    ckpt = _resolve(out, args.checkpoint or cfg.output["checkpoint"])
    if not os.path.exists(ckpt):
        raise E.DataError(f"checkpoint {ckpt!r} not found")
    model = load_checkpoint(ckpt)
    names = [m for m in model.modalities if m in cohort.manifest.dims]
    if not names:
        raise E.MissingModalityInCohort("cohort shares no modality with the checkpoint")
    report = {
        **_header(cfg, "eval"),
        "modalities": names,
        "model_state_hash": model.state_hash(),
        "cindex": _split_cindex(model, cohort, names),
        "oracle_cindex": oracle_cindex(cohort),
    }
    _check_finite([v for v in report["cindex"].values()], "c-index")
    _write_report(out, args, "eval_report.json", report, time.perf_counter() - t0)
    return report


def stage_plans(cfg: RunConfig, dims: dict) -> list:
    stages = cfg.training.get("stages")
    if not stages:
        raise E.ConfigInvalid("continual needs training.stages")
    plans, seen = [], set()
    for i, st in enumerate(stages, start=1):
        if "modalities" not in st:
            raise E.ConfigInvalid(f"training.stages[{i - 1}] lacks modalities")
        mods = list(st["modalities"])
        new = [[m, dims[m]] for m in mods if m not in seen] if i > 1 else []
        seen.update(mods)
        plans.append(StagePlan(
            index=i, modalities=mods, trainable=st.get("trainable"),
            epochs=int(st.get("epochs", cfg.training["epochs"])), lr=float(st.get("lr", cfg.training["lr"])),
            seed=int(st.get("seed", cfg.seed * 101 + i)),
            restore_best=bool(st.get("restore_best", cfg.training.get("restore_best", True))),
            new_modalities=new,
        ))
    return plans


def cmd_continual(args) -> dict:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    cohort = _read_cohort(_resolve(out, args.cohort or cfg.cohort_path))
    dims = cohort.manifest.dims
    plans = stage_plans(cfg, dims)
    if cfg.model.get("fusion", "smqf") != "smqf":
        raise E.ConfigInvalid("continual training supports fusion: smqf only")
    for p in plans:
        missing = [m for m in p.modalities if m not in dims]
        if missing:
            raise E.MissingModalityInCohort(f"stage {p.index} needs {missing}")
    model = MultimodalSurvivalModel(cfg.model_config(dims, plans[0].modalities))
    result = run_continual(model, plans, cohort)
    for st in result["stages"]:
        _check_finite(st["loss"], f"stage {st['stage']} loss")
    ckpt = _resolve(out, args.checkpoint or cfg.output.get("continual_checkpoint", "continual.ckpt"))
    save_checkpoint(ckpt, model, extra={"config_hash": cfg.hash})
    report = {**_header(cfg, "continual"), **result,
              "cindex": _split_cindex(model, cohort, plans[-1].modalities),
              "checkpoint": os.path.basename(ckpt)}
    _write_report(out, args, "continual_report.json", report, time.perf_counter() - t0)
    return report


def _compare_job(raw: dict, cohort_path: str, method: str, modalities, seed: int) -> dict:
    cfg = parse_config(raw)
    cohort = load_cohort(cohort_path)
    model, hist = _train_model(cfg, cohort, modalities, fusion=method, seed=seed)
    test = cohort.batch("test", model.config.names)
    return {
        "val": hist.best_val_cindex if cfg.training.get("restore_best", True) else hist.final_val_cindex,
        "test": safe_cindex(model.predict(test.features, model.config.names), test),
    }


def compare_rows(cfg: RunConfig, names) -> list:
    """(row label, fusion kind, modality subset) for every configured method."""
    rows = []
    if cfg.compare.get("single_modality", True):
        for m in names:
            rows.append((f"single:{m}", "smqf", [m]))
    for method in cfg.compare["methods"]:
        if method == "tensor_fusion" and len(names) > MAX_TENSOR_FUSION_MODALITIES:
            log.warning("skipping tensor_fusion: more than %d modalities", MAX_TENSOR_FUSION_MODALITIES)
            continue
        rows.append((method, method, list(names)))
    return rows


def cmd_compare(args) -> dict:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    cohort_path = _resolve(out, args.cohort or cfg.cohort_path)
    cohort = _read_cohort(cohort_path)
    names = list(cfg.model.get("modalities") or cohort.manifest.names)
    seeds = [int(s) for s in cfg.compare["seeds"]]
    rows = compare_rows(cfg, names)
    jobs = [(label, method, mods, s) for label, method, mods in rows for s in seeds]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_compare_job, cfg.raw, cohort_path, m, mods, s) for _, m, mods, s in jobs]
            results = [f.result() for f in futs]
    else:
        results = [_compare_job(cfg.raw, cohort_path, m, mods, s) for _, m, mods, s in jobs]
    table = {}
    for (label, method, mods, s), res in zip(jobs, results):
        row = table.setdefault(label, {"fusion": method, "modalities": mods, "test": {}, "val": {}})
        row["test"][str(s)] = res["test"]
        row["val"][str(s)] = res["val"]
    for row in table.values():
        vals = [v for v in row["test"].values() if v is not None]
        row["MEAN"] = aggregate_mean(vals) if vals else None
    report = {**_header(cfg, "compare"), "columns": [str(s) for s in seeds] + ["MEAN"],
              "metric": "test c-index", "rows": table}
    _write_report(out, args, "compare_report.json", report, time.perf_counter() - t0)
    return report


def cmd_gradcheck(args) -> dict:
    cfg = None
    if args.config or os.environ.get(ENV_CONFIG) or args.seed is not None:
        cfg = _load(args)
    out = _out_dir(args, cfg)
    suite = run_suite(step=args.step, tol=args.tol, fusions=tuple(args.fusion or ("smqf",)))
    seconds = suite.pop("seconds")
    report = {"command": "gradcheck", **suite}
    if cfg is not None:
        report.update(config_hash=config_hash(cfg.raw), seed=cfg.seed)
    _write_report(out, args, "gradcheck_report.json", report, seconds)
    if not suite["passed"]:
        failed = sorted(k for k, v in suite["checks"].items() if not v["passed"])
        raise E.NumericalFailure(f"gradient check failed for {failed}")
    return report


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "continual": cmd_continual,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
}


def run_command(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        report = _DISPATCH[args.command](args)
        summary = {k: report[k] for k in ("command", "config_hash", "seed", "cindex", "passed") if k in report}
        print(json.dumps(summary, sort_keys=True))
        return 0
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error object
        code = exit_code_for(exc)
        err = {"error": type(exc).__name__, "message": str(exc).strip("'\""), "exit_code": code}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        if code == 1:
            log.exception("unexpected failure")
        return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
