"""Finite-difference checks for every op kind and for the whole model."""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .model import ModelConfig, MultimodalSurvivalModel
from .qformer import QFormerConfig
from .rng import philox
from .survival import cox_loss

TINY_MODALITIES = [["text", 6], ["image", 5], ["rna", 4]]


def tiny_config(fusion: str = "smqf", seed: int = 0) -> ModelConfig:
    return ModelConfig(
        modalities=[list(m) for m in TINY_MODALITIES],
        primary="image",
        fusion=fusion,
        qformer=QFormerConfig(depth=1, embed_dim=8, heads=2, queries_per_modality=2, ffn_multiplier=2),
        lora_rank=2,
        lora_sites=["self.q", "self.k", "self.v", "self.o", "cross.q", "cross.k", "cross.v", "cross.o", "ffn1", "ffn2"],
        seed=seed,
    )


def tiny_batch(config: ModelConfig, n: int = 6, tokens: int = 3, seed: int = 1):
    rng = philox(seed)
    feats = {m: rng.normal(0.0, 1.0, (n, tokens, dim)) for m, dim in config.modalities}
    time_ = rng.uniform(1.0, 10.0, n)
    event = np.arange(n) % 3 != 2
    return feats, time_, event


def perturb(model: MultimodalSurvivalModel, seed: int = 2, std: float = 0.3) -> None:
    """Move every parameter off its initial value (zero B, zero W_o, unit gains)."""
    rng = philox(seed)
    for t in model.parameters().values():
        t.data = t.data + rng.normal(0.0, std, t.shape)


def model_gradcheck(fusion: str = "smqf", step: float = 1e-5, tol: float = 1e-4, seed: int = 0):
    """Analytic vs central-difference gradients of Cox loss w.r.t. all parameters."""
    cfg = tiny_config(fusion, seed)
    model = MultimodalSurvivalModel(cfg)
    perturb(model)
    feats, time_, event = tiny_batch(cfg)
    names = list(model.parameters())
    params = [model.parameters()[n] for n in names]
    for p, n in zip(params, names):
        p.name = n

    def loss_fn(*_):
        return cox_loss(model.forward(feats), time_, event)

    return T.grad_check(loss_fn, params, step=step, tol=tol)


def _op_cases(rng):
    def r(*shape):
        return T.Tensor(rng.normal(0.0, 1.0, shape))

    a, b = r(3, 4), r(4, 2)
    return {
        "matmul": (lambda x, y: T.sum_(T.matmul(x, y)), [a, b]),
        "matmul_batched": (lambda x, y: T.sum_(T.hadamard(T.matmul(x, y), T.Tensor(np.arange(12.0).reshape(2, 3, 2)))), [r(2, 3, 4), r(4, 2)]),
        "add": (lambda x, y: T.sum_(T.hadamard(T.add(x, y), T.add(x, y))), [r(3, 4), r(4)]),
        "hadamard": (lambda x, y: T.sum_(T.hadamard(x, y)), [r(3, 4), r(3, 4)]),
        "sigmoid": (lambda x: T.sigmoid(x), [r(5)]),
        "gelu": (lambda x: T.gelu(x), [r(5)]),
        "softmax": (lambda x: T.softmax(x, axis=-1), [r(2, 4)]),
        "layernorm": (lambda x, g, bb: T.layernorm(x, g, bb), [r(2, 8), r(8), r(8)]),
        "concat": (lambda x, y: T.concat([x, y], axis=1), [r(2, 3), r(2, 2)]),
        "mean_pool": (lambda x: T.mean_pool(x, axis=1), [r(2, 3, 2)]),
        "linear": (lambda x, w, bb: T.linear(x, w, bb), [r(3, 4), r(2, 4), r(2)]),
        "scale": (lambda x: T.scale(x, -2.5), [r(4)]),
    }


def op_gradchecks(seed: int = 0, step: float = 1e-5, tol: float = 1e-4) -> dict:
    rng = philox(seed)
    return {kind: T.grad_check(fn, pts, step=step, tol=tol) for kind, (fn, pts) in _op_cases(rng).items()}


def run_suite(step: float = 1e-5, tol: float = 1e-4, fusions=("smqf",)) -> dict:
    """Every op kind plus the full model; returns a JSON-ready summary."""
    t0 = time.perf_counter()
    results = {}
    for kind, rep in op_gradchecks(step=step, tol=tol).items():
        results[f"op:{kind}"] = {"max_rel_error": rep.max_rel_error, "passed": rep.passed, "entries": rep.n_entries}
    for fusion in fusions:
        rep = model_gradcheck(fusion, step=step, tol=tol)
        results[f"model:{fusion}"] = {"max_rel_error": rep.max_rel_error, "passed": rep.passed, "entries": rep.n_entries}
    return {
        "tol": tol,
        "step": step,
        "checks": results,
        "passed": all(r["passed"] for r in results.values()),
        "seconds": time.perf_counter() - t0,
    }
