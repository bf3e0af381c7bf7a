"""Dense float64 tensors with reverse-mode automatic differentiation.

Each op returns a new :class:`Tensor`. When any input requires a gradient the
output carries a :class:`Node` describing how to push gradients back to its
inputs, and the node is appended to the active :class:`Graph` (if one is open
via ``with Graph() as g``). :func:`backward` walks the nodes in reverse
topological order.

Broadcasting is deliberately narrow: ``add`` accepts a trailing-axis bias
vector, and ``matmul`` lets a 2-D operand be shared across the batch axes of
the other operand. Everything else must match exactly.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DetachedLoss,
    NonFiniteOutput,
    NotScalarLoss,
    ShapeMismatch,
    UnknownKind,
)

LAYERNORM_EPS = 1e-5

_state = threading.local()


def _graph_stack() -> list:
    if not hasattr(_state, "graphs"):
        _state.graphs = []
        _state.grad_enabled = True
    return _state.graphs


def is_grad_enabled() -> bool:
    _graph_stack()
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable node recording inside the block."""
    _graph_stack()
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # convenience operators; kept to the op vocabulary below
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self) -> "Tensor":
        return swap_last(self)


@dataclass(eq=False)
class Node:
    kind: str
    inputs: tuple
    out: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass(eq=False)
class Graph:
    """Ordered op records; append order is a valid topological order."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _graph_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list:
        seen, out = set(), []
        for node in self.nodes:
            for t in node.inputs:
                if t.node is None and t.requires_grad and id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.name = None
    out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out.node = Node(kind, tuple(inputs), out, backward)
        stack = _graph_stack()
        if stack:
            stack[-1].nodes.append(out.node)
    return out


def custom_op(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Register an op defined outside this module (e.g. a fused loss)."""
    return _make(kind, np.asarray(data, dtype=np.float64), inputs, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


# ---------------------------------------------------------------------------
# ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _make("matmul", av @ bv, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bias = b.ndim == 1 and a.ndim >= 1 and a.shape != b.shape and b.shape[0] == a.shape[-1]
    if a.shape != b.shape and not bias:
        raise ShapeMismatch(f"add shapes differ: {a.shape} + {b.shape}")

    def backward(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, gb

    return _make("add", a.data + b.data, (a, b), backward)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"hadamard shapes differ: {a.shape} * {b.shape}")
    av, bv = a.data, b.data
    return _make("hadamard", av * bv, (a, b), lambda g: (g * bv, g * av))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def gelu(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    c = np.sqrt(2.0 / np.pi)
    v2 = v * v
    th = np.tanh(c * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + th)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner),)

    return _make("gelu", out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make("softmax", s, (x,), backward)


def layernorm(x, gamma=None, beta=None, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalise over the last axis, then apply optional scale and shift."""
    x = as_tensor(x)
    d = x.shape[-1]
    inputs = [x]
    if gamma is not None:
        gamma = as_tensor(gamma)
        if gamma.shape != (d,):
            raise ShapeMismatch(f"layernorm scale {gamma.shape} vs width {d}")
        inputs.append(gamma)
    if beta is not None:
        beta = as_tensor(beta)
        if beta.shape != (d,):
            raise ShapeMismatch(f"layernorm shift {beta.shape} vs width {d}")
        inputs.append(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data if gamma is not None else xhat
    if beta is not None:
        out = out + beta.data

    def backward(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, d).sum(axis=0))
        return tuple(grads)

    return _make("layernorm", out, inputs, backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeMismatch(f"concat along {axis}: {t.shape} vs {ref}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def mean_pool(x, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]

    def backward(g):
        return (np.repeat(np.expand_dims(g, ax), n, axis=ax) / n,)

    return _make("mean_pool", x.data.mean(axis=ax), (x,), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    inputs = [x, weight]
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeMismatch(f"linear: bias {bias.shape} vs weight {weight.shape}")
        inputs.append(bias)
        out = out + bias.data
    xv, wv = x.data, weight.data

    def backward(g):
        gx = g @ wv if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xv.reshape(-1, xv.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make("linear", out, inputs, backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make("scale", x.data * c, (x,), lambda g: (g * c,))


# structural helpers used by the model; not part of the public kind set


def reshape(x, shape: tuple) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: tuple) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _make("slice", np.array(x.data[index], dtype=np.float64), (x,), backward)


def sum_(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make("sum", np.array([x.data.sum()]), (x,), lambda g: (np.full(shape, g.reshape(-1)[0]),))


def expand(x, n: int) -> Tensor:
    """Stack ``n`` copies of ``x`` along a new leading axis."""
    x = as_tensor(x)
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return _make("expand", out, (x,), lambda g: (g.sum(axis=0),))


FORWARD_KINDS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "hadamard": hadamard,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "layernorm": layernorm,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "mean_pool": mean_pool,
    "linear": linear,
    "scale": scale,
}


def forward_op(kind: str, *inputs, **params) -> Tensor:
    """Dispatch one of the named op kinds."""
    try:
        fn = FORWARD_KINDS[kind]
    except KeyError:
        raise UnknownKind(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **params)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(loss: Tensor) -> list:
    order, seen = [], set()
    stack = [(loss.node, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for t in reversed(node.inputs):
            if t.node is not None and id(t.node) not in seen:
                stack.append((t.node, False))
    return order


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Populate ``.grad`` on every grad-requiring leaf that feeds ``loss``.

    Leaves reachable from the traversed nodes get a fresh gradient (zeros when
    their contribution vanishes); existing gradients are overwritten.
    """
    if loss.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        raise DetachedLoss("loss was not produced by a recorded op")
    if graph is not None:
        try:
            end = next(i for i, n in enumerate(graph.nodes) if n is loss.node)
        except StopIteration:
            raise DetachedLoss("loss is not part of the supplied graph") from None
        order = graph.nodes[: end + 1]
    else:
        order = _topo_order(loss)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(order):
        for t in node.inputs:
            if t.node is None and t.requires_grad:
                leaves.setdefault(id(t), t)
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=np.float64)
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    rel_errors: list  # one array per checked tensor
    tol: float
    names: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((float(e.max()) if e.size else 0.0) for e in self.rel_errors)

    @property
    def failures(self) -> list:
        """(tensor index, flat entry index) pairs above tolerance."""
        out = []
        for k, e in enumerate(self.rel_errors):
            out.extend((k, int(i)) for i in np.flatnonzero(e > self.tol))
        return out

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def n_entries(self) -> int:
        return sum(e.size for e in self.rel_errors)


def grad_check(f, point, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``point`` is one tensor or a list of tensors; each must require grad.
    A non-scalar output is checked entry-by-entry (full Jacobian). Relative
    error is ``|analytic - fd| / max(1, |fd|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        p.requires_grad = True

    def evaluate():
        with no_grad():
            out = f(*points) if not isinstance(point, Tensor) else f(point)
        out = as_tensor(out)
        if not np.all(np.isfinite(out.data)):
            raise NonFiniteOutput("function produced non-finite output")
        return out.data.reshape(-1).copy()

    n_out = evaluate().size
    analytic = [np.zeros((n_out, p.size)) for p in points]
    for i in range(n_out):
        out = f(*points) if not isinstance(point, Tensor) else f(point)
        flat = reshape(out, (-1,)) if out.ndim != 1 else out
        picked = slice_(flat, slice(i, i + 1))  # also gives identity-like f a node
        if picked.node is None:
            continue  # output does not depend on any point
        backward(picked)
        for k, p in enumerate(points):
            if p.grad is not None:
                analytic[k][i] = p.grad.reshape(-1)
                p.grad = None

    errors = []
    for k, p in enumerate(points):
        flat = p.data.reshape(-1)
        fd = np.zeros((n_out, p.size))
        for j in range(p.size):
            orig = flat[j]
            flat[j] = orig + step
            up = evaluate()
            flat[j] = orig - step
            down = evaluate()
            flat[j] = orig
            fd[:, j] = (up - down) / (2.0 * step)
        err = np.abs(analytic[k] - fd) / np.maximum(1.0, np.abs(fd))
        errors.append(err.max(axis=0) if err.size else np.zeros(p.size))
    names = [p.name or f"arg{k}" for k, p in enumerate(points)]
    return GradCheckReport(errors, tol, names)
