"""Reverse-mode automatic differentiation over dense 2-D float64 matrices.

Every value is a :class:`Node`. Operations build a graph eagerly
(define-by-run); :func:`backward` walks it once in reverse topological
order and accumulates gradients into every node that requires them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

PROB_EPS = 1e-12

# Shapes a right-hand operand may take relative to the left one.
_BROADCAST_HINT = "equal shapes, a 1xcols row, an nx1 column or a 1x1 scalar"


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ParameterError(ValueError):
    """Raised on an invalid scalar hyperparameter (temperature, slope...)."""


class Node:
    __slots__ = ("values", "grad", "requires_grad", "parents", "op", "_backward", "name")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        parents: tuple["Node", ...] = (),
        op: str = "leaf",
        name: str | None = None,
    ):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Node holds 2-D matrices only, got ndim={arr.ndim}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        # interior nodes get their buffer from backward(); only leaves allocate here
        self.grad = np.zeros_like(arr) if self.requires_grad and not parents else None
        self.parents = parents
        self.op = op
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 node, got {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; all route through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    return Node(arr)


def constant(values) -> Node:
    return Node(values, requires_grad=False, op="const")


def parameter(values, name: str | None = None) -> Node:
    return Node(values, requires_grad=True, op="param", name=name)


def _make(values: np.ndarray, parents: Sequence[Node], op: str, backward_fn) -> Node:
    needs = any(p.requires_grad for p in parents)
    out = Node(values, requires_grad=needs, parents=tuple(parents), op=op)
    if needs:
        out._backward = backward_fn
    return out


def _accumulate(node: Node, g: np.ndarray) -> None:
    """Add ``g`` into ``node.grad`` without mutating any array in place.

    Upstream gradient arrays may be handed to several parents, so buffers
    are only ever rebound, never updated with ``+=``.
    """
    if not node.requires_grad:
        return
    if g.shape != node.values.shape:
        g = np.broadcast_to(g, node.values.shape)
    node.grad = g if node.grad is None else node.grad + g


def _check_broadcast(a: Node, b: Node, opname: str) -> None:
    ra, ca = a.shape
    rb, cb = b.shape
    if (rb, cb) == (ra, ca):
        return
    if (rb, cb) in ((1, ca), (ra, 1), (1, 1)):
        return
    raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} are incompatible ({_BROADCAST_HINT})")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape} (inner dimensions differ)")
    out_vals = a.values @ b.values

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    return _make(out_vals, (a, b), "matmul", backward_fn)


def add(a: Node, b) -> Node:
    """Elementwise sum; ``b`` may broadcast as a bias row, a column or a scalar."""
    b = as_node(b)
    _check_broadcast(a, b, "add")

    def backward_fn(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.values + b.values, (a, b), "add", backward_fn)


def sub(a: Node, b) -> Node:
    b = as_node(b)
    _check_broadcast(a, b, "sub")

    def backward_fn(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(a.values - b.values, (a, b), "sub", backward_fn)


def mul(a: Node, b) -> Node:
    """Elementwise (Hadamard) product with the same broadcasting as :func:`add`."""
    b = as_node(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g * bv)
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * av, b.shape))

    return _make(av * bv, (a, b), "mul", backward_fn)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def backward_fn(g):
        _accumulate(a, c * g)

    return _make(a.values * c, (a,), "scale", backward_fn)


def leaky_relu(a: Node, slope: float = 0.01) -> Node:
    if not 0.0 < slope < 1.0:
        raise ParameterError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = a.values
    out = np.maximum(x, slope * x)

    def backward_fn(g):
        _accumulate(a, g * np.where(x >= 0.0, 1.0, slope))

    return _make(out, (a,), "leaky_relu", backward_fn)


def sigmoid(a: Node) -> Node:
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        _accumulate(a, g * out * (1.0 - out))

    return _make(out, (a,), "sigmoid", backward_fn)


def log(a: Node) -> Node:
    if np.any(a.values <= 0.0):
        raise ValueError("log: input must be strictly positive (clamp probabilities first)")
    x = a.values

    def backward_fn(g):
        _accumulate(a, g / x)

    return _make(np.log(x), (a,), "log", backward_fn)


def clamp(a: Node, lo: float, hi: float) -> Node:
    """Clip into [lo, hi]; gradient passes only where the input was inside the range."""
    x = a.values
    inside = (x >= lo) & (x <= hi)

    def backward_fn(g):
        _accumulate(a, g * inside)

    return _make(np.clip(x, lo, hi), (a,), "clamp", backward_fn)


def safe_log(p: Node, eps: float = PROB_EPS) -> Node:
    return log(clamp(p, eps, 1.0))


def softmax_rows_with_temperature(logits: Node, T: float = 1.0) -> Node:
    if not T > 0.0:
        raise ParameterError(f"softmax temperature must be positive, got {T}")
    z = logits.values / T
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        _accumulate(logits, s * (g - inner) / T)

    return _make(s, (logits,), "softmax", backward_fn)


def softmax(logits: Node) -> Node:
    return softmax_rows_with_temperature(logits, 1.0)


def sum(a: Node) -> Node:  # noqa: A001 - mirrors the op name
    def backward_fn(g):
        _accumulate(a, np.full_like(a.values, g[0, 0]))

    return _make(np.array([[a.values.sum()]]), (a,), "sum", backward_fn)


def mean(a: Node) -> Node:
    n = a.values.size

    def backward_fn(g):
        _accumulate(a, np.full_like(a.values, g[0, 0] / n))

    return _make(np.array([[a.values.mean()]]), (a,), "mean", backward_fn)


def sum_rows(a: Node) -> Node:
    """Column sums: n x c -> 1 x c."""

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.values.sum(axis=0, keepdims=True), (a,), "sum_rows", backward_fn)


def mean_rows(a: Node) -> Node:
    """Column means: n x c -> 1 x c (a centroid when rows are points)."""
    n = a.shape[0]
    if n == 0:
        raise DimensionError("mean_rows of an empty matrix")

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _make(a.values.mean(axis=0, keepdims=True), (a,), "mean_rows", backward_fn)


def row_sums(a: Node) -> Node:
    """Per-row sums: n x c -> n x 1."""

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.values.sum(axis=1, keepdims=True), (a,), "row_sums", backward_fn)


def take_rows(a: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)

    def backward_fn(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(a.values[idx], (a,), "take_rows", backward_fn)


def concat_rows(nodes: Sequence[Node]) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise DimensionError("concat_rows needs at least one node")
    cols = {n.shape[1] for n in nodes}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[n.shape for n in nodes]}")
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def backward_fn(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _accumulate(n, g[lo:hi])

    return _make(np.vstack([n.values for n in nodes]), nodes, "concat_rows", backward_fn)


def sq_l2_rowdiff(a: Node, b: Node) -> Node:
    """Per-row squared Euclidean distance ||a_i - b_i||^2 as an n x 1 column.

    ``b`` may also be a single 1 x c row compared against every row of ``a``.
    """
    if a.shape != b.shape and b.shape != (1, a.shape[1]):
        raise DimensionError(f"sq_l2_rowdiff: shapes {a.shape} and {b.shape} differ")
    diff = a.values - b.values

    def backward_fn(g):
        d = 2.0 * diff * g
        _accumulate(a, d)
        if b.requires_grad:
            _accumulate(b, -_unbroadcast(d, b.shape))

    return _make((diff**2).sum(axis=1, keepdims=True), (a, b), "sq_l2_rowdiff", backward_fn)


def grad_reverse(a: Node, lambda_rev: float = 1.0) -> Node:
    """Identity on the way forward, gradient scaled by ``-lambda_rev`` on the way back."""
    lam = float(lambda_rev)

    def backward_fn(g):
        _accumulate(a, -lam * g)

    return _make(a.values.copy(), (a,), "grad_reverse", backward_fn)


def detach(a: Node) -> Node:
    return Node(a.values.copy(), requires_grad=False, op="detach")


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into every node that requires grad.

    Interior gradients are reset on each call; leaf parameters accumulate
    across calls until :func:`zero_grad` (or an optimizer step) clears them.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    _accumulate(loss, np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    params: list[Node]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.values) for p in self.params]
        if not self.v:
            self.v = [np.zeros_like(p.values) for p in self.params]


def adam_step(params: Sequence[Node], state: AdamState) -> None:
    """One bias-corrected Adam update, then zero the gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.zero_grad()


# ---------------------------------------------------------------------------
# finite differences


def numeric_grad(f: Callable[[], float], param: Node, h: float = 1e-5, entries=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. ``param.values``.

    ``entries`` optionally restricts the probe to a list of flat indices;
    unprobed entries are left at zero.
    """
    grad = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    gflat = grad.reshape(-1)
    indices = range(flat.size) if entries is None else entries
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    num = float(np.linalg.norm(a - b))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return num / den
