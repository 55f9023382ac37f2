"""Minimal reverse-mode differentiation over numpy arrays.

Every operation returns a Value that remembers its parents and a closure that
pushes the output gradient back into them. ``Value.backward()`` walks the graph
once in reverse topological order, summing gradients over shared sub-graphs.

Only the operations the knowledge-tracing network needs are provided; there is
no general broadcasting.
"""

import contextlib
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import IndexRangeError, NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

# Clamp for probabilities fed to the cross-entropy
BCE_EPSILON = 1e-7


class _OpCounter:
    def __init__(self):
        self.n = 0


_counters: List[_OpCounter] = []


@contextlib.contextmanager
def count_ops() -> Iterator[_OpCounter]:
    """Count graph nodes created inside the block."""
    counter = _OpCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Value:
    """A node in the computation graph: forward data plus accumulated gradient."""

    __slots__ = ("data", "_grad", "_parents", "_backward", "requires_grad", "op")

    def __init__(self, data, parents: Tuple["Value", ...] = (), op: str = "", requires_grad: Optional[bool] = None):
        self.data = _as_array(data)
        self._grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.op = op
        for counter in _counters:
            counter.n += 1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.array(value, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, op={self.op or 'leaf'})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Back-propagate from this node (a scalar unless ``grad`` is given)."""
        if not self.requires_grad:
            return
        order = _topological_order(self)
        self._grad = np.ones_like(self.data) if grad is None else np.array(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)


class Parameter(Value):
    """A named leaf Value owned by a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def _topological_order(root: Value) -> List[Value]:
    # Iterative post-order DFS; graphs over long windows are too deep for recursion
    order: List[Value] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _acc(node: Value, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node._grad is None:
        node._grad = np.array(g, dtype=node.data.dtype)
    else:
        node._grad += g


def _acc_rows(node: Value, index, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node._grad is None:
        node._grad = np.zeros_like(node.data)
    np.add.at(node._grad, index, g)


def _node(data, parents: Tuple[Value, ...], op: str, backward: Callable[[np.ndarray], None]) -> Value:
    out = Value(data, parents, op)
    if out.requires_grad:
        out._backward = backward
    return out


def _same_shape(op: str, a: Value, b: Value) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def const(data) -> Value:
    """A leaf that never receives gradient."""
    return Value(data, requires_grad=False)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a: Value, b: Value) -> Value:
    _same_shape("add", a, b)

    def backward(g):
        _acc(a, g)
        _acc(b, g)
    return _node(a.data + b.data, (a, b), "add", backward)


def sub(a: Value, b: Value) -> Value:
    _same_shape("sub", a, b)

    def backward(g):
        _acc(a, g)
        _acc(b, -g)
    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a: Value, b: Value) -> Value:
    """Elementwise product."""
    _same_shape("mul", a, b)

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)
    return _node(a.data * b.data, (a, b), "mul", backward)


def scale(a: Value, c: float) -> Value:
    def backward(g):
        _acc(a, g * c)
    return _node(a.data * c, (a,), "scale", backward)


def mul_const(a: Value, c: np.ndarray) -> Value:
    """Multiply by a constant array that broadcasts into ``a``'s shape."""
    c = np.asarray(c, dtype=a.data.dtype)
    out = a.data * c
    if out.shape != a.shape:
        raise ShapeError(f"mul_const: constant {c.shape} does not broadcast into {a.shape}")

    def backward(g):
        _acc(a, g * c)
    return _node(out, (a,), "mul_const", backward)


def _sigmoid_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * out * (1.0 - out)


def sigmoid(a: Value) -> Value:
    # Split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _acc(a, _sigmoid_grad(out, g))
    return _node(out, (a,), "sigmoid", backward)


def relu(a: Value) -> Value:
    mask = a.data > 0

    def backward(g):
        _acc(a, g * mask)
    return _node(a.data * mask, (a,), "relu", backward)


def log(a: Value) -> Value:
    def backward(g):
        _acc(a, g / a.data)
    return _node(np.log(a.data), (a,), "log", backward)


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------

def sum(a: Value, axis: Optional[int] = None) -> Value:  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _acc(a, np.full_like(a.data, g))
        else:
            _acc(a, np.ones_like(a.data) * np.expand_dims(g, axis))
    return _node(out, (a,), "sum", backward)


def mean(a: Value) -> Value:
    return scale(sum(a), 1.0 / a.data.size)


def dot(a: Value, b: Value) -> Value:
    if a.data.ndim != 1:
        raise ShapeError(f"dot: expected vectors, got {a.shape}")
    _same_shape("dot", a, b)

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)
    return _node(np.dot(a.data, b.data), (a, b), "dot", backward)


def transpose(a: Value) -> Value:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {a.shape}")

    def backward(g):
        _acc(a, g.T)
    return _node(a.data.T, (a,), "transpose", backward)


def matmul(a: Value, b: Value) -> Value:
    """Matrix product for matrix@matrix, matrix@vector and vector@matrix."""
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or (a.data.ndim == 1 and b.data.ndim == 1):
        raise ShapeError(f"matmul: unsupported operands {a.shape} @ {b.shape}")
    a2 = a.data if a.data.ndim == 2 else a.data[None, :]
    b2 = b.data if b.data.ndim == 2 else b.data[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out2 = a2 @ b2
    out = out2
    if a.data.ndim == 1:
        out = out2[0]
    elif b.data.ndim == 1:
        out = out2[:, 0]

    def backward(g):
        g2 = g.reshape(out2.shape)
        _acc(a, (g2 @ b2.T).reshape(a.shape))
        _acc(b, (a2.T @ g2).reshape(b.shape))
    return _node(out, (a, b), "matmul", backward)


def affine(W: Value, x: Value, b: Value) -> Value:
    """y = Wx + b for W [m x n], x [n], b [m]."""
    if W.data.ndim != 2 or x.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"affine: expected matrix/vector/vector, got {W.shape}, {x.shape}, {b.shape}")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: W {W.shape} does not conform with x {x.shape} and b {b.shape}")

    def backward(g):
        _acc(W, np.outer(g, x.data))
        _acc(x, W.data.T @ g)
        _acc(b, g)
    return _node(W.data @ x.data + b.data, (W, x, b), "affine", backward)


def linear(X: Value, W: Value, b: Optional[Value] = None) -> Value:
    """Row-wise affine map: X W^T + b for X [k x n], W [m x n], b [m]."""
    if X.data.ndim != 2 or W.data.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: X {X.shape} does not conform with W {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match W {W.shape}")
    out = X.data @ W.data.T
    if b is not None:
        out = out + b.data
    parents = (X, W) if b is None else (X, W, b)

    def backward(g):
        _acc(X, g @ W.data)
        _acc(W, g.T @ X.data)
        if b is not None:
            _acc(b, g.sum(axis=0))
    return _node(out, parents, "linear", backward)


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    """Concatenate vectors (axis 0) or matrices side by side (axis 1)."""
    arrays = [v.data for v in values]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    bounds = np.cumsum([0] + [arr.shape[axis] for arr in arrays])

    def backward(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            _acc(v, np.take(g, np.arange(lo, hi), axis=axis))
    return _node(out, tuple(values), "concat", backward)


def stack(values: Sequence[Value]) -> Value:
    """Stack equal-length vectors into rows of a matrix."""
    try:
        out = np.stack([v.data for v in values])
    except ValueError as e:
        raise ShapeError(f"stack: {e}") from e

    def backward(g):
        for i, v in enumerate(values):
            _acc(v, g[i])
    return _node(out, tuple(values), "stack", backward)


def diag_embed(v: Value) -> Value:
    """Vector -> diagonal matrix."""
    if v.data.ndim != 1:
        raise ShapeError(f"diag_embed: expected a vector, got {v.shape}")

    def backward(g):
        _acc(v, np.diagonal(g).copy())
    return _node(np.diag(v.data), (v,), "diag", backward)


# ---------------------------------------------------------------------------
# Embedding lookups
# ---------------------------------------------------------------------------

def _check_index(table: Value, index: np.ndarray) -> None:
    rows = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        raise IndexRangeError(f"embedding index outside 0..{rows - 1}: {index.tolist()}")


def gather(table: Value, index: int) -> Value:
    """Single row of an embedding table."""
    idx = np.asarray(index, dtype=np.int64)
    _check_index(table, idx.reshape(-1))

    def backward(g):
        _acc_rows(table, int(idx), g)
    return _node(table.data[int(idx)], (table,), "gather", backward)


def gather_rows(table: Value, indices) -> Value:
    """Rows ``indices`` of a table as a matrix."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    _check_index(table, idx)

    def backward(g):
        _acc_rows(table, idx, g)
    return _node(table.data[idx], (table,), "gather_rows", backward)


def mean_gather(table: Value, indices: Sequence[int]) -> Value:
    """Arithmetic mean of a set of rows."""
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise ShapeError("mean_gather: empty index set")
    _check_index(table, idx)

    def backward(g):
        _acc_rows(table, idx, np.broadcast_to(g / idx.size, (idx.size,) + g.shape))
    return _node(table.data[idx].mean(axis=0), (table,), "mean_gather", backward)


def mean_gather_rows(table: Value, index_sets: Sequence[Sequence[int]]) -> Value:
    """One mean-gathered row per index set."""
    flat = np.asarray([i for s in index_sets for i in s], dtype=np.int64)
    sizes = np.asarray([len(s) for s in index_sets], dtype=np.int64)
    if (sizes == 0).any():
        raise ShapeError("mean_gather_rows: empty index set")
    _check_index(table, flat)
    owner = np.repeat(np.arange(len(index_sets)), sizes)
    sums = np.zeros((len(index_sets), table.shape[1]), dtype=table.data.dtype)
    np.add.at(sums, owner, table.data[flat])
    out = sums / sizes[:, None]

    def backward(g):
        _acc_rows(table, flat, (g / sizes[:, None])[owner])
    return _node(out, (table,), "mean_gather_rows", backward)


# ---------------------------------------------------------------------------
# Normalizers
# ---------------------------------------------------------------------------

def softmax(a: Value) -> Value:
    """Softmax over a vector."""
    if a.data.ndim != 1:
        raise ShapeError(f"softmax: expected a vector, got {a.shape}")
    e = np.exp(a.data - a.data.max())
    s = e / e.sum()

    def backward(g):
        _acc(a, s * (g - np.dot(g, s)))
    return _node(s, (a,), "softmax", backward)


def log_sum_exp(a: Value, axis: int = -1) -> Value:
    """Stable log(sum(exp(a))) along an axis."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    total = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    weights = e / total

    def backward(g):
        _acc(a, weights * np.expand_dims(g, axis))
    return _node(out, (a,), "log_sum_exp", backward)


def l2_normalize(a: Value, eps: float = 1e-12) -> Value:
    norm = max(float(np.linalg.norm(a.data)), eps)
    u = a.data / norm

    def backward(g):
        _acc(a, (g - u * np.dot(u, g)) / norm)
    return _node(u, (a,), "l2_normalize", backward)


# ---------------------------------------------------------------------------
# Regularization and losses
# ---------------------------------------------------------------------------

def dropout(x: Value, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Value:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time; identity otherwise."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _acc(x, g * keep)
    return _node(x.data * keep, (x,), "dropout", backward)


def binary_cross_entropy(p: Value, y) -> Value:
    """Mean of -[y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps]."""
    y = np.asarray(y, dtype=p.data.dtype).reshape(p.shape)
    pc = np.clip(p.data, BCE_EPSILON, 1.0 - BCE_EPSILON)
    n = max(p.data.size, 1)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.data > BCE_EPSILON) & (p.data < 1.0 - BCE_EPSILON)

    def backward(g):
        _acc(p, g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n)
    return _node(losses.mean(), (p,), "bce", backward)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def finite_difference_check(
    loss_fn: Callable[[], Value],
    params: Sequence[Value],
    eps: float = 1e-4,
    n_coords: Optional[int] = 25,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Compare analytic gradients with central differences.

    Args:
        loss_fn: rebuilds the scalar loss from ``params`` (must be deterministic)
        params: leaves to perturb; their data is modified in place and restored
        eps: finite-difference step
        n_coords: number of coordinates to scan (None scans all)
        rng: coordinate sampler

    Returns:
        max over scanned coordinates of |analytic - numeric| / max(|analytic| + |numeric|, 1e-8)

    Raises:
        NonFiniteError: the loss is NaN/inf at the base point or a perturbed point
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite at the base point")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    coords = [(pi, j) for pi, p in enumerate(params) for j in range(p.data.size)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(picks)]

    worst = 0.0
    for pi, j in coords:
        flat = params[pi].data.reshape(-1)
        original = flat[j]
        flat[j] = original + eps
        plus = float(loss_fn().data)
        flat[j] = original - eps
        minus = float(loss_fn().data)
        flat[j] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NonFiniteError(f"loss is not finite around coordinate {j} of parameter {pi}")
        numeric = (plus - minus) / (2 * eps)
        a = float(analytic[pi].reshape(-1)[j])
        worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), 1e-8))
    return worst
