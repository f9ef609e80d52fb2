"""Dense arrays and a small tape-free reverse-mode autodiff engine.

Every trainable part of the pipeline (toy model, losses, graph refinement)
is expressed with the primitives below. Values are read-only float64 numpy
arrays; gradients are accumulated additively in ``Node.grad`` during
``backward_pass``.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pgspot.core.errors import GraphCycleError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def dense(values, name: str = "value") -> np.ndarray:
    """Copy ``values`` into a frozen float64 array, rejecting NaN/inf."""
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


def softmax_rows(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise NumericError(f"softmax_rows expects a non-empty N x C matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise NumericError(f"softmax_rows input is non-finite at row {bad[0]}, column {bad[1]}")
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


class Node:
    __slots__ = ("value", "grad", "op", "parents", "backward_fn", "name")

    def __init__(
        self,
        value: np.ndarray,
        op: str = "leaf",
        parents: Tuple["Node", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        name: Optional[str] = None,
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @classmethod
    def leaf(cls, value, name: Optional[str] = None) -> "Node":
        return cls(dense(value, name or "leaf"), name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.value.shape})"


class GradTable(Dict[Node, np.ndarray]):
    """Gradients of the root with respect to every leaf reached."""

    def by_name(self) -> Dict[str, np.ndarray]:
        return {node.name: grad for node, grad in self.items() if node.name is not None}


def make_node(op: str, value: np.ndarray, parents: Sequence[Node], backward_fn: BackwardFn) -> Node:
    """Register the result of a primitive; used by fused nodes living in other modules."""
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"primitive '{op}' produced non-finite values")
    value.flags.writeable = False
    return Node(value, op=op, parents=tuple(parents), backward_fn=backward_fn)


def _require_same_shape(op: str, a: Node, b: Node):
    if a.shape != b.shape:
        raise NumericError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_matrix(op: str, a: Node):
    if a.value.ndim != 2:
        raise NumericError(f"{op}: expected a matrix, got shape {a.shape}")


# Primitives

def matmul(a: Node, b: Node) -> Node:
    _require_matrix("matmul", a)
    _require_matrix("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise NumericError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    A, B = a.value, b.value
    return make_node("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def affine(x: Node, w: Node, b: Node) -> Node:
    """``x @ w + b`` with ``b`` added to every row (the only broadcast allowed)."""
    _require_matrix("affine", x)
    _require_matrix("affine", w)
    if x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise NumericError(f"affine: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    X, W = x.value, w.value
    return make_node("affine", X @ W + b.value, (x, w, b), lambda g: (g @ W.T, X.T @ g, g.sum(axis=0)))


def add(a: Node, b: Node) -> Node:
    _require_same_shape("add", a, b)
    return make_node("add", a.value + b.value, (a, b), lambda g: (g, g))


def multiply(a: Node, b: Node) -> Node:
    _require_same_shape("multiply", a, b)
    A, B = a.value, b.value
    return make_node("multiply", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)
    return make_node("scale", a.value * factor, (a,), lambda g: (g * factor,))


def relu(a: Node) -> Node:
    active = a.value > 0
    return make_node("relu", np.where(active, a.value, 0.0), (a,), lambda g: (g * active,))


def sigmoid(a: Node) -> Node:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return make_node("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def concat_columns(a: Node, b: Node) -> Node:
    _require_matrix("concat_columns", a)
    _require_matrix("concat_columns", b)
    if a.shape[0] != b.shape[0]:
        raise NumericError(f"concat_columns: row counts differ {a.shape} vs {b.shape}")
    split = a.shape[1]
    return make_node(
        "concat_columns",
        np.concatenate([a.value, b.value], axis=1),
        (a, b),
        lambda g: (g[:, :split], g[:, split:]),
    )


def row_softmax(a: Node) -> Node:
    s = softmax_rows(a.value)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return make_node("row_softmax", s, (a,), backward)


def gather_rows(a: Node, indices) -> Node:
    _require_matrix("gather_rows", a)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise NumericError(f"gather_rows: index out of range for {a.shape[0]} rows")
    rows = a.shape

    def backward(g):
        out = np.zeros(rows)
        np.add.at(out, idx, g)
        return (out,)

    return make_node("gather_rows", a.value[idx], (a,), backward)


def reshape(a: Node, shape: Tuple[int, ...]) -> Node:
    original = a.shape
    return make_node("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(original),))


def reduce_sum(a: Node) -> Node:
    ones = np.ones(a.shape)
    return make_node("reduce_sum", np.asarray(a.value.sum()), (a,), lambda g: (ones * g,))


def add_all(nodes: Sequence[Node]) -> Node:
    if not nodes:
        raise NumericError("add_all needs at least one node")
    total = nodes[0]
    for node in nodes[1:]:
        total = add(total, node)
    return total


# Backward pass

def _topological_order(root: Node) -> List[Node]:
    active, done = 1, 2
    state: Dict[int, int] = {}
    order: List[Node] = []
    stack: List[Tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = done
            order.append(node)
            continue
        seen = state.get(key)
        if seen == done:
            continue
        if seen == active:
            raise GraphCycleError(f"cycle detected at {node!r}")
        state[key] = active
        stack.append((node, True))
        for parent in node.parents:
            if state.get(id(parent)) != done:
                stack.append((parent, False))
    return order


def backward_pass(root: Node) -> GradTable:
    if root.value.size != 1:
        raise NumericError(f"backward_pass needs a scalar root, got shape {root.shape}")
    order = _topological_order(root)
    for node in order:
        node.grad = np.zeros(node.value.shape)
    root.grad = np.ones(root.value.shape)
    for node in reversed(order):
        if node.backward_fn is None or not node.parents:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is not None:
                parent.grad += g
    return GradTable((node, node.grad) for node in order if not node.parents)


def finite_diff_check(f: Callable[[Node], Node], x, step: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients."""
    x0 = dense(x, "finite_diff_check input")
    leaf = Node.leaf(x0)
    root = f(leaf)
    if root.value.size != 1 or not np.isfinite(root.value).all():
        raise NumericError("finite_diff_check: f must return a finite scalar")
    backward_pass(root)
    analytic = leaf.grad.copy()

    def evaluate(values: np.ndarray) -> float:
        out = f(Node.leaf(values))
        value = float(out.value)
        if not np.isfinite(value):
            raise NumericError("finite_diff_check: f returned a non-finite value")
        return value

    numeric = np.zeros(x0.shape)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += step
        minus[i] -= step
        numeric.flat[i] = (evaluate(plus.reshape(x0.shape)) - evaluate(minus.reshape(x0.shape))) / (2.0 * step)
    if numeric.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    worst = float(err.max())
    logging.debug(f"finite_diff_check: max relative error {worst:.3e} over {numeric.size} coordinates")
    return worst
