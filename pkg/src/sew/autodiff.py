"""Dense-matrix reverse-mode automatic differentiation and SGD with momentum.

Every value in the graph is a 2-D float64 numpy array ("Matrix"). A Node
wraps one matrix plus a gradient accumulator of the same shape; ops build a
dynamic per-batch graph that is discarded after each optimizer step. The
engine keeps no global state, so independent training runs are safe to
execute on separate threads.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, GraphError, NumericError

Matrix = np.ndarray  # 2-D float64, row-major


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce to a finite 2-D float64 array or raise."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains NaN or Inf")
    return m


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator for one purpose (block init, batching, data).

    Separate streams keep e.g. encoder initialization identical across
    ablation variants that build different block sets from the same seed.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(s) for s in stream)))


def uniform_init(rows: int, cols: int, fan_in: int, rng: np.random.Generator) -> Matrix:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=(rows, cols))


class Node:
    """One graph node: a value, its gradient accumulator, and parent links."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Callable[[], None] | None = None,
        name: str = "node value",
    ):
        self.value = as_matrix(value, name)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, leaf={self._backward is None})"


def _result(op: str, value: Matrix, parents: Sequence[Node], backward: Callable[[], None]) -> Node:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op} produced a non-finite result")
    out = Node.__new__(Node)
    out.value = value
    out.grad = np.zeros_like(value)
    out.parents = tuple(parents)
    out._backward = backward
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.value.shape} x {b.value.shape}")
    value = a.value @ b.value
    out = _result("matmul", value, (a, b), lambda: None)

    def backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = backward
    return out


def elementwise_add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = _result("add", a.value + b.value, (a, b), lambda: None)

    def backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = backward
    return out


def elementwise_sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = _result("sub", a.value - b.value, (a, b), lambda: None)

    def backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = backward
    return out


def elementwise_mul(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = _result("mul", a.value * b.value, (a, b), lambda: None)

    def backward():
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = backward
    return out


def scalar_mul(x: Node, c: float) -> Node:
    c = float(c)
    if not np.isfinite(c):
        raise NumericError("scalar_mul: scalar is not finite")
    out = _result("scalar_mul", c * x.value, (x,), lambda: None)

    def backward():
        x.grad += c * out.grad

    out._backward = backward
    return out


def add_bias(x: Node, b: Node) -> Node:
    """Add a column vector b (w x 1) to every column of x (w x batch)."""
    if b.value.shape != (x.value.shape[0], 1):
        raise DimensionError(f"add_bias: bias {b.value.shape} does not fit rows of {x.value.shape}")
    out = _result("add_bias", x.value + b.value, (x, b), lambda: None)

    def backward():
        x.grad += out.grad
        b.grad += out.grad.sum(axis=1, keepdims=True)

    out._backward = backward
    return out


def tanh(x: Node) -> Node:
    value = np.tanh(x.value)
    out = _result("tanh", value, (x,), lambda: None)

    def backward():
        x.grad += out.grad * (1.0 - out.value * out.value)

    out._backward = backward
    return out


def sigmoid(x: Node) -> Node:
    v = x.value
    value = np.empty_like(v)
    pos = v >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    value[~pos] = ev / (1.0 + ev)
    out = _result("sigmoid", value, (x,), lambda: None)

    def backward():
        x.grad += out.grad * out.value * (1.0 - out.value)

    out._backward = backward
    return out


def mean_center_rows(x: Node) -> Node:
    """Subtract the per-row mean taken across columns (samples)."""
    out = _result("mean_center_rows", x.value - x.value.mean(axis=1, keepdims=True), (x,), lambda: None)

    def backward():
        x.grad += out.grad - out.grad.mean(axis=1, keepdims=True)

    out._backward = backward
    return out


def sum_all(x: Node) -> Node:
    out = _result("sum_all", np.array([[x.value.sum()]]), (x,), lambda: None)

    def backward():
        x.grad += out.grad[0, 0]

    out._backward = backward
    return out


def mse_loss(pred: Node, target) -> Node:
    """Mean over all entries of (pred - target)^2, as a 1x1 node."""
    target = as_matrix(target, "mse target")
    if pred.value.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes differ, {pred.value.shape} vs {target.shape}")
    diff = pred.value - target
    n = diff.size
    out = _result("mse_loss", np.array([[(diff * diff).sum() / n]]), (pred,), lambda: None)

    def backward():
        pred.grad += out.grad[0, 0] * (2.0 / n) * diff

    out._backward = backward
    return out


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into .grad for every node reachable from loss.

    Visits each node exactly once, in reverse topological order. Grads are
    accumulated, not overwritten: zero parameter grads before each step.
    """
    if loss.value.shape != (1, 1):
        raise GraphError(f"backward needs a scalar (1x1) loss, got shape {loss.value.shape}")
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad += 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


class Sgd:
    """SGD with momentum and L2 weight decay over a fixed parameter list.

    Update per parameter: g = grad + weight_decay * param;
    v = momentum * v + g; param -= lr * v.
    """

    def __init__(
        self,
        params: Iterable[Node],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
        clip_norm: float | None = None,
    ):
        if lr <= 0:
            raise ConfigError(f"lr must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        if clip_norm is not None and clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {clip_norm}")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError("sgd step aborted: non-finite gradient")
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.params))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        for p, v in zip(self.params, self.velocity):
            g = scale * p.grad + self.weight_decay * p.value
            v *= self.momentum
            v += g
            p.value -= self.lr * v
