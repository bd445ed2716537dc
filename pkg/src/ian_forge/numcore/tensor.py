"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive records its parents and a closure mapping the upstream
gradient to one gradient per parent.  ``grad`` walks the recorded graph in
reverse topological order from a scalar root.  Gradients are accumulated in
a call-local dictionary, so the same forward graph may be differentiated
several times and tensors can be shared freely between threads.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise ShapeError(f"{t.op}: expected a scalar, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op: str, out: np.ndarray, parents: tuple, backward) -> Tensor:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    track = any(p.requires_grad for p in parents)
    if not track:
        return Tensor(out, op=op)
    return Tensor(out, True, op=op, parents=parents, backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node("matmul", a.data @ b.data, (a, b), back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node("sub", a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node("mul", a.data * b.data, (a, b), back)


def linear(x, w, b) -> Tensor:
    """Affine map ``x @ w + b`` for a batch of row vectors."""
    return add(matmul(x, w), b)


# ------------------------------------------------------------- activations

def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _node("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    y = np.where(pos, x.data, slope * x.data)
    return _node("leaky_relu", y, (x,), lambda g: (np.where(pos, g, slope * g),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _node("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),))


def identity(x) -> Tensor:
    return as_tensor(x)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = {
    "linear": identity,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
    "relu": relu,
}


# -------------------------------------------------------------- reductions

def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    y = x.data.mean(axis=axis)
    n = x.size if axis is None else x.shape[axis]

    def back(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / n,)

    return _node("mean", np.asarray(y), (x,), back)


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    y = x.data.sum(axis=axis)

    def back(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node("sum", np.asarray(y), (x,), back)


# ------------------------------------------------------------------ losses

_BCE_EPS = 1e-12


def bce(p, target) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against ``target``."""
    p, t = as_tensor(p), np.asarray(target, dtype=np.float64)
    if t.shape != p.shape:
        t = np.broadcast_to(t, p.shape)
    q = np.clip(p.data, _BCE_EPS, 1.0 - _BCE_EPS)
    loss = -(t * np.log(q) + (1.0 - t) * np.log1p(-q)).mean()

    def back(g):
        return (g * (q - t) / (q * (1.0 - q)) / p.size,)

    return _node("bce", np.asarray(loss), (p,), back)


def bce_with_logits(z, target) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(z)``; stable for large |z|."""
    z, t = as_tensor(z), np.asarray(target, dtype=np.float64)
    if t.shape != z.shape:
        t = np.broadcast_to(t, z.shape)
    x = z.data
    loss = (np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()

    def back(g):
        return (g * (_sigmoid(x) - t) / z.size,)

    return _node("bce_logits", np.asarray(loss), (z,), back)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(z, labels) -> Tensor:
    """Mean categorical cross-entropy of row logits against integer labels."""
    z = as_tensor(z)
    labels = np.asarray(labels, dtype=np.int64)
    if z.data.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_xent: logits {z.shape} vs labels {labels.shape}")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / z.shape[0],)

    return _node("softmax_xent", np.asarray(loss), (z,), back)


def squared_l2(f, target) -> Tensor:
    """Squared Euclidean distance along the last axis (one value per row)."""
    f, t = as_tensor(f), as_tensor(target)
    if f.shape != t.shape:
        raise ShapeError(f"squared_l2: {f.shape} vs {t.shape}")
    diff = f.data - t.data
    y = np.asarray((diff * diff).sum(axis=-1))

    def back(g):
        d = 2.0 * np.expand_dims(np.asarray(g), -1) * diff
        return d, -d

    return _node("squared_l2", y, (f, t), back)


def l1(a, b) -> Tensor:
    """L1 distance along the last axis (one value per row)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    y = np.asarray(np.abs(diff).sum(axis=-1))

    def back(g):
        d = np.expand_dims(np.asarray(g), -1) * np.sign(diff)
        return d, -d

    return _node("l1", y, (a, b), back)


# ---------------------------------------------------------------- backward

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(root: Tensor, wrt):
    """Gradients of scalar ``root`` with respect to ``wrt``.

    ``wrt`` is a mapping name -> Tensor or a sequence of tensors; the result
    has the same structure with numpy arrays.  Tensors the root does not
    depend on get zeros.  The ``grad`` slot of each requested tensor is also
    filled.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root {root.op!r} must be scalar, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones_like(root.data)
        for node in reversed(_topo(root)):
            g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                pg = np.asarray(pg).reshape(parent.shape)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def lookup(t: Tensor) -> np.ndarray:
        g = grads.get(id(t))
        g = np.zeros_like(t.data) if g is None else np.array(g, dtype=np.float64)
        if not np.isfinite(g).all():
            raise NonFiniteError("backward: non-finite gradient")
        t.grad = g
        return g

    if isinstance(wrt, Mapping):
        return {k: lookup(t) for k, t in wrt.items()}
    return [lookup(t) for t in wrt]


class Graph:
    """A named computation: ``fn(inputs) -> dict of named outputs``.

    ``forward`` evaluates it eagerly and remembers the outputs so that
    ``backward`` can differentiate one of them.
    """

    def __init__(self, fn, params: Mapping[str, Tensor] | None = None):
        self.fn = fn
        self.params = dict(params or {})
        self._outputs: dict[str, Tensor] | None = None

    def forward(self, inputs: Mapping[str, Tensor]) -> dict[str, Tensor]:
        outputs = self.fn({k: as_tensor(v) for k, v in inputs.items()})
        for name, t in outputs.items():
            if not np.isfinite(t.data).all():
                raise NonFiniteError(f"output {name!r} is non-finite")
        self._outputs = outputs
        return outputs

    def backward(self, root: str, wrt: Mapping[str, Tensor] | Sequence[Tensor] | None = None):
        if self._outputs is None:
            raise RuntimeError("backward called before forward")
        if root not in self._outputs:
            raise KeyError(f"unknown output {root!r}")
        return grad(self._outputs[root], self.params if wrt is None else wrt)


def forward_eval(graph: Graph, inputs: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return graph.forward(inputs)


def backward(graph: Graph, root: str, wrt=None):
    return graph.backward(root, wrt)
