"""Small dense reverse-mode differentiation kernel on top of numpy.

Every operation builds a new :class:`Tensor` holding its forward value and a
closure that pushes the upstream gradient back to its inputs.  Calling
``loss.backward()`` walks the recorded graph in reverse topological order.
Only what the model needs is supported: rank <= 3, and broadcasting limited to
adding a trailing-shape operand (bias rows, shared label embeddings).
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim > 3:
            raise ShapeError(f"rank {self.values.ndim} tensors are not supported")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Populate ``.grad`` on every upstream node that requires it."""
        if grad is None:
            if self.values.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self.values)
        order, seen = [], set()
        stack = [(self, False)]
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
        # intermediate grads are recomputed from scratch on every call
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values, parents, backward):
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None)


def _unbroadcast(g, shape):
    # reduce a full-shape gradient onto a trailing-suffix operand shape
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead > 0 else g
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb or b.values.size == 1 or a.values.size == 1:
        return
    if len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.values + b.values, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _result(a.values - b.values, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a scalar or a trailing-shape operand."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _result(a.values * b.values, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported ranks: 2x2, 3x2 (``b`` applied to every slice of ``a``) and 2x3
    (``a`` applied to every slice of ``b``, used for graph propagation).
    """
    a, b = as_tensor(a), as_tensor(b)
    ra, rb = a.ndim, b.ndim
    if (ra, rb) not in ((2, 2), (3, 2), (2, 3)) or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        if a.requires_grad:
            if ra == 2 and rb == 3:
                # sum_n g[n] @ b[n].T
                gi = g.transpose(1, 0, 2).reshape(g.shape[1], -1)
                bj = bv.transpose(1, 0, 2).reshape(bv.shape[1], -1)
                a._accumulate(gi @ bj.T)
            else:
                a._accumulate(g @ bv.T)
        if b.requires_grad:
            if ra == 3:
                # sum_n a[n].T @ g[n]
                b._accumulate(av.reshape(-1, av.shape[2]).T @ g.reshape(-1, g.shape[2]))
            else:
                b._accumulate(av.T @ g)

    return _result(av @ bv, (a, b), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0

    def backward(g):
        a._accumulate(g * mask)

    return _result(np.where(mask, a.values, 0.0), (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _result(s, (a,), backward)


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"row_softmax needs a rank-2 input, got shape {a.shape}")
    z = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        # J^T g per row: s * (g - <g, s>)
        a._accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _result(s, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.values)

    return _result(np.log(a.values), (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.values >= lo) & (a.values <= hi)

    def backward(g):
        a._accumulate(g * inside)

    return _result(np.clip(a.values, lo, hi), (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(2.0 * g * a.values)

    return _result(a.values * a.values, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _result(a.values.reshape(shape), (a,), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 input, got shape {a.shape}")

    def backward(g):
        a._accumulate(g.T)

    return _result(a.values.T.copy(), (a,), backward)


def take_rows(a, index) -> Tensor:
    """Gather ``a[index]`` along the first axis (repeats allowed)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        # scatter-add as a one-hot product; much faster than np.add.at
        onehot = np.zeros((a.shape[0], len(index)))
        onehot[index, np.arange(len(index))] = 1.0
        flat = onehot @ g.reshape(len(index), -1)
        a._accumulate(flat.reshape(a.shape))

    return _result(a.values[index], (a,), backward)


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), shape))

    return _result(a.values.sum(axis=axis), (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.values.size
    if n == 0:
        return Tensor(0.0)
    return mul(sum(a), 1.0 / n)


# ---------------------------------------------------------------------------
# parameters, optimizer, initialization


class ParamStore:
    """Named trainable tensors plus Adam moment state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, values) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        if isinstance(values, Tensor):
            values = values.values
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.values)
        self.v[name] = np.zeros_like(t.values)
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.params.items()}

    def all_finite(self) -> bool:
        return all(np.isfinite(t.values).all() for t in self.params.values())


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    missing = [k for k, t in store.items() if t.grad is None]
    if missing:
        raise ValueError(f"no gradient for parameter {missing[0]!r}")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for k, t in store.items():
        g = t.grad
        m, v = store.m[k], store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        t.grad = None


def seed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def init_uniform(shape, scale: float, rng: np.random.Generator) -> Tensor:
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return Tensor(rng.uniform(-scale, scale, size=tuple(shape)))


def fan_in_scale(fan_in: int) -> float:
    return 1.0 / math.sqrt(max(fan_in, 1))
