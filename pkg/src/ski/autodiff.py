"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every trainable computation in this package is expressed through `Tensor` so
that analytic gradients are available for any scalar loss. The engine is
deliberately small: dense float64 arrays, a fixed set of primitives, and an
explicit topological backward pass. No broadcasting rules beyond numpy's own;
gradients of broadcast operands are summed back to the operand shape.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Sum away leading axes added by broadcasting.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 ndarray. `grad` is populated by `backward()`
    for every node with `requires_grad`. Leaf tensors accumulate across
    backward calls until `zero_grad()`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad: Array | None = None
        self._parents = _parents
        self._vjp = _vjp  # callable(out_grad) -> tuple of parent grads (or None)

    # -- graph bookkeeping ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: Array | None = None):
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative topo sort; graphs can be deep
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, Array] = {id(self): _as_array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- primitives --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        a_shape, b_shape = self.data.shape, other.data.shape
        return Tensor(
            out_data,
            _parents=(self, other),
            _vjp=lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _vjp=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor(
            a.data * b.data,
            _parents=(a, b),
            _vjp=lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor(
            a.data / b.data,
            _parents=(a, b),
            _vjp=lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        e = float(exponent)
        a = self
        return Tensor(
            a.data**e,
            _parents=(a,),
            _vjp=lambda g: (g * e * a.data ** (e - 1.0),),
        )

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        return Tensor(
            a.data @ b.data,
            _parents=(a, b),
            _vjp=lambda g: (g @ b.data.T, a.data.T @ g),
        )

    def __getitem__(self, key):
        a = self
        out = self.data[key]

        def vjp(g):
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            return (full,)

        return Tensor(out, _parents=(a,), _vjp=vjp)

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, _parents=(self,), _vjp=lambda g: (g * out,))

    def log(self):
        a = self
        return Tensor(np.log(a.data), _parents=(a,), _vjp=lambda g: (g / a.data,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor(out, _parents=(self,), _vjp=lambda g: (g * (1.0 - out * out),))

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.data.shape).copy(),)

        return Tensor(out, _parents=(a,), _vjp=vjp)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = a.data.shape
        return Tensor(
            a.data.reshape(shape),
            _parents=(a,),
            _vjp=lambda g: (g.reshape(old),),
        )

    @property
    def T(self):
        a = self
        if a.ndim != 2:
            raise ValueError("T supports 2-D tensors only")
        return Tensor(a.data.T, _parents=(a,), _vjp=lambda g: (g.T,))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concatenate(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp)


# -- composite operations --------------------------------------------------


def logsumexp(t: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp; the max shift is held constant."""
    m = np.max(t.data, axis=axis, keepdims=True)
    shifted = t - Tensor(m)
    out = shifted.exp().sum(axis=axis, keepdims=True).log() + Tensor(m)
    if not keepdims:
        out = out.reshape(tuple(np.delete(out.data.shape, axis)))
    return out


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    return t - logsumexp(t, axis=axis, keepdims=True)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(t, axis=axis).exp()


def l2_normalize_rows(t: Tensor, eps: float = 0.0) -> Tensor:
    """Normalize the last axis to unit L2 norm. Degenerate rows are the
    caller's problem; `eps` is exposed for callers that cannot exclude them."""
    sq = (t * t).sum(axis=-1, keepdims=True)
    return t * ((sq + eps) ** -0.5)


def dot(a: Tensor, b: Tensor) -> Tensor:
    return (a * b).sum()
