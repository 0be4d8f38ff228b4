"""Reverse-mode automatic differentiation over numpy arrays.

Micrograd-style: each operation records a closure that scatters the output
gradient into its parents. ``backward`` walks the graph once in reverse
topological order, returns the gradients of the requested leaf tensors, and
clears per-node gradients so leaves can be reused across steps.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import SpannerError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- graph construction helpers -------------------------------------

    def _const(self, value) -> np.ndarray:
        return np.asarray(value, dtype=self.data.dtype)

    @staticmethod
    def _lift(value, like: "Tensor") -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=like.data.dtype))

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
        else:
            self.grad = self.grad + grad

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other, self)
        out = Tensor(self.data + other.data, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward_fn = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward_fn = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-Tensor._lift(other, self))

    def __rsub__(self, other):
        return Tensor._lift(other, self) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        out = Tensor(self.data * other.data, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward_fn = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return Tensor._lift(other, self) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, (self,))

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1.0))

        out._backward_fn = backward
        return out

    def __matmul__(self, other):
        other = Tensor._lift(other, self)
        out = Tensor(self.data @ other.data, (self, other))

        def backward(g):
            self._accumulate(
                _unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.data.shape)
            )
            other._accumulate(
                _unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.data.shape)
            )

        out._backward_fn = backward
        return out

    # -- elementwise nonlinearities ---------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))
        out._backward_fn = lambda g: self._accumulate(g * out.data)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward_fn = lambda g: self._accumulate(g / self.data)
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), (self,))
        out._backward_fn = lambda g: self._accumulate(g * (1.0 - out.data * out.data))
        return out

    def sigmoid(self):
        # computed via tanh for stability at large |x|
        value = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        out = Tensor(value, (self,))
        out._backward_fn = lambda g: self._accumulate(g * out.data * (1.0 - out.data))
        return out

    def gelu(self):
        """Gaussian error linear unit, tanh approximation (smooth, so
        finite-difference gradient checks stay meaningful)."""
        c = math.sqrt(2.0 / math.pi)
        x = self.data
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out = Tensor(0.5 * x * (1.0 + t), (self,))

        def backward(g):
            sech2 = 1.0 - t * t
            local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3 * 0.044715 * x ** 2)
            self._accumulate(g * local)

        out._backward_fn = backward
        return out

    # -- reductions and shape ops -----------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).astype(self.data.dtype))

        out._backward_fn = backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward_fn = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def swapaxes(self, a: int, b: int):
        out = Tensor(np.swapaxes(self.data, a, b), (self,))
        out._backward_fn = lambda g: self._accumulate(np.swapaxes(g, a, b))
        return out

    def transpose(self, *axes):
        out = Tensor(self.data.transpose(*axes), (self,))
        inverse = np.argsort(axes)
        out._backward_fn = lambda g: self._accumulate(g.transpose(*inverse))
        return out

    def __getitem__(self, index):
        out = Tensor(self.data[index], (self,))

        def backward(g):
            scattered = np.zeros_like(self.data)
            np.add.at(scattered, index, g)
            self._accumulate(scattered)

        out._backward_fn = backward
        return out


def constant(value, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax; the max shift is treated as a
    constant, which is gradient-exact by shift invariance."""
    shift = Tensor(logits.data.max(axis=axis, keepdims=True))
    centered = logits - shift
    return centered - centered.exp().sum(axis=axis, keepdims=True).log()


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(logits.data.max(axis=axis, keepdims=True))
    e = (logits - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    return x * Tensor(keep / (1.0 - rate))


def backward(loss: Tensor, leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run reverse-mode differentiation from a scalar loss.

    Returns a gradient per named leaf; leaves unreachable from the loss get
    zeros. A loss node can only be differentiated once.
    """
    if loss.data.ndim != 0:
        raise SpannerError("backward expects a scalar loss")
    if loss._done:
        raise SpannerError("backward already ran on this loss node")
    loss._done = True

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:  # iterative DFS: prompt graphs exceed the recursion limit
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)

    grads = {}
    for name, leaf in leaves.items():
        if leaf.grad is None:
            grads[name] = np.zeros_like(leaf.data)
        else:
            grads[name] = leaf.grad
    for node in order:
        node.grad = None
    return grads
