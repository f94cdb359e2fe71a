"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a backward closure on its output node; calling
``backward()`` on a scalar walks the graph in reverse topological order and
accumulates gradients into ``.grad``. Arithmetic follows numpy broadcasting,
and gradients are summed back down to each operand's shape. ``exp`` and
``log`` clamp their arguments so any forward pass on finite inputs stays
finite.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

# exp arguments clamped to [-EXP_CLAMP, EXP_CLAMP]; log arguments floored
# at exp(-EXP_CLAMP).
EXP_CLAMP = 30.0
LOG_FLOOR = math.exp(-EXP_CLAMP)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A node in the computation graph holding a float64 numpy array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- reverse-mode sweep --------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad for every reachable node.

        Only defined for scalar outputs. Runs an iterative depth-first
        topological sort so deep graphs cannot hit the recursion limit;
        each node's closure fires exactly once.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    _accum(other, _unbroadcast(out.grad, other.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        out = _node(self.data - other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    _accum(other, _unbroadcast(-out.grad, other.shape))
            out._backward = backward
        return out

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        out = _node(self.data * other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad * other.data, self.shape))
                if other.requires_grad:
                    _accum(other, _unbroadcast(out.grad * self.data, other.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        out = _node(self.data / other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad / other.data, self.shape))
                if other.requires_grad:
                    g = -out.grad * self.data / (other.data * other.data)
                    _accum(other, _unbroadcast(g, other.shape))
            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return _coerce(other) / self

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out._parents:
            def backward():
                _accum(self, -out.grad)
            out._backward = backward
        return out

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _node(self.data ** p, (self,))
        if out._parents:
            def backward():
                _accum(self, out.grad * p * self.data ** (p - 1))
            out._backward = backward
        return out

    def __matmul__(self, other):
        other = _coerce(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(
                f"matmul requires 2-D or higher operands, got shapes "
                f"{self.shape} and {other.shape}"
            )
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {self.shape} vs {other.shape}"
            )
        out = _node(self.data @ other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    g = out.grad @ np.swapaxes(other.data, -1, -2)
                    _accum(self, _unbroadcast(g, self.shape))
                if other.requires_grad:
                    g = np.swapaxes(self.data, -1, -2) @ out.grad
                    _accum(other, _unbroadcast(g, other.shape))
            out._backward = backward
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            def backward():
                _accum(self, _spread(out.grad, self.shape, axis, keepdims))
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else _axis_size(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise ---------------------------------------------------------

    def exp(self):
        clipped = np.clip(self.data, -EXP_CLAMP, EXP_CLAMP)
        value = np.exp(clipped)
        out = _node(value, (self,))
        if out._parents:
            inside = (self.data >= -EXP_CLAMP) & (self.data <= EXP_CLAMP)
            def backward():
                _accum(self, out.grad * value * inside)
            out._backward = backward
        return out

    def log(self):
        safe = np.maximum(self.data, LOG_FLOOR)
        out = _node(np.log(safe), (self,))
        if out._parents:
            inside = self.data >= LOG_FLOOR
            def backward():
                _accum(self, out.grad * inside / safe)
            out._backward = backward
        return out

    def sqrt(self):
        value = np.sqrt(self.data)
        out = _node(value, (self,))
        if out._parents:
            def backward():
                _accum(self, out.grad * 0.5 / value)
            out._backward = backward
        return out

    def tanh(self):
        value = np.tanh(self.data)
        out = _node(value, (self,))
        if out._parents:
            def backward():
                _accum(self, out.grad * (1.0 - value * value))
            out._backward = backward
        return out

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out._parents:
            mask = self.data > 0
            def backward():
                _accum(self, out.grad * mask)
            out._backward = backward
        return out

    def gelu(self):
        # tanh approximation; the derivative below is exact for it
        c = math.sqrt(2.0 / math.pi)
        x = self.data
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out = _node(0.5 * x * (1.0 + t), (self,))
        if out._parents:
            def backward():
                d_inner = c * (1.0 + 3 * 0.044715 * x ** 2)
                local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
                _accum(self, out.grad * local)
            out._backward = backward
        return out

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, shape):
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            def backward():
                _accum(self, out.grad.reshape(self.shape))
            out._backward = backward
        return out

    def swapaxes(self, a: int, b: int):
        out = _node(np.swapaxes(self.data, a, b), (self,))
        if out._parents:
            def backward():
                _accum(self, np.swapaxes(out.grad, a, b))
            out._backward = backward
        return out

    def __getitem__(self, key):
        out = _node(self.data[key], (self,))
        if out._parents:
            def backward():
                g = np.zeros_like(self.data)
                np.add.at(g, key, out.grad)
                _accum(self, g)
            out._backward = backward
        return out


# -- free functions over tensors ----------------------------------------------


def constant(data) -> Tensor:
    return Tensor(data)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never mutate an existing grad buffer in place: closures may alias it
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _axis_size(shape: tuple[int, ...], axis) -> int:
    n = 1
    for a in _normalize_axes(axis, len(shape)):
        n *= shape[a]
    return n


def _spread(grad: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(grad, shape)
    if not keepdims:
        kept = list(grad.shape)
        for a in sorted(_normalize_axes(axis, len(shape))):
            kept.insert(a, 1)
        grad = grad.reshape(kept)
    return np.broadcast_to(grad, shape)


def maximum(a, b) -> Tensor:
    """Elementwise maximum; ties route the gradient to the first operand."""
    a = _coerce(a)
    b = _coerce(b)
    out = _node(np.maximum(a.data, b.data), (a, b))
    if out._parents:
        take_a = a.data >= b.data
        def backward():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad * take_a, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad * ~take_a, b.shape))
        out._backward = backward
    return out


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the bounds."""
    out = _node(np.clip(t.data, lo, hi), (t,))
    if out._parents:
        inside = (t.data >= lo) & (t.data <= hi)
        def backward():
            _accum(t, out.grad * inside)
        out._backward = backward
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    _accum(t, out.grad[tuple(sl)])
        out._backward = backward
    return out


def broadcast_to(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _node(np.broadcast_to(t.data, shape), (t,))
    if out._parents:
        def backward():
            _accum(t, _unbroadcast(out.grad, t.shape))
        out._backward = backward
    return out


def take(t: Tensor, indices, axis: int) -> Tensor:
    """Gather slices along an axis with an integer index vector."""
    indices = np.asarray(indices, dtype=np.int64)
    out = _node(np.take(t.data, indices, axis=axis), (t,))
    if out._parents:
        def backward():
            g = np.zeros_like(t.data)
            moved = np.moveaxis(g, axis, 0)
            np.add.at(moved, indices, np.moveaxis(out.grad, axis, 0))
            _accum(t, g)
        out._backward = backward
    return out


def take_along(t: Tensor, indices: np.ndarray, axis: int = -1) -> Tensor:
    """Gather per-position entries along an axis (labels into score rows)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = _node(np.take_along_axis(t.data, indices, axis=axis), (t,))
    if out._parents:
        key = list(np.indices(indices.shape, sparse=True))
        key[axis if axis >= 0 else t.ndim + axis] = indices
        key = tuple(key)
        def backward():
            g = np.zeros_like(t.data)
            np.add.at(g, key, out.grad)
            _accum(t, g)
        out._backward = backward
    return out


# -- parameter registry ---------------------------------------------------------


class Graph:
    """Named trainable parameters plus gradient plumbing.

    Single-owner during a training step: nothing here is safe under
    concurrent mutation. Read-only forward passes may run in parallel.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameter(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, t in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {arr.shape} != {t.data.shape}"
                )
            t.data[...] = arr


def forward_backward(graph: Graph, loss: Tensor) -> tuple[float, dict[str, np.ndarray]]:
    """Run the reverse sweep and return (loss value, gradient per parameter).

    Parameters not reachable from the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    graph.zero_grad()
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in graph.params.items()
    }
    return float(loss.data), grads
