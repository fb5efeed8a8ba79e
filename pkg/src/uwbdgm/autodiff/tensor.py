"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
closure propagating the output gradient back to them.  ``backward`` walks the
graph in reverse topological order.  The op set is deliberately small: it is
what the waveform autoencoder and its heads need and nothing more.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or infinity."""


class Tensor:
    __slots__ = ("_backward", "data", "grad", "name", "op", "parents", "requires_grad")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        op: str = "leaf",
        parents: Sequence[Tensor] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by op '{op}'")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_non_scalar()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

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

    def backward(self) -> None:
        backward(self)


def _raise_non_scalar():
    raise ShapeError("item() requires a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo numpy broadcasting by summing over expanded axes.
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out: Tensor

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out = Tensor(a.data + b.data, op="add", parents=(a, b), backward=_bw)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return Tensor(a.data - b.data, op="sub", parents=(a, b), backward=_bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, op="mul", parents=(a, b), backward=_bw)


def matmul(a, b) -> Tensor:
    """``(n, k) @ (k, m)``; both operands must be 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def _bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(a.data @ b.data, op="matmul", parents=(a, b), backward=_bw)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def conv1d(x, kernel, stride: int = 1) -> Tensor:
    """Valid-padding 1-D cross-correlation.

    ``x`` is ``(batch, in_channels, length)`` and ``kernel`` is
    ``(out_channels, in_channels, width)``.  The output length is
    ``(length - width) // stride + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise ShapeError("conv1d expects (B, C, L) input and (O, C, K) kernel")
    if stride < 1:
        raise ShapeError("conv1d stride must be >= 1")
    _, c_in, length = x.shape
    _, k_in, width = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, kernel expects {k_in}")
    if width > length:
        raise ShapeError(f"conv1d: kernel width {width} exceeds input length {length}")
    l_out = (length - width) // stride + 1
    windows = sliding_window_view(x.data, width, axis=2)[:, :, : (l_out - 1) * stride + 1 : stride, :]
    out = np.tensordot(windows, kernel.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)

    def _bw(g):
        # g: (B, O, L_out)
        if kernel.requires_grad:
            _accumulate(kernel, np.tensordot(g, windows, axes=([0, 2], [0, 2])))
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            stop = (l_out - 1) * stride + 1
            for k in range(width):
                contrib = np.tensordot(g, kernel.data[:, :, k], axes=([1], [0]))
                dx[:, :, k : k + stop : stride] += contrib.transpose(0, 2, 1)
            _accumulate(x, dx)

    return Tensor(np.ascontiguousarray(out), op="conv1d", parents=(x, kernel), backward=_bw)


def conv2d(x, kernel, stride: int = 1) -> Tensor:
    """Valid-padding 2-D cross-correlation on ``(B, C, H, W)`` inputs.

    The kernel is ``(O, C, KH, KW)``; the same stride is used on both axes.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv2d expects (B, C, H, W) input and (O, C, KH, KW) kernel")
    if stride < 1:
        raise ShapeError("conv2d stride must be >= 1")
    _, c_in, h, w = x.shape
    _, k_in, kh, kw = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"conv2d: input has {c_in} channels, kernel expects {k_in}")
    if kh > h or kw > w:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : (h_out - 1) * stride + 1 : stride, : (w_out - 1) * stride + 1 : stride]
    # windows: (B, C, H_out, W_out, KH, KW)
    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def _bw(g):
        # g: (B, O, H_out, W_out)
        if kernel.requires_grad:
            _accumulate(kernel, np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            h_stop = (h_out - 1) * stride + 1
            w_stop = (w_out - 1) * stride + 1
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    dx[:, :, i : i + h_stop : stride, j : j + w_stop : stride] += contrib
            _accumulate(x, dx)

    return Tensor(np.ascontiguousarray(out), op="conv2d", parents=(x, kernel), backward=_bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def _bw(g):
        _accumulate(x, g * mask)

    return Tensor(np.where(mask, x.data, 0.0), op="relu", parents=(x,), backward=_bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def _bw(g):
        _accumulate(x, g * (1.0 - y * y))

    return Tensor(y, op="tanh", parents=(x,), backward=_bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return Tensor(y, op="softmax", parents=(x,), backward=_bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def _bw(g):
        _accumulate(x, g - p * g.sum(axis=axis, keepdims=True))

    return Tensor(y, op="log_softmax", parents=(x,), backward=_bw)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def _bw(g):
        _accumulate(x, g.reshape(x.shape))

    return Tensor(y, op="reshape", parents=(x,), backward=_bw)


def flatten(x) -> Tensor:
    """Collapse every axis after the batch axis."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def take_columns(x, start: int, stop: int) -> Tensor:
    """Slice ``x[:, start:stop]`` of a 2-D tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"take_columns: bad range [{start}, {stop}) for shape {x.shape}")

    def _bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return Tensor(x.data[:, start:stop], op="take_columns", parents=(x,), backward=_bw)


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        y = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _bw(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            _accumulate(p, piece)

    return Tensor(y, op="concat", parents=parts, backward=_bw)


def upsample1d(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling along the last axis of ``(B, C, L)``."""
    x = as_tensor(x)
    if factor < 1:
        raise ShapeError("upsample factor must be >= 1")
    y = np.repeat(x.data, factor, axis=-1)

    def _bw(g):
        _accumulate(x, g.reshape(*g.shape[:-1], x.shape[-1], factor).sum(axis=-1))

    return Tensor(y, op="upsample1d", parents=(x,), backward=_bw)


def tensor_sum(x) -> Tensor:
    x = as_tensor(x)

    def _bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return Tensor(x.data.sum(), op="sum", parents=(x,), backward=_bw)


def sum_squared_error(a, b) -> Tensor:
    """``sum((a - b) ** 2)`` over every element."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sum_squared_error: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def _bw(g):
        _accumulate(a, 2.0 * g * diff)
        _accumulate(b, -2.0 * g * diff)

    return Tensor((diff * diff).sum(), op="sse", parents=(a, b), backward=_bw)


def mse(a, b) -> Tensor:
    """Mean of squared differences."""
    a = as_tensor(a)
    return mul(sum_squared_error(a, b), 1.0 / a.size)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    if not loss.requires_grad:
        return
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node.parents:
                # intermediate gradients are not needed after propagation
                node.grad = None
