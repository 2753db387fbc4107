"""Reverse-mode automatic differentiation over numpy arrays.

Small, dependency-free engine that powers every trainable network in this
package. Tensors wrap ``np.ndarray`` data; operations record a backward
closure and their parents, and ``Tensor.backward()`` walks the graph in
reverse topological order. Ops preserve the dtype of their inputs, so the
same network code runs in float32 for training and float64 for
finite-difference gradient verification.

Only the operations the networks actually need are implemented: broadcasted
arithmetic, batched matmul, shape ops, reductions, a handful of smooth
activations, fused softmax / layer-norm / group-norm, embedding lookup,
3x3 / 1x1 convolution (channels-last), and nearest 2x up/down sampling.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "as_tensor",
    "concat",
    "matmul",
    "softmax",
    "layer_norm",
    "group_norm",
    "embedding",
    "conv2d",
    "upsample2x_nearest",
    "silu",
    "gelu",
    "sigmoid",
]


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast dimensions."""
    if grad.shape == shape:
        return grad
    # Leading axes added by broadcasting.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # Axes of size 1 that were stretched.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus an optional backward graph edge."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction ----------------------------------------------------
    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # -- autodiff --------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (scalar unless ``grad`` given)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # The intermediate gradient is no longer needed.
            if node._backward is not None and node is not self:
                node.grad = None

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        data = self.data + other.data

        def backward(g):
            return _sum_to_shape(g, self.shape), _sum_to_shape(g, other.shape)

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            return (-g,)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        data = self.data - other.data

        def backward(g):
            return _sum_to_shape(g, self.shape), _sum_to_shape(-g, other.shape)

        return Tensor._result(data, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        data = self.data * other.data
        a, b = self, other

        def backward(g):
            return (
                _sum_to_shape(g * b.data, a.shape),
                _sum_to_shape(g * a.data, b.shape),
            )

        return Tensor._result(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        other = as_tensor(other, self.dtype)
        a, b = self, other
        data = a.data / b.data

        def backward(g):
            return (
                _sum_to_shape(g / b.data, a.shape),
                _sum_to_shape(-g * a.data / (b.data * b.data), b.shape),
            )

        return Tensor._result(data, (a, b), backward)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ---------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)

        def backward(g):
            return (g.reshape(old),)

        return Tensor._result(data, (self,), backward)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        data = self.data.transpose(axes)

        def backward(g):
            return (g.transpose(inv),)

        return Tensor._result(data, (self,), backward)

    def broadcast_to(self, shape: tuple[int, ...]) -> "Tensor":
        data = np.broadcast_to(self.data, shape)
        src = self.shape

        def backward(g):
            return (_sum_to_shape(g, src),)

        return Tensor._result(data, (self,), backward)

    # -- reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


class Parameter(Tensor):
    """A trainable tensor; modules register these for the optimizer."""

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != np.dtype(dtype):
        arr = arr.astype(dtype)
    return Tensor(arr)


# -- core ops --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting of leading axes."""
    a = as_tensor(a)
    b = as_tensor(b)
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

    return Tensor._result(data, (a, b), backward)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(data, tuple(ts), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return Tensor._result(y, (x,), backward)


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s

    def backward(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return Tensor._result(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor._result(s, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Tanh-form Gaussian-error-linear unit (smooth everywhere)."""
    u = _GELU_C * (x.data + _GELU_A * x.data**3)
    th = np.tanh(u)
    y = 0.5 * x.data * (1.0 + th)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data * x.data)
        dy = 0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th * th) * du
        return (g * dy,)

    return Tensor._result(y, (x,), backward)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * weight.data + bias.data

    def backward(g):
        dxhat = g * weight.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        red = tuple(range(g.ndim - 1))
        dw = (g * xhat).sum(axis=red)
        db = g.sum(axis=red)
        return dx, dw, db

    return Tensor._result(y, (x, weight, bias), backward)


def group_norm(x: Tensor, weight: Tensor, bias: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization for channels-last maps ``[N, H, W, C]``.

    Statistics are computed per sample over (H, W, C/groups); for video
    tensors the caller flattens batch and time first, so frames normalize
    independently.
    """
    n, h, w, c = x.shape
    cg = c // groups
    xg = x.data.reshape(n, h, w, groups, cg)
    mu = xg.mean(axis=(1, 2, 4), keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat.reshape(n, h, w, c) * weight.data + bias.data

    def backward(g):
        dy = g * weight.data
        dxhat = dy.reshape(n, h, w, groups, cg)
        m1 = dxhat.mean(axis=(1, 2, 4), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(1, 2, 4), keepdims=True)
        dx = ((dxhat - m1 - xhat * m2) * inv).reshape(n, h, w, c)
        xhat_full = xhat.reshape(n, h, w, c)
        dw = (g * xhat_full).sum(axis=(0, 1, 2))
        db = g.sum(axis=(0, 1, 2))
        return dx, dw, db

    return Tensor._result(y, (x, weight, bias), backward)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``table[idx]`` with scatter-add backward."""
    idx = np.asarray(idx)
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._result(data, (table,), backward)


# -- convolution (channels-last) --------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Extract sliding windows from a padded NHWC array.

    Returns ``[N, Ho, Wo, kh, kw, C]`` as a contiguous copy ready for GEMM.
    """
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # view: [N, Ho_full, Wo_full, C, kh, kw]
    view = view[:, ::stride, ::stride]
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """2D convolution on ``[N, H, W, Cin]`` with kernel ``[kh, kw, Cin, Cout]``.

    "Same" padding for odd kernels; stride 2 halves the spatial size.
    """
    n, h, w, cin = x.shape
    kh, kw, _, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    else:
        xp = x.data
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1

    if kh == kw == 1 and stride == 1:
        cols = x.data.reshape(n * h * w, cin)
        y = cols @ weight.data.reshape(cin, cout)
    else:
        cols = _im2col(xp, kh, kw, stride).reshape(n * ho * wo, kh * kw * cin)
        y = cols @ weight.data.reshape(kh * kw * cin, cout)
    y = y.reshape(n, ho, wo, cout)
    if bias is not None:
        y = y + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gy = g.reshape(n * ho * wo, cout)
        if kh == kw == 1 and stride == 1:
            cols_b = x.data.reshape(n * h * w, cin)
            dw = (cols_b.T @ gy).reshape(weight.shape)
            dx = (gy @ weight.data.reshape(cin, cout).T).reshape(x.shape)
        else:
            # Recompute the column matrix rather than caching it: memory for
            # compute, which matters at this RAM budget.
            cols_b = _im2col(xp, kh, kw, stride).reshape(n * ho * wo, kh * kw * cin)
            dw = (cols_b.T @ gy).reshape(weight.shape)
            dcols = (gy @ weight.data.reshape(kh * kw * cin, cout).T).reshape(
                n, ho, wo, kh, kw, cin
            )
            dxp = np.zeros((n, h + 2 * ph, w + 2 * pw, cin), dtype=g.dtype)
            for di in range(kh):
                for dj in range(kw):
                    dxp[:, di : di + ho * stride : stride, dj : dj + wo * stride : stride] += dcols[
                        :, :, :, di, dj
                    ]
            dx = dxp[:, ph : ph + h, pw : pw + w] if (ph or pw) else dxp
        if bias is None:
            return dx, dw
        db = gy.sum(axis=0)
        return dx, dw, db

    return Tensor._result(y, parents, backward)


def upsample2x_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of ``[N, H, W, C]``."""
    n, h, w, c = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return Tensor._result(y, (x,), backward)
