"""Minimal dense tensor library with reverse-mode automatic differentiation.

Supports exactly the operations the counting model needs: conv2d (with
stride/dilation/zero-padding), relu, channel concatenation, elementwise
arithmetic, axis reductions, broadcasting, and MSE loss.  Tensors wrap a
numpy array; ops record vector-Jacobian callbacks so that ``backward`` on a
scalar populates ``grad`` on every reachable leaf with ``requires_grad``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

# When enabled, every forward op asserts its output is finite.  Turned on in
# the test suite; off by default for training speed.
_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class DimensionError(ValueError):
    """Shape mismatch between op arguments."""


class AutodiffError(RuntimeError):
    """Misuse of the tape (backward on detached tensor, double backward...)."""


def _as_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_vjps", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype or DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        # list of (parent Tensor, fn(upstream ndarray) -> ndarray contribution)
        self._vjps: list = []
        self._backward_done = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def _op(data: np.ndarray, vjps) -> "Tensor":
        if _CHECK_FINITE and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite values produced by forward op")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._backward_done = False
        out._vjps = [(p, fn) for p, fn in vjps if p.requires_grad or p._vjps]
        out.requires_grad = bool(out._vjps)
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff -------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; populates leaf gradients.

        Raises AutodiffError if this tensor is not a scalar, was not produced
        by recorded ops, or backward was already called on it.
        """
        if self.data.size != 1:
            raise AutodiffError(f"backward requires a scalar, got shape {self.data.shape}")
        if not self._vjps:
            raise AutodiffError("backward on a tensor not attached to the tape")
        if self._backward_done:
            raise AutodiffError("backward called twice on the same graph; zero_grad and rebuild")
        self._backward_done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._vjps:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._vjps:
                node.grad = g if node.grad is None else node.grad + g
            for parent, fn in node._vjps:
                contrib = fn(g)
                acc = grads.get(id(parent))
                grads[id(parent)] = contrib if acc is None else acc + contrib

    # -- elementwise / arithmetic --------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        other = _coerce(other, self.data.dtype)
        data = self.data + other.data
        return Tensor._op(data, [
            (self, lambda g: _unbroadcast(g, self.data.shape)),
            (other, lambda g: _unbroadcast(g, other.data.shape)),
        ])

    def __sub__(self, other: "Tensor") -> "Tensor":
        other = _coerce(other, self.data.dtype)
        data = self.data - other.data
        return Tensor._op(data, [
            (self, lambda g: _unbroadcast(g, self.data.shape)),
            (other, lambda g: _unbroadcast(-g, other.data.shape)),
        ])

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            data = self.data * other.data
            return Tensor._op(data, [
                (self, lambda g: _unbroadcast(g * other.data, self.data.shape)),
                (other, lambda g: _unbroadcast(g * self.data, other.data.shape)),
            ])
        const = np.asarray(other, dtype=self.data.dtype)
        return Tensor._op(self.data * const,
                          [(self, lambda g: _unbroadcast(g * const, self.data.shape))])

    __rmul__ = __mul__

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, shape).copy()

        return Tensor._op(np.asarray(data), [(self, vjp)])

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape) -> "Tensor":
        old = self.data.shape
        return Tensor._op(self.data.reshape(*shape),
                          [(self, lambda g: g.reshape(old))])

    def broadcast_to(self, shape) -> "Tensor":
        old = self.data.shape
        return Tensor._op(np.broadcast_to(self.data, shape).copy(),
                          [(self, lambda g: _unbroadcast(g, old))])


def _coerce(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- ops ----------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._op(np.where(mask, x.data, 0.0), [(x, lambda g: g * mask)])


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Stack [C_i, H, W] tensors along the channel axis."""
    if not inputs:
        raise DimensionError("concat_channels needs at least one input")
    hw = inputs[0].data.shape[1:]
    for i, t in enumerate(inputs):
        if t.data.shape[1:] != hw:
            raise DimensionError(
                f"concat_channels input {i} has spatial dims {t.data.shape[1:]}, expected {hw}")
    data = np.concatenate([t.data for t in inputs], axis=0)
    vjps = []
    off = 0
    for t in inputs:
        c = t.data.shape[0]
        start = off
        vjps.append((t, lambda g, s=start, c=c: g[s:s + c]))
        off += c
    return Tensor._op(data, vjps)


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int):
    """Padded input (C,Hp,Wp) -> columns (C*k*k, Ho*Wo) plus output dims."""
    c, hp, wp = xp.shape
    keff = dilation * (k - 1) + 1
    ho = (hp - keff) // stride + 1
    wo = (wp - keff) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (keff, keff), axis=(1, 2))
    patches = windows[:, ::stride, ::stride, ::dilation, ::dilation]  # C,Ho,Wo,k,k
    col = patches.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return np.ascontiguousarray(col), ho, wo


def _col2im(gcol: np.ndarray, c: int, hp: int, wp: int, k: int, stride: int,
            dilation: int, ho: int, wo: int) -> np.ndarray:
    gx = np.zeros((c, hp, wp), dtype=gcol.dtype)
    gcol = gcol.reshape(c, k, k, ho, wo)
    for a in range(k):
        ra = a * dilation
        for b in range(k):
            rb = b * dilation
            gx[:, ra:ra + stride * ho:stride, rb:rb + stride * wo:stride] += gcol[:, a, b]
    return gx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a [C_in,H,W] input with [C_out,C_in,k,k] weights.

    Zero padding; output dims follow the usual floor formula.  Differentiable
    w.r.t. input, weight and bias.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"conv2d input must be [C,H,W], got ndim {x.data.ndim}")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d weight must be [C_out,C_in,k,k], got ndim {weight.data.ndim}")
    c_out, c_in, k, k2 = weight.data.shape
    if k != k2:
        raise DimensionError(f"conv2d kernel must be square, got {k}x{k2}")
    if k % 2 == 0:
        raise DimensionError(f"conv2d kernel size must be odd, got {k}")
    if x.data.shape[0] != c_in:
        raise DimensionError(
            f"conv2d channel mismatch on axis 0: input has {x.data.shape[0]}, weight expects {c_in}")
    if bias.data.shape != (c_out,):
        raise DimensionError(f"conv2d bias must be [{c_out}], got {bias.data.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d requires stride>=1, dilation>=1, padding>=0")

    c, h, w = x.data.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if padding:
        xp = np.zeros((c, hp, wp), dtype=x.data.dtype)
        xp[:, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data
    col, ho, wo = _im2col(xp, k, stride, dilation)
    wmat = weight.data.reshape(c_out, c_in * k * k)
    out = (wmat @ col + bias.data[:, None]).reshape(c_out, ho, wo)

    def vjp_x(g):
        gcol = wmat.T @ g.reshape(c_out, ho * wo)
        gxp = _col2im(gcol, c, hp, wp, k, stride, dilation, ho, wo)
        if padding:
            return gxp[:, padding:padding + h, padding:padding + w]
        return gxp

    def vjp_w(g):
        return (g.reshape(c_out, ho * wo) @ col.T).reshape(weight.data.shape)

    def vjp_b(g):
        return g.reshape(c_out, ho * wo).sum(axis=1)

    return Tensor._op(out, [(x, vjp_x), (weight, vjp_w), (bias, vjp_b)])


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"mse_loss shape mismatch: pred {pred.data.shape} vs target {target.data.shape}")
    if target.requires_grad:
        raise AutodiffError("mse_loss target must not require grad")
    diff = pred.data - target.data
    n = diff.size
    loss = np.asarray((diff * diff).sum() / n)
    return Tensor._op(loss, [(pred, lambda g: (2.0 / n) * diff * g)])


def parameters_of(named: Iterable[tuple[str, Tensor]]) -> list[Tensor]:
    return [t for _, t in named]
