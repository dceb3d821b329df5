"""Minimal reverse-mode differentiation engine over numpy arrays.

Tensors form a DAG; `backward` walks it once in reverse topological order and
accumulates gradients additively across fan-out.  The gradient reversal node
is an identity in the forward pass and multiplies the upstream gradient by
-lambda in the backward pass.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(),
                 _backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch(
                    "backward without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # Small operator sugar used by loss composition.
    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor)
                   else Tensor(np.asarray(other, dtype=self.dtype)))

    def __mul__(self, scalar: float):
        return scale(self, float(scalar))

    __rmul__ = __mul__


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, _parents=(a, b), _backward=backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        return (g * s,)

    return Tensor(a.data * s, _parents=(a,), _backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, _parents=(a, b), _backward=backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor(a.data * mask, _parents=(a,), _backward=backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        return (g.reshape(a.data.shape),)

    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors)))

    return Tensor(out, _parents=tuple(tensors), _backward=backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C] by mean over the spatial axes."""
    n, c, h, w = a.data.shape
    out = a.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w),
                                a.data.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return Tensor(s, _parents=(a,), _backward=backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)

    return Tensor(out, _parents=(a,), _backward=backward)


def grad_reverse(a: Tensor, lam: float) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    if lam < 0:
        raise InvalidConfig("reversal intensity lambda must be >= 0")

    def backward(g):
        return (-lam * g,)

    return Tensor(a.data, _parents=(a,), _backward=backward)


def _pad2d(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            ph: int, pw: int):
    n, c, h, w = x.shape
    xp = _pad2d(x, ph, pw)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(n, c * kh * kw, ho * wo), (ho, wo)


def _col2im(dcols: np.ndarray, x_shape, kh, kw, sh, sw, ph, pw, ho, wo):
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                dcols[:, :, i, j]
    if ph or pw:
        return dxp[:, :, ph:h + ph, pw:w + pw]
    return dxp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: tuple[int, int] = (1, 1),
           padding: tuple[int, int] = (0, 0)) -> Tensor:
    """2-D convolution (cross-correlation), x [N,C,H,W], w [Co,C,kh,kw]."""
    if x.data.ndim != 4 or w.data.ndim != 4 or \
            x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"conv2d {x.data.shape} with {w.data.shape}")
    co, ci, kh, kw = w.data.shape
    sh, sw = stride
    ph, pw = padding
    cols, (ho, wo) = _im2col(x.data, kh, kw, sh, sw, ph, pw)
    wmat = w.data.reshape(co, ci * kh * kw)
    out = np.matmul(wmat, cols).reshape(x.data.shape[0], co, ho, wo)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gmat = g.reshape(g.shape[0], co, ho * wo)
        dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(w.data.shape)
        dcols = np.matmul(wmat.T, gmat)
        dx = _col2im(dcols, x.data.shape, kh, kw, sh, sw, ph, pw, ho, wo)
        if b is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """1-D convolution via the 2-D kernel, x [N,C,T], w [Co,C,k]."""
    x4 = reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2]))
    w4 = reshape(w, (w.shape[0], w.shape[1], 1, w.shape[2]))
    out = conv2d(x4, w4, b, stride=(1, stride), padding=(0, padding))
    return reshape(out, (out.shape[0], out.shape[1], out.shape[3]))


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor,
                     eps: float = 1e-5):
    """Batch normalization over (N, H, W) per channel, training statistics.

    Returns (output, batch_mean, batch_var); the caller owns running-stat
    bookkeeping.  The gradient accounts for the dependence of the batch
    statistics on the input.
    """
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + \
        beta.data[None, :, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = g * gamma.data[None, :, None, None]
        mean_gx = gx.mean(axis=axes)
        mean_gx_xhat = (gx * xhat).mean(axis=axes)
        dx = inv_std[None, :, None, None] * (
            gx - mean_gx[None, :, None, None]
            - xhat * mean_gx_xhat[None, :, None, None])
        return dx, dgamma, dbeta

    y = Tensor(out, _parents=(x, gamma, beta), _backward=backward)
    return y, mean, var


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float = 1e-5) -> Tensor:
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean[None, :, None, None]) * \
        inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + \
        beta.data[None, :, None, None]

    def backward(g):
        scale_ = (gamma.data * inv_std)[None, :, None, None]
        return (g * scale_, (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))

    return Tensor(out, _parents=(x, gamma, beta), _backward=backward)
