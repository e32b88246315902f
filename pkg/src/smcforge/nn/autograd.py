"""A small reverse-mode tape over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to one gradient per parent. ``backward`` walks
the graph in reverse topological order. Ops preserve the dtype of their
inputs, so the same model code runs in float32 for training and float64 for
gradient checks.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return _node(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _node(s, (a,), lambda g: (g * s * (1 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: (g * (1 - t * t),))


def scaled_sigmoid(a: Tensor, lo: float, hi: float) -> Tensor:
    """lo + (hi - lo) * sigmoid(a); maps onto the open interval (lo, hi)."""
    s = _sigmoid(a.data)
    span = np.asarray(hi - lo, dtype=a.dtype)
    return _node(np.asarray(lo, dtype=a.dtype) + span * s, (a,), lambda g: (g * span * s * (1 - s),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def masked_mse(pred: Tensor, target, mask=None) -> Tensor:
    """sum(mask * (pred - target)^2) / sum(mask)."""
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ArgumentError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if mask.shape != pred.shape:
        raise ArgumentError(f"mask shape {mask.shape} != prediction shape {pred.shape}")
    n = mask.sum()
    if n <= 0:
        raise ArgumentError("mask selects no elements")
    diff = np.where(mask > 0, pred.data - target, 0).astype(pred.dtype)
    loss = np.asarray((mask * diff * diff).sum() / n, dtype=pred.dtype)
    return _node(loss, (pred,), lambda g: (g * 2.0 * mask * diff / n,))


# --- convolution -----------------------------------------------------------

def _windows(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """(N, Ho, Wo, C, k, k) view of sliding windows."""
    w = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    return w.transpose(0, 2, 3, 1, 4, 5)


def _scatter(cols: np.ndarray, out_shape, k: int, stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: add (N, Ho, Wo, C, k, k) patches into (N, C, Hp, Wp)."""
    N, Ho, Wo, C = cols.shape[:4]
    out = np.zeros(out_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (O, C, k, k) kernels; same padding by default."""
    N, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ArgumentError(f"kernel {w.shape} does not match input channels {C}")
    p = k // 2 if padding is None else padding
    Ho = (H + 2 * p - k) // stride + 1
    Wo = (W + 2 * p - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _windows(xp, k, stride, Ho, Wo).reshape(N * Ho * Wo, C * k * k)
    wf = w.data.reshape(O, -1)
    out = (cols @ wf.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        dw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wf).reshape(N, Ho, Wo, C, k, k)
            dxp = _scatter(dcols, xp.shape, k, stride)
            dx = dxp[:, :, p:p + H, p:p + W] if p else dxp
        if b is None:
            return dx, dw
        return dx, dw, g.sum((0, 2, 3))
    return _node(np.ascontiguousarray(out), parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed convolution of (N, Cin, H, W) with (Cin, Cout, k, k) kernels.

    Output size is (H - 1) * stride - 2 * padding + k.
    """
    N, C, H, W = x.shape
    Cw, O, k, _ = w.shape
    if Cw != C:
        raise ArgumentError(f"kernel {w.shape} does not match input channels {C}")
    Hf, Wf = (H - 1) * stride + k, (W - 1) * stride + k
    xf = x.data.transpose(0, 2, 3, 1).reshape(N * H * W, C)
    wf = w.data.reshape(C, O * k * k)
    cols = (xf @ wf).reshape(N, H, W, O, k, k)
    full = _scatter(cols, (N, O, Hf, Wf), k, stride)
    out = full[:, :, padding:Hf - padding, padding:Wf - padding]
    if b is not None:
        out = out + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gf = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _windows(gf, k, stride, H, W).reshape(N * H * W, O * k * k)
        dx = (gcols @ wf.T).reshape(N, H, W, C).transpose(0, 3, 1, 2) if x.requires_grad else None
        dw = (xf.T @ gcols).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return dx, dw
        return dx, dw, g.sum((0, 2, 3))
    return _node(np.ascontiguousarray(out), parents, bw)


# --- fused LSTM gate algebra (gate order i, f, g, o along axis 1) -----------

def lstm_cell_state(z: Tensor, c_prev: Tensor | None) -> Tensor:
    """c_t = sigmoid(z_f) * c_prev + sigmoid(z_i) * tanh(z_g)."""
    n = z.shape[1] // 4
    i = _sigmoid(z.data[:, :n])
    f = _sigmoid(z.data[:, n:2 * n])
    g_ = np.tanh(z.data[:, 2 * n:3 * n])
    cp = np.zeros_like(i) if c_prev is None else c_prev.data
    c = f * cp + i * g_
    parents = (z,) if c_prev is None else (z, c_prev)

    def bw(gc):
        dz = np.zeros_like(z.data)
        dz[:, :n] = gc * g_ * i * (1 - i)
        dz[:, n:2 * n] = gc * cp * f * (1 - f)
        dz[:, 2 * n:3 * n] = gc * i * (1 - g_ * g_)
        return (dz,) if c_prev is None else (dz, gc * f)
    return _node(c, parents, bw)


def lstm_cell_output(z: Tensor, c: Tensor) -> Tensor:
    """h_t = sigmoid(z_o) * tanh(c_t)."""
    n = z.shape[1] // 4
    o = _sigmoid(z.data[:, 3 * n:])
    tc = np.tanh(c.data)

    def bw(gh):
        dz = np.zeros_like(z.data)
        dz[:, 3 * n:] = gh * tc * o * (1 - o)
        return dz, gh * o * (1 - tc * tc)
    return _node(o * tc, (z, c), bw)
