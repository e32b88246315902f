"""ConvLSTM and dense LSTM cells.

Gate kernels are stored stacked along the output axis in the order
(i, f, g, o); ``W_xi`` and friends are views into those stacks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from ..errors import ArgumentError
from .autograd import Tensor

GATES = ("i", "f", "g", "o")
FORGET_BIAS = 1.0


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _gate_bias(hidden: int, dtype=np.float32) -> np.ndarray:
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = FORGET_BIAS
    return b


class _GateViews:
    hidden: int
    _gate_axis = 0

    def _gate(self, which: str, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        n = self.hidden
        if which == "b":
            return self.b.data[k * n:(k + 1) * n]
        src = self.W_x if which == "x" else self.W_h
        return src.data[k * n:(k + 1) * n] if self._gate_axis == 0 else src.data[:, k * n:(k + 1) * n]

    W_xi = property(lambda s: s._gate("x", "i"))
    W_hi = property(lambda s: s._gate("h", "i"))
    W_xf = property(lambda s: s._gate("x", "f"))
    W_hf = property(lambda s: s._gate("h", "f"))
    W_xg = property(lambda s: s._gate("x", "g"))
    W_hg = property(lambda s: s._gate("h", "g"))
    W_xo = property(lambda s: s._gate("x", "o"))
    W_ho = property(lambda s: s._gate("h", "o"))
    b_i = property(lambda s: s._gate("b", "i"))
    b_f = property(lambda s: s._gate("b", "f"))
    b_g = property(lambda s: s._gate("b", "g"))
    b_o = property(lambda s: s._gate("b", "o"))


@dataclass
class ConvLstmCellParams(_GateViews):
    in_channels: int
    hidden: int
    kernel: int
    W_x: Tensor   # (4H, Cin, k, k)
    W_h: Tensor   # (4H, H, k, k)
    b: Tensor     # (4H,)

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ArgumentError("ConvLSTM kernel must be odd")
        k, n = self.kernel, self.hidden
        if self.W_x.shape != (4 * n, self.in_channels, k, k) or self.W_h.shape != (4 * n, n, k, k) \
                or self.b.shape != (4 * n,):
            raise ArgumentError("ConvLSTM parameter shapes are inconsistent")

    @classmethod
    def init(cls, rng, in_channels: int, hidden: int, kernel: int = 3, dtype=np.float32):
        k = kernel
        return cls(in_channels, hidden, kernel,
                   Tensor(he_uniform(rng, (4 * hidden, in_channels, k, k), in_channels * k * k, dtype), True),
                   Tensor(he_uniform(rng, (4 * hidden, hidden, k, k), hidden * k * k, dtype), True),
                   Tensor(_gate_bias(hidden, dtype), True))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W_x": self.W_x, f"{prefix}.W_h": self.W_h, f"{prefix}.b": self.b}


@dataclass
class LstmCellParams(_GateViews):
    _gate_axis = 1
    in_features: int
    hidden: int
    W_x: Tensor   # (F, 4H)
    W_h: Tensor   # (H, 4H)
    b: Tensor     # (4H,)

    def __post_init__(self):
        n = self.hidden
        if self.W_x.shape != (self.in_features, 4 * n) or self.W_h.shape != (n, 4 * n) or self.b.shape != (4 * n,):
            raise ArgumentError("LSTM parameter shapes are inconsistent")

    @classmethod
    def init(cls, rng, in_features: int, hidden: int, dtype=np.float32):
        return cls(in_features, hidden,
                   Tensor(he_uniform(rng, (in_features, 4 * hidden), in_features, dtype), True),
                   Tensor(he_uniform(rng, (hidden, 4 * hidden), hidden, dtype), True),
                   Tensor(_gate_bias(hidden, dtype), True))

    @classmethod
    def from_conv(cls, p: ConvLstmCellParams) -> "LstmCellParams":
        """Dense cell equivalent to ``p`` on a 1x1 grid (only the kernel centre is seen)."""
        c = p.kernel // 2
        return cls(p.in_channels, p.hidden,
                   Tensor(np.ascontiguousarray(p.W_x.data[:, :, c, c].T), True),
                   Tensor(np.ascontiguousarray(p.W_h.data[:, :, c, c].T), True),
                   Tensor(p.b.data.copy(), True))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W_x": self.W_x, f"{prefix}.W_h": self.W_h, f"{prefix}.b": self.b}


def convlstm_step(p: ConvLstmCellParams, x_t: Tensor, h_prev: Tensor | None, c_prev: Tensor | None):
    """One ConvLSTM step on (N, C, H, W) tensors; ``None`` states mean zeros."""
    z = ag.conv2d(ag.as_tensor(x_t), p.W_x, p.b)
    if h_prev is not None:
        z = z + ag.conv2d(ag.as_tensor(h_prev), p.W_h)
    c = ag.lstm_cell_state(z, None if c_prev is None else ag.as_tensor(c_prev))
    return ag.lstm_cell_output(z, c), c


def lstm_step(p: LstmCellParams, x_t: Tensor, h_prev: Tensor | None, c_prev: Tensor | None):
    """One dense LSTM step on (N, F) inputs; ``None`` states mean zeros."""
    z = ag.matmul(ag.as_tensor(x_t), p.W_x) + p.b
    if h_prev is not None:
        z = z + ag.matmul(ag.as_tensor(h_prev), p.W_h)
    c = ag.lstm_cell_state(z, None if c_prev is None else ag.as_tensor(c_prev))
    return ag.lstm_cell_output(z, c), c
