"""EO-only sequence-to-sequence forecaster of SMC maps.

Frames pass through a two-layer stride-2 convolutional stem into a stack of
ConvLSTM encoder layers. Each decoder layer starts from the final state of
its encoder twin and runs K steps. The first decoder input is the stem
embedding of the last observed frame; later steps see the previous predicted
(or, under teacher forcing, true) map re-embedded by a one-channel stem. Two
stride-2 transposed convolutions and a scaled sigmoid produce maps bounded
to (theta_r, theta_s).

``flatten_mode`` swaps every spatial operator for a dense one acting on the
flattened frame.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.cells import ConvLstmCellParams, LstmCellParams, convlstm_step, lstm_step
from .base import Model
from .config import AeConfig

HEAD_KERNEL = 4


class AeModel(Model):
    kind = "ae"
    config_type = AeConfig

    def __init__(self, cfg: AeConfig, seed: int = 0, grid: tuple[int, int] | None = None):
        super().__init__(cfg, seed)
        self.grid = grid
        self.encoder: list = []
        self.decoder: list = []
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        if cfg.flatten_mode:
            if grid is None:
                raise ValidationError("flatten_mode needs the grid size at construction")
            self._build_dense(rng, *grid)
        else:
            self._build_conv(rng)

    def _build_conv(self, rng):
        c = self.cfg
        s0, s1 = c.stem_channels
        self._conv(rng, "stem1", c.in_channels, s0, 3)
        self._conv(rng, "stem2", s0, s1, 3)
        self._conv(rng, "fb1", 1, s0, 3)
        self._conv(rng, "fb2", s0, s1, 3)
        for part, cells in (("enc", self.encoder), ("dec", self.decoder)):
            for layer in range(c.layers):
                cell = ConvLstmCellParams.init(rng, s1 if layer == 0 else c.hidden, c.hidden, c.kernel)
                self.params.update(cell.params(f"{part}{layer}"))
                cells.append(cell)
        self._conv(rng, "head1", c.hidden, s0, HEAD_KERNEL, transposed=True)
        self._conv(rng, "head2", s0, 1, HEAD_KERNEL, transposed=True, zero=True)

    def _build_dense(self, rng, H, W):
        c = self.cfg
        e = c.stem_channels[1]
        self._dense(rng, "stem", c.in_channels * H * W, e)
        self._dense(rng, "fb", H * W, e)
        for part, cells in (("enc", self.encoder), ("dec", self.decoder)):
            for layer in range(c.layers):
                cell = LstmCellParams.init(rng, e if layer == 0 else c.hidden, c.hidden)
                self.params.update(cell.params(f"{part}{layer}"))
                cells.append(cell)
        self._dense(rng, "head", c.hidden, H * W, zero=True)

    # -- building blocks ----------------------------------------------------

    def _conv_stem(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        x = ag.tanh(ag.conv2d(x, p[f"{prefix}1.W"], p[f"{prefix}1.b"], stride=2))
        return ag.tanh(ag.conv2d(x, p[f"{prefix}2.W"], p[f"{prefix}2.b"], stride=2))

    def _embed(self, frame: np.ndarray | Tensor) -> Tensor:
        x = ag.as_tensor(frame)
        if self.cfg.flatten_mode:
            return ag.tanh(self.linear(ag.reshape(x, (x.shape[0], -1)), "stem"))
        return self._conv_stem(x, "stem")

    def _embed_map(self, smc_map: Tensor) -> Tensor:
        if self.cfg.flatten_mode:
            return ag.tanh(self.linear(ag.reshape(smc_map, (smc_map.shape[0], -1)), "fb"))
        return self._conv_stem(smc_map, "fb")

    def _head(self, h: Tensor, shape) -> Tensor:
        c = self.cfg
        if c.flatten_mode:
            z = ag.reshape(self.linear(h, "head"), (h.shape[0], 1) + tuple(shape))
        else:
            p = self.params
            z = ag.tanh(ag.conv_transpose2d(h, p["head1.W"], p["head1.b"], stride=2, padding=1))
            z = ag.conv_transpose2d(z, p["head2.W"], p["head2.b"], stride=2, padding=1)
        return ag.scaled_sigmoid(z, c.theta_r, c.theta_s)

    def _step(self, cells, x, hs, cs):
        step = lstm_step if self.cfg.flatten_mode else convlstm_step
        for layer, cell in enumerate(cells):
            hs[layer], cs[layer] = step(cell, x, hs[layer], cs[layer])
            x = hs[layer]
        return x

    def check_input(self, frames: np.ndarray) -> None:
        c = self.cfg
        if frames.ndim != 5:
            raise ValidationError(f"expected (N, T, C, H, W) frames, got shape {frames.shape}")
        N, T, C, H, W = frames.shape
        if T != c.T:
            raise ValidationError(f"expected {c.T} input frames, got {T}")
        if C != c.in_channels:
            raise ValidationError(f"expected {c.in_channels} channels, got {C}")
        if H % 4 or W % 4:
            raise ValidationError(f"grid {H}x{W} is not divisible by 4")
        if c.flatten_mode and (H, W) != tuple(self.grid):
            raise ValidationError(f"flatten-mode model was built for grid {self.grid}, got {(H, W)}")

    def forward(self, frames, targets=None, tf_prob: float = 0.0, rng=None) -> Tensor:
        """Frames (N, T, C, H, W) -> maps (N, K, 1, H, W).

        With ``targets`` (N, K, 1, H, W) and ``tf_prob`` > 0, decoder step k
        receives the true map k-1 with probability ``tf_prob`` (one draw per
        step for the whole batch).
        """
        frames = np.asarray(frames)
        self.check_input(frames)
        N, T, C, H, W = frames.shape
        L = self.cfg.layers
        hs: list = [None] * L
        cs: list = [None] * L
        emb = None
        for t in range(T):
            emb = self._embed(frames[:, t])
            self._step(self.encoder, emb, hs, cs)
        outs = []
        x = emb
        for k in range(self.cfg.K):
            if k > 0:
                if targets is not None and tf_prob > 0 and rng is not None and rng.random() < tf_prob:
                    prev = ag.as_tensor(np.asarray(targets[:, k - 1], dtype=frames.dtype))
                else:
                    prev = outs[-1]
                x = self._embed_map(prev)
            top = self._step(self.decoder, x, hs, cs)
            outs.append(self._head(top, (H, W)))
        return ag.stack(outs, axis=1)

    def save(self, path, **meta):
        return super().save(path, grid=list(self.grid) if self.grid else None, **meta)

    @classmethod
    def _from_meta(cls, cfg, meta: dict) -> "AeModel":
        grid = tuple(meta["grid"]) if meta.get("grid") else None
        return cls(cfg, seed=meta.get("seed", 0), grid=grid)


def ae_forward(model: AeModel, frames: np.ndarray) -> np.ndarray:
    """K predicted maps (K, 1, H, W) from T frames (T, 14, H, W)."""
    return model.predict(np.asarray(frames, dtype=np.float32)[None])[0]
