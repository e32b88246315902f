"""Sensor-fused site forecaster: stacked LSTM over daily feature vectors.

With ``residual`` set, the head output is a logit offset from the last
observed SMC_LAG value: a zero head forecasts persistence, and the network
only has to learn the departure from it. The SMC_LAG input is normalized,
so the model keeps that channel's (mean, std) to recover m³/m³.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.cells import LstmCellParams, lstm_step
from ..raster import FEATURE_CHANNELS, ChannelId
from .base import Model
from .config import LstmConfig

LAG_INDEX = FEATURE_CHANNELS.index(ChannelId.SMC_LAG)
_EDGE = 1e-3     # keeps the persistence logit finite at the bounds


class LstmModel(Model):
    kind = "lstm"
    config_type = LstmConfig

    def __init__(self, cfg: LstmConfig, seed: int = 0, lag_stats: tuple[float, float] = (0.0, 1.0)):
        super().__init__(cfg, seed)
        if cfg.residual and cfg.in_features != len(FEATURE_CHANNELS):
            raise ValidationError(f"residual mode needs the {len(FEATURE_CHANNELS)}-channel feature vector")
        self.lag_stats = (float(lag_stats[0]), float(lag_stats[1]))
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.cells = []
        for layer in range(cfg.layers):
            cell = LstmCellParams.init(rng, cfg.in_features if layer == 0 else cfg.hidden, cfg.hidden)
            self.params.update(cell.params(f"lstm{layer}"))
            self.cells.append(cell)
        self._dense(rng, "head", cfg.hidden, cfg.K, zero=True)

    def _persistence_logit(self, x: np.ndarray) -> np.ndarray:
        c = self.cfg
        mean, std = self.lag_stats
        theta = x[:, -1, LAG_INDEX].astype(np.float64) * std + mean
        u = np.clip((theta - c.theta_r) / (c.theta_s - c.theta_r), _EDGE, 1 - _EDGE)
        z = np.log(u / (1 - u))
        return np.repeat(z[:, None], c.K, axis=1).astype(x.dtype)

    def forward(self, x, targets=None, tf_prob: float = 0.0, rng=None) -> Tensor:
        """History (N, T, F) -> K-step forecast (N, K)."""
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1] == 0:
            raise ValidationError(f"expected a non-empty (N, T, F) history, got shape {x.shape}")
        if x.shape[2] != self.cfg.in_features:
            raise ValidationError(f"expected {self.cfg.in_features} features, got {x.shape[2]}")
        hs: list = [None] * self.cfg.layers
        cs: list = [None] * self.cfg.layers
        for t in range(x.shape[1]):
            inp = ag.as_tensor(x[:, t])
            for layer, cell in enumerate(self.cells):
                hs[layer], cs[layer] = lstm_step(cell, inp, hs[layer], cs[layer])
                inp = hs[layer]
        z = self.linear(hs[-1], "head")
        if self.cfg.residual:
            z = z + self._persistence_logit(x)
        return ag.scaled_sigmoid(z, self.cfg.theta_r, self.cfg.theta_s)

    def save(self, path, **meta):
        return super().save(path, lag_stats=list(self.lag_stats), **meta)

    @classmethod
    def _from_meta(cls, cfg, meta: dict) -> "LstmModel":
        return cls(cfg, seed=meta.get("seed", 0), lag_stats=tuple(meta.get("lag_stats", (0.0, 1.0))))


def lstm_forecast(model: LstmModel, site_history: np.ndarray) -> np.ndarray:
    """K SMC values for one site from its (T, 14) feature history."""
    h = np.asarray(site_history, dtype=np.float32)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValidationError("site history must be a non-empty (T, F) array")
    return model.predict(h[None])[0]
