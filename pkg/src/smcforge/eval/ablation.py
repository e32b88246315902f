"""Held-out scoring of both forecasters and the training-data ablation."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import Prepared
from ..errors import ValidationError
from ..models.ae import AeModel
from ..models.config import AeConfig, LstmConfig, TrainSettings
from ..models.lstm import LstmModel
from ..raster import ChannelId
from ..models.train import TrainResult, fit, predict_windows
from .metrics import MetricRow, metrics

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.05, 0.25, 1.0)
CSV_HEADER = ("model", "fraction", "seed", "horizon", "rmse", "mae", "r2", "pearson", "n")


# -- training -------------------------------------------------------------

def _epochs_for(settings: TrainSettings, n_windows: int) -> int:
    """Configured epochs, stretched so small datasets still get ``min_steps`` updates."""
    per_epoch = max(1, math.ceil(n_windows / settings.batch_size))
    return max(settings.epochs, math.ceil(settings.min_steps / per_epoch))


def train_lstm(prepared: Prepared, cfg: LstmConfig, settings: TrainSettings, seed: int,
               fraction: float = 1.0) -> tuple[LstmModel, TrainResult]:
    lo, hi = prepared.split.train_range(fraction)
    windows = prepared.lstm_windows(cfg.T, cfg.K, lo, hi)
    lag = prepared.stats[ChannelId.SMC_LAG]
    model = LstmModel(cfg, seed=seed, lag_stats=(lag.mean, lag.std))
    result = fit(model, windows, _epochs_for(settings, len(windows)), lr=settings.lr, seed=seed,
                 batch_size=settings.batch_size, lr_decay=settings.lr_decay,
                 weight_decay=settings.weight_decay, channel_mask=settings.channel_mask)
    return model, result


def train_ae(prepared: Prepared, cfg: AeConfig, settings: TrainSettings, seed: int,
             fraction: float = 1.0) -> tuple[AeModel, TrainResult]:
    lo, hi = prepared.split.train_range(fraction)
    windows = prepared.ae_windows(cfg.T, cfg.K, lo, hi)
    model = AeModel(cfg, seed=seed, grid=prepared.aligned.geo.shape)
    result = fit(model, windows, _epochs_for(settings, len(windows)), lr=settings.lr, seed=seed,
                 batch_size=settings.batch_size, teacher_forcing=True, lr_decay=settings.lr_decay,
                 weight_decay=settings.weight_decay, channel_mask=settings.channel_mask)
    return model, result


# -- held-out scoring -----------------------------------------------------

@dataclass
class HeldOutForecast:
    """Forecasts at held-out sites over the held-out span.

    ``pred`` and ``truth`` are (N, K, S) for N issue days and S held-out sites.
    """
    model: str
    issue_days: np.ndarray
    sites: np.ndarray
    pred: np.ndarray
    truth: np.ndarray

    def rows(self) -> list[tuple[str, MetricRow]]:
        K = self.pred.shape[1]
        out = [(str(k + 1), metrics(self.pred[:, k], self.truth[:, k])) for k in range(K)]
        out.append(("all", metrics(self.pred, self.truth)))
        return out


def _truth_at(prepared: Prepared, issue_days: np.ndarray, K: int, sites: np.ndarray) -> np.ndarray:
    target = prepared.site_truth()[sites]                   # (S, D)
    days = issue_days[:, None] + np.arange(1, K + 1)        # (N, K)
    return np.transpose(target[:, days], (1, 2, 0))


def forecast_lstm(model: LstmModel, prepared: Prepared, sites=None) -> HeldOutForecast:
    cfg = model.cfg
    sites = prepared.split.test_sites if sites is None else np.asarray(sites)
    t = prepared.test_anchors(cfg.T, cfg.K)
    # site-major windows whose issue days are exactly the held-out anchors
    windows = prepared.lstm_windows(cfg.T, cfg.K, prepared.split.test_start - cfg.T, prepared.n_days, sites=sites)
    pred = predict_windows(model, windows).reshape(len(sites), len(t), cfg.K).transpose(1, 2, 0)
    return HeldOutForecast("lstm", t, sites, pred, _truth_at(prepared, t, cfg.K, sites))


def forecast_ae(model: AeModel, prepared: Prepared, sites=None, batch_size: int = 16) -> HeldOutForecast:
    cfg = model.cfg
    sites = prepared.split.test_sites if sites is None else np.asarray(sites)
    t = prepared.test_anchors(cfg.T, cfg.K)
    xy = prepared.site_xy[sites]
    frames = prepared.eo_only
    preds = []
    for start in range(0, len(t), batch_size):
        tt = t[start:start + batch_size]
        x = frames[tt[:, None] + np.arange(-cfg.T + 1, 1)]  # (n, T, C, H, W)
        maps = model.predict(x)                              # (n, K, 1, H, W)
        preds.append(maps[:, :, 0, xy[:, 1], xy[:, 0]])
    pred = np.concatenate(preds) if preds else np.zeros((0, cfg.K, len(sites)), np.float32)
    return HeldOutForecast("ae", t, sites, pred, _truth_at(prepared, t, cfg.K, sites))


def forecast_constant(prepared: Prepared, K: int, T: int, fraction: float = 1.0, sites=None) -> HeldOutForecast:
    """Training-span mean of the training-site sensor readings, issued for every day."""
    sites = prepared.split.test_sites if sites is None else np.asarray(sites)
    lo, hi = prepared.split.train_range(fraction)
    smc, ok = prepared.sensor_targets()
    train = prepared.split.train_sites
    vals = smc[train, lo:hi][ok[train, lo:hi]]
    mean = float(vals.mean()) if vals.size else 0.5 * (prepared.theta_r + prepared.theta_s)
    t = prepared.test_anchors(T, K)
    truth = _truth_at(prepared, t, K, sites)
    return HeldOutForecast("constant", t, sites, np.full_like(truth, mean), truth)


# -- ablation -------------------------------------------------------------

@dataclass
class AblationSettings:
    ae: AeConfig = field(default_factory=AeConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    ae_train: TrainSettings = field(default_factory=TrainSettings)
    lstm_train: TrainSettings = field(default_factory=TrainSettings)


@dataclass(frozen=True)
class ReportRow:
    model: str
    fraction: float
    seed: int
    horizon: str
    row: MetricRow

    def as_csv(self) -> list:
        r = self.row
        return [self.model, repr(self.fraction), self.seed, self.horizon,
                repr(r.rmse), repr(r.mae), repr(r.r2), repr(r.pearson), r.n]


@dataclass
class AblationReport:
    rows: list[ReportRow]
    skipped: list[float] = field(default_factory=list)

    def rmse(self, model: str, fraction: float, horizon: str = "all") -> np.ndarray:
        return np.array([r.row.rmse for r in self.rows
                         if r.model == model and r.fraction == fraction and r.horizon == horizon])

    def summary(self) -> dict:
        """Mean and std of every metric per (model, fraction, horizon), in row order."""
        cells: dict[tuple, list[MetricRow]] = {}
        for r in self.rows:
            cells.setdefault((r.model, r.fraction, r.horizon), []).append(r.row)
        out = []
        for (model, fraction, horizon), rows in cells.items():
            entry = {"model": model, "fraction": fraction, "horizon": horizon, "n_seeds": len(rows)}
            for name in ("rmse", "mae", "r2", "pearson"):
                v = np.array([getattr(x, name) for x in rows], dtype=np.float64)
                entry[name] = {"mean": float(v.mean()), "std": float(v.std())}
            out.append(entry)
        return {"cells": out, "skipped_fractions": list(self.skipped)}

    def write_csv(self, path) -> Path:
        return _atomic_text(path, _csv_text([CSV_HEADER] + [r.as_csv() for r in self.rows]))

    def write_summary(self, path) -> Path:
        return _atomic_text(path, json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _csv_text(rows) -> str:
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _atomic_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def _run_cell(prepared: Prepared, settings: AblationSettings, model: str, fraction: float, seed: int):
    if model == "lstm":
        m, _ = train_lstm(prepared, settings.lstm, settings.lstm_train, seed, fraction)
        fc = forecast_lstm(m, prepared)
    elif model == "ae":
        m, _ = train_ae(prepared, settings.ae, settings.ae_train, seed, fraction)
        fc = forecast_ae(m, prepared)
    else:
        cfg = settings.lstm
        fc = forecast_constant(prepared, cfg.K, cfg.T, fraction)
    logger.info("ablation %s fraction=%g seed=%d rmse=%.4f", model, fraction, seed, fc.rows()[-1][1].rmse)
    return [ReportRow(model, fraction, seed, h, r) for h, r in fc.rows()]


_WORKER_STATE: dict = {}


def _init_worker(prepared, settings):
    _WORKER_STATE["args"] = (prepared, settings)


def _run_cell_worker(cell):
    prepared, settings = _WORKER_STATE["args"]
    return _run_cell(prepared, settings, *cell)


def ablation_experiment(prepared: Prepared, fractions=DEFAULT_FRACTIONS, seeds=(0, 1, 2),
                        settings: AblationSettings | None = None, workers: int = 1) -> AblationReport:
    """Train both forecasters on the most recent ``fraction`` of the training span.

    Every (model, fraction, seed) cell is independent; ``workers`` > 1 runs
    them in a process pool and the rows are merged back in grid order, so the
    report does not depend on scheduling.
    """
    settings = settings or AblationSettings()
    if not seeds:
        raise ValidationError("ablation needs at least one seed")
    need = max(settings.ae.T + settings.ae.K, settings.lstm.T + settings.lstm.K)
    cells, skipped = [], []
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
        lo, hi = prepared.split.train_range(fraction)
        if hi - lo < need:
            logger.warning("fraction %g leaves %d training days (< T+K = %d), skipped", fraction, hi - lo, need)
            skipped.append(fraction)
            continue
        for seed in seeds:
            for model in ("ae", "lstm"):
                cells.append((model, float(fraction), int(seed)))
        cells.append(("constant", float(fraction), int(seeds[0])))
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(prepared, settings)) as pool:
            results = list(pool.map(_run_cell_worker, cells))
    else:
        results = [_run_cell(prepared, settings, *c) for c in cells]
    return AblationReport([row for rows in results for row in rows], skipped)
