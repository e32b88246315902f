"""Feature cubes, the held-out split and training/evaluation windows."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .features import DEFAULT_IDW_POWER, ChannelStats, Mode, compute_stats, normalize, raw_feature_cube
from .ingest import AlignedDataset, Flag
from .models.train import SequenceWindows
from .raster import patch_mean

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Split:
    test_start: int              # first held-out day index
    train_sites: np.ndarray      # site indices
    test_sites: np.ndarray

    @classmethod
    def make(cls, n_days: int, n_sites: int, test_time_frac: float = 0.2, test_site_frac: float = 0.25,
             seed: int = 0) -> "Split":
        test_start = n_days - int(round(test_time_frac * n_days))
        n_test = int(round(test_site_frac * n_sites))
        if n_sites >= 2:
            n_test = min(max(n_test, 1), n_sites - 1)
        perm = np.random.default_rng(np.random.SeedSequence([seed, 7])).permutation(n_sites)
        return cls(test_start, np.sort(perm[n_test:]), np.sort(perm[:n_test]))

    def train_range(self, fraction: float) -> tuple[int, int]:
        """Day-index range [lo, hi) holding the most recent ``fraction`` of the training span."""
        n = int(round(fraction * self.test_start))
        return self.test_start - n, self.test_start


@dataclass
class Prepared:
    aligned: AlignedDataset
    stats: ChannelStats
    fused: np.ndarray            # (D, 14, H, W) normalized
    eo_only: np.ndarray          # (D, 14, H, W) normalized, ground channels zero
    site_features: np.ndarray    # (S, D, 14) patch means of ``fused``
    truth: np.ndarray | None     # (D, H, W) truth maps when known
    split: Split
    theta_r: float = 0.05
    theta_s: float = 0.45

    @property
    def n_days(self) -> int:
        return len(self.aligned.days)

    @property
    def site_xy(self) -> np.ndarray:
        return np.array([(s.px, s.py) for s in self.aligned.sites], dtype=np.int64)

    def site_truth(self) -> np.ndarray:
        """(S, D) truth at site pixels, falling back to sensor readings without truth maps."""
        if self.truth is None:
            return self.aligned.smc.T.copy()
        xy = self.site_xy
        return self.truth[:, xy[:, 1], xy[:, 0]].T.copy()

    def sensor_targets(self) -> tuple[np.ndarray, np.ndarray]:
        smc = self.aligned.smc.T
        ok = (self.aligned.smc_flag.T != Flag.MISSING) & ~np.isnan(smc)
        return smc, ok

    # -- windows --------------------------------------------------------------

    def _anchors(self, lo: int, hi: int, T: int, K: int) -> np.ndarray:
        """Issue days t with inputs in [lo, ...) and all K targets before ``hi``."""
        return np.arange(max(lo + T - 1, T - 1), hi - K)

    def ae_windows(self, T: int, K: int, lo: int, hi: int, held_out_masked: bool = True) -> SequenceWindows:
        H, W = self.aligned.geo.shape
        if self.truth is not None:
            targets = self.truth[:, None]
            mask = np.ones_like(targets)
            if held_out_masked:
                xy = self.site_xy[self.split.test_sites]
                mask[:, :, xy[:, 1], xy[:, 0]] = 0.0
        else:
            smc, ok = self.sensor_targets()
            targets = np.zeros((self.n_days, 1, H, W), np.float32)
            mask = np.zeros_like(targets)
            for j in self.split.train_sites:
                x, y = self.site_xy[j]
                targets[:, 0, y, x] = np.where(ok[j], smc[j], 0.0)
                mask[:, 0, y, x] = ok[j]
        t = self._anchors(lo, hi, T, K)
        anchors = np.stack([np.zeros_like(t), t], axis=1)
        mid = 0.5 * (self.theta_r + self.theta_s)
        return SequenceWindows(self.eo_only[None], targets[None], mask[None], anchors, T, K, fill=mid)

    def lstm_windows(self, T: int, K: int, lo: int, hi: int, sites=None, use_truth: bool = False,
                     drop_channels=()) -> SequenceWindows:
        sites = self.split.train_sites if sites is None else np.asarray(sites)
        if use_truth:
            targets = self.site_truth()
            mask = ~np.isnan(targets)
        else:
            targets, mask = self.sensor_targets()
        inputs = self.site_features
        if drop_channels:
            inputs = inputs.copy()
            inputs[..., list(drop_channels)] = 0.0
        t = self._anchors(lo, hi, T, K)
        anchors = np.array([(s, tt) for s in sites for tt in t], dtype=np.int64).reshape(-1, 2)
        mid = 0.5 * (self.theta_r + self.theta_s)
        return SequenceWindows(inputs, targets, mask.astype(np.float32), anchors, T, K, fill=mid)

    def test_anchors(self, T: int, K: int) -> np.ndarray:
        """Issue days whose K targets all fall in the held-out span."""
        return np.arange(max(self.split.test_start - 1, T - 1), self.n_days - K)


def prepare(aligned: AlignedDataset, truth: np.ndarray | None = None, split: Split | None = None,
            stats: ChannelStats | None = None, incidence_ref_deg: float | None = 35.0, patch: int = 3,
            theta_r: float = 0.05, theta_s: float = 0.45, split_seed: int = 0,
            idw_power: float = DEFAULT_IDW_POWER) -> Prepared:
    """Normalize features with training-span statistics and cut the held-out split."""
    D = len(aligned.days)
    if truth is not None and truth.shape[0] != D:
        raise ValidationError(f"truth has {truth.shape[0]} days, aligned data has {D}")
    if split is None:
        split = Split.make(D, len(aligned.sites), seed=split_seed)
    raw = raw_feature_cube(aligned, incidence_ref_deg, idw_power)
    if stats is None:
        stats = compute_stats(raw[:split.test_start])
    fused = normalize(raw, stats, Mode.FUSED)
    eo_only = normalize(raw, stats, Mode.AE)
    site_features = np.stack([patch_mean(fused, s.px, s.py, patch) for s in aligned.sites]) \
        if aligned.sites else np.zeros((0, D, fused.shape[1]), np.float32)
    return Prepared(aligned, stats, fused, eo_only, site_features, truth, split, theta_r, theta_s)
