"""Mini-batch BPTT training shared by both forecasters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError, ValidationError
from ..nn import autograd as ag
from ..nn.optim import AdamState, adam_update, clip_by_global_norm
from .base import Model

logger = logging.getLogger(__name__)

CLIP_NORM = 5.0


class SequenceWindows:
    """Sliding (input, target) windows over G parallel daily series.

    ``inputs`` is (G, D, ...) and ``targets``/``mask`` are (G, D, ...).
    ``anchors`` lists (g, t) pairs: window inputs are days t-T+1..t and
    targets are days t+1..t+K of series g.
    """

    def __init__(self, inputs, targets, mask, anchors, T: int, K: int, fill: float = 0.0):
        self.inputs = inputs
        self.targets = np.where(mask > 0, targets, fill).astype(np.float32)
        self.mask = (mask > 0).astype(np.float32)
        self.anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
        self.T, self.K = T, K
        D = inputs.shape[1]
        if len(self.anchors) and (self.anchors[:, 1].min() < T - 1 or self.anchors[:, 1].max() + K >= D):
            raise ValidationError("window anchors run off the series")

    def __len__(self) -> int:
        return len(self.anchors)

    def batch(self, idx):
        g = self.anchors[idx, 0][:, None]
        t = self.anchors[idx, 1][:, None]
        tin = t + np.arange(-self.T + 1, 1)
        tout = t + np.arange(1, self.K + 1)
        return self.inputs[g, tin], self.targets[g, tout], self.mask[g, tout]

    def subset(self, keep) -> "SequenceWindows":
        out = object.__new__(SequenceWindows)
        out.__dict__.update(self.__dict__)
        out.anchors = self.anchors[keep]
        return out


def teacher_forcing_prob(epoch: int, epochs: int) -> float:
    """1.0 at epoch 0, decaying linearly to 0.0 at the half-way epoch and after."""
    half = epochs / 2.0
    if half <= 0:
        return 0.0
    return max(0.0, 1.0 - epoch / half)


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)
    steps: int = 0
    grad_norms: list[float] = field(default_factory=list)
    val_trace: list[tuple[int, float]] = field(default_factory=list)   # (step, validation MSE)
    best_step: int | None = None


def masked_mse_value(model: Model, windows: SequenceWindows, batch_size: int = 256) -> float:
    """Mask-weighted MSE of free-running predictions over ``windows``."""
    total = weight = 0.0
    for start in range(0, len(windows), batch_size):
        x, y, m = windows.batch(np.arange(start, min(start + batch_size, len(windows))))
        pred = model.predict(x)
        total += float(np.sum(m * (pred - y) ** 2, dtype=np.float64))
        weight += float(m.sum())
    return total / weight if weight else float("nan")


def fit(model: Model, windows: SequenceWindows, epochs: int, lr: float = 1e-3, seed: int = 0,
        batch_size: int = 16, teacher_forcing: bool = False, clip: float = CLIP_NORM,
        lr_decay: float = 1.0, weight_decay: float = 0.0, validation: SequenceWindows | None = None,
        eval_every: int | None = None, channel_mask: float = 0.0, on_epoch=None) -> TrainResult:
    """Adam + BPTT on masked MSE. Deterministic for a given seed.

    ``lr_decay`` is the factor the learning rate reaches by the last epoch
    (cosine schedule); 1.0 keeps it constant. With ``validation`` windows the
    model is scored every ``eval_every`` updates (default: once per epoch)
    and the best-scoring parameters are restored at the end. ``channel_mask``
    is an input augmentation: each input channel (axis 2) of each training
    window is reset to its training mean, zero after scaling, with that
    probability. Inference never masks.
    """
    if len(windows) == 0:
        raise ValidationError("no training windows")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    state = AdamState(lr=lr, weight_decay=weight_decay)
    result = TrainResult()
    n = len(windows)
    use_val = validation is not None and len(validation) > 0
    best = (float("inf"), None)

    def score():
        nonlocal best
        v = masked_mse_value(model, validation)
        result.val_trace.append((result.steps, v))
        if v < best[0]:
            best = (v, {k: a.copy() for k, a in model.arrays().items()})
            result.best_step = result.steps

    for epoch in range(epochs):
        if epochs > 1 and lr_decay != 1.0:
            frac = epoch / (epochs - 1)
            state.lr = lr * (lr_decay + (1 - lr_decay) * 0.5 * (1 + np.cos(np.pi * frac)))
        tf = teacher_forcing_prob(epoch, epochs) if teacher_forcing else 0.0
        order = rng.permutation(n)
        total = weight = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x, y, m = windows.batch(idx)
            if channel_mask:
                keep_shape = x.shape[:1] + (1, x.shape[2]) + (1,) * (x.ndim - 3)
                x = x * (rng.random(keep_shape) >= channel_mask).astype(x.dtype)
            count = float(m.sum())
            if count == 0:
                continue
            model.zero_grad()
            pred = model.forward(x, y, tf, rng)
            loss = ag.masked_mse(pred, y, m)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {result.steps}: {value}")
            ag.backward(loss)
            grads = model.grads()
            result.grad_norms.append(clip_by_global_norm(grads, clip))
            adam_update(state, model.arrays(), grads)
            result.steps += 1
            total += value * count
            weight += count
            if use_val and eval_every and result.steps % eval_every == 0:
                score()
        result.loss_trace.append(total / weight if weight else float("nan"))
        logger.debug("epoch %d loss %.6g tf %.2f", epoch, result.loss_trace[-1], tf)
        if use_val and not eval_every:
            score()
        if on_epoch is not None:
            on_epoch(epoch, model)
    if use_val and best[1] is not None:
        model.load_arrays(best[1])
    model.step += result.steps
    return result


def predict_windows(model: Model, windows: SequenceWindows, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(windows), batch_size):
        x, _, _ = windows.batch(np.arange(start, min(start + batch_size, len(windows))))
        out.append(model.predict(x))
    return np.concatenate(out) if out else np.zeros((0,))
