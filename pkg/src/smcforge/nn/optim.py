"""Adam with bias correction, and global-norm gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, TrainingError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0     # decoupled (AdamW) decay, scaled by lr
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "step": self.step}

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, hyper: dict, arrays: dict[str, np.ndarray]) -> "AdamState":
        st = cls(**hyper)
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            (st.m if kind == "m" else st.v)[name] = arr.copy()
        return st

    def save(self, path) -> None:
        from .checkpoint import save_checkpoint
        save_checkpoint(path, self.arrays(), {"kind": "adam", "hyper": self.hyper()})

    @classmethod
    def load(cls, path) -> "AdamState":
        from .checkpoint import load_checkpoint
        arrays, meta = load_checkpoint(path)
        return cls.from_arrays(meta["hyper"], arrays)


def adam_update(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """In-place bias-corrected Adam step over every named parameter; returns ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ArgumentError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        if state.weight_decay:
            p *= p.dtype.type(1.0 - state.lr * state.weight_decay)
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return params


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping. A non-finite gradient raises TrainingError
    naming the first offending parameter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm
