from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.cells import he_uniform
from ..nn.checkpoint import load_checkpoint, save_checkpoint


class Model:
    """Named parameter registry shared by the AE and LSTM forecasters."""

    kind = "model"

    def __init__(self, cfg, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.step = 0

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _dense(self, rng, name: str, fan_in: int, fan_out: int, zero: bool = False):
        w = np.zeros((fan_in, fan_out), np.float32) if zero else he_uniform(rng, (fan_in, fan_out), fan_in)
        return self._add(f"{name}.W", w), self._add(f"{name}.b", np.zeros(fan_out, np.float32))

    def _conv(self, rng, name: str, cin: int, cout: int, k: int, transposed: bool = False, zero: bool = False):
        shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
        w = np.zeros(shape, np.float32) if zero else he_uniform(rng, shape, cin * k * k)
        return self._add(f"{name}.W", w), self._add(f"{name}.b", np.zeros(cout, np.float32))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def astype(self, dtype) -> "Model":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValidationError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            if arrays[name].shape != p.data.shape:
                raise ValidationError(f"{name}: checkpoint shape {arrays[name].shape} != model {p.data.shape}")
            p.data = arrays[name].astype(p.data.dtype).copy()

    def save(self, path, **meta) -> Path:
        return save_checkpoint(path, self.arrays(), {
            "model": self.kind, "config": self.cfg.to_json(), "seed": self.seed, "step": self.step, **meta})

    @classmethod
    def _from_meta(cls, cfg, meta: dict) -> "Model":
        return cls(cfg, seed=meta.get("seed", 0))

    @classmethod
    def load(cls, path) -> "Model":
        arrays, meta = load_checkpoint(path)
        if meta.get("model") != cls.kind:
            raise ValidationError(f"{path} holds a {meta.get('model')!r} model, expected {cls.kind!r}")
        model = cls._from_meta(cls.config_type.from_json(meta["config"]), meta)
        model.load_arrays(arrays)
        model.step = meta.get("step", 0)
        return model

    def predict(self, x: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.forward(x).data

    def forward(self, x, targets=None, tf_prob: float = 0.0, rng=None) -> Tensor:
        raise NotImplementedError

    def linear(self, x: Tensor, name: str) -> Tensor:
        return ag.matmul(x, self.params[f"{name}.W"]) + self.params[f"{name}.b"]
