from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ValidationError


def _from_json(cls, doc: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} field(s): {', '.join(sorted(unknown))}")
    return cls(**doc)


@dataclass(frozen=True)
class AeConfig:
    """ConvLSTM encoder-decoder. The stem downsamples by 4; the head upsamples back."""
    in_channels: int = 14
    stem_channels: tuple[int, int] = (16, 32)
    layers: int = 2
    hidden: int = 32
    kernel: int = 3
    T: int = 10
    K: int = 3
    theta_r: float = 0.05
    theta_s: float = 0.45
    flatten_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stem_channels", tuple(int(c) for c in self.stem_channels))
        if len(self.stem_channels) != 2:
            raise ValidationError("stem_channels must list two widths")
        if self.T < 1 or self.K < 1 or self.layers < 1:
            raise ValidationError("T, K and layers must be >= 1")
        if self.kernel % 2 == 0:
            raise ValidationError("kernel must be odd")
        if not self.theta_r < self.theta_s:
            raise ValidationError("theta_r must be below theta_s")

    def to_json(self) -> dict:
        d = asdict(self)
        d["stem_channels"] = list(self.stem_channels)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "AeConfig":
        return _from_json(cls, doc)


@dataclass(frozen=True)
class LstmConfig:
    """Stacked LSTM over per-site feature vectors (3x3 patch means of the 14 channels)."""
    in_features: int = 14
    layers: int = 2
    hidden: int = 64
    T: int = 10
    K: int = 3
    patch: int = 3
    theta_r: float = 0.05
    theta_s: float = 0.45
    residual: bool = False       # head corrects the last observed SMC_LAG instead of predicting from scratch

    def __post_init__(self):
        if self.T < 1 or self.K < 1 or self.layers < 1:
            raise ValidationError("T, K and layers must be >= 1")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ValidationError("patch must be odd")
        if not self.theta_r < self.theta_s:
            raise ValidationError("theta_r must be below theta_s")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "LstmConfig":
        return _from_json(cls, doc)


@dataclass(frozen=True)
class TrainSettings:
    """Optimizer schedule for one model kind."""
    epochs: int = 30
    lr: float = 3e-3
    batch_size: int = 32
    lr_decay: float = 0.1        # learning-rate factor reached by the last epoch
    min_steps: int = 0           # extend short-data runs to at least this many updates
    weight_decay: float = 0.0    # decoupled, per unit learning rate
    channel_mask: float = 0.0    # probability of blanking each input channel of a training window

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.min_steps < 0:
            raise ValidationError("epochs/min_steps must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0 or not 0.0 <= self.channel_mask < 1.0:
            raise ValidationError("weight_decay must be >= 0 and channel_mask in [0, 1)")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TrainSettings":
        return _from_json(cls, doc)
