"""Config-driven pipeline behind the command line: simulate, train, predict, evaluate, compare, ndvi-map.

Every command reads a :class:`RunConfig`, writes only below the work
directory, and records a manifest (inputs, seeds, output hashes) under
``manifests/<command>.json``. Manifests carry no timestamps, so identical
reruns produce identical manifests.

Work directory layout::

    world/      simulate: scenes.smc1 truth.smc1 sensors.csv weather.csv sites.csv world.json
    models/     train: ae.json/.bin lstm.json/.bin stats.json *_trace.json
    predict/    predict: ae_<date>.smc1, ae_<date>_d<k>.png, lstm_sites.csv
    eval/       evaluate: report.csv summary.json
    compare/    compare: ablation.csv ablation_summary.json
    ndvi/       ndvi-map: ndvi_<date>.png
    manifests/  one JSON per command
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import Prepared, prepare
from .errors import MissingArtifactError, ValidationError
from .eval.ablation import (AblationReport, AblationSettings, ReportRow, ablation_experiment, forecast_ae,
                            forecast_constant, forecast_lstm, train_ae, train_lstm)
from .eval.render import render_heatmap
from .features import DEFAULT_IDW_POWER, ndvi_array
from .ingest import align_daily, from_day, load_sensor_csv, load_sites_csv, load_weather_csv, to_day
from .models.ae import AeModel
from .models.config import AeConfig, LstmConfig, TrainSettings
from .models.lstm import LstmModel
from .raster import ChannelId, SceneSeries, cube_read, cube_write
from .simworld import SimConfig, generate_world

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "train", "predict", "evaluate", "compare", "ndvi-map")
MODELS = ("ae", "lstm")
NDVI_RANGE = (0.0, 1.0)


# -- configuration ----------------------------------------------------------

def _strict(cls, doc, section: str):
    if not isinstance(doc, dict):
        raise ValidationError(f"config section {section!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValidationError(f"unknown key(s) in config section {section!r}: {', '.join(sorted(unknown))}")
    return doc


def _date_or_none(value, what: str):
    if value is None:
        return None
    try:
        return dt.date.fromisoformat(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{what} must be an ISO date (YYYY-MM-DD), got {value!r}") from None


@dataclass(frozen=True)
class FeatureSettings:
    incidence_ref_deg: float | None = 35.0
    patch: int = 3
    idw_power: float = DEFAULT_IDW_POWER

    def __post_init__(self):
        if self.patch < 1 or self.patch % 2 == 0:
            raise ValidationError("features.patch must be a positive odd number")
        if self.idw_power <= 0:
            raise ValidationError("features.idw_power must be positive")


@dataclass(frozen=True)
class TrainSection:
    seed: int = 0
    ae: TrainSettings = field(default_factory=TrainSettings)
    lstm: TrainSettings = field(default_factory=TrainSettings)

    @classmethod
    def from_json(cls, doc) -> "TrainSection":
        doc = dict(_strict(cls, doc, "train"))
        for k in MODELS:
            if k in doc:
                doc[k] = TrainSettings.from_json(_strict(TrainSettings, doc[k], f"train.{k}"))
        return cls(**doc)


@dataclass(frozen=True)
class EvalSection:
    fractions: tuple[float, ...] = (0.05, 0.25, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    workers: int = 1
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds or not self.fractions:
            raise ValidationError("eval.fractions and eval.seeds must be non-empty")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ValidationError("eval.fractions must lie in (0, 1]")
        if self.workers < 1:
            raise ValidationError("eval.workers must be >= 1")


@dataclass(frozen=True)
class PredictSection:
    start: str | None = None     # first issue date; default: last day with data
    end: str | None = None       # last issue date; default: start

    def __post_init__(self):
        a, b = _date_or_none(self.start, "predict.start"), _date_or_none(self.end, "predict.end")
        if a and b and b < a:
            raise ValidationError("predict.end is before predict.start")


@dataclass(frozen=True)
class NdviSection:
    date: str | None = None      # default: latest optical acquisition

    def __post_init__(self):
        _date_or_none(self.date, "ndvi.date")


@dataclass(frozen=True)
class PathsSection:
    workdir: str = "run"


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    ae: AeConfig = field(default_factory=AeConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    predict: PredictSection = field(default_factory=PredictSection)
    ndvi: NdviSection = field(default_factory=NdviSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_json(cls, doc) -> "RunConfig":
        doc = _strict(cls, doc, "<root>")
        kw = {}
        if "sim" in doc:
            kw["sim"] = SimConfig.from_json(_strict(SimConfig, doc["sim"], "sim"))
        if "ae" in doc:
            kw["ae"] = AeConfig.from_json(_strict(AeConfig, doc["ae"], "ae"))
        if "lstm" in doc:
            kw["lstm"] = LstmConfig.from_json(_strict(LstmConfig, doc["lstm"], "lstm"))
        if "train" in doc:
            kw["train"] = TrainSection.from_json(doc["train"])
        for name, kind in (("features", FeatureSettings), ("eval", EvalSection), ("predict", PredictSection),
                           ("ndvi", NdviSection), ("paths", PathsSection)):
            if name in doc:
                try:
                    kw[name] = kind(**_strict(kind, doc[name], name))
                except TypeError as e:
                    raise ValidationError(f"config section {name!r}: {e}") from None
        return cls(**kw)

    def to_json(self) -> dict:
        return {
            "sim": self.sim.to_json(),
            "features": asdict(self.features),
            "ae": self.ae.to_json(),
            "lstm": self.lstm.to_json(),
            "train": {"seed": self.train.seed, "ae": self.train.ae.to_json(), "lstm": self.train.lstm.to_json()},
            "eval": {"fractions": list(self.eval.fractions), "seeds": list(self.eval.seeds),
                     "workers": self.eval.workers, "split_seed": self.eval.split_seed},
            "predict": asdict(self.predict),
            "ndvi": asdict(self.ndvi),
            "paths": asdict(self.paths),
        }

    def ablation_settings(self) -> AblationSettings:
        return AblationSettings(self.ae, self.lstm, self.train.ae, self.train.lstm)


def bundled_config(name: str = "desk") -> Path:
    return Path(str(resources.files("smcforge") / "configs" / f"{name}.json"))


def load_config(path, seed: int | None = None, workdir=None) -> tuple[RunConfig, Path]:
    """Parse a RunConfig and resolve its work directory.

    A relative ``paths.workdir`` is taken relative to the config file; a
    ``workdir`` override is used as given. ``seed`` replaces ``train.seed``.
    A bare name such as ``desk`` that is not an existing file selects a
    bundled config.
    """
    path = Path(path)
    if not path.exists() and path.parent == Path(".") and bundled_config(path.stem).exists():
        path = bundled_config(path.stem)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON: {e}") from None
    cfg = RunConfig.from_json(doc)
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=int(seed)))
    if workdir is not None:
        root = Path(workdir)
    else:
        root = Path(cfg.paths.workdir)
        if not root.is_absolute():
            root = path.resolve().parent / root
    cfg = replace(cfg, paths=PathsSection(str(root)))
    return cfg, root


# -- manifests --------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_digest(cfg: RunConfig) -> tuple[dict, str]:
    doc = cfg.to_json()
    doc["paths"] = {}          # the work directory location does not change results
    return doc, hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_manifest(root: Path, command: str, cfg: RunConfig, inputs, outputs, seeds: dict) -> Path:
    doc, digest = _config_digest(cfg)
    rel = lambda p: Path(p).relative_to(root).as_posix()
    manifest = {
        "command": command,
        "config": doc,
        "config_sha256": digest,
        "seeds": seeds,
        "inputs": {rel(p): sha256_file(p) for p in sorted(inputs)},
        "outputs": {rel(p): sha256_file(p) for p in sorted(outputs)},
    }
    path = root / "manifests" / f"{command}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# -- loading upstream artifacts -------------------------------------------------

WORLD_FILES = ("scenes.smc1", "truth.smc1", "sensors.csv", "weather.csv", "sites.csv", "world.json")


def _world_paths(root: Path) -> list[Path]:
    paths = [root / "world" / f for f in WORLD_FILES]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise MissingArtifactError(f"no simulated world in {root / 'world'} (missing {', '.join(missing)}); "
                                   "run simulate first")
    return paths


def _check_world_config(cfg: RunConfig, root: Path) -> None:
    doc = json.loads((root / "world" / "world.json").read_text())
    if SimConfig.from_json(doc["config"]) != cfg.sim:
        raise ValidationError(f"the world in {root / 'world'} was generated from a different sim config; "
                              "run simulate first")


def load_prepared(cfg: RunConfig, root: Path) -> tuple[Prepared, SceneSeries]:
    _world_paths(root)
    _check_world_config(cfg, root)
    w = root / "world"
    scenes = cube_read(w / "scenes.smc1")
    truth_cube = cube_read(w / "truth.smc1")
    sites = load_sites_csv(w / "sites.csv", scenes.geo)
    aligned = align_daily(load_sensor_csv(w / "sensors.csv"), load_weather_csv(w / "weather.csv"), scenes, sites)
    truth_days = truth_cube.timestamps
    idx = np.searchsorted(truth_days, aligned.days)
    if np.any(idx >= len(truth_days)) or np.any(truth_days[np.minimum(idx, len(truth_days) - 1)] != aligned.days):
        raise ValidationError("truth cube does not cover every aligned day")
    truth = truth_cube.array()[idx, 0]
    f = cfg.features
    prepared = prepare(aligned, truth=truth, incidence_ref_deg=f.incidence_ref_deg, patch=f.patch,
                       theta_r=cfg.lstm.theta_r, theta_s=cfg.lstm.theta_s, split_seed=cfg.eval.split_seed,
                       idw_power=f.idw_power)
    return prepared, scenes


def _checkpoint(root: Path, model: str) -> Path:
    return root / "models" / f"{model}.json"


def _trained_models(root: Path) -> list[str]:
    found = [m for m in MODELS if _checkpoint(root, m).exists() and _checkpoint(root, m).with_suffix(".bin").exists()]
    if not found:
        raise MissingArtifactError(f"no trained model checkpoints in {root / 'models'}; run train first")
    return found


def _load_model(root: Path, model: str):
    return (AeModel if model == "ae" else LstmModel).load(_checkpoint(root, model))


# -- commands ---------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, root: Path) -> Path:
    world = generate_world(cfg.sim)
    paths = world.write(root / "world")
    return write_manifest(root, "simulate", cfg, [], paths.values(), {"sim": cfg.sim.seed})


def cmd_train(cfg: RunConfig, root: Path, models=MODELS) -> Path:
    prepared, _ = load_prepared(cfg, root)
    seed = cfg.train.seed
    out_dir = root / "models"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = [_write_json(out_dir / "stats.json", prepared.stats.to_json())]
    for name in models:
        if name == "ae":
            model, result = train_ae(prepared, cfg.ae, cfg.train.ae, seed)
        else:
            model, result = train_lstm(prepared, cfg.lstm, cfg.train.lstm, seed)
        ckpt = model.save(_checkpoint(root, name), train=cfg.train.ae.to_json() if name == "ae"
                          else cfg.train.lstm.to_json())
        trace = _write_json(out_dir / f"{name}_trace.json", {"loss": result.loss_trace, "steps": result.steps})
        outputs += [ckpt, ckpt.with_suffix(".bin"), trace]
        logger.info("trained %s: %d steps, final loss %.3g", name, result.steps, result.loss_trace[-1])
    inputs = _world_paths(root)
    return write_manifest(root, "train", cfg, inputs, outputs, {"train": seed, "sim": cfg.sim.seed})


def _issue_days(cfg: RunConfig, prepared: Prepared, T: int) -> np.ndarray:
    days = prepared.aligned.days
    first_ok = days[T - 1]
    start = _date_or_none(cfg.predict.start, "predict.start")
    end = _date_or_none(cfg.predict.end, "predict.end")
    start_day = to_day(start) if start else int(days[-1])
    end_day = to_day(end) if end else start_day
    if start_day < first_ok or end_day > days[-1]:
        raise ValidationError(f"prediction issue dates must lie in {from_day(first_ok)}..{from_day(days[-1])} "
                              f"(need {T} days of history)")
    return np.arange(start_day, end_day + 1) - int(days[0])


def cmd_predict(cfg: RunConfig, root: Path) -> Path:
    models = _trained_models(root)
    prepared, _ = load_prepared(cfg, root)
    out_dir = root / "predict"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    days = prepared.aligned.days
    geo = prepared.aligned.geo
    for name in models:
        model = _load_model(root, name)
        c = model.cfg
        issue = _issue_days(cfg, prepared, c.T)
        if name == "ae":
            frames = prepared.eo_only[issue[:, None] + np.arange(-c.T + 1, 1)]
            maps = np.concatenate([model.predict(frames[i:i + 16]) for i in range(0, len(frames), 16)])
            for i, t in enumerate(issue):
                date = from_day(days[t]).isoformat()
                target_days = [int(days[t]) + k for k in range(1, c.K + 1)]
                series = SceneSeries.from_array(maps[i], target_days, [ChannelId.SMC_MAP], geo)
                cube = out_dir / f"ae_{date}.smc1"
                cube_write(series, cube)
                outputs.append(cube)
                for k in range(c.K):
                    outputs.append(render_heatmap(maps[i, k, 0], c.theta_r, c.theta_s, out_dir / f"ae_{date}_d{k + 1}.png"))
        else:
            x = prepared.site_features[:, issue[:, None] + np.arange(-c.T + 1, 1)]    # (S, N, T, F)
            S, N = x.shape[:2]
            pred = model.predict(x.reshape((S * N,) + x.shape[2:])).reshape(S, N, c.K)
            lines = ["issue_date,site_id,horizon,target_date,smc"]
            for i, t in enumerate(issue):
                for j, site in enumerate(prepared.aligned.sites):
                    for k in range(c.K):
                        lines.append(f"{from_day(days[t])},{site.site_id},{k + 1},"
                                     f"{from_day(days[t] + k + 1)},{pred[j, i, k]:.6f}")
            path = out_dir / "lstm_sites.csv"
            path.write_text("\n".join(lines) + "\n")
            outputs.append(path)
    inputs = _world_paths(root) + [_checkpoint(root, m) for m in models] + \
        [_checkpoint(root, m).with_suffix(".bin") for m in models]
    return write_manifest(root, "predict", cfg, inputs, outputs, {"train": cfg.train.seed, "sim": cfg.sim.seed})


def cmd_evaluate(cfg: RunConfig, root: Path) -> Path:
    models = _trained_models(root)
    prepared, _ = load_prepared(cfg, root)
    rows = []
    for name in models:
        model = _load_model(root, name)
        fc = forecast_ae(model, prepared) if name == "ae" else forecast_lstm(model, prepared)
        rows += [ReportRow(name, 1.0, model.seed, h, r) for h, r in fc.rows()]
    ref = cfg.lstm
    fc = forecast_constant(prepared, ref.K, ref.T)
    rows += [ReportRow("constant", 1.0, cfg.train.seed, h, r) for h, r in fc.rows()]
    report = AblationReport(rows, [])
    out = [report.write_csv(root / "eval" / "report.csv"), report.write_summary(root / "eval" / "summary.json")]
    inputs = _world_paths(root) + [_checkpoint(root, m) for m in models] + \
        [_checkpoint(root, m).with_suffix(".bin") for m in models]
    return write_manifest(root, "evaluate", cfg, inputs, out, {"train": cfg.train.seed, "sim": cfg.sim.seed})


def cmd_compare(cfg: RunConfig, root: Path) -> Path:
    prepared, _ = load_prepared(cfg, root)
    report = ablation_experiment(prepared, cfg.eval.fractions, cfg.eval.seeds, cfg.ablation_settings(),
                                 cfg.eval.workers)
    out = [report.write_csv(root / "compare" / "ablation.csv"),
           report.write_summary(root / "compare" / "ablation_summary.json")]
    return write_manifest(root, "compare", cfg, _world_paths(root), out,
                          {"eval": list(cfg.eval.seeds), "sim": cfg.sim.seed})


def cmd_ndvi_map(cfg: RunConfig, root: Path) -> Path:
    inputs = _world_paths(root)
    _check_world_config(cfg, root)
    scenes = cube_read(root / "world" / "scenes.smc1")
    optical = [s for s in scenes.stacks if ChannelId.NIR in s.channel_ids and ChannelId.RED in s.channel_ids
               and not np.isnan(s.get(ChannelId.NIR).values).all()]
    if not optical:
        raise ValidationError("the scene cube holds no optical acquisition")
    wanted = _date_or_none(cfg.ndvi.date, "ndvi.date")
    if wanted is None:
        stack = optical[-1]
    else:
        match = [s for s in optical if s.timestamp == to_day(wanted)]
        if not match:
            raise ValidationError(f"no optical acquisition on {wanted}; "
                                  f"available {from_day(optical[0].timestamp)}..{from_day(optical[-1].timestamp)}")
        stack = match[0]
    values = ndvi_array(stack.get(ChannelId.NIR).values, stack.get(ChannelId.RED).values)
    out = root / "ndvi" / f"ndvi_{from_day(stack.timestamp)}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    render_heatmap(values, *NDVI_RANGE, out)
    return write_manifest(root, "ndvi-map", cfg, inputs, [out], {"sim": cfg.sim.seed})


def run(command: str, cfg: RunConfig, root: Path, model: str | None = None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    if command == "simulate":
        return cmd_simulate(cfg, root)
    if command == "train":
        return cmd_train(cfg, root, MODELS if model is None else (model,))
    if command == "predict":
        return cmd_predict(cfg, root)
    if command == "evaluate":
        return cmd_evaluate(cfg, root)
    if command == "compare":
        return cmd_compare(cfg, root)
    if command == "ndvi-map":
        return cmd_ndvi_map(cfg, root)
    raise ValidationError(f"unknown command {command!r}")
