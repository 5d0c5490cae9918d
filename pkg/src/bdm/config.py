"""Experiment configuration with strict JSON loading.

Every section is a dataclass; unknown keys and wrong types are rejected with
the dotted path of the offending key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

METHODS = ("baseline", "bdm_b", "bdm_m", "cfg", "langevin_demo")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class DataConfig:
    n_shapes: int = 1000
    pair_fraction: float = 0.1  # 0.1 / 0.5 / 1.0 regimes
    N: int = 128
    seed: int = 7
    n_test: int = 200
    disjoint: bool = False  # overlapping S_l / S_s by default


@dataclass
class ScheduleConfig:
    beta0: float = 1e-4
    betaT: float = 0.08
    T: int = 100


@dataclass
class TrainSection:
    steps: int = 5000
    batch: int = 16
    lr: float = 1e-3
    lr_start: float = 1e-5
    warmup_frac: float = 0.02
    cond_dropout: float = 0.1
    dtype: str = "float32"


def _merge_default() -> TrainSection:
    return TrainSection(steps=1000)


@dataclass
class FusionConfig:
    active_stages: list = field(default_factory=lambda: ["early", "late"])
    interval: int | None = None  # None: scaled from T
    duration: int | None = None
    ratio: float = 0.5
    blend_every_step: bool = False


@dataclass
class EvalConfig:
    n_eval: int = 200  # test instances scored per run
    eval_seed: int = 11
    n_eval_seeds: int = 10  # initial noises for the seed-variance study
    tau: float = 0.01
    cfg_weights: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    prior: TrainSection = field(default_factory=TrainSection)
    recon: TrainSection = field(default_factory=TrainSection)
    merge: TrainSection = field(default_factory=_merge_default)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    method: str = "bdm_b"
    guidance_w: float = 1.0
    train_seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}, got {self.method!r}")
        d = self.data
        if d.n_shapes < 1:
            raise ConfigError("data.n_shapes", "must be positive")
        if not 0 < d.pair_fraction <= 1:
            raise ConfigError("data.pair_fraction", "must be in (0, 1]")
        if d.N < 1:
            raise ConfigError("data.N", "must be positive")
        s = self.schedule
        if not 0 < s.beta0 <= s.betaT < 1:
            raise ConfigError("schedule.betaT", "need 0 < beta0 <= betaT < 1")
        if s.T < 1:
            raise ConfigError("schedule.T", "must be >= 1")
        for name in ("prior", "recon", "merge"):
            t = getattr(self, name)
            if t.steps < 0 or t.batch < 1:
                raise ConfigError(f"{name}.steps", "steps must be >= 0 and batch >= 1")
            if t.dtype not in ("float32", "float64"):
                raise ConfigError(f"{name}.dtype", "must be float32 or float64")
        bad = set(self.fusion.active_stages) - {"early", "middle", "late"}
        if bad:
            raise ConfigError("fusion.active_stages", f"unknown stages {sorted(bad)}")
        if not 0 <= self.fusion.ratio <= 1:
            raise ConfigError("fusion.ratio", "must be in [0, 1]")
        if self.eval.n_eval < 1 or self.eval.n_eval > d.n_test:
            raise ConfigError("eval.n_eval", f"must be in [1, data.n_test={d.n_test}]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def full_scale_schedule(self) -> "ExperimentConfig":
        """Copy using the T=1000 schedule; only meant for schedule arithmetic."""
        return dataclasses.replace(self, schedule=ScheduleConfig(1e-5, 0.008, 1000))


def _check_type(key, value, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return value
        return _check_type(key, value, next(a for a in args if a is not type(None)))
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {type(value).__name__}")
        return value
    if isinstance(tp, type) and (not isinstance(value, tp) or (tp is int and isinstance(value, bool))):
        raise ConfigError(key, f"expected {tp.__name__}, got {type(value).__name__}")
    return value


def _build(cls, raw, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in names:
            raise ConfigError(f"{prefix}{k}", "unknown key")
    kwargs = {}
    for k, v in raw.items():
        tp = hints[k]
        if dataclasses.is_dataclass(tp):
            kwargs[k] = _build(tp, v, f"{prefix}{k}.")
        else:
            kwargs[k] = _check_type(f"{prefix}{k}", v, tp)
    return cls(**kwargs)


def from_dict(raw: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, raw, "").validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path} is not valid JSON: {e}") from e
    return from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
