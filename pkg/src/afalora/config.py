"""Run configuration: flat ``section.key=value`` text with typed validation.

Example file::

    # comments and blank lines are ignored
    adapter.placement=a-sigma-b
    schedule.end_frac=0.3
    train.steps=2000
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Mapping

from .activations import ActivationKind
from .adapters import Placement
from .experiments import TaskSpec, TrainSettings
from .schedules import ScheduleSpec, make_fraction_schedule

__all__ = [
    "ConfigError",
    "AdapterSection",
    "TrainSection",
    "ScheduleSection",
    "SweepSection",
    "RunSection",
    "RunConfig",
    "parse_config",
    "parse_text",
    "serialize",
    "FLAG_KEYS",
]


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key(s)."""


@dataclass(frozen=True)
class AdapterSection:
    rank: int = 4
    alpha: float = 8.0
    placement: str = "a-sigma-b"
    activation: str = "relu"
    dora: bool = False
    trainable_base: bool = False


@dataclass(frozen=True)
class TrainSection:
    mode: str = "adapter"
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 3e-3
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    seed: int = 0
    precision: str = "float64"


@dataclass(frozen=True)
class ScheduleSection:
    kind: str = "linear"
    start_frac: float = 0.0
    end_frac: float = 0.3
    constant_value: float = 0.0


@dataclass(frozen=True)
class SweepSection:
    placements: tuple = ("sigma-a-b", "a-sigma-b", "a-b-sigma", "sigma-a-sigma-b",
                         "a-sigma-b-sigma", "sigma-a-b-sigma", "sigma-a-sigma-b-sigma")
    activations: tuple = ("relu",)
    end_fracs: tuple = (0.3,)
    n_seeds: int = 3
    seed0: int = 0
    kind: str = "afa"


@dataclass(frozen=True)
class RunSection:
    out: str = "runs"
    name: str = "run"


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    train: TrainSection = field(default_factory=TrainSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    run: RunSection = field(default_factory=RunSection)

    def schedule_spec(self) -> ScheduleSpec:
        s = self.schedule
        if s.kind == "constant":
            return ScheduleSpec.constant(s.constant_value, self.train.steps)
        return make_fraction_schedule(self.train.steps, s.start_frac, s.end_frac)

    def train_settings(self) -> TrainSettings:
        t, a = self.train, self.adapter
        return TrainSettings(steps=t.steps, batch_size=t.batch_size, learning_rate=t.learning_rate,
                             optimizer=t.optimizer, weight_decay=t.weight_decay, rank=a.rank,
                             alpha=a.alpha)

    def estimator_params(self) -> dict:
        a, t, s = self.adapter, self.train, self.schedule
        return dict(mode=t.mode, rank=a.rank, alpha=a.alpha, placement=a.placement,
                    activation=a.activation, dora=a.dora, trainable_base=a.trainable_base,
                    schedule=s.kind, start_frac=s.start_frac, end_frac=s.end_frac,
                    constant_beta=s.constant_value, steps=t.steps, batch_size=t.batch_size,
                    learning_rate=t.learning_rate, optimizer=t.optimizer,
                    weight_decay=t.weight_decay, precision=t.precision, random_state=t.seed)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}

# CLI flag -> config key
FLAG_KEYS = {
    "placement": "adapter.placement",
    "activation": "adapter.activation",
    "rank": "adapter.rank",
    "alpha": "adapter.alpha",
    "dora": "adapter.dora",
    "trainable_base": "adapter.trainable_base",
    "start_frac": "schedule.start_frac",
    "end_frac": "schedule.end_frac",
    "steps": "train.steps",
    "seed": "train.seed",
    "out": "run.out",
}


def _known_keys() -> dict[str, type]:
    keys = {}
    for section, factory in _SECTIONS.items():
        for f in fields(factory()):
            default = getattr(factory(), f.name)
            keys[f"{section}.{f.name}"] = type(default)
    return keys


def _coerce(key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if key == "sweep.end_fracs":
                return tuple(float(x) for x in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) if not isinstance(v, str) else v for v in value)
    return str(value)


def parse_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` strings from config text."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _validate(cfg: RunConfig) -> None:
    s = cfg.schedule
    if not 0.0 <= s.start_frac <= 1.0:
        raise ConfigError(f"schedule.start_frac must lie in [0, 1], got {s.start_frac}")
    if not 0.0 <= s.end_frac <= 1.0:
        raise ConfigError(f"schedule.end_frac must lie in [0, 1], got {s.end_frac}")
    if s.end_frac < s.start_frac:
        raise ConfigError(
            f"schedule.end_frac ({s.end_frac}) must be >= schedule.start_frac ({s.start_frac})"
        )
    if s.kind not in ("linear", "constant"):
        raise ConfigError(f"schedule.kind must be linear or constant, got {s.kind!r}")
    if not 0.0 <= s.constant_value <= 1.0:
        raise ConfigError(f"schedule.constant_value must lie in [0, 1], got {s.constant_value}")
    a = cfg.adapter
    for key, parse in (("adapter.placement", Placement.parse), ("adapter.activation", ActivationKind.parse)):
        try:
            parse(getattr(a, key.split(".")[1]))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if a.rank < 1:
        raise ConfigError(f"adapter.rank must be >= 1, got {a.rank}")
    t = cfg.task
    if a.rank > min(t.d_in, t.d_hidden, t.d_out):
        raise ConfigError(f"adapter.rank={a.rank} exceeds the smallest layer dimension "
                          f"{min(t.d_in, t.d_hidden, t.d_out)}")
    if not a.alpha > 0:
        raise ConfigError(f"adapter.alpha must be positive, got {a.alpha}")
    tr = cfg.train
    if tr.mode not in ("adapter", "full"):
        raise ConfigError(f"train.mode must be adapter or full, got {tr.mode!r}")
    if tr.steps < 1:
        raise ConfigError(f"train.steps must be >= 1, got {tr.steps}")
    if tr.batch_size < 1:
        raise ConfigError(f"train.batch_size must be >= 1, got {tr.batch_size}")
    if not tr.learning_rate >= 0:
        raise ConfigError(f"train.learning_rate must be >= 0, got {tr.learning_rate}")
    if tr.optimizer not in ("sgd", "adamw"):
        raise ConfigError(f"train.optimizer must be sgd or adamw, got {tr.optimizer!r}")
    if tr.precision not in ("float64", "float32"):
        raise ConfigError(f"train.precision must be float64 or float32, got {tr.precision!r}")
    sw = cfg.sweep
    if sw.n_seeds < 1:
        raise ConfigError(f"sweep.n_seeds must be >= 1, got {sw.n_seeds}")
    if sw.kind not in ("afa", "afa_dora"):
        raise ConfigError(f"sweep.kind must be afa or afa_dora, got {sw.kind!r}")
    for p in sw.placements:
        try:
            if not Placement.parse(p).any:
                raise ValueError("sweep placements must be non-empty masks")
        except ValueError as exc:
            raise ConfigError(f"sweep.placements: {exc}") from None
    for act in sw.activations:
        try:
            ActivationKind.parse(act)
        except ValueError as exc:
            raise ConfigError(f"sweep.activations: {exc}") from None
    for e in sw.end_fracs:
        if not 0.0 <= e <= 1.0:
            raise ConfigError(f"sweep.end_fracs: {e} outside [0, 1]")


def build(values: Mapping[str, object]) -> RunConfig:
    """RunConfig from already-typed ``section.key`` values over the defaults."""
    known = _known_keys()
    unknown = sorted(k for k in values if k not in known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    sections = {}
    for name, factory in _SECTIONS.items():
        overrides = {k.split(".", 1)[1]: v for k, v in values.items() if k.split(".", 1)[0] == name}
        try:
            sections[name] = dataclasses.replace(factory(), **overrides)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    cfg = RunConfig(**sections)
    _validate(cfg)
    return cfg


def parse_config(path: str | os.PathLike | None = None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (flag values win)."""
    raw: dict[str, str] = {}
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw.update(parse_text(fh.read()))
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    known = _known_keys()
    unknown = sorted(k for k in raw if k not in known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return build({k: _coerce(k, v, known[k]) for k, v in raw.items()})


def to_dict(cfg: RunConfig) -> dict[str, object]:
    out = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        for f in fields(section):
            out[f"{name}.{f.name}"] = getattr(section, f.name)
    return out


def serialize(cfg: RunConfig) -> str:
    return "".join(f"{k}={_format(v)}\n" for k, v in to_dict(cfg).items())
