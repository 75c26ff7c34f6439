"""Experiment configuration: a flat TOML (or JSON) table validated into a frozen dataclass."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .model import CATALOG, ModelError, model_defaults


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; ``line`` and ``field`` locate the problem when known."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


ENGINES = ("sbtm", "mc", "both")
VARIANTS = ("alg1", "alg2")


@dataclass(frozen=True)
class ExperimentConfig:
    example: str = "Ex1"
    variant: str = "alg1"
    n_particles: int = 1000
    dt: float = 2e-3
    T: float = 0.5
    seed: int = 0
    n_r: int = 64
    n_lambda: int = 16
    quad_rule: str = "trapezoid"
    budget: int = 100
    learning_rate: float = 1e-4
    init_budget: int = 2000
    init_learning_rate: float = 1e-3
    hidden: tuple = (32, 32, 32)
    checkpoint_every: int = 0  # 0 selects 1 for d = 1 and 10 otherwise
    bins: int = 0  # 0 selects the dimension default
    bandwidth: str = "scott"
    output_dir: str = ""
    engines: str = "both"
    mc_particles: int = 0  # 0 means the same count as the transport ensemble
    mc_seed: int = -1  # -1 derives a stream from ``seed``
    init_sampling: str = "stratified"
    init_mean: Optional[tuple] = None
    init_std: Optional[tuple] = None
    track_density: bool = False
    telemetry: bool = False
    save_networks: bool = False
    kde_steps: tuple = ()
    model_overrides: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def dim(self) -> int:
        return int(model_defaults(self.example).get("dim", {"Ex1": 1, "Ex2": 1, "Ex3": 2, "Ex4": 3}.get(self.example, 1)))

    @property
    def tv_bins(self) -> int:
        if self.bins:
            return self.bins
        return {1: 50, 2: 30}.get(self.dim, 16)

    @property
    def n_mc(self) -> int:
        return self.mc_particles or self.n_particles

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in list(out.items()):
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def hash(self) -> str:
        """Digest of every field that affects numerical results."""
        data = self.to_dict()
        for k in ("output_dir", "telemetry", "save_networks"):
            data.pop(k, None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def with_updates(self, **kw) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **kw))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    example = cfg.example
    alias = {"ex1": "Ex1", "ex2": "Ex2", "ex3": "Ex3", "ex4": "Ex4", "ou": "OU"}
    example = alias.get(str(example).lower(), example)
    if example not in CATALOG:
        raise ConfigError(f"unknown example {cfg.example!r}", field="example")
    cfg = dataclasses.replace(cfg, example=example)
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}", field="variant")
    if cfg.engines not in ENGINES:
        raise ConfigError(f"engines must be one of {ENGINES}", field="engines")
    if cfg.init_sampling not in ("stratified", "iid"):
        raise ConfigError("init_sampling must be 'stratified' or 'iid'", field="init_sampling")
    if cfg.quad_rule not in ("trapezoid", "gauss"):
        raise ConfigError("quad_rule must be 'trapezoid' or 'gauss'", field="quad_rule")
    if not (isinstance(cfg.dt, (int, float)) and math.isfinite(cfg.dt) and cfg.dt > 0):
        raise ConfigError("dt must be a positive finite number", field="dt")
    if not (math.isfinite(cfg.T) and cfg.T >= 0):
        raise ConfigError("T must be a nonnegative finite number", field="T")
    n_steps = round(cfg.T / cfg.dt)
    if abs(n_steps * cfg.dt - cfg.T) > 1e-12:
        raise ConfigError(f"T = {cfg.T} is not an integer multiple of dt = {cfg.dt}", field="T")
    for name in ("n_particles", "n_r", "n_lambda", "init_budget"):
        if getattr(cfg, name) < 1:
            raise ConfigError("must be positive", field=name)
    if cfg.budget < 0:
        raise ConfigError("must be nonnegative", field="budget")
    if cfg.n_r < 2:
        raise ConfigError("must be at least 2", field="n_r")
    if cfg.learning_rate <= 0 or cfg.init_learning_rate <= 0:
        raise ConfigError("learning rates must be positive", field="learning_rate")
    if cfg.checkpoint_every < 0 or cfg.bins < 0 or cfg.mc_particles < 0:
        raise ConfigError("counts must be nonnegative", field="checkpoint_every")
    if any(int(h) < 1 for h in cfg.hidden):
        raise ConfigError("hidden widths must be positive", field="hidden")
    try:
        defaults = model_defaults(cfg.example)
    except ModelError as exc:
        raise ConfigError(str(exc), field="example") from None
    for key in cfg.model_overrides:
        if key not in defaults:
            raise ConfigError(f"model {cfg.example} has no parameter {key!r}", field=f"model.{key}")
    if "dim" in cfg.model_overrides and cfg.init_mean is not None and len(cfg.init_mean) != cfg.model_overrides["dim"]:
        raise ConfigError("init_mean length contradicts model dimension", field="init_mean")
    from .model import build_example

    try:
        model = build_example(cfg.example, cfg.model_overrides)
    except ModelError as exc:
        raise ConfigError(str(exc), field="model") from None
    for name in ("init_mean", "init_std"):
        val = getattr(cfg, name)
        if val is not None and len(val) not in (1, model.dim):
            raise ConfigError(f"length must be 1 or {model.dim}", field=name)
    if cfg.variant == "alg2" or not model.interaction.is_zero:
        if cfg.n_particles < 2 and not model.interaction.is_zero:
            raise ConfigError("interacting models need at least 2 particles", field="n_particles")
    if cfg.checkpoint_every == 0:
        cfg = dataclasses.replace(cfg, checkpoint_every=1 if model.dim == 1 else 10)
    return cfg


def _coerce(name: str, value, line: Optional[int]):
    f = _FIELDS[name]
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if name in ("hidden", "kde_steps"):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError("expects a list of integers", field=name, line=line)
        return tuple(value)
    if name in ("init_mean", "init_std"):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError("expects a list of numbers", field=name, line=line)
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expects a boolean, got {type(value).__name__}", field=name, line=line)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expects an integer, got {type(value).__name__}", field=name, line=line)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expects a number, got {type(value).__name__}", field=name, line=line)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expects a string, got {type(value).__name__}", field=name, line=line)
        return value
    return value


def _line_of(text: str, key: str) -> Optional[int]:
    for i, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith(key) and stripped[len(key):].lstrip().startswith(("=", '"', ":")):
            return i
        if stripped.startswith(f'"{key}"'):
            return i
    return None


def config_from_mapping(data: dict, text: str = "", base_dir: Optional[Path] = None) -> ExperimentConfig:
    data = dict(data)
    overrides = data.pop("model", {})
    if not isinstance(overrides, dict):
        raise ConfigError("[model] must be a table of parameter overrides", field="model", line=_line_of(text, "model"))
    kwargs = {"model_overrides": dict(overrides)}
    for key, value in data.items():
        if key not in _FIELDS or key == "model_overrides":
            raise ConfigError("unknown field", field=key, line=_line_of(text, key))
        kwargs[key] = _coerce(key, value, _line_of(text, key))
    if base_dir is not None and kwargs.get("output_dir") and not Path(kwargs["output_dir"]).is_absolute():
        kwargs["output_dir"] = str((base_dir / kwargs["output_dir"]).resolve())
    try:
        return validate(ExperimentConfig(**kwargs))
    except ConfigError as exc:
        if exc.line is None and exc.field is not None:
            key = exc.field.split(".")[-1]
            raise ConfigError(str(exc).split(": ", 1)[-1], field=exc.field, line=_line_of(text, key)) from None
        raise


def load_config(path, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Read a ``.toml`` or ``.json`` config; relative ``output_dir`` resolves against the working directory."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            line = None
            msg = str(exc)
            if "line " in msg:
                try:
                    line = int(msg.split("line ")[1].split(",")[0].split(")")[0])
                except ValueError:
                    line = None
            raise ConfigError(f"invalid TOML: {msg}", line=line) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    cfg = config_from_mapping(data, text)
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=output_dir)
    return cfg
