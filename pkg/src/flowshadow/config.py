"""Pipeline configuration loaded from YAML, validated at load time."""

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import ConfigError
from .systems import get_system, system_from_mapping

AUTO = "auto"


@dataclass(frozen=True)
class PipelineConfig:
    system: str = "lorenz"
    params: dict = field(default_factory=dict)
    seed_state: tuple = (1.0, 1.0, 1.0)
    transient: float = 50.0
    window: float = 2000.0
    stride: Optional[float] = None
    tol: float = 1e-10
    # spectrum
    window_cap: float = 50.0
    lambda_min: float = 0.2
    # strings and blocks
    T: float = 1.0
    eta: Union[float, str] = AUTO
    eta_rate: float = 0.3
    C: Union[float, str] = AUTO
    block_target: float = 0.5
    spectral_epsilon: Union[float, str] = AUTO
    # shadowing
    D_schedule: tuple = (1.0, 0.5, 0.25)
    candidates_per_D: int = 4
    max_return: float = 100.0
    base_stride: int = 10
    section_spacing: float = 0.5
    close_tol: float = 1e-12
    shadow_epsilon: float = 0.2
    # measures
    epsilon: float = 0.1
    n: Optional[int] = None
    box: Optional[tuple] = None
    out: str = "out"
    threads: int = 1
    system_spec: Optional[dict] = None

    def n_functions(self):
        if self.n is not None:
            return int(self.n)
        return int(math.floor(math.log2(2.0 / self.epsilon))) + 2

    def build_system(self):
        if self.system_spec is not None:
            return system_from_mapping(self.system_spec)
        return get_system(self.system, **dict(self.params))

    def to_json(self):
        return asdict(self)


_NAMES = {f.name for f in fields(PipelineConfig)}


def _pos(cfg, name, allow_auto=False):
    v = getattr(cfg, name)
    if allow_auto and v == AUTO:
        return
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v <= 0:
        raise ConfigError(f"{name} must be a positive number, got {v!r}")


def validate(cfg: PipelineConfig) -> PipelineConfig:
    for name in ("window", "tol", "window_cap", "T", "eta_rate", "epsilon", "close_tol",
                 "shadow_epsilon", "section_spacing", "max_return"):
        _pos(cfg, name)
    for name in ("eta", "C", "spectral_epsilon"):
        _pos(cfg, name, allow_auto=True)
    if cfg.stride is not None:
        _pos(cfg, "stride")
        if cfg.stride >= cfg.T:
            raise ConfigError("stride must be below T")
    if cfg.transient < 0:
        raise ConfigError("transient must be nonnegative")
    if cfg.C != AUTO and cfg.C < 1:
        raise ConfigError("C must be at least 1")
    if not 0 < cfg.block_target <= 1:
        raise ConfigError("block_target must lie in (0, 1]")
    if not 0 < cfg.epsilon < 1 or not 0 < cfg.shadow_epsilon < 1:
        raise ConfigError("epsilon values must lie in (0, 1)")
    D = list(cfg.D_schedule)
    if not D or any(not isinstance(d, (int, float)) or d <= 0 for d in D):
        raise ConfigError("D_schedule must be a nonempty list of positive gaps")
    if any(b >= a for a, b in zip(D, D[1:])):
        raise ConfigError("D_schedule must be strictly decreasing")
    if cfg.n is not None and (int(cfg.n) != cfg.n or cfg.n < 1):
        raise ConfigError("n must be a positive integer")
    if int(cfg.candidates_per_D) < 1 or int(cfg.base_stride) < 1 or int(cfg.threads) < 1:
        raise ConfigError("counts must be positive integers")
    if cfg.max_return <= 2 * cfg.T:
        raise ConfigError("max_return must exceed 2T")
    if cfg.box is not None:
        try:
            ok = all(len(b) == 2 and b[0] < b[1] for b in cfg.box)
        except TypeError:
            ok = False
        if not ok:
            raise ConfigError("box must be a list of [low, high] pairs")
    try:
        system = cfg.build_system()
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"system: {exc}") from None
    if len(cfg.seed_state) != system.dim:
        raise ConfigError(f"seed_state needs {system.dim} coordinates")
    return cfg


def from_mapping(data, **overrides) -> PipelineConfig:
    data = dict(data or {})
    sysval = data.get("system", "lorenz")
    if isinstance(sysval, dict):
        data["system"] = sysval.get("name", "custom")
        data["system_spec"] = sysval
    unknown = set(data) - _NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("seed_state", "D_schedule"):
        if key in data:
            data[key] = tuple(float(v) for v in data[key])
    if data.get("box") is not None:
        data["box"] = tuple(tuple(float(v) for v in b) for b in data["box"])
    cfg = PipelineConfig(**data)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = replace(cfg, **overrides)
    return validate(cfg)


def load_config(path=None, **overrides) -> PipelineConfig:
    if path is None:
        return from_mapping({}, **overrides)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return from_mapping(data, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
