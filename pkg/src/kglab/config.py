"""Run configuration: an INI file of key = value sections, fully validated."""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace

from .numerics import ConfigurationError, Grid1D

PRESETS = ("soliton", "soliton+Y0", "soliton+Y2", "soliton+bump", "custom")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass(frozen=True)
class GridSection:
    R: float = 60.0
    N: int = 4801
    sponge_width: float | None = None


@dataclass(frozen=True)
class WeightsSection:
    A: float = 20.0
    eps: float = 0.05


@dataclass(frozen=True)
class EvolveSection:
    dt: float = 0.01
    t_end: float = 100.0
    record_every: int = 100
    mode: str = "nonlinear"
    sponge: bool = True
    preset: str = "soliton+Y2"
    amplitude: float = 0.1
    custom_file: str = ""


@dataclass(frozen=True)
class ShootSection:
    t_horizon: float | None = None
    tol: float = 1e-12
    theta_exit: float = 0.05
    amplitudes: tuple[float, ...] = (0.04, 0.02, 0.01, 0.005)
    perturbation: str = "Y2"
    trajectory_amplitude: float = 0.01
    trajectory_t_end: float = 200.0
    dense_window: float = 5.0
    reshoot_segment: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    evolve: EvolveSection = field(default_factory=EvolveSection)
    shoot: ShootSection = field(default_factory=ShootSection)
    seed: int = 0
    output_dir: str = "kglab-out"

    def make_grid(self) -> Grid1D:
        try:
            return Grid1D(self.grid.R, self.grid.N, self.grid.sponge_width)
        except ConfigurationError as exc:
            raise ConfigError(str(exc)) from None

    def with_grid(self, **kw) -> "RunConfig":
        return replace(self, grid=replace(self.grid, **kw))


_SECTIONS = {"grid": GridSection, "weights": WeightsSection, "evolve": EvolveSection, "shoot": ShootSection}
_RUN_KEYS = {"seed": int, "output_dir": str}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _convert(section: str, key: str, raw: str, default):
    annot = {f.name: f.type for f in fields(_SECTIONS[section])}[key]
    text = raw.strip()
    try:
        if "None" in str(annot) and text in ("", "auto"):
            return None
        if "tuple" in str(annot):
            return tuple(float(v) for v in text.split(",") if v.strip())
        if isinstance(default, bool) or annot == "bool":
            return _parse_bool(text)
        if isinstance(default, int) or annot == "int":
            return int(text)
        if "float" in str(annot):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (R, N, A)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for name in parser.sections():
        if name == "run":
            for key, raw in parser.items(name):
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key [run] {key}")
                try:
                    cfg = replace(cfg, **{key: _RUN_KEYS[key](raw.strip())})
                except ValueError:
                    raise ConfigError(f"[run] {key}: cannot parse {raw!r}") from None
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        current = getattr(cfg, name)
        known = {f.name for f in fields(current)}
        updates = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key [{name}] {key}")
            updates[key] = _convert(name, key, raw, getattr(current, key))
        cfg = replace(cfg, **{name: replace(current, **updates)})
    validate(cfg)
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        validate(cfg)
        return cfg
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def validate(cfg: RunConfig):
    grid = cfg.make_grid()
    w = cfg.weights
    if w.A < 10 or 2 * w.A > grid.half_width:
        raise ConfigError("weights.A must satisfy 10 <= A <= R/2")
    if not 0 < w.eps <= 1:
        raise ConfigError("weights.eps must lie in (0, 1]")
    e = cfg.evolve
    if not e.dt > 0 or e.dt > 0.4 * grid.h * (1 + 1e-12):
        raise ConfigError(f"evolve.dt must lie in (0, 0.4*h] = (0, {0.4 * grid.h:.6g}]")
    if e.t_end < 0 or e.record_every < 1:
        raise ConfigError("evolve.t_end must be >= 0 and evolve.record_every >= 1")
    if e.mode not in ("nonlinear", "linearized"):
        raise ConfigError("evolve.mode must be nonlinear or linearized")
    if e.preset not in PRESETS:
        raise ConfigError(f"evolve.preset must be one of {', '.join(PRESETS)}")
    if e.preset == "custom" and not e.custom_file:
        raise ConfigError("preset custom needs evolve.custom_file")
    s = cfg.shoot
    if not 0 < s.tol < 1e-3:
        raise ConfigError("shoot.tol must lie in (0, 1e-3)")
    if not 0 < s.theta_exit < 1:
        raise ConfigError("shoot.theta_exit must lie in (0, 1)")
    if any(not 0 <= a <= 0.1 for a in s.amplitudes) or not s.amplitudes:
        raise ConfigError("shoot.amplitudes must be a non-empty list in [0, 0.1]")
    if s.perturbation not in ("Y2", "bump"):
        raise ConfigError("shoot.perturbation must be Y2 or bump")
    if not 0 <= s.trajectory_amplitude <= 0.1:
        raise ConfigError("shoot.trajectory_amplitude must lie in [0, 0.1]")
    if s.t_horizon is not None and s.t_horizon <= 0:
        raise ConfigError("shoot.t_horizon must be positive")
    if s.trajectory_t_end < 0 or s.dense_window < 0 or s.reshoot_segment <= 0:
        raise ConfigError("shoot trajectory times must be non-negative")


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return str(v)


def render_config(cfg: RunConfig) -> str:
    """Full configuration, defaults included, in the accepted file format."""
    out = io.StringIO()
    out.write("[run]\n")
    out.write(f"seed = {cfg.seed}\noutput_dir = {cfg.output_dir}\n")
    for name in _SECTIONS:
        out.write(f"\n[{name}]\n")
        for key, value in asdict(getattr(cfg, name)).items():
            if isinstance(value, list):
                value = tuple(value)
            out.write(f"{key} = {_fmt(value)}\n")
    return out.getvalue()
