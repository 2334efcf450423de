"""Line-based ``key = value`` run configuration with dotted section prefixes.

Blank lines and lines starting with ``#`` are ignored.  Sequences are
comma-separated.  Unknown keys and malformed values raise
:class:`ConfigurationError` carrying the dotted key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigurationError
from ..grid import PhaseGrid, build_grid
from ..integrator import StepConfig
from ..moments import check_nu
from ..scenarios import ScenarioSpec

MODES = ("theorem", "local")


def _float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(key, f"expected a number, got {text!r}") from None


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(key, f"expected an integer, got {text!r}") from None


def _bool(key, text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(key, f"expected true or false, got {text!r}")


def _floats(key, text):
    return tuple(_float(key, t.strip()) for t in text.split(",") if t.strip())


def _ints(key, text):
    return tuple(_int(key, t.strip()) for t in text.split(",") if t.strip())


def _str(key, text):
    return text


def _dt(key, text):
    return None if text.strip().lower() == "auto" else _float(key, text)


def _opt_str(key, text):
    return text or None


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    nu: float = 0.0
    beta: float = 8.0
    mode: str = "theorem"
    spatial_dims: int = 1
    spatial_extent: tuple[float, ...] = (2 * math.pi,)
    spatial_counts: tuple[int, ...] = (32,)
    velocity_halfwidth: float = 8.0
    velocity_counts: int = 32
    velocity_offset: str = "cell"
    dt: float | None = None
    order: int = 1
    relaxation: str = "explicit-frozen"
    picard_k: int = 1
    matching: str = "matched"
    tol: float = 1e-12
    max_iter: int = 50
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    n_steps: int = 100
    record_every: int = 1
    snapshot_every: int = 0
    output: str = "out"
    eps0: float | None = None
    c0: float = 0.0
    seed: int = 20240501

    def __post_init__(self):
        try:
            check_nu(self.nu)
        except ValueError as exc:
            raise ConfigurationError("model.nu", str(exc)) from None
        if self.mode not in MODES:
            raise ConfigurationError("model.mode", f"must be one of {MODES}, got {self.mode!r}")
        floor = 7.0 if self.mode == "theorem" else 5.0
        if not self.beta > floor:
            raise ConfigurationError("model.beta", f"must exceed {floor:g} in {self.mode} mode, got {self.beta!r}")
        if self.n_steps < 0:
            raise ConfigurationError("run.n_steps", f"must be nonnegative, got {self.n_steps}")
        if self.record_every < 1:
            raise ConfigurationError("run.record_every", f"must be positive, got {self.record_every}")
        if self.snapshot_every < 0:
            raise ConfigurationError("run.snapshot_every", f"must be nonnegative, got {self.snapshot_every}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigurationError("seed", "must be an unsigned 64-bit integer")
        self.grid()
        if self.dt is not None:
            self.step_config(self.dt)

    def grid(self) -> PhaseGrid:
        try:
            return build_grid(self.spatial_dims, _one(self.spatial_extent), _one(self.spatial_counts),
                              self.velocity_halfwidth, self.velocity_counts, self.velocity_offset)
        except ConfigurationError as exc:
            raise ConfigurationError(f"grid.{exc.field}", str(exc).split(": ", 1)[1]) from None

    def step_config(self, dt: float) -> StepConfig:
        return StepConfig(dt, self.order, self.relaxation, self.picard_k, self.matching, self.tol, self.max_iter)


def _one(values):
    return values[0] if len(values) == 1 else values


# dotted key -> (owner, attribute, parser); owner "scenario" targets ScenarioSpec
_KEYS = {
    "model.nu": ("run", "nu", _float),
    "model.beta": ("run", "beta", _float),
    "model.mode": ("run", "mode", _str),
    "grid.spatial_dims": ("run", "spatial_dims", _int),
    "grid.spatial_extent": ("run", "spatial_extent", _floats),
    "grid.spatial_counts": ("run", "spatial_counts", _ints),
    "grid.velocity_halfwidth": ("run", "velocity_halfwidth", _float),
    "grid.velocity_counts": ("run", "velocity_counts", _int),
    "grid.velocity_offset": ("run", "velocity_offset", _str),
    "step.dt": ("run", "dt", _dt),
    "step.order": ("run", "order", _int),
    "step.relaxation": ("run", "relaxation", _str),
    "step.picard_k": ("run", "picard_k", _int),
    "step.matching": ("run", "matching", _str),
    "step.tol": ("run", "tol", _float),
    "step.max_iter": ("run", "max_iter", _int),
    "scenario.kind": ("scenario", "kind", _str),
    "scenario.amplitude": ("scenario", "amplitude", _float),
    "scenario.wavenumber": ("scenario", "wavenumber", _ints),
    "scenario.levels": ("scenario", "levels", _floats),
    "scenario.sigma0": ("scenario", "sigma0", _floats),
    "scenario.table": ("scenario", "table", _opt_str),
    "scenario.normalize": ("scenario", "normalize", _bool),
    "run.n_steps": ("run", "n_steps", _int),
    "run.record_every": ("run", "record_every", _int),
    "run.snapshot_every": ("run", "snapshot_every", _int),
    "run.output": ("run", "output", _str),
    "thresholds.eps0": ("run", "eps0", _dt),
    "thresholds.c0": ("run", "c0", _float),
    "seed": ("run", "seed", _int),
}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse configuration text, starting from ``base`` (defaults if omitted)."""
    run_kw, scen_kw = {}, {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigurationError(key, "unknown key")
        if key in seen:
            raise ConfigurationError(key, "given more than once")
        seen.add(key)
        owner, attr, parse = _KEYS[key]
        (scen_kw if owner == "scenario" else run_kw)[attr] = parse(key, value)
    base = base or RunConfig()
    try:
        scenario = replace(base.scenario, **scen_kw)
    except TypeError as exc:
        raise ConfigurationError("scenario", str(exc)) from None
    return replace(base, scenario=scenario, **run_kw)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    """Serialize every key; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for key, (owner, attr, _) in _KEYS.items():
        obj = cfg.scenario if owner == "scenario" else cfg
        value = getattr(obj, attr)
        lines.append(f"{key} = {'' if value is None and attr == 'table' else _fmt(value)}")
    return "\n".join(lines) + "\n"
