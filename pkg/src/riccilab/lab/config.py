"""Experiment configuration: INI files with one section per config group.

Example::

    [experiment]
    name = stability
    seed = 1
    output_dir = runs/stability

    [grid]
    resolution = 32, 32
    periods = 1.0, 1.0

    [perturbation]
    kind = conformal
    amplitude = 0.05

Every key has a default, unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError

EXPERIMENTS = ("stability", "monotonicity", "lojasiewicz", "linear-stability", "roundtrip")
PERTURBATIONS = ("conformal", "tensor-slice")


@dataclass
class ExperimentSection:
    name: str = "stability"
    seed: int = 1
    output_dir: str = "runs"


@dataclass
class GridSection:
    resolution: tuple[int, ...] = (32, 32)
    periods: tuple[float, ...] = (1.0, 1.0)

    @property
    def dim(self) -> int:
        return len(self.resolution)


@dataclass
class PerturbationSection:
    kind: str = "conformal"
    amplitude: float = 0.05
    band_limit: int = 3


@dataclass
class FlowSection:
    phase_switch: float = 1.0
    t_end: float = 5.0
    c_cfl: float = 0.2
    dt: float | None = None
    eigen_tol: float = 1e-10
    record_every: int = 10
    snapshot_every: int = 5000


@dataclass
class DiagnosticsSection:
    eps_ball: float = 0.5
    proxy_order: int = 2
    eta: float = 0.1
    inequality_theta: float = 0.1
    ric_tol: float = 1e-6
    grad_tol: float = 1e-8
    n_modes: int = 4
    roundtrip_tol: float = 5e-3
    mismatch_tol: float = 0.05


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    grid: GridSection = field(default_factory=GridSection)
    perturbation: PerturbationSection = field(default_factory=PerturbationSection)
    flow: FlowSection = field(default_factory=FlowSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)

    def validate(self) -> "ExperimentConfig":
        e, g, p, fl, d = self.experiment, self.grid, self.perturbation, self.flow, self.diagnostics
        if e.name not in EXPERIMENTS:
            raise ConfigError(f"experiment.name must be one of {EXPERIMENTS}, got {e.name!r}")
        if not 0 <= e.seed < 2**64:
            raise ConfigError("experiment.seed must be an unsigned 64-bit integer")
        if g.dim not in (2, 3) or len(g.periods) != g.dim:
            raise ConfigError("grid.resolution and grid.periods must both have 2 or 3 entries")
        if p.kind not in PERTURBATIONS:
            raise ConfigError(f"perturbation.kind must be one of {PERTURBATIONS}, got {p.kind!r}")
        if p.amplitude < 0:
            raise ConfigError("perturbation.amplitude must be >= 0")
        if p.band_limit < 1:
            raise ConfigError("perturbation.band_limit must be >= 1")
        if fl.t_end <= 0:
            raise ConfigError("flow.t_end must be positive")
        if e.name == "stability" and fl.t_end <= fl.phase_switch:
            raise ConfigError("flow.t_end must exceed flow.phase_switch for a two-phase run")
        if fl.dt is not None and fl.dt <= 0:
            raise ConfigError("flow.dt must be positive")
        if fl.record_every < 1 or fl.snapshot_every < 1:
            raise ConfigError("flow.record_every and flow.snapshot_every must be >= 1")
        if not 0 <= d.proxy_order <= 3:
            raise ConfigError("diagnostics.proxy_order must lie in 0..3")
        if not 0 < d.eta < 1:
            raise ConfigError("diagnostics.eta must lie in (0, 1)")
        return self

    def replace(self, section: str, **values) -> "ExperimentConfig":
        sec = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **{section: sec})


# ---------------------------------------------------------------------------
# Parsing


def _is_optional(tp) -> bool:
    return "None" in str(tp)


def _parse_value(section: str, key: str, raw: str, tp):
    tp_s = str(tp)
    raw = raw.strip()
    try:
        if _is_optional(tp) and raw.lower() in ("", "none", "auto"):
            return None
        if "tuple[int" in tp_s:
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if "tuple[float" in tp_s:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if tp_s.startswith("int"):
            return int(raw, 0)
        if tp_s.startswith("float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _sections():
    return {f.name: f.default_factory for f in fields(ExperimentConfig)}


def set_value(cfg: ExperimentConfig, dotted: str, raw: str) -> ExperimentConfig:
    """Apply a ``section.key=value`` style override."""
    try:
        section, key = dotted.split(".", 1)
    except ValueError:
        raise ConfigError(f"override {dotted!r} must look like section.key") from None
    if section not in _sections():
        raise ConfigError(f"unknown config section [{section}]")
    types = {f.name: f.type for f in fields(_sections()[section]())}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    return cfg.replace(section, **{key: _parse_value(section, key, raw, types[key])})


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = set_value(cfg, f"{section}.{key}", raw)
    if not parser.has_option("grid", "periods"):
        # unit periods in whatever dimension the resolution asks for
        cfg = cfg.replace("grid", periods=(1.0,) * cfg.grid.dim)
    return cfg.validate()


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in _sections():
        sec = getattr(cfg, name)
        parser[name] = {f.name: _format_value(getattr(sec, f.name)) for f in fields(sec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
