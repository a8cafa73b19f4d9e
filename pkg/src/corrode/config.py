"""Experiment configuration: dataclasses, INI-style text format, presets."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .mesh import Mesh, build_unit_disk_mesh, build_unit_square_mesh
from .nonlinear import Nonlinearity, parse_nonlinearity
from .runge import default_alpha_schedule


@dataclass
class DomainConfig:
    shape: str = "square"
    n: int = 32
    partition: str = "top"
    theta_split: float = math.pi / 2

    def build(self) -> Mesh:
        if self.shape == "square":
            return build_unit_square_mesh(self.n, self.partition)
        if self.shape == "disk":
            return build_unit_disk_mesh(self.n, self.theta_split)
        raise ConfigurationError(f"unknown domain shape {self.shape!r}", key="domain.shape")


@dataclass
class ConductivityConfig:
    """Constant symmetric conductivity ``[[g11, g12], [g12, g22]]``."""

    g11: float = 1.0
    g12: float = 0.0
    g22: float = 1.0

    def matrix(self):
        return [[self.g11, self.g12], [self.g12, self.g22]]


@dataclass
class NonlinearityConfig:
    """``law`` is the hidden nonlinearity; ``alternative`` (optional) a second law for comparison runs."""

    law: str = "cubic()"
    alternative: str = ""

    def build(self) -> Nonlinearity:
        return parse_nonlinearity(self.law)

    def build_alternative(self) -> Nonlinearity | None:
        return parse_nonlinearity(self.alternative) if self.alternative else None


@dataclass
class ForwardConfig:
    """Accessible data for the forward solve: ``zero``, ``constant`` (value ``flux``) or ``harmonic_y``."""

    data: str = "zero"
    flux: float = 0.0


@dataclass
class RungeConfig:
    theta: float = 0.01
    alpha_hi: float = 1.0
    alpha_lo: float = 1e-10
    alpha_ratio: float = 0.1

    def schedule(self):
        return default_alpha_schedule(self.alpha_hi, self.alpha_lo, self.alpha_ratio)


@dataclass
class SweepConfig:
    """``t_max <= 0`` selects the amplitude with the contraction monitor."""

    t_max: float = 0.3
    n_t: int = 21
    beta: float = 0.5
    baseline_flux: float = 0.0


@dataclass
class InverseConfig:
    """``noise_estimate < 0`` means: use ``noise``.  ``coarse_n = 0`` completes on the lab mesh."""

    noise: float = 0.0
    noise_estimate: float = -1.0
    alpha_hi: float = 1.0
    alpha_lo: float = 1e-12
    dz_fraction: float = 0.1
    coarse_n: int = 0

    @property
    def estimate(self) -> float:
        return self.noise if self.noise_estimate < 0 else self.noise_estimate

    def schedule(self):
        return default_alpha_schedule(self.alpha_hi, self.alpha_lo, 0.1)


@dataclass
class SolverConfig:
    svtol: float = 1e-8
    kmax: int = 8
    tol: float = 1e-12


@dataclass
class RunConfig:
    seed: int = 0
    out: str = ""


@dataclass
class ExperimentConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    conductivity: ConductivityConfig = field(default_factory=ConductivityConfig)
    nonlinearity: NonlinearityConfig = field(default_factory=NonlinearityConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    runge: RungeConfig = field(default_factory=RungeConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    inverse: InverseConfig = field(default_factory=InverseConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for section in dataclasses.fields(self):
            lines.append(f"[{section.name}]")
            for f in dataclasses.fields(getattr(self, section.name)):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, section.name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(inverse={"noise": 1e-3})``."""
        cfg = parse_config(self.to_text())
        for name, values in sections.items():
            sub = getattr(cfg, name)
            for key, val in values.items():
                if not hasattr(sub, key):
                    raise ConfigurationError(f"unknown key {name}.{key}", key=f"{name}.{key}")
                setattr(sub, key, val)
        validate(cfg)
        return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, kind, key: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan")
            return value
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {key}", key=key) from exc


_TYPES = {"int": int, "float": float, "str": str}


def parse_config(text: str) -> ExperimentConfig:
    """Parse the INI-style format; unknown sections or keys are errors naming the key."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}", key=_error_key(exc)) from exc
    cfg = ExperimentConfig()
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigurationError(f"unknown section [{name}]", key=name)
        sub = getattr(cfg, name)
        kinds = {f.name: _TYPES.get(f.type, f.type) for f in dataclasses.fields(sub)}
        for key, raw in parser.items(name):
            if key not in kinds:
                raise ConfigurationError(f"unknown key {name}.{key}", key=f"{name}.{key}")
            setattr(sub, key, _convert(raw.strip(), kinds[key], f"{name}.{key}"))
    validate(cfg)
    return cfg


def _error_key(exc: configparser.Error) -> str:
    for attr in ("option", "section"):
        if getattr(exc, attr, None):
            return str(getattr(exc, attr))
    return "file"


def validate(cfg: ExperimentConfig) -> None:
    checks = [
        ("domain.shape", cfg.domain.shape in ("square", "disk")),
        ("domain.n", cfg.domain.n >= 1),
        ("runge.theta", cfg.runge.theta > 0),
        ("runge.alpha_hi", cfg.runge.alpha_hi > cfg.runge.alpha_lo > 0),
        ("runge.alpha_ratio", 0 < cfg.runge.alpha_ratio < 1),
        ("sweep.n_t", cfg.sweep.n_t >= 1),
        ("sweep.beta", 0 < cfg.sweep.beta < 1),
        ("inverse.noise", cfg.inverse.noise >= 0),
        ("inverse.alpha_hi", cfg.inverse.alpha_hi > cfg.inverse.alpha_lo > 0),
        ("inverse.dz_fraction", cfg.inverse.dz_fraction > 0),
        ("inverse.coarse_n", cfg.inverse.coarse_n >= 0),
        ("solver.svtol", cfg.solver.svtol > 0),
        ("solver.kmax", cfg.solver.kmax >= 0),
        ("solver.tol", cfg.solver.tol > 0),
        ("forward.data", cfg.forward.data in ("zero", "constant", "harmonic_y")),
    ]
    for key, ok in checks:
        if not ok:
            raise ConfigurationError(f"invalid value for {key}", key=key)
    for key, text in (("nonlinearity.law", cfg.nonlinearity.law),
                      ("nonlinearity.alternative", cfg.nonlinearity.alternative)):
        if text:
            try:
                parse_nonlinearity(text)
            except ConfigurationError as exc:
                raise ConfigurationError(str(exc), key=key) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration: {exc}", key="config") from exc
    return parse_config(text)


def write_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_text())


def preset(name: str) -> ExperimentConfig:
    """Named configurations: ``flagship``, ``zero``, ``noisy``, ``manufactured``, ``bump``, ``small``."""
    base = ExperimentConfig()
    if name == "flagship":
        return base
    if name == "zero":
        return base.replace(nonlinearity={"law": "zero()"})
    if name == "noisy":
        return base.replace(inverse={"noise": 1e-2})
    if name == "manufactured":
        return base.replace(nonlinearity={"law": "linear(q=-1)"}, forward={"data": "harmonic_y"})
    if name == "bump":
        return base.replace(nonlinearity={"alternative": "cubic_bump(lo=0.5,hi=1.0,amp=1.0)"})
    if name == "small":
        return base.replace(domain={"n": 16}, sweep={"n_t": 11})
    raise ConfigurationError(f"unknown preset {name!r}", key="preset")


PRESETS = ("flagship", "zero", "noisy", "manufactured", "bump", "small")
