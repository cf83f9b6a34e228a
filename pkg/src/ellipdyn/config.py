"""Experiment configuration read from INI files."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import LevelFunction, builtin_level, polynomial_level


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


@dataclass
class DomainConfig:
    psi: str = "radial"
    n: int = 2
    quadratic: list[float] = field(default_factory=list)
    cubic: list[float] = field(default_factory=list)
    cutoff_radius: float | None = None

    def level(self) -> LevelFunction:
        if self.psi == "polynomial":
            lv = polynomial_level(self.n, self.quadratic, self.cubic)
        else:
            lv = builtin_level(self.psi, self.n)
        if lv.n != self.n:
            raise ConfigError(f"psi '{self.psi}' has dimension {lv.n}, config says n={self.n}")
        if self.cutoff_radius is not None:
            lv = dataclasses.replace(lv, cutoff_radius=self.cutoff_radius)
        return lv


@dataclass
class BasisConfig:
    N: int = 32
    oversample: int = 2


@dataclass
class DynamicsConfig:
    alpha: float | None = None
    t0: float = 1e-3
    potential: str = "0"
    rtol: float = 1e-10
    dtau: float = 0.1

    def potential_value(self):
        """A float for constant potentials, else a callable on points."""
        parts = self.potential.split()
        if len(parts) == 1:
            return float(parts[0])
        kind, args = parts[0], [float(p) for p in parts[1:]]
        if kind == "const":
            return args[0]
        if kind == "quadratic":
            c2 = args[0]
            return lambda x: c2 * np.sum(np.asarray(x) ** 2, axis=-1)
        raise ConfigError(f"unknown potential descriptor {self.potential!r}")


@dataclass
class EigConfig:
    lambda_min: float = 1.0
    lambda_max: float = 20.0
    grid: int = 80
    subspace: str = "dirichlet"
    tol: float = 1e-6
    parallel: bool = False


@dataclass
class GeometryConfig:
    nodes: int = 64
    times: int = 64
    t_min: float = 1e-3
    t_max: float = 1.0


@dataclass
class EvolveConfig:
    mode: str = "oracle"
    l: int = 1
    m: int = 0
    branch: str = "+"
    t_start: float = 0.5
    t_end: float = 1.0
    amplitude: float = 1.0
    samples: int = 51
    nonlinearity: str = "0"


@dataclass
class ReconstructConfig:
    history: str = ""
    a: float | None = None
    b: float | None = None
    p: float | None = None
    nonlinearity: str = "0"
    grid: int = 41
    tests: int = 20


@dataclass
class ExperimentConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    eig: EigConfig = field(default_factory=EigConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    seed: int = 0
    source: str = ""

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("source")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def alpha(self) -> float:
        if self.dynamics.alpha is not None:
            return self.dynamics.alpha
        return 0.5

    def check(self):
        n = self.domain.n
        if n not in (2, 3):
            raise ConfigError("n must be 2 or 3")
        if self.basis.N < 0:
            raise ConfigError("N must be nonnegative")
        if not 0 < self.dynamics.t0 < 1:
            raise ConfigError("t0 must lie in (0, 1)")
        a = self.alpha
        if n == 3 and not 0 < a <= n / 2 - 1:
            warnings.warn(f"alpha={a} outside the admissible window (0, {n / 2 - 1}]", UserWarning, stacklevel=2)
        if self.eig.lambda_min >= self.eig.lambda_max:
            raise ConfigError("lambda_min must be below lambda_max")
        if self.eig.subspace not in ("dirichlet", "neumann"):
            raise ConfigError("subspace is 'dirichlet' or 'neumann'")
        return self


_SECTIONS = {"domain": DomainConfig, "basis": BasisConfig, "dynamics": DynamicsConfig, "eig": EigConfig,
             "geometry": GeometryConfig, "evolve": EvolveConfig, "reconstruct": ReconstructConfig}


def _coerce(ftype, raw: str):
    ftype = str(ftype)
    if "list" in ftype:
        return _floats(raw)
    if raw.strip().lower() in ("", "none") and "None" in ftype:
        return None
    if ftype.startswith("bool"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if ftype.startswith("int"):
        return int(raw)
    if ftype.startswith("float"):
        return float(raw)
    return raw.strip()


def load_config(path: str | Path | None = None, text: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        parser.read(path)
    elif text is not None:
        parser.read_string(text)
    cfg = ExperimentConfig(source=str(path or ""))
    for name in parser.sections():
        if name == "run":
            cfg.seed = parser.getint("run", "seed", fallback=0)
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        target = getattr(cfg, name)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        for key, raw in parser.items(name):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                setattr(target, key, _coerce(types[key], raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from exc
    return cfg.check()
