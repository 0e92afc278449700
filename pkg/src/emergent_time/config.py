"""Strict ``[section]`` / ``key = value`` run configuration.

Unknown sections and keys are errors, so a misspelled key never falls back
to a default silently. Every error names the line it came from.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .model import CompositeModel, CouplingSpec, EnvSpec, Grid, SystemSpec

EXPERIMENTS = (
    "validate", "adiabatic", "solve-bound", "solve-scatter", "wkb", "trajectory",
    "propagate", "impact", "dirac", "uncertainty", "mott", "decoupling", "ladder",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _floats(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text


# section -> key -> (parser, default). ``None`` default means required when the
# section is used by the chosen experiment.
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "experiment": (_str, None),
        "seed": (int, 0),
        "tol": (float, 1e-10),
        "out": (_str, "out"),
    },
    "grid": {
        "r_min": (float, -8.0),
        "r_max": (float, 8.0),
        "n_points": (int, 401),
    },
    "env": {
        "mass": (float, 1.0),
        "potential": (_str, "free"),
        "omega": (float, 1.0),
        "center": (float, 0.0),
        "height": (float, 0.0),
        "width": (float, 1.0),
    },
    "system": {
        "levels": (_floats, (0.0, 1.0)),
        "tunneling": (float, 0.0),  # constant element between every pair of levels
    },
    "coupling": {
        "kind": (_str, "none"),
        "strength": (float, 0.0),
        "width": (float, 1.0),
        "center": (float, 0.0),
    },
    "bound": {
        "k_lowest": (int, 4),
        "method": (_str, "auto"),
        "stencil": (int, 3),
        "box_factor": (float, 1.5),
    },
    "scatter": {
        "energy": (float, None),
        "incoming": (int, 0),
    },
    "beam": {
        "ratio": (float, 100.0),  # kinetic energy over the system level spread
        "initial": (int, 0),
    },
    "semiclassical": {
        "energy": (float, None),
        "weights": (_floats, (1.0,)),
        "averaged": (_bool, True),
        "window_min": (float, math.nan),
        "window_max": (float, math.nan),
        "r_start": (float, 0.0),
        "direction": (int, 1),
        "t_end": (float, 10.0),
        "n_samples": (int, 201),
    },
    "propagate": {
        "initial": (int, 0),
        "n_samples": (int, 101),
    },
    "uncertainty": {
        "width": (float, 1.0),
        "momentum": (float, 400.0),
        "center": (float, 0.0),
        "packets": (int, 1000),
        "random_grid_points": (int, 801),
    },
    "mott": {
        "ratios": (_floats, (100.0, 400.0, 1600.0, 6400.0)),
        "max_relative": (float, 0.02),
    },
    "decoupling": {
        "strengths": (_floats, (0.4, 0.2, 0.1, 0.05, 0.0)),
        "ratio": (float, 100.0),
        "bound_points": (int, 0),  # 0 skips the bound-state environment spread columns
    },
    "dirac": {
        "speeds": (_floats, (5.0, 10.0, 20.0)),
        "mass": (float, 1.0),
        "strength": (float, 0.2),
        "width": (float, 1.0),
        "q": (float, 1.0),
        "box": (float, 2 * math.pi),
        "n_points": (int, 1024),
        "half_window": (float, 7.0),
        "env_mass": (float, 1.0),
        "env_momentum": (float, 1.0),
        "n_modes": (int, 3),
        "tol": (float, 1e-7),
    },
    "ladder": {
        "kind": (_str, "oscillator"),
        "values": (_floats, None),
        "energy": (float, 20.0),
        "window_fraction": (float, 0.7),
    },
}


@dataclass(frozen=True)
class RunConfig:
    sections: dict[str, dict[str, object]]
    present: frozenset[str]
    text: str = field(repr=False, default="")

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.sections[section]

    @property
    def experiment(self) -> str:
        return self.sections["run"]["experiment"]

    @property
    def seed(self) -> int:
        return self.sections["run"]["seed"]

    @property
    def tol(self) -> float:
        return self.sections["run"]["tol"]

    @property
    def ladder(self) -> tuple[float, ...] | None:
        return self.sections["ladder"]["values"]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def with_overrides(self, **run_keys) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        for k, v in run_keys.items():
            if v is not None:
                sections["run"][k] = v
        check_invariants(sections)
        return RunConfig(sections, self.present, self.text)

    def model(self) -> CompositeModel:
        g, e, s, c = (self.sections[k] for k in ("grid", "env", "system", "coupling"))
        levels = np.asarray(s["levels"], dtype=float)
        h = np.diag(levels) + s["tunneling"] * (np.ones((len(levels),) * 2) - np.eye(len(levels)))
        return CompositeModel(
            Grid(g["r_min"], g["r_max"], g["n_points"]),
            EnvSpec(e["mass"], e["potential"], e["omega"], e["center"], e["height"], e["width"]),
            SystemSpec(h),
            CouplingSpec(c["kind"], c["strength"], c["width"], c["center"]),
        )


def parse_config(text: str) -> RunConfig:
    raw: dict[str, dict[str, object]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno)
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in raw:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            raw[section] = {}
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        if section is None:
            raise ConfigError("key outside any section", lineno)
        key, value = (p.strip() for p in stripped.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        parser = SCHEMA[section][key][0]
        try:
            raw[section][key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None

    sections = {}
    for name, keys in SCHEMA.items():
        given = raw.get(name, {})
        sections[name] = {k: given.get(k, default) for k, (_, default) in keys.items()}
    check_invariants(sections)
    return RunConfig(sections, frozenset(raw), text)


def check_invariants(sections) -> None:
    run = sections["run"]
    exp = run["experiment"]
    if exp is not None and exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    if not run["tol"] > 0:
        raise ConfigError("run.tol must be positive")
    if sections["dirac"]["tol"] <= 0:
        raise ConfigError("dirac.tol must be positive")
    values = sections["ladder"]["values"]
    if values is not None and len(values) < 3:
        raise ConfigError("ladder.values needs at least 3 rungs")
    if len(sections["mott"]["ratios"]) < 2:
        raise ConfigError("mott.ratios needs at least 2 rungs")


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
