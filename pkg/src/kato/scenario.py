"""Experiment configuration files (TOML) and the scenarios they describe.

A config holds a ``[scenario]`` table (or a path to a TOML file holding one),
one table named after the command with its parameters, and an optional
``[checks]`` table bounding the metrics the command reports::

    [checks]
    slope_commutator = { min = 0.8, max = 1.2 }

Validation happens before any computation.
"""
from dataclasses import dataclass, field as dc_field
import hashlib
from pathlib import Path
from typing import Optional

import tomli

from . import symbols as S
from .errors import ConfigInvalid

OBSTACLES = ("disk", "two_disks", "ellipse", "kidney", "cavity", "none")
METRICS = ("flat", "diagonal", "conformal_bump")
POTENTIALS = ("constant", "quadratic")


@dataclass
class Scenario:
    name: str
    field: S.SymbolField
    obstacle: Optional[S.Obstacle]
    spec: dict = dc_field(default_factory=dict)

    @property
    def R0(self):
        return self.obstacle.R0 if self.obstacle is not None else self.field.R0


@dataclass
class ExperimentConfig:
    command: str
    params: dict
    scenario: dict
    checks: dict
    seed: int = 0
    path: Optional[Path] = None
    digest: str = ""

    def get(self, key, default=None):
        return self.params.get(key, default)


def _number(tab, key, default, lo=None, hi=None, where="scenario"):
    v = tab.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalid(f"{where}.{key} must be a number, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigInvalid(f"{where}.{key} = {v} outside [{lo}, {hi}]")
    return float(v)


def validate_scenario(spec):
    spec = dict(spec)
    obst = spec.setdefault("obstacle", "disk")
    if obst not in OBSTACLES:
        raise ConfigInvalid(f"scenario.obstacle must be one of {OBSTACLES}, got {obst!r}")
    metric = spec.setdefault("metric", "flat")
    if metric not in METRICS:
        raise ConfigInvalid(f"scenario.metric must be one of {METRICS}, got {metric!r}")
    pot = spec.setdefault("potential", "constant")
    if pot not in POTENTIALS:
        raise ConfigInvalid(f"scenario.potential must be one of {POTENTIALS}, got {pot!r}")
    spec.setdefault("name", f"{obst}-{metric}")
    _number(spec, "radius", 1.0, lo=1e-6)
    _number(spec, "separation", 4.0, lo=0.0)
    _number(spec, "V0", 1.0, lo=0.0)
    _number(spec, "amplitude", 0.1, lo=-0.9, hi=10.0)
    _number(spec, "width", 1.0, lo=1e-6)
    if obst == "two_disks" and spec.get("separation", 4.0) <= 2 * spec.get("radius", 1.0):
        raise ConfigInvalid("two_disks: separation must exceed the diameter")
    diag = spec.get("diag", [1.0, 1.0])
    if metric == "diagonal" and (len(diag) != 2 or min(diag) <= 0):
        raise ConfigInvalid("scenario.diag must be two positive numbers")
    return spec


def build_scenario(spec):
    """Field and obstacle described by a validated scenario table."""
    spec = validate_scenario(spec)
    V, gV = S.potential(spec["potential"], float(spec.get("V0", 1.0)))
    radius = float(spec.get("radius", 1.0))
    obst = spec["obstacle"]
    if obst == "disk":
        ob = S.disk(radius)
    elif obst == "two_disks":
        ob = S.two_disks(float(spec.get("separation", 4.0)), radius)
    elif obst == "ellipse":
        ob = S.ellipse(float(spec.get("semi_x", 2.0)), float(spec.get("semi_y", 1.0)))
    elif obst == "kidney":
        ob = S.kidney(float(spec.get("dent", 0.3)), float(spec.get("sharpness", 6.0)))
    elif obst == "cavity":
        ob = S.cavity(radius)
    else:
        ob = None
    R0 = ob.R0 if ob is not None else float(spec.get("R0", 1.0))
    metric = spec["metric"]
    if metric == "flat":
        fld = S.flat(2, V, gV, R0=R0)
    elif metric == "diagonal":
        fld = S.diagonal(spec.get("diag", [1.0, 1.0]), V, gV, R0=R0)
    else:
        fld = S.conformal_bump(2, float(spec.get("amplitude", 0.1)),
                               float(spec.get("width", 1.0)), V, gV, R0=R0)
    return Scenario(spec["name"], fld, ob, spec)


def load_config(path, command=None):
    """Read and validate an experiment config.  ``command`` (if given) must
    match the file's ``command`` key when that key is present."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file {str(path)!r} does not exist")
    raw = path.read_bytes()
    try:
        data = tomli.loads(raw.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    cmd = data.get("command", command)
    if command is not None and cmd != command:
        raise ConfigInvalid(f"config is for {cmd!r}, not {command!r}")
    if cmd is None:
        raise ConfigInvalid("no command given")
    scen = data.get("scenario", {})
    if isinstance(scen, str):
        ref = (path.parent / scen).resolve()
        if not ref.is_file():
            raise ConfigInvalid(f"scenario file {str(ref)!r} does not exist")
        scen = tomli.loads(ref.read_text()).get("scenario", {})
        raw += ref.read_bytes()
    if not isinstance(scen, dict):
        raise ConfigInvalid("scenario must be a table or a file path")
    scen = validate_scenario(scen)
    params = data.get(cmd, {})
    if not isinstance(params, dict):
        raise ConfigInvalid(f"[{cmd}] must be a table")
    checks = data.get("checks", {})
    for name, bound in checks.items():
        if not isinstance(bound, dict) or not set(bound) <= {"min", "max"} or not bound:
            raise ConfigInvalid(f"checks.{name} must be a table with min and/or max")
        for v in bound.values():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigInvalid(f"checks.{name} bounds must be numbers")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigInvalid("seed must be a nonnegative integer")
    return ExperimentConfig(cmd, params, scen, checks, seed, path,
                            hashlib.sha256(raw).hexdigest())
