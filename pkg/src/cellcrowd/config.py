"""Experiment configuration: TOML files with defaults, strict keys and sweep axes."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli

from .contact import UzawaParams
from .forces import ForceParams
from .geometry import (Disk, Domain, GeometryError, Obstacle, PeriodicSquare, WalledSquare,
                       n_for_density)
from .polarity import PolarityParams
from .simulator import ModelParams

OUT_ENV = "CELLCROWD_OUT"
DEFAULT_OUT = "runs"

# extra width of preset channels, so a cell can pass while keeping the
# solver's contact clearance on both sides
CHANNEL_SLACK = 0.05

PRESETS = ("none", "center", "side", "corner", "four_sides", "four_corners")

# None marks "not set"; TOML has no null so such keys are simply omitted
DEFAULTS: dict[str, Any] = {
    "n_cells": None,
    "density": None,
    "seed": 0,
    "T": 20.0,
    "dt": 0.01,
    "save_every": 10,
    "R0": 7.5,
    "activation": None,
    "relax_budget": 10_000,
    "relax_patience": 300,
    "domain": {
        "type": "square",
        "L": 200.0,
        "R": None,
        "center": None,
        "obstacles": "none",
        "obstacle_radius": 7.5,
        "obstacle_gap": None,
    },
    "polarity": {"mu": 6.2, "delta": 6.2, "D": 0.96, "Rint_po": 60.0, "c": 21.6},
    "forces": {"kappa": 1e4, "gamma": 1e-5, "Rc": 9.5, "Rint_ar": 19.0},
    "uzawa": {"h": None, "rel_tol": 1e-2, "max_iter": 100_000, "overlap_tol": 1e-9,
              "variant": "paper", "margin": 1e-2, "warm_start": True},
    "sweep": {"n_reps": 20, "base_seed": 0, "axis": []},
    "output": {"dir": None, "trajectory": False},
}
DEFAULT_N = 160

ALIASES = {
    "N": "n_cells",
    "D": "polarity.D",
    "mu": "polarity.mu",
    "delta": "polarity.delta",
    "c": "polarity.c",
    "kappa": "forces.kappa",
    "gamma": "forces.gamma",
    "Rc": "forces.Rc",
    "Rint_ar": "forces.Rint_ar",
    "obstacles": "domain.obstacles",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepAxis:
    path: str
    values: tuple


@dataclass
class ExperimentConfig:
    params: ModelParams
    domain: Domain
    tree: dict                       # fully resolved settings
    axes: list[SweepAxis] = field(default_factory=list)
    n_reps: int = 20
    base_seed: int = 0
    out_dir: Optional[str] = None
    trajectory: bool = False
    source: Optional[str] = None

    def digest(self) -> str:
        """Stable hash of the resolved settings, used to recognise finished work."""
        blob = json.dumps(self.tree, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        tree = copy.deepcopy(self.tree)
        for path, value in overrides.items():
            set_path(tree, path, value)
        return build(tree, self.source)


def obstacle_preset(name: str, shape, R0: float, radius: float = 7.5,
                    gap: Optional[float] = None) -> tuple[Obstacle, ...]:
    """Named obstacle layouts in a walled square.

    Side and corner obstacles leave a ``gap`` (default ``2 R0`` plus
    ``CHANNEL_SLACK``, room for exactly one cell) between their rim and the
    nearest wall(s).
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown obstacle preset {name!r}; choose from {', '.join(PRESETS)}")
    if name == "none":
        return ()
    if not isinstance(shape, WalledSquare):
        raise ConfigError("obstacle presets are defined for the walled square only")
    L = shape.L
    off = (2.0 * R0 + CHANNEL_SLACK if gap is None else gap) + radius
    mid = L / 2.0
    centers = {
        "center": [(mid, mid)],
        "side": [(off, mid)],
        "corner": [(off, off)],
        "four_sides": [(off, mid), (L - off, mid), (mid, off), (mid, L - off)],
        "four_corners": [(off, off), (L - off, off), (off, L - off), (L - off, L - off)],
    }[name]
    return tuple(Obstacle(c, radius) for c in centers)


def resolve_path(path: str) -> str:
    return ALIASES.get(path, path)


def set_path(tree: dict, path: str, value) -> None:
    path = resolve_path(path)
    keys = path.split(".")
    node = tree
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown parameter path {path!r}")
        node = node[k]
    if keys[-1] not in node or keys[-1] in ("sweep", "output") or path.startswith("sweep."):
        raise ConfigError(f"unknown parameter path {path!r}")
    node[keys[-1]] = value
    # N and density are alternatives; setting one clears the other
    if path == "n_cells":
        tree["density"] = None
    elif path == "density":
        tree["n_cells"] = None


def _line_of(text: Optional[str], section: str, key: str) -> str:
    if not text:
        return ""
    current = ""
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\[?\s*([^\]]+?)\s*\]\]?", s)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return f"line {no}: "
    return ""


def _merge(defaults: dict, user: dict, text: Optional[str], section: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{section}.{key}" if section else key
        if key not in defaults:
            near = [k for k in defaults if k.lower() == key.lower()]
            hint = f" (did you mean {near[0]!r}?)" if near else ""
            raise ConfigError(f"{_line_of(text, section, key)}unknown key {where!r}{hint}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{_line_of(text, section, key)}{where!r} must be a table")
            out[key] = _merge(defaults[key], value, text, where)
        else:
            out[key] = value
    return out


def _axes(tree: dict) -> list[SweepAxis]:
    axes = []
    for k, ax in enumerate(tree["sweep"]["axis"]):
        if not isinstance(ax, dict) or set(ax) - {"path", "values"} or "path" not in ax:
            raise ConfigError(f"sweep axis {k}: needs exactly the keys 'path' and 'values'")
        values = ax.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {ax['path']!r}: 'values' must be a non-empty list")
        probe = copy.deepcopy(tree)
        set_path(probe, ax["path"], values[0])
        axes.append(SweepAxis(resolve_path(ax["path"]), tuple(values)))
    return axes


def _domain(d: dict, R0: float) -> Domain:
    kind = d["type"]
    if kind == "periodic":
        shape = PeriodicSquare(float(d["L"]))
    elif kind == "square":
        shape = WalledSquare(float(d["L"]))
    elif kind == "disk":
        R = d["R"] if d["R"] is not None else d["L"] / math.sqrt(math.pi)
        center = tuple(d["center"]) if d["center"] is not None else (0.0, 0.0)
        shape = Disk(float(R), center)
    else:
        raise ConfigError(f"domain.type must be 'periodic', 'square' or 'disk', not {kind!r}")
    obs = d["obstacles"]
    if isinstance(obs, str):
        obstacles = obstacle_preset(obs, shape, R0, float(d["obstacle_radius"]),
                                    d["obstacle_gap"])
    elif isinstance(obs, list):
        try:
            obstacles = tuple(Obstacle(tuple(o["center"]), float(o.get("radius", d["obstacle_radius"])))
                              for o in obs)
        except (KeyError, TypeError, AttributeError):
            raise ConfigError("explicit obstacles need the form {center = [x, y], radius = r}")
    else:
        raise ConfigError("domain.obstacles must be a preset name or a list of obstacles")
    return Domain(shape, obstacles)


def build(tree: dict, source: Optional[str] = None) -> ExperimentConfig:
    """Validate a resolved settings tree and construct the run objects."""
    tree = copy.deepcopy(tree)
    try:
        domain = _domain(tree["domain"], float(tree["R0"]))
        if tree["n_cells"] is not None and tree["density"] is not None:
            raise ConfigError("set either n_cells or density, not both")
        if tree["density"] is not None:
            n = n_for_density(float(tree["density"]), float(tree["R0"]), domain)
        else:
            n = DEFAULT_N if tree["n_cells"] is None else tree["n_cells"]
        if not isinstance(n, int) or isinstance(n, bool):
            raise ConfigError(f"n_cells must be an integer, got {n!r}")
        params = ModelParams(
            n_cells=n, R0=float(tree["R0"]),
            forces=ForceParams(**{k: float(v) for k, v in tree["forces"].items()}),
            polarity=PolarityParams(**{k: float(v) for k, v in tree["polarity"].items()}),
            uzawa=UzawaParams(**tree["uzawa"]),
            dt=float(tree["dt"]), T=float(tree["T"]), seed=int(tree["seed"]),
            activation=tree["activation"], save_every=int(tree["save_every"]),
            relax_budget=int(tree["relax_budget"]), relax_patience=int(tree["relax_patience"]))
    except ConfigError:
        raise
    except (ValueError, TypeError, GeometryError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    sweep = tree["sweep"]
    if not isinstance(sweep["n_reps"], int) or sweep["n_reps"] < 1:
        raise ConfigError("sweep.n_reps must be an integer >= 1")
    if not isinstance(sweep["base_seed"], int) or sweep["base_seed"] < 0:
        raise ConfigError("sweep.base_seed must be a non-negative integer")
    return ExperimentConfig(
        params=params, domain=domain, tree=tree, axes=_axes(tree),
        n_reps=sweep["n_reps"], base_seed=sweep["base_seed"],
        out_dir=tree["output"]["dir"], trajectory=bool(tree["output"]["trajectory"]),
        source=source)


def parse_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    try:
        user = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{source or 'config'}: {e}") from e
    tree = _merge(DEFAULTS, user, text)
    _axes(tree)
    return build(tree, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return parse_config(path.read_text(), str(path))
    except ConfigError as e:
        msg = str(e)
        raise ConfigError(msg if msg.startswith(str(path)) else f"{path}: {msg}") from e


def output_root(cli_value: Optional[str] = None, cfg: Optional[ExperimentConfig] = None) -> Path:
    """Command line, then config file, then the environment, then ``./runs``."""
    for v in (cli_value, cfg.out_dir if cfg else None, os.environ.get(OUT_ENV)):
        if v:
            return Path(v)
    return Path(DEFAULT_OUT)
