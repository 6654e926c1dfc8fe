"""Experiment configuration: a YAML tree merged over built-in defaults."""

import copy
from dataclasses import dataclass
import math

import yaml

from ..fem.navier_stokes import FluidProps
from ..geometry import GeometrySpec, PolylineGeometry


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "geometry": {
        "type": "stenosis",
        "B0": 0.3,
        "c": 3.0,
        "sigma_g": 0.6,
        "A": 0.18,
        "x_min": 0.0,
        "x_max": 6.0,
        "path": None,
    },
    "fluid": {"rho0": 1060.0, "nu": 2.83e-6},
    # x0 x1 y0 y1 in cm; y-range leaves a margin of B0/3 outside the walls
    "scan_region": [1.5, 4.5, -0.4, 0.4],
    "gamma": {"side": "top", "samples": 200, "quad_order": 5},
    "meshes": {
        "coarse": {"h": 0.126, "target_elements": 368},
        "medium": {"h": 0.09, "target_elements": 766},
        "fine": {"h": 0.0653, "target_elements": 1590},
    },
    "truth_mesh": "fine",
    "sweep": {
        "Re": [100, 500, 1000],
        "kappa": [0.0, 0.05, 0.10, 0.15, 0.20],
        "vpd": [3, 9, 15, 28],
        "mesh": ["coarse", "medium", "fine"],
        "seeds": 1,
    },
    "master_seed": 20240611,
    "solver": {"tol": 1e-12, "continuation": [100.0, 300.0], "max_iter": 40},
    "optimizer": {
        "gtol_rel": 1e-8,
        "max_iter": 100,
        "armijo_c1": 1e-4,
        "backtrack": 0.5,
        "max_backtracks": 30,
        "initial_scaling": "gauss-newton",
        "first_step_frac": 0.25,
        "box_factor": 4.0,
    },
    "psf": {"order": 8, "curved_subdiv": 4},
    "output": {"dir": "results", "artifacts": False},
    "workers": 1,
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "meshes":
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Config:
    """Resolved configuration (``raw`` holds the full tree that is echoed to outputs)."""

    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def geometry(self):
        return build_geometry(self.raw["geometry"])

    @property
    def props(self):
        f = self.raw["fluid"]
        return FluidProps(rho0=float(f["rho0"]), nu=float(f["nu"]))

    @property
    def region(self):
        return tuple(float(v) for v in self.raw["scan_region"])

    def mesh_h(self, mesh_id):
        try:
            return float(self.raw["meshes"][mesh_id]["h"])
        except KeyError:
            raise ConfigError(f"unknown mesh id {mesh_id!r}") from None

    def dump(self):
        return yaml.safe_dump(self.raw, sort_keys=True)


def build_geometry(g):
    kind = g.get("type", "stenosis")
    if kind == "stenosis":
        keys = ("B0", "c", "sigma_g", "A", "x_min", "x_max")
        return GeometrySpec(**{k: float(g[k]) for k in keys})
    if kind == "polyline":
        if not g.get("path"):
            raise ConfigError("polyline geometry needs a 'path'")
        return PolylineGeometry.read(g["path"])
    raise ConfigError(f"unknown geometry type {kind!r}")


def validate(raw):
    sw = raw["sweep"]
    for key in ("Re", "kappa", "vpd", "mesh"):
        if not isinstance(sw[key], list) or not sw[key]:
            raise ConfigError(f"sweep.{key} must be a non-empty list")
    if any(not (float(r) > 0) for r in sw["Re"]):
        raise ConfigError("Reynolds numbers must be positive")
    if any(not (0.0 <= float(k) <= 1.0) for k in sw["kappa"]):
        raise ConfigError("kappa values must lie in [0, 1]")
    if any(not (float(v) > 0) for v in sw["vpd"]):
        raise ConfigError("vpd values must be positive")
    if not (isinstance(sw["seeds"], int) and sw["seeds"] >= 1):
        raise ConfigError("sweep.seeds must be an integer >= 1")
    meshes = raw["meshes"]
    for m in sw["mesh"] + [raw["truth_mesh"]]:
        if m not in meshes:
            raise ConfigError(f"mesh id {m!r} is not defined under 'meshes'")
        h = meshes[m].get("h")
        if h is None or not float(h) > 0:
            raise ConfigError(f"mesh {m!r} needs a positive 'h'")
    reg = raw["scan_region"]
    if len(reg) != 4 or not (reg[1] > reg[0] and reg[3] > reg[2]):
        raise ConfigError(f"scan_region must be [x0, x1, y0, y1], got {reg}")
    if not (isinstance(raw["workers"], int) and raw["workers"] >= 1):
        raise ConfigError("workers must be an integer >= 1")
    if not math.isfinite(float(raw["solver"]["tol"])) or raw["solver"]["tol"] <= 0:
        raise ConfigError("solver.tol must be positive")
    try:
        build_geometry(raw["geometry"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bad geometry: {exc}") from exc


def resolve(overrides=None):
    raw = _merge(DEFAULTS, overrides or {})
    validate(raw)
    return Config(raw)


def load_config(path=None, **overrides):
    """Read a YAML config (or none) and apply keyword overrides at the top level."""
    tree = {}
    if path is not None:
        try:
            with open(path) as fh:
                tree = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a mapping")
    tree = _merge(DEFAULTS, tree)
    for k, v in overrides.items():
        if v is not None:
            tree = _merge(tree, {k: v})
    validate(tree)
    return Config(tree)
