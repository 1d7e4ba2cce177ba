"""JSON run configuration: schema, dataclasses and object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from . import grp_solver as gs
from . import objective as ob
from . import reference_geometry as rg
from . import riemann_fan as rf
from . import sensitivity as se
from . import system_model as sm
from .errors import ConfigError

_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_POLY = {"type": "array", "items": _VEC, "minItems": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["model", "geometry", "admissibility", "control", "grid"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "properties": {
                "name": {"enum": ["linear_diag", "burgers_pair", "p_system"]},
                "params": {"type": "object"},
                "box": {"type": "object", "additionalProperties": False,
                        "properties": {"center": _VEC, "radius": _POS}},
            },
        },
        "geometry": {
            "type": "object", "required": ["T", "ell", "eps"], "additionalProperties": False,
            "properties": {"T": _POS, "ell": _POS, "eps": _POS},
        },
        "admissibility": {
            "type": "object", "required": ["M0", "M1"], "additionalProperties": False,
            "properties": {"M0": _POS, "M1": _POS},
        },
        "control": {
            "type": "object", "required": ["u_l", "u_r", "x0"], "additionalProperties": False,
            "properties": {
                "u_l": _POLY, "u_r": _POLY, "x0": {"type": "number"},
                "nominal": {"type": "object", "required": ["u_L", "u_R"],
                            "additionalProperties": False,
                            "properties": {"u_L": _VEC, "u_R": _VEC}},
            },
        },
        "grid": {
            "type": "object", "required": ["M", "P"], "additionalProperties": False,
            "properties": {"M": {"type": "integer", "minimum": 4},
                           "P": {"type": "integer", "minimum": 4}},
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"inner_tol": _POS, "outer_tol": _POS, "newton_tol": _POS,
                           "inner_max": {"type": "integer", "minimum": 1},
                           "outer_max": {"type": "integer", "minimum": 1}},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
        "seed": {"type": "integer"},
        "sensitivity": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "variations": {"type": "array", "items": {
                    "type": "object", "required": ["name"], "additionalProperties": False,
                    "properties": {"name": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
                                   "du_l": _POLY, "du_r": _POLY, "dx0": {"type": "number"}}}},
                "t_query": {"type": "array", "items": _POS},
                "epsilons": {"type": "array", "items": _POS},
                "n_points": {"type": "integer", "minimum": 1},
            },
        },
        "objective": {
            "type": "object", "required": ["a", "b"], "additionalProperties": False,
            "properties": {
                "a": {"type": "number"}, "b": {"type": "number"},
                "target": {"type": "object", "required": ["nodes", "values"],
                           "additionalProperties": False,
                           "properties": {"nodes": _VEC, "values": _POLY}},
                "epsilons": {"type": "array", "items": _POS},
            },
        },
        "convergence": {
            "type": "object", "additionalProperties": False,
            "properties": {"levels": {"type": "integer"}},
        },
    },
}


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


@dataclass
class RunConfig:
    raw: dict
    model_name: str
    model_params: dict
    T: float
    ell: float
    eps: float
    M0: float
    M1: float
    u_l: list
    u_r: list
    x0: float
    M: int
    P: int
    inner_tol: float = 1e-10
    outer_tol: float = 1e-8
    newton_tol: float = 1e-10
    inner_max: int = 200
    outer_max: int = 50
    out_dir: str = "out"
    seed: int = 0
    nominal: Optional[tuple] = None
    box_center: Optional[list] = None
    box_radius: Optional[float] = None
    sensitivity: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)

    # ------------------------------------------------------------------
    def control(self):
        nominal = None
        if self.nominal is not None:
            nominal = (tuple(self.nominal[0]), tuple(self.nominal[1]))
        return rf.Control(polynomial(self.u_l), polynomial(self.u_r), self.x0, self.M0,
                          self.M1, self.eps, self.ell, nominal)

    def model(self):
        ctrl = self.control()
        uL, uR = ctrl.nominal_pair()
        center, radius = sm.default_working_box(uL, uR, self.M0, self.M1, self.eps, self.ell)
        if self.box_center is not None:
            center = np.asarray(self.box_center, dtype=float)
        if self.box_radius is not None:
            radius = self.box_radius
        return sm.builtin_model(self.model_name, self.model_params, box_center=center,
                                box_radius=radius)

    def params(self):
        return gs.SolverParams(inner_tol=self.inner_tol, inner_max=self.inner_max,
                               outer_tol=self.outer_tol, outer_max=self.outer_max,
                               newton_tol=self.newton_tol)

    def domain(self, model, fan, level=0):
        f = 2 ** level
        return rg.build_domain(model, fan, self.T, self.ell, self.M * f, self.P * f)

    def variations(self):
        n = len(self.u_l)
        zero = [[0.0] for _ in range(n)]
        out = []
        for v in self.sensitivity.get("variations", []):
            out.append((v["name"], se.ControlVariation(polynomial(v.get("du_l", zero)),
                                                       polynomial(v.get("du_r", zero)),
                                                       float(v.get("dx0", 0.0)))))
        return out

    def tracking_objective(self):
        o = self.objective
        n = len(self.u_l)
        if "target" in o:
            target = ob.PiecewiseTarget.linear_interpolant(o["target"]["nodes"],
                                                           o["target"]["values"])
        else:
            target = ob.PiecewiseTarget.constant(np.zeros(n))
        return ob.squared_tracking(o["a"], o["b"], target)


def polynomial(coeffs):
    """Coefficients per component (ascending powers), padded to equal degree."""
    deg = max(len(c) for c in coeffs)
    arr = np.zeros((len(coeffs), deg))
    for i, c in enumerate(coeffs):
        arr[i, :len(c)] = c
    return rf.PolynomialPiece(arr)


def parse_config(raw):
    """Validate a config dict and return a :class:`RunConfig`."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)
    ctl = raw["control"]
    n = len(ctl["u_l"])
    if len(ctl["u_r"]) != n:
        raise ConfigError("/control/u_r", f"expected {n} components")
    geo = raw["geometry"]
    if abs(ctl["x0"]) >= geo["eps"]:
        raise ConfigError("/control/x0", f"control.x0: |x0| = {abs(ctl['x0'])} must be < eps = {geo['eps']}")
    if geo["eps"] > geo["ell"] / 6:
        raise ConfigError("/geometry/eps", "eps must not exceed ell / 6")
    tol = raw.get("tolerances", {})
    nominal = None
    if "nominal" in ctl:
        nominal = (ctl["nominal"]["u_L"], ctl["nominal"]["u_R"])
    box = raw["model"].get("box", {})
    conv = raw.get("convergence", {})
    if "levels" in conv and conv["levels"] < 3:
        raise ConfigError("/convergence/levels", "a convergence study needs at least 3 levels")
    obj = raw.get("objective", {})
    if obj and not obj["a"] < obj["b"]:
        raise ConfigError("/objective/b", "need a < b")
    return RunConfig(
        raw=raw, model_name=raw["model"]["name"], model_params=raw["model"].get("params", {}),
        T=geo["T"], ell=geo["ell"], eps=geo["eps"],
        M0=raw["admissibility"]["M0"], M1=raw["admissibility"]["M1"],
        u_l=ctl["u_l"], u_r=ctl["u_r"], x0=float(ctl["x0"]),
        M=raw["grid"]["M"], P=raw["grid"]["P"],
        inner_tol=tol.get("inner_tol", 1e-10), outer_tol=tol.get("outer_tol", 1e-8),
        newton_tol=tol.get("newton_tol", 1e-10), inner_max=tol.get("inner_max", 200),
        outer_max=tol.get("outer_max", 50),
        out_dir=raw.get("output", {}).get("directory", "out"), seed=raw.get("seed", 0),
        nominal=nominal, box_center=box.get("center"), box_radius=box.get("radius"),
        sensitivity=raw.get("sensitivity", {}), objective=obj, convergence=conv)


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}")
    for pointer, value in (overrides or {}).items():
        node = raw
        keys = pointer.strip("/").split("/")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return parse_config(raw)
