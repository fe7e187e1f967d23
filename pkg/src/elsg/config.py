"""Run configuration: YAML file <-> validated sections <-> library objects.

A file may name a built-in ``scenario`` and override any of its fields.
Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .barrier import BarrierConfig, ConstraintSpec
from .controller import SinusoidReference
from .dynamics import Planar2Dof, QuadraticPlaneMap, TransformedSystem
from .errors import ConfigurationError
from .sim import MODES
from .synthesis import SelectionPolicy

PI = math.pi

# Section -> allowed keys with defaults (None means "unset").
SCHEMA = {
    "model": {"type": "planar2dof", "l1": 1.0, "l2": 1.0, "m1": 1.0, "m2": 1.0,
              "F_diag": [0.001, 0.001], "gravity": False, "g": 9.81, "mass_mode": "uniform-rod"},
    "transform": {"type": "quadratic-plane", "P": [[0.5, 0.0], [0.0, 0.5]], "r1": [5.0, 0.0],
                  "r2": [0.1, 1.0], "seed": [0.8, 2.0]},
    "constraints": {"q_min": None, "q_max": None, "v_max": None, "u_max": None},
    "barrier": {"alpha": "atan", "beta": "cubic", "delta0": 0.1, "eta0": 0.0},
    "synthesis": {"grid": 200, "gamma": None, "gamma_fraction": 1.0, "nu": None, "nu_rule": "midpoint-log",
                  "delta": None, "eta_bar": None, "epsilon": None, "epsilon_rule": "balanced",
                  "epsilon_fraction": 1.0, "lip_factor": 1.0},
    "params": {"gamma": None, "nu": None, "delta": None, "eta_bar": None},
    "simulation": {"mode": "zcbf-sampled", "T": 0.001, "duration": 20.0, "substeps": 10,
                   "q0": None, "v0": None},
    "reference": {"amp": None, "omega": None, "offset": None},
    "output": {"report": "synth_report.yaml", "trace": "trace.csv", "plots_dir": None,
               "verify_report": None},
}
TOP_KEYS = {"scenario", "params_file"} | set(SCHEMA)

_S1 = {
    "constraints": {"q_min": [-PI / 2, PI / 2], "q_max": [PI / 2, 5 * PI / 6], "v_max": [1.5, 1.5],
                    "u_max": [18.0, 10.0]},
    "reference": {"amp": [3.4708, 2.6236], "omega": [1.3, 1.3], "offset": [0.0, 2.0944]},
    "simulation": {"q0": [0.0, 2.0944], "v0": [0.0, 0.0]},
}
SCENARIOS = {
    "s1-continuous": {**_S1, "barrier": {"delta0": 0.1, "eta0": 0.0},
                      "simulation": {**_S1["simulation"], "mode": "zcbf-continuous"}},
    # the sampled variant fixes gamma: larger gammas raise eta(T) above eta0 at T = 1 ms
    "s1-sampled": {**_S1, "barrier": {"delta0": 0.01, "eta0": 7.0}, "synthesis": {"gamma": 0.52},
                   "simulation": {**_S1["simulation"], "mode": "zcbf-sampled"}},
    "s2-nonlinear": {
        "transform": {"type": "quadratic-plane"},
        "constraints": {"q_min": [8.0, 1.7], "q_max": [12.0, 2.5], "v_max": [1.5, 1.5], "u_max": [18.0, 10.0]},
        "barrier": {"delta0": 0.01, "eta0": 8.0},
        "reference": {"amp": [0.5, 0.5], "omega": [0.5, 1.0], "offset": [0.8, 2.0]},
        # eta(1 ms) exceeds eta0 for this model; 0.2 ms keeps eta(T) below it
        "simulation": {"mode": "zcbf-sampled", "T": 2e-4, "substeps": 2, "q0": [0.8, 2.0], "v0": [0.0, 0.0]},
    },
}


def _merge(dst, src, where=""):
    for key, val in src.items():
        if isinstance(val, dict) and isinstance(dst.get(key), dict):
            _merge(dst[key], val, f"{where}{key}.")
        else:
            dst[key] = copy.deepcopy(val)
    return dst


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


@dataclass
class RunConfig:
    """Validated configuration. ``sections`` maps section name -> dict."""

    sections: dict
    scenario: str = None
    params_file: str = None
    source: str = None
    _explicit: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data, source=None) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("configuration root must be a mapping")
        unknown = set(data) - TOP_KEYS
        if unknown:
            raise ConfigurationError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
        scen = data.get("scenario")
        if scen is not None and scen not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {scen!r}; choose from {sorted(SCENARIOS)}")
        has_transform = "transform" in data or (scen is not None and "transform" in SCENARIOS[scen])
        sections = {k: dict(v) for k, v in copy.deepcopy(SCHEMA).items()}
        if not has_transform:
            sections.pop("transform")
        if scen is not None:
            _merge(sections, SCENARIOS[scen])
        for sec in SCHEMA:
            if sec not in data:
                continue
            body = data[sec]
            if body is None:
                body = {}
            if not isinstance(body, dict):
                raise ConfigurationError(f"section '{sec}' must be a mapping")
            bad = set(body) - set(SCHEMA[sec])
            if bad:
                raise ConfigurationError(f"unknown key(s) in section '{sec}': {', '.join(sorted(bad))}")
            sections.setdefault(sec, dict(SCHEMA[sec]))
            _merge(sections[sec], body)
        cfg = cls(sections, scen, data.get("params_file"), source, copy.deepcopy(data))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigurationError(f"{path}: malformed YAML{where}: {getattr(exc, 'problem', exc)}") from exc
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from exc
        return cls.from_dict(data, source=os.fspath(path))

    def to_dict(self):
        """Fully resolved mapping; ``from_dict(to_dict())`` reproduces it."""
        out = {}
        if self.params_file is not None:
            out["params_file"] = self.params_file
        for sec, body in self.sections.items():
            out[sec] = {k: _plain(v) for k, v in body.items()}
        return out

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def __getitem__(self, sec):
        return self.sections[sec]

    def validate(self):
        c = self.sections["constraints"]
        missing = [k for k, v in c.items() if v is None]
        if missing:
            raise ConfigurationError(f"constraints: missing {', '.join(missing)}")
        self.spec()  # shape and sign checks
        if self.sections["model"]["type"] != "planar2dof":
            raise ConfigurationError("model.type: only 'planar2dof' is supported")
        if "transform" in self.sections and self.sections["transform"]["type"] != "quadratic-plane":
            raise ConfigurationError("transform.type: only 'quadratic-plane' is supported")
        sim = self.sections["simulation"]
        if sim["mode"] not in MODES:
            raise ConfigurationError(f"simulation.mode must be one of {MODES}")
        for key in ("T", "duration"):
            if not isinstance(sim[key], (int, float)) or sim[key] < 0:
                raise ConfigurationError(f"simulation.{key} must be a nonnegative number")
        if sim["T"] <= 0 or int(sim["substeps"]) < 1:
            raise ConfigurationError("simulation: need T > 0 and substeps >= 1")
        b = self.sections["barrier"]
        for key in ("delta0", "eta0"):
            if not isinstance(b[key], (int, float)) or b[key] < 0:
                raise ConfigurationError(f"barrier.{key} must be a nonnegative number")
        self.policy()
        self.alpha_beta()

    # builders

    def spec(self) -> ConstraintSpec:
        c = self.sections["constraints"]
        try:
            return ConstraintSpec(c["q_min"], c["q_max"], c["v_max"], c["u_max"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"constraints: {exc}") from exc

    def alpha_beta(self):
        from .classk import ClassKFn

        b = self.sections["barrier"]
        return ClassKFn.parse(b["alpha"]), ClassKFn.parse(b["beta"])

    def base_model(self) -> Planar2Dof:
        m = self.sections["model"]
        return Planar2Dof(l1=m["l1"], l2=m["l2"], m1=m["m1"], m2=m["m2"], F_diag=tuple(m["F_diag"]),
                          gravity=bool(m["gravity"]), g=m["g"], mass_mode=m["mass_mode"])

    def model(self):
        base = self.base_model()
        tr = self.sections.get("transform")
        if tr is None:
            return base
        cmap = QuadraticPlaneMap(P=tuple(map(tuple, np.asarray(tr["P"], float).reshape(2, 2))),
                                 r1=tuple(tr["r1"]), r2=tuple(tr["r2"]))
        return TransformedSystem(base, cmap, seed=tr["seed"])

    def policy(self) -> SelectionPolicy:
        s = self.sections["synthesis"]
        try:
            return SelectionPolicy(gamma=s["gamma"], gamma_fraction=s["gamma_fraction"], nu=s["nu"],
                                   nu_rule=s["nu_rule"], delta=s["delta"], eta_bar=s["eta_bar"],
                                   epsilon=s["epsilon"], epsilon_rule=s["epsilon_rule"],
                                   epsilon_fraction=s["epsilon_fraction"])
        except TypeError as exc:
            raise ConfigurationError(f"synthesis: {exc}") from exc

    def reference(self) -> SinusoidReference:
        r = self.sections["reference"]
        if any(v is None for v in r.values()):
            raise ConfigurationError("reference: amp, omega and offset are required")
        return SinusoidReference(tuple(r["amp"]), tuple(r["omega"]), tuple(r["offset"]))

    def x0(self):
        s = self.sections["simulation"]
        if s["q0"] is None:
            q0 = self.reference()(0.0)[0]
        else:
            q0 = np.asarray(s["q0"], float)
        v0 = np.zeros_like(q0) if s["v0"] is None else np.asarray(s["v0"], float)
        return q0, v0

    def barrier_params(self, base_dir=None):
        """Parameters from the ``params`` section, ``params_file`` or the report file.

        Returns None when none of them provides a full set.
        """
        p = self.sections["params"]
        alpha, beta = self.alpha_beta()
        if all(p[k] is not None for k in ("gamma", "nu", "delta", "eta_bar")):
            return BarrierConfig(alpha, beta, p["gamma"], p["nu"], p["delta"], p["eta_bar"])
        for path in (self.params_file, self.sections["output"]["report"]):
            if path is None:
                continue
            full = path if base_dir is None or os.path.isabs(path) else os.path.join(base_dir, path)
            if os.path.exists(full):
                with open(full) as fh:
                    rep = yaml.safe_load(fh) or {}
                q = rep.get("params", {})
                try:
                    return BarrierConfig(q.get("alpha", alpha), q.get("beta", beta), q["gamma"], q["nu"],
                                         q["delta"], q["eta_bar"])
                except KeyError as exc:
                    raise ConfigurationError(f"{full}: params section lacks {exc}") from exc
        return None
