"""Glue between a :class:`~elsg.config.RunConfig` and the library calls."""

from __future__ import annotations

import math

import numpy as np

from .config import RunConfig
from .controller import computed_torque_nominal
from .errors import ConfigurationError
from .sim import run_closed_loop
from .synthesis import run_algorithm1, sampling_bound


def synthesize(rc: RunConfig):
    """Run the parameter synthesis for ``rc``.

    Returns the report and a dict with the sampling margin data (eta(T),
    the largest admissible T and the constants c1..c5) when the configured
    mode is ``zcbf-sampled`` and the chosen eta_bar is positive.
    """
    model = rc.model()
    alpha, beta = rc.alpha_beta()
    b = rc["barrier"]
    rep = run_algorithm1(model, rc.spec(), alpha, beta, b["delta0"], b["eta0"], rc.policy(),
                         grid=int(rc["synthesis"]["grid"]))
    extra = {}
    sim = rc["simulation"]
    if sim["mode"] == "zcbf-sampled" and rep.chosen.eta_bar > 0:
        bound, consts = sampling_bound(model, rep.chosen, rc.spec(), lip_factor=rc["synthesis"]["lip_factor"])
        T = float(sim["T"])
        extra = {
            "T": T,
            "eta_of_T": float(bound.eta(T)),
            "T_max": float(bound.T_of(rep.chosen.eta_bar)),
            "sampling_ok": bool(bound.eta(T) <= rep.chosen.eta_bar),
            "constants": bound.to_dict(),
            "lip_factor": rc["synthesis"]["lip_factor"],
        }
    return rep, extra


def nominal_law(rc: RunConfig):
    base = rc.base_model()
    ref = rc.reference()
    return lambda t, q, v: computed_torque_nominal(base, q, v, t, ref)


def simulate(rc: RunConfig, cfg=None, mode=None, duration=None, bound=None):
    """Closed-loop run described by ``rc``; ``cfg`` overrides stored parameters."""
    sim = rc["simulation"]
    mode = mode or sim["mode"]
    model = rc.model()
    spec = rc.spec()
    if mode != "nominal-only":
        cfg = cfg or rc.barrier_params()
        if cfg is None:
            raise ConfigurationError("no barrier parameters: run `elsg synth` first or fill the params section")
        if mode == "zcbf-sampled" and bound is None:
            bound, _ = sampling_bound(model, cfg, spec, lip_factor=rc["synthesis"]["lip_factor"])
    else:
        cfg = cfg or rc.barrier_params()
    return run_closed_loop(model, spec, mode, float(sim["T"]), float(sim["duration"] if duration is None else duration),
                           int(sim["substeps"]), rc.x0(), nominal_law(rc), cfg=cfg, bound=bound,
                           meta={"scenario": rc.scenario})
