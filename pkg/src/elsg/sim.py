"""Closed-loop simulation with a zero-order hold and safety monitoring.

The plant is integrated with classical RK4, ``substeps`` steps per hold
interval of length ``T``. Transformed models are integrated in their base
coordinates and mapped to barrier coordinates for control and monitoring.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .barrier import BarrierConfig, ConstraintSpec, Region, b_low, b_up, classify_regions, h_low, h_up, in_H
from .controller import ZcbfController, sampled_controller
from .errors import ConfigurationError

MODES = ("nominal-only", "zcbf-continuous", "zcbf-sampled")
FLAG_Q, FLAG_V, FLAG_U = 1, 2, 4


@dataclass
class SafetyFlags:
    """Worst violation magnitudes of the position, velocity and input boxes."""

    q: float = 0.0
    v: float = 0.0
    u: float = 0.0

    @property
    def mask(self) -> int:
        return (FLAG_Q if self.q > 0 else 0) | (FLAG_V if self.v > 0 else 0) | (FLAG_U if self.u > 0 else 0)

    @property
    def any(self) -> bool:
        return self.mask != 0


def violation_magnitudes(q, v, u, spec: ConstraintSpec):
    """Array ``(..., 3)`` of box violations; zero on the closed boxes."""
    q, v, u = (np.asarray(x, dtype=float) for x in (q, v, u))
    dq = np.max(np.maximum(np.maximum(q - spec.q_max, spec.q_min - q), 0.0), axis=-1)
    dv = np.max(np.maximum(np.abs(v) - spec.v_max, 0.0), axis=-1)
    du = np.max(np.maximum(np.abs(u) - spec.u_max, 0.0), axis=-1)
    return np.stack([dq, dv, du], axis=-1)


def monitor_safety(q, v, u, spec: ConstraintSpec) -> SafetyFlags:
    return SafetyFlags(*(float(x) for x in violation_magnitudes(q, v, u, spec)))


def _masks(viol):
    return ((viol[..., 0] > 0) * FLAG_Q + (viol[..., 1] > 0) * FLAG_V + (viol[..., 2] > 0) * FLAG_U).astype(int)


@dataclass
class SimTrace:
    """Per-tick records plus substep-level safety summaries.

    ``flags`` are computed from the stored record state. ``substep_viol``
    holds, for each hold interval, the worst (Q, V, U) violation over the
    substep states inside it; ``substep_exits`` counts substep states
    outside H^delta (zcbf modes only).
    """

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    b_up: np.ndarray
    b_low: np.ndarray
    regions: np.ndarray
    qp_status: list
    flags: np.ndarray
    substep_viol: np.ndarray
    substep_exits: int = 0
    n_fallback: int = 0
    aborted: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        zcbf = self.meta.get("mode", "").startswith("zcbf")
        return self.aborted or (zcbf and (self.substep_exits > 0 or self.worst().max() > 0))

    def worst(self):
        """Worst (Q, V, U) violation over all records and substeps."""
        rec = violation_magnitudes(self.q, self.v, self.u, self.meta["spec"])
        w = np.max(rec, axis=0)
        if self.substep_viol.size:
            w = np.maximum(w, np.max(self.substep_viol, axis=0))
        return w

    def header(self):
        n, m = self.q.shape[1], self.u.shape[1]
        return (["t"] + [f"q{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
                + [f"u{j + 1}" for j in range(m)] + [f"bup{i + 1}" for i in range(n)]
                + [f"blow{i + 1}" for i in range(n)] + [f"region{i + 1}" for i in range(n)]
                + ["qp_status", "flags"])

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        fmt = lambda x: format(float(x), ".17g")
        for k in range(len(self.t)):
            regs = [Region(int(r)).name if r > 0 else "OUT" for r in self.regions[k]]
            w.writerow([fmt(self.t[k])] + [fmt(x) for x in self.q[k]] + [fmt(x) for x in self.v[k]]
                       + [fmt(x) for x in self.u[k]] + [fmt(x) for x in self.b_up[k]]
                       + [fmt(x) for x in self.b_low[k]] + regs + [self.qp_status[k], int(self.flags[k])])
        return buf.getvalue()

    def to_csv(self, path):
        atomic_write(path, self.csv_text())


def atomic_write(path, text: str):
    """Write through a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rk4(f, x, u, h):
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_closed_loop(model, spec: ConstraintSpec, mode: str, T: float, duration: float, substeps: int,
                    x0, nominal, cfg: BarrierConfig = None, bound=None, controller=None,
                    perturbation=None, meta=None) -> SimTrace:
    """Simulate the closed loop.

    Args:
        model: model in barrier coordinates (``model.base`` is integrated).
        spec: constraint boxes.
        mode: ``nominal-only``, ``zcbf-continuous`` or ``zcbf-sampled``.
        T: hold period in seconds.
        duration: horizon in seconds (rounded to a whole number of periods).
        substeps: RK4 steps per hold period.
        x0: pair ``(q0, v0)`` in base coordinates.
        nominal: ``nominal(t, q_base, v_base) -> u_nom``.
        cfg: barrier parameters (zcbf modes).
        bound: :class:`~elsg.synthesis.SamplingBound` for ``zcbf-sampled``.
        controller: optional prebuilt :class:`ZcbfController` overriding the
            one derived from ``mode``.
        perturbation: optional ``perturbation(t, q_base, v_base) -> accel``
            added to the base acceleration (bounded-disturbance hook).
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if T <= 0 or substeps < 1 or duration < 0:
        raise ConfigurationError("need T > 0, substeps >= 1 and duration >= 0")
    zcbf = mode != "nominal-only"
    if zcbf and controller is None:
        if cfg is None:
            raise ConfigurationError("zcbf modes need barrier parameters")
        if mode == "zcbf-sampled":
            if bound is None:
                raise ConfigurationError("zcbf-sampled needs the sampling bound")
            controller = sampled_controller(model, cfg, spec, T, bound)
        else:
            controller = ZcbfController(model, cfg, spec, margin=0.0)
    base = model.base
    n = base.n
    N = int(round(duration / T))
    h = T / substeps
    qb, vb = (np.asarray(x, dtype=float).copy() for x in x0)
    if zcbf:
        q0, v0 = model.from_base(qb, vb)
        c = controller.cfg
        vals = np.concatenate([h_up(spec, q0), h_low(spec, q0), b_up(spec, c, q0, v0), b_low(spec, c, q0, v0)])
        if np.any(vals < -1e-12):
            raise ConfigurationError("initial state is not inside the safe set H")

    def f(x, u, t=0.0):
        a = base.accel(x[:n], x[n:], u)
        if perturbation is not None:
            a = a + perturbation(t, x[:n], x[n:])
        return np.concatenate([x[n:], a])

    m = base.m
    t_arr = np.arange(N + 1) * T
    Qr, Vr = np.zeros((N + 1, n)), np.zeros((N + 1, n))
    Ur = np.zeros((N + 1, m))
    status = [""] * (N + 1)
    sub_x = np.zeros((N, substeps, 2 * n))
    sub_u = np.zeros((N, substeps, m))
    x = np.concatenate([qb, vb])
    last = N
    aborted = False

    def control(t, x):
        u_nom = np.asarray(nominal(t, x[:n], x[n:]), dtype=float)
        if not zcbf:
            return u_nom, "nominal"
        q, v = model.from_base(x[:n], x[n:])
        res = controller(q, v, u_nom)
        return res.u, (res.status + "+fallback" if res.fallback else res.status)

    for k in range(N + 1):
        tk = t_arr[k]
        u, st = control(tk, x)
        Qr[k], Vr[k] = model.from_base(x[:n], x[n:])
        Ur[k] = u
        status[k] = st
        if k == N:
            break
        for s in range(substeps):
            if mode == "zcbf-continuous" and s > 0:
                u, _ = control(tk + s * h, x)
            if perturbation is None:
                x = base.rk4_step(x, u, h)
            else:
                x = _rk4(lambda y, w: f(y, w, tk + s * h), x, u, h)
            sub_x[k, s] = x
            sub_u[k, s] = u
        if not np.all(np.isfinite(x)):
            aborted, last = True, k
            break

    K = last + 1
    Qr, Vr, Ur, t_arr = Qr[:K], Vr[:K], Ur[:K], t_arr[:K]
    status = status[:K]
    n_int = last + 1 if aborted else N
    sx, su = sub_x[:n_int], sub_u[:n_int]
    if aborted:
        ok = np.all(np.isfinite(sx), axis=-1)
        su = np.where(ok[..., None], su, 0.0)
        sx = np.where(ok[..., None], sx, 0.0)
    sq, sv = model.from_base(sx[..., :n], sx[..., n:])
    sub_viol = np.max(violation_magnitudes(sq, sv, su, spec), axis=1) if n_int else np.zeros((0, 3))
    bcfg = controller.cfg if zcbf else cfg
    if bcfg is not None:
        bu, bl = b_up(spec, bcfg, Qr, Vr), b_low(spec, bcfg, Qr, Vr)
        regs = classify_regions(spec, bcfg, Qr, Vr, check=False)
        exits = int(np.sum(~in_H(spec, bcfg, sq, sv, tol=0.0))) if zcbf and n_int else 0
    else:
        bu = bl = np.full((K, n), np.nan)
        regs = np.zeros((K, n), dtype=int)
        exits = 0
    flags = _masks(violation_magnitudes(Qr, Vr, Ur, spec))
    info = {"mode": mode, "T": T, "substeps": substeps, "duration": duration, "spec": spec,
            "cfg": bcfg, "margin": controller.margin if zcbf else None}
    info.update(meta or {})
    return SimTrace(t_arr, Qr, Vr, Ur, bu, bl, regs, status, flags, sub_viol, exits,
                    controller.n_fallback if zcbf else 0, aborted, info)
