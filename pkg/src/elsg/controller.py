"""Safety-filter control laws.

The stacked barrier condition for all joints reads ``A(q) u >= b(q, v)``
with ``A = S G(q)`` and ``S = [-I; I]``: the first n rows belong to the
upper barriers and the last n rows to the lower barriers. The safe input is
the projection of a nominal input onto that set intersected with the input
box. :func:`u_tilde` builds an explicit member of the set, which serves as
a fallback and as a feasibility witness in the verification sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barrier import BarrierConfig, ConstraintSpec, b_low, b_up, classify_regions, h_low, h_up
from .dynamics import SystemModel
from .errors import ConfigurationError
from .qp import OPTIMAL, QpProblem, solve


def _mv(M, x):
    return np.einsum("...ij,...j->...i", M, x)


def build_constraints(model: SystemModel, cfg: BarrierConfig, spec: ConstraintSpec, q, v, eta_used,
                      check=True, tol=1e-9):
    """Rows ``A`` (``(..., 2n, m)``) and right-hand side ``b`` (``(..., 2n)``).

    b = -nu p + eta 1 - S G f - gamma Lambda S v, where p stacks beta(b_up)
    and beta(b_low), f = f1 + f2 + f3 and Lambda holds alpha' at the
    unshifted position barriers.

    Raises:
        DomainError: if ``check`` is set and a state lies outside H^delta.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if check:
        classify_regions(spec, cfg, q, v, tol=tol)
    G = model.G(q)
    Gf = _mv(G, model.drift(q, v))
    A = np.concatenate([-G, G], axis=-2)
    p_up = cfg.beta(b_up(spec, cfg, q, v))
    p_low = cfg.beta(b_low(spec, cfg, q, v))
    d_up = cfg.alpha.derivative(h_up(spec, q))
    d_low = cfg.alpha.derivative(h_low(spec, q))
    rhs_up = -cfg.nu * p_up + eta_used + Gf + cfg.gamma * d_up * v
    rhs_low = -cfg.nu * p_low + eta_used - Gf - cfg.gamma * d_low * v
    return A, np.concatenate([rhs_up, rhs_low], axis=-1)


def u_tilde(model: SystemModel, cfg: BarrierConfig, spec: ConstraintSpec, q, v, eta_used, tol=1e-9,
            regions=None):
    """Explicit feasible input G+ (mu + chi + psi) - f, chosen per region.

    ====== ====================== ================== ======
    region mu                     chi                psi
    ====== ====================== ================== ======
    I      -gamma alpha'_up v     0                  -eta
    II     0                      0                  -eta
    III    0                      0                  +eta
    IV     -gamma alpha'_low v    0                  +eta
    V      -gamma alpha'_up v     nu beta(b_up)      -eta
    VI     -gamma alpha'_low v    -nu beta(b_low)    +eta
    VII    -gamma alpha'_up v     0                  0
    VIII   -gamma alpha'_low v    0                  0
    ====== ====================== ================== ======
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    reg = classify_regions(spec, cfg, q, v, tol=tol) if regions is None else regions
    g = cfg.gamma
    mu_up = -g * cfg.alpha.derivative(h_up(spec, q)) * v
    mu_low = -g * cfg.alpha.derivative(h_low(spec, q)) * v
    mu = np.where(np.isin(reg, (1, 5, 7)), mu_up, np.where(np.isin(reg, (4, 6, 8)), mu_low, 0.0))
    chi = np.where(reg == 5, cfg.nu * cfg.beta(b_up(spec, cfg, q, v)),
                   np.where(reg == 6, -cfg.nu * cfg.beta(b_low(spec, cfg, q, v)), 0.0))
    psi = np.where(np.isin(reg, (1, 2, 5)), -eta_used, np.where(np.isin(reg, (3, 4, 6)), eta_used, 0.0))
    return _mv(model.G_plus(q), mu + chi + psi) - model.drift(q, v)


@dataclass
class ControlResult:
    u: np.ndarray
    status: str
    active_set: tuple
    fallback: bool
    u_nom: np.ndarray


class ZcbfController:
    """Projection of a nominal input onto the barrier-admissible inputs.

    Args:
        model: system model in the coordinates the barriers are written in.
        cfg: barrier parameters.
        spec: constraint boxes.
        margin: constant added to every barrier row (zero for the
            continuous-time law, eta(T) for the sampled law).
        tol: QP feasibility tolerance.

    The previous active set is kept as a warm start for the next call.
    """

    def __init__(self, model, cfg: BarrierConfig, spec: ConstraintSpec, margin: float = 0.0, tol: float = 1e-9):
        self.model, self.cfg, self.spec = model, cfg, spec
        self.margin = float(margin)
        self.tol = tol
        self._ws = None
        self.n_fallback = 0

    def reset(self):
        self._ws = None
        self.n_fallback = 0

    def __call__(self, q, v, u_nom) -> ControlResult:
        A, b = build_constraints(self.model, self.cfg, self.spec, q, v, self.margin, check=False)
        sol = solve(QpProblem(u_nom, A, b, -self.spec.u_max, self.spec.u_max), tol=self.tol,
                    working_set=self._ws)
        if sol.status == OPTIMAL:
            self._ws = sol.active_set
            return ControlResult(sol.u_star, sol.status, sol.active_set, False, np.asarray(u_nom, float))
        # should not happen on H^delta; fall back to the explicit witness
        self.n_fallback += 1
        self._ws = None
        reg = classify_regions(self.spec, self.cfg, q, v, tol=self.tol, check=False)
        if np.all(reg > 0):
            u = u_tilde(self.model, self.cfg, self.spec, q, v, self.margin, regions=reg)
        else:
            u = np.clip(u_nom, -self.spec.u_max, self.spec.u_max)
        return ControlResult(np.asarray(u), sol.status, (), True, np.asarray(u_nom, float))


def u_star_continuous(model, cfg, spec, q, v, u_nom, margin=0.0):
    """One evaluation of the continuous-time safety filter."""
    classify_regions(spec, cfg, q, v)  # raises outside H^delta
    return ZcbfController(model, cfg, spec, margin)(q, v, u_nom).u


def sampled_controller(model, cfg, spec, T, bound) -> ZcbfController:
    """Controller for a zero-order hold of period ``T``.

    ``bound`` is a :class:`~elsg.synthesis.SamplingBound`. The row margin is
    eta(T), which must not exceed the synthesized eta_bar.

    Raises:
        ConfigurationError: sampling period too large.
    """
    eta = float(bound.eta(T))
    if not eta <= cfg.eta_bar:
        raise ConfigurationError(
            f"sampling period too large: eta({T:g}) = {eta:.6g} > eta_bar = {cfg.eta_bar:.6g}; "
            f"T_max = {float(bound.T_of(cfg.eta_bar)):.6g}")
    return ZcbfController(model, cfg, spec, margin=eta)


def u_star_sampled(model, cfg, spec, q_k, v_k, u_nom_k, T, bound):
    """One evaluation of the sampled-data safety filter."""
    classify_regions(spec, cfg, q_k, v_k)
    return sampled_controller(model, cfg, spec, T, bound)(q_k, v_k, u_nom_k).u


@dataclass(frozen=True)
class SinusoidReference:
    """r_i(t) = amp_i sin(omega_i t) + offset_i."""

    amp: tuple
    omega: tuple
    offset: tuple

    def __call__(self, t):
        a, w, o = (np.asarray(x, dtype=float) for x in (self.amp, self.omega, self.offset))
        s, c = np.sin(w * t), np.cos(w * t)
        return a * s + o, a * w * c, -a * w * w * s

    def to_dict(self):
        return {"amp": list(self.amp), "omega": list(self.omega), "offset": list(self.offset)}


def computed_torque_nominal(model, q, v, t, reference):
    """u = M(q) (r'' - e' - e) + C(q, v) v with e = q - r.

    ``model`` must expose ``M`` and ``C`` (e.g. :class:`~elsg.dynamics.Planar2Dof`);
    for transformed systems pass the base model and base coordinates. The
    ``+ C v`` term cancels f1 = -C v, so the closed loop obeys
    e'' + e' + e = 0 up to damping. The output is not saturated.
    """
    r, rd, rdd = reference(t)
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    e, ed = q - r, v - rd
    return _mv(model.M(q), rdd - ed - e) + _mv(model.C(q, v), v)
