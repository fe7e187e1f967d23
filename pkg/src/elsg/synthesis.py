"""Barrier parameter synthesis.

Given the model, the constraint boxes, the gain families and the user
budgets ``delta0`` and ``eta0``, compute the admissible ranges of the
barrier parameters and pick one admissible tuple. The steps run in a fixed
order: control-authority margin epsilon, the three gamma bounds, choice of
gamma, zeta / rho-bar / speed bound, delta bound and choice of delta, the nu
interval and choice of nu, the eta bound and choice of eta_bar.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .barrier import (BarrierConfig, ConstraintSpec, alpha_range, h_low, h_up, rho_lower_bound,
                      velocity_bound, zeta)
from .classk import ClassKFn, check_assumption2_alpha, check_assumption2_beta
from .dynamics import ModelConstants, SystemModel, _box_grid, estimate_constants
from .errors import AssumptionError, ConfigurationError, SynthesisError

NU_RULES = ("midpoint-log", "nu1", "nu2")


@dataclass
class AuthorityGrid:
    """Per-grid-point quantities that enter epsilon and the gamma_2 bound.

    ``row[k, j]`` is the absolute row sum of G+(q_k) for input j,
    ``f3[k, j]`` is |f3_j(q_k)| and ``y[k]`` the largest alpha' over the
    position barriers at q_k.
    """

    q: np.ndarray
    row: np.ndarray
    f3: np.ndarray
    y: np.ndarray

    @classmethod
    def build(cls, model: SystemModel, spec: ConstraintSpec, alpha: ClassKFn, delta0: float, grid: int):
        lo, hi = spec.q_box(delta0)
        q = _box_grid(lo, hi, grid)
        row = np.sum(np.abs(model.G_plus(q)), axis=-1)
        f3 = np.abs(model.f3(q))
        y = np.maximum(np.max(alpha.derivative(h_up(spec, q)), axis=-1),
                       np.max(alpha.derivative(h_low(spec, q)), axis=-1))
        return cls(q, row, f3, y)


def verify_assumption1(spec: ConstraintSpec, eta0: float, ag: AuthorityGrid) -> float:
    """Largest epsilon with u_max_j > |f3_j| + (epsilon + eta0) |row_j| on the grid.

    Raises:
        AssumptionError: when no positive epsilon exists; names the worst
            grid point and input.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.where(ag.row > 0, (spec.u_max - ag.f3) / ag.row - eta0, np.inf)
    # rows with a zero G+ row cannot be driven but also need nothing from u
    bad_zero = (ag.row == 0) & (ag.f3 >= spec.u_max)
    eps = np.where(bad_zero, -np.inf, eps)
    k, j = np.unravel_index(int(np.argmin(eps)), eps.shape)
    e = float(eps[k, j])
    if not e > 0:
        raise AssumptionError(
            "control authority",
            f"no positive epsilon: worst at q={np.array2string(ag.q[k], precision=6)}, input {j + 1} "
            f"(margin {e:.6g})",
            {"q": ag.q[k].tolist(), "j": int(j), "epsilon": e},
        )
    return e


def gamma1_star(alpha: ClassKFn, spec: ConstraintSpec, delta0: float) -> float:
    return float(np.min(spec.v_max)) / alpha_range(alpha, spec, delta0)


def gamma2_star(spec: ConstraintSpec, consts: ModelConstants, ag: AuthorityGrid, a: float,
                epsilon: float, eta0: float) -> float:
    """Smallest positive root of the per-input actuator budget quadratic."""
    y = ag.y[:, None]
    den = ag.row * y * a + consts.k_c * a * a
    with np.errstate(divide="ignore", invalid="ignore"):
        d = consts.f_bound[None, :] * a / den
        c = (ag.f3 + (epsilon + eta0) * ag.row - spec.u_max) / den
    live = den > 0
    if np.any(c[live] >= 0):
        raise SynthesisError("gamma_2 bound undefined: epsilon leaves no actuator budget")
    roots = (-d + np.sqrt(d * d - 4 * c)) / 2
    roots = np.where(live, roots, np.inf)
    return float(np.min(roots))


def gamma3_star(epsilon: float, L: float, a: float) -> float:
    return math.sqrt(epsilon / (L * a))


def _max_gamma_for_eps(spec, consts, ag, a, L, eps, eta0):
    return min(gamma2_star(spec, consts, ag, a, eps, eta0), gamma3_star(eps, L, a))


def choose_epsilon(spec, consts, ag, a, L, eps_max, eta0, g1, gamma_target=None, rule="balanced",
                   fraction=1.0, value=None, rel_tol=1e-10):
    """Pick the epsilon used for the gamma bounds and nu_2.

    gamma_2 shrinks and gamma_3 and nu_2 grow with epsilon. ``balanced``
    first finds the largest gamma the bounds can admit (capped by gamma_1, or
    by ``gamma_target`` when the user fixes gamma) and then takes the largest
    epsilon whose gamma_2 still admits it, which keeps nu_2 as large as
    possible.
    """
    cap = eps_max * (1.0 - 1e-9)
    if value is not None:
        if not 0 < value < eps_max:
            raise ConfigurationError(f"epsilon {value} outside (0, {eps_max:.6g})")
        return float(value)
    if rule == "fraction":
        if not 0 < fraction <= 1:
            raise ConfigurationError("epsilon fraction must be in (0, 1]")
        return cap * fraction
    if rule != "balanced":
        raise ConfigurationError(f"unknown epsilon rule {rule!r}")
    f = lambda e: _max_gamma_for_eps(spec, consts, ag, a, L, e, eta0)
    if gamma_target is None:
        # min(gamma_2, gamma_3) is unimodal in epsilon: golden-section on log scale
        lo, hi = math.log(cap * 1e-9), math.log(cap)
        gr = (math.sqrt(5) - 1) / 2
        x1, x2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
        f1, f2 = f(math.exp(x1)), f(math.exp(x2))
        for _ in range(200):
            if f1 < f2:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + gr * (hi - lo)
                f2 = f(math.exp(x2))
            else:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - gr * (hi - lo)
                f1 = f(math.exp(x1))
            if hi - lo < 1e-12:
                break
        gamma_target = min(g1, max(f1, f2))
    g2 = lambda e: gamma2_star(spec, consts, ag, a, e, eta0)
    if g2(cap) >= gamma_target:
        return cap
    if g2(cap * 1e-12) < gamma_target:
        raise AssumptionError("gamma selection", f"gamma {gamma_target:.6g} exceeds the actuator bound for every epsilon")
    lo, hi = cap * 1e-12, cap
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if g2(mid) >= gamma_target:
            lo = mid
        else:
            hi = mid
    return lo


def delta_star(alpha: ClassKFn, beta: ClassKFn, gamma: float, spec: ConstraintSpec, delta0: float,
               n_grid: int = 100) -> float:
    """Largest grid delta in (0, delta0] below which |beta(zeta)| < beta(rho_bar) holds."""
    if delta0 == 0:
        return 0.0
    grid = np.linspace(delta0, 0.0, n_grid)[:-1]  # descending, zero excluded
    ok = []
    for d in grid:
        cfg = BarrierConfig(alpha, beta, gamma, 1.0, d)
        z = zeta(cfg, spec)
        rb = rho_lower_bound(cfg, spec)
        ok.append(abs(float(beta(z))) < float(beta(rb)))
    ok = np.array(ok)
    if ok.all():
        return float(delta0)
    # scan upward from the smallest delta; stop at the first failure
    good = None
    for d, flag in zip(grid[::-1], ok[::-1]):
        if not flag:
            break
        good = d
    if good is None:
        raise SynthesisError("delta bound: condition fails on the whole grid; check the alpha/beta pairing")
    return float(good)


def nu_interval(beta: ClassKFn, gamma: float, L: float, a: float, rho_bar: float, zeta_val: float,
                epsilon: float):
    nu1 = gamma * gamma * L * a / float(beta(rho_bar))
    nu2 = math.inf if zeta_val == 0 else epsilon / abs(float(beta(zeta_val)))
    if not nu1 < nu2:
        raise SynthesisError(f"empty nu interval [{nu1:.6g}, {nu2:.6g}]; delta exceeds its bound")
    return nu1, nu2


def eta_star(beta: ClassKFn, nu: float, gamma: float, L: float, a: float, rho_bar: float) -> float:
    val = (nu * float(beta(rho_bar)) - gamma * gamma * L * a) / 2
    if val < -1e-12 * abs(nu * float(beta(rho_bar))):
        raise SynthesisError("negative eta bound: nu below nu_1")
    return max(val, 0.0)


@dataclass
class SamplingBound:
    """Constants of the inter-sample drift margin eta(T).

    eta(T) = K (exp(r T) - 1) with r = c1 + c2 c4 and
    K = (c1 + c2 + c3 c4) c5 / r.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float

    @property
    def rate(self):
        return self.c1 + self.c2 * self.c4

    @property
    def gain(self):
        return (self.c1 + self.c2 + self.c3 * self.c4) * self.c5 / self.rate

    def eta(self, T):
        T = np.asarray(T, dtype=float)
        return self.gain * np.expm1(self.rate * T)

    def T_of(self, eta):
        eta = np.asarray(eta, dtype=float)
        return np.log1p(eta / self.gain) / self.rate

    def to_dict(self):
        return asdict(self)


def max_barrier_value(cfg: BarrierConfig, spec: ConstraintSpec, n_grid: int = 2001) -> float:
    """Largest b_up (equivalently b_low) over H^delta.

    On H^delta, v >= -gamma alpha(h_low + delta), so b_up <=
    gamma (alpha(h_up) + alpha(h_low + delta)); maximize over Q^delta.
    """
    best = -np.inf
    for w in spec.widths:
        h = np.linspace(-cfg.delta, w + cfg.delta, n_grid)
        best = max(best, float(np.max(cfg.gamma * (cfg.alpha(h) + cfg.alpha(w - h + cfg.delta)))))
    return best


def sampling_bound(model: SystemModel, cfg: BarrierConfig, spec: ConstraintSpec, consts=None,
                   lip_factor: float = 1.0, grid: int = 41, lip_grid: int = 13) -> tuple:
    """Estimate c1..c5 on H^delta and return (SamplingBound, ModelConstants)."""
    lo, hi = spec.q_box(cfg.delta)
    vbar = velocity_bound(cfg, spec)
    if consts is None or not np.isfinite(consts.c1):
        consts = estimate_constants(model, lo, hi, grid=grid, v_bound=vbar, lip_grid=lip_grid,
                                    lip_factor=lip_factor)
    z = zeta(cfg, spec)
    bmax = max_barrier_value(cfg, spec)
    c2 = cfg.beta.lipschitz_on(z, bmax)
    c4 = float(np.max(spec.u_max))
    c5 = consts.k_m_inf * (consts.k_c * vbar**2 + consts.k_f * vbar + consts.k_g + c4)
    return SamplingBound(consts.c1, c2, consts.c3, c4, c5), consts


def eta_of_T(model, cfg, spec, T, **kw) -> float:
    return float(sampling_bound(model, cfg, spec, **kw)[0].eta(T))


def T_of_eta(model, cfg, spec, eta, **kw) -> float:
    return float(sampling_bound(model, cfg, spec, **kw)[0].T_of(eta))


@dataclass
class SelectionPolicy:
    """How to pick one tuple inside the admissible ranges.

    ``gamma``: explicit value, else ``gamma_fraction`` times the smallest
    bound. ``nu``: explicit value, else ``nu_rule`` (geometric midpoint of
    the interval, or one of its ends). ``delta`` / ``eta_bar``: explicit
    values, else the largest admissible. ``epsilon``: explicit value, else
    ``epsilon_rule`` (``balanced`` or ``fraction`` of the largest).
    """

    gamma: Optional[float] = None
    gamma_fraction: float = 1.0
    nu: Optional[float] = None
    nu_rule: str = "midpoint-log"
    delta: Optional[float] = None
    eta_bar: Optional[float] = None
    epsilon: Optional[float] = None
    epsilon_rule: str = "balanced"
    epsilon_fraction: float = 1.0

    def __post_init__(self):
        if self.nu_rule not in NU_RULES:
            raise ConfigurationError(f"nu_rule must be one of {NU_RULES}")
        if not 0 < self.gamma_fraction <= 1:
            raise ConfigurationError("gamma_fraction must be in (0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthesisReport:
    """Everything computed by :func:`run_algorithm1`."""

    epsilon: float
    epsilon_max: float
    gamma_stars: tuple
    delta_star: float
    nu_interval: tuple
    eta_star: float
    chosen: BarrierConfig
    grid: int
    a: float
    L: float
    rho_bar: float
    zeta: float
    v_bar: float
    delta0: float
    eta0: float
    alpha_d: float
    beta_ok: bool
    constants: ModelConstants
    notes: list = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def gamma_max(self):
        return min(self.gamma_stars)

    def invariants(self):
        """Name -> bool for the relations the chosen tuple must satisfy."""
        c = self.chosen
        nu1, nu2 = self.nu_interval
        return {
            "gamma <= min gamma*": c.gamma <= self.gamma_max * (1 + 1e-12),
            "delta <= delta*": c.delta <= self.delta_star * (1 + 1e-12),
            "nu in [nu1*, nu2*]": nu1 * (1 - 1e-12) <= c.nu <= nu2 * (1 + 1e-12),
            "nu1* < nu2*": nu1 < nu2,
            "eta_bar <= eta*": c.eta_bar <= self.eta_star * (1 + 1e-12),
        }

    def to_dict(self):
        g1, g2, g3 = self.gamma_stars
        nu1, nu2 = self.nu_interval
        return {
            "params": c_dict(self.chosen),
            "bounds": {
                "epsilon": self.epsilon, "epsilon_max": self.epsilon_max,
                "gamma1_star": g1, "gamma2_star": g2, "gamma3_star": g3,
                "delta_star": self.delta_star, "nu1_star": nu1,
                "nu2_star": nu2 if math.isfinite(nu2) else "inf",
                "eta_star": self.eta_star,
            },
            "derived": {
                "a": self.a, "L": self.L, "rho_bar": self.rho_bar, "zeta": self.zeta,
                "v_bar": self.v_bar, "alpha_witness_d": self.alpha_d, "beta_falsification_pass": self.beta_ok,
            },
            "constants": self.constants.to_dict(),
            "inputs": {"delta0": self.delta0, "eta0": self.eta0, "grid": self.grid},
            "notes": list(self.notes),
            "runtime_s": self.runtime_s,
        }


def c_dict(cfg: BarrierConfig):
    return cfg.to_dict()


def run_algorithm1(model: SystemModel, spec: ConstraintSpec, alpha, beta, delta0: float, eta0: float,
                   policy: SelectionPolicy = None, grid: int = 200) -> SynthesisReport:
    """Synthesize barrier parameters; see the module docstring for the order."""
    t0 = time.perf_counter()
    policy = policy or SelectionPolicy()
    alpha, beta = ClassKFn.parse(alpha), ClassKFn.parse(beta)
    delta0, eta0 = float(delta0), float(eta0)
    if delta0 < 0 or eta0 < 0:
        raise ConfigurationError("delta0 and eta0 must be nonnegative")
    notes = []
    achk = check_assumption2_alpha(alpha, spec.q_min, spec.q_max, delta0)
    if not achk.ok:
        raise AssumptionError("alpha positivity", f"alpha(-e) + alpha(w + e) reaches {achk.d:.6g} <= 0")
    beta_ok = check_assumption2_beta(beta)
    if not beta_ok:
        raise AssumptionError("beta superadditivity", f"{beta} fails beta(a) + beta(-b) >= beta(c) on the sample")

    # control authority
    ag = AuthorityGrid.build(model, spec, alpha, delta0, grid)
    eps_max = verify_assumption1(spec, eta0, ag)
    lo, hi = spec.q_box(delta0)
    consts = estimate_constants(model, lo, hi, grid=max(min(grid // 4, 51), 11))
    a = alpha_range(alpha, spec, delta0)
    L = alpha.lipschitz_on(-delta0, float(np.max(spec.widths)) + delta0)
    g1 = gamma1_star(alpha, spec, delta0)

    target = policy.gamma
    eps = choose_epsilon(spec, consts, ag, a, L, eps_max, eta0, g1, gamma_target=target,
                         rule=policy.epsilon_rule, fraction=policy.epsilon_fraction, value=policy.epsilon)
    g2 = gamma2_star(spec, consts, ag, a, eps, eta0)
    g3 = gamma3_star(eps, L, a)
    gmax = min(g1, g2, g3)
    if policy.gamma is not None:
        gamma = float(policy.gamma)
        if gamma > gmax * (1 + 1e-9):
            notes.append(f"requested gamma {gamma:.6g} exceeds min bound {gmax:.6g}")
    else:
        gamma = policy.gamma_fraction * gmax

    # delta
    dstar = delta_star(alpha, beta, gamma, spec, delta0)
    if policy.delta is not None:
        delta = float(policy.delta)
        if delta > dstar * (1 + 1e-12):
            notes.append(f"requested delta {delta:.6g} exceeds delta* {dstar:.6g}")
    else:
        delta = dstar
    probe = BarrierConfig(alpha, beta, gamma, 1.0, delta)
    z = zeta(probe, spec)
    rb = rho_lower_bound(probe, spec)
    vbar = velocity_bound(probe, spec)

    nu1 = gamma * gamma * L * a / float(beta(rb))
    nu2 = math.inf if z == 0 else eps / abs(float(beta(z)))
    if not nu1 < nu2:
        if policy.delta is None:
            raise SynthesisError(f"empty nu interval [{nu1:.6g}, {nu2:.6g}]")
        notes.append(f"empty nu interval [{nu1:.6g}, {nu2:.6g}] at the requested delta")
    if policy.nu is not None:
        nu = float(policy.nu)
    elif policy.nu_rule == "nu1":
        nu = nu1
    elif policy.nu_rule == "nu2" and math.isfinite(nu2):
        nu = nu2
    elif math.isfinite(nu2):
        nu = math.sqrt(nu1 * nu2)
    else:
        nu = 2.0 * nu1
    estar = max((nu * float(beta(rb)) - gamma * gamma * L * a) / 2, 0.0)
    if policy.eta_bar is not None:
        eta_bar = float(policy.eta_bar)
    elif eta0 > 0:
        eta_bar = min(eta0, estar)
    else:
        eta_bar = 0.0
    if eta0 > 0 and eta_bar == 0:
        notes.append("eta0 > 0 but eta* = 0: choose nu above nu1*")

    chosen = BarrierConfig(alpha, beta, gamma, nu, delta, eta_bar)
    return SynthesisReport(
        epsilon=eps, epsilon_max=eps_max, gamma_stars=(g1, g2, g3), delta_star=dstar,
        nu_interval=(nu1, nu2), eta_star=estar, chosen=chosen, grid=grid, a=a, L=L, rho_bar=rb,
        zeta=z, v_bar=vbar, delta0=delta0, eta0=eta0, alpha_d=achk.d, beta_ok=beta_ok,
        constants=consts, notes=notes, runtime_s=time.perf_counter() - t0,
    )
