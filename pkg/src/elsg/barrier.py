"""Box constraints, per-joint barrier functions and the region decomposition.

Joint ``i`` has position barriers ``h_up = q_max - q`` and ``h_low = q - q_min``
and velocity-level barriers ``b_up = -v + gamma*alpha(h_up)`` and
``b_low = v + gamma*alpha(h_low)``. The ``delta``-shifted variants use
``h + delta`` and define the enlarged set ``H^delta`` on which the explicit
feasible control is constructed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.optimize import minimize_scalar

from .classk import ClassKFn
from .errors import ConfigurationError, DomainError


def _vec(x, name):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{name} must be a finite vector")
    return x


@dataclass(frozen=True)
class ConstraintSpec:
    """Position, velocity and input boxes (symmetric in v and u)."""

    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        for name in ("q_min", "q_max", "v_max", "u_max"):
            object.__setattr__(self, name, _vec(getattr(self, name), name))
        if self.q_min.shape != self.q_max.shape or self.v_max.shape != self.q_min.shape:
            raise ConfigurationError("q_min, q_max and v_max must share a length")
        if np.any(self.q_max <= self.q_min):
            raise ConfigurationError("need q_max > q_min componentwise")
        if np.any(self.v_max <= 0):
            raise ConfigurationError("need v_max > 0")
        if np.any(self.u_max < 0):
            raise ConfigurationError("need u_max >= 0")

    @property
    def n(self):
        return self.q_min.size

    @property
    def m(self):
        return self.u_max.size

    @property
    def widths(self):
        return self.q_max - self.q_min

    def q_box(self, delta=0.0):
        """Bounds of Q^delta."""
        return self.q_min - delta, self.q_max + delta

    def to_dict(self):
        return {k: [float(x) for x in getattr(self, k)] for k in ("q_min", "q_max", "v_max", "u_max")}


@dataclass(frozen=True)
class BarrierConfig:
    """Barrier design parameters."""

    alpha: ClassKFn
    beta: ClassKFn
    gamma: float
    nu: float
    delta: float = 0.0
    eta_bar: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", ClassKFn.parse(self.alpha))
        object.__setattr__(self, "beta", ClassKFn.parse(self.beta))
        for name in ("gamma", "nu", "delta", "eta_bar"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.gamma > 0 and self.nu > 0):
            raise ConfigurationError("gamma and nu must be positive")
        if self.delta < 0 or self.eta_bar < 0:
            raise ConfigurationError("delta and eta_bar must be nonnegative")
        if not all(np.isfinite([self.gamma, self.nu, self.delta, self.eta_bar])):
            raise ConfigurationError("barrier parameters must be finite")

    def to_dict(self):
        return {"alpha": str(self.alpha), "beta": str(self.beta), "gamma": self.gamma,
                "nu": self.nu, "delta": self.delta, "eta_bar": self.eta_bar}


class Region(IntEnum):
    """Per-joint cells of H_i^delta that select the explicit control terms."""

    I = 1
    II = 2
    III = 3
    IV = 4
    V = 5
    VI = 6
    VII = 7
    VIII = 8


def h_up(spec: ConstraintSpec, q):
    return spec.q_max - np.asarray(q, dtype=float)


def h_low(spec: ConstraintSpec, q):
    return np.asarray(q, dtype=float) - spec.q_min


def b_up(spec, cfg: BarrierConfig, q, v, shifted=False):
    d = cfg.delta if shifted else 0.0
    return -np.asarray(v, dtype=float) + cfg.gamma * cfg.alpha(h_up(spec, q) + d)


def b_low(spec, cfg: BarrierConfig, q, v, shifted=False):
    d = cfg.delta if shifted else 0.0
    return np.asarray(v, dtype=float) + cfg.gamma * cfg.alpha(h_low(spec, q) + d)


def rho(spec, cfg: BarrierConfig, q):
    """Level where b_up and b_low meet: (gamma/2)(alpha(h_up) + alpha(h_low))."""
    return 0.5 * cfg.gamma * (cfg.alpha(h_up(spec, q)) + cfg.alpha(h_low(spec, q)))


def alpha_range(alpha: ClassKFn, spec: ConstraintSpec, delta: float) -> float:
    """a = alpha(2 delta + max_i (q_max_i - q_min_i))."""
    return float(alpha(2.0 * delta + np.max(spec.widths)))


def velocity_bound(cfg: BarrierConfig, spec: ConstraintSpec) -> float:
    """Speed bound on H^delta: gamma * alpha(2 delta + max width)."""
    return cfg.gamma * alpha_range(cfg.alpha, spec, cfg.delta)


def _min_1d(fun, lo, hi, n_grid):
    """Grid minimum of a scalar function polished by a bounded local search."""
    x = np.linspace(lo, hi, n_grid)
    y = fun(x)
    k = int(np.argmin(y))
    best = float(y[k])
    a, b = x[max(k - 1, 0)], x[min(k + 1, n_grid - 1)]
    if b > a:
        res = minimize_scalar(lambda s: float(fun(np.array(s))), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-13})
        best = min(best, float(res.fun))
    return best


def rho_lower_bound(cfg: BarrierConfig, spec: ConstraintSpec, delta=None, n_grid: int = 2001) -> float:
    """Minimum of rho over Q^delta, all joints.

    Along joint i, h_up + h_low = w_i, so rho is a function of h = h_up on
    [-delta, w_i + delta].
    """
    d = cfg.delta if delta is None else float(delta)
    best = np.inf
    for w in spec.widths:
        best = min(best, _min_1d(lambda h: 0.5 * cfg.gamma * (cfg.alpha(h) + cfg.alpha(w - h)),
                                 -d, w + d, n_grid))
    if not best > 0:
        raise DomainError(f"rho lower bound {best:.6g} is not positive; alpha/delta pairing is invalid")
    return best


def zeta(cfg: BarrierConfig, spec: ConstraintSpec, delta=None, n_grid: int = 2001) -> float:
    """Most negative unshifted barrier value on H^delta.

    For joint i this is gamma * min over h in [-delta, w_i + delta] of
    alpha(h) - alpha(h + delta); the same expression covers both the upper
    and the lower barrier.
    """
    d = cfg.delta if delta is None else float(delta)
    if d == 0.0:
        return 0.0
    best = np.inf
    for w in spec.widths:
        best = min(best, _min_1d(lambda h: cfg.gamma * (cfg.alpha(h) - cfg.alpha(h + d)), -d, w + d, n_grid))
    return min(best, 0.0)


def zeta_closed_form(cfg: BarrierConfig, spec: ConstraintSpec, delta=None) -> float:
    """Closed-form value of :func:`zeta` for the built-in families."""
    d = cfg.delta if delta is None else float(delta)
    a = cfg.alpha
    if a.kind == "linear":
        return -cfg.gamma * a.slope * d
    if a.kind == "atan":
        return -2.0 * cfg.gamma * float(np.arctan(d / 2.0))
    # cubic: the gap alpha(h) - alpha(h + d) is most negative at the far end
    w = float(np.max(spec.widths))
    return cfg.gamma * ((w + d) ** 3 - (w + 2 * d) ** 3)


def membership_violation(spec, cfg: BarrierConfig, q, v, tol=1e-9):
    """Return a description of the first violated H^delta inequality, or None."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    checks = (
        ("h_up + delta >= 0", h_up(spec, q) + cfg.delta),
        ("h_low + delta >= 0", h_low(spec, q) + cfg.delta),
        ("b_up^delta >= 0", b_up(spec, cfg, q, v, shifted=True)),
        ("b_low^delta >= 0", b_low(spec, cfg, q, v, shifted=True)),
    )
    for name, val in checks:
        bad = np.asarray(val < -tol)
        if np.any(bad):
            j = int(np.argwhere(bad)[0][-1])
            return f"joint {j + 1}: {name} fails (value {float(np.min(val)):.3e})"
    return None


def in_H(spec, cfg: BarrierConfig, q, v, tol=1e-9):
    """Boolean mask (over leading axes) of states inside H^delta."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    ok = (h_up(spec, q) + cfg.delta >= -tol) & (h_low(spec, q) + cfg.delta >= -tol)
    ok &= (b_up(spec, cfg, q, v, shifted=True) >= -tol) & (b_low(spec, cfg, q, v, shifted=True) >= -tol)
    return np.all(ok, axis=-1)


def classify_regions(spec, cfg: BarrierConfig, q, v, tol=1e-9, check=True):
    """Vectorized region labels, shape ``(..., n)``.

    V and VI take precedence, then VII/VIII when b_low is within ``tol`` of
    rho, then I-IV. At v = 0 the labels II (upper branch), III (lower
    branch) and VII are used. With ``check`` set, states outside H^delta
    raise :class:`DomainError`; otherwise they are labelled 0.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (h_up(spec, q) + cfg.delta >= -tol) & (h_low(spec, q) + cfg.delta >= -tol)
    inside &= (b_up(spec, cfg, q, v, shifted=True) >= -tol) & (b_low(spec, cfg, q, v, shifted=True) >= -tol)
    if check and not np.all(inside):
        raise DomainError("state outside H^delta: " + str(membership_violation(spec, cfg, q, v, tol)))
    bu = b_up(spec, cfg, q, v)
    bl = b_low(spec, cfg, q, v)
    r = rho(spec, cfg, q)
    on_rho = np.abs(bl - r) <= tol
    lab = np.select(
        [bu < -tol, bl < -tol,
         on_rho & (v >= 0), on_rho,
         (bu < r) & (v > 0), bu < r,
         v >= 0],
        [5, 6, 7, 8, 1, 2, 3],
        default=4,
    )
    return np.where(inside, lab, 0)


def classify_region(spec, cfg: BarrierConfig, i: int, q_i: float, v_i: float, tol=1e-9) -> Region:
    """Region of joint ``i`` (0-based) at the scalar state (q_i, v_i)."""
    sub = ConstraintSpec(spec.q_min[i:i + 1], spec.q_max[i:i + 1], spec.v_max[i:i + 1], spec.u_max[:1])
    lab = classify_regions(sub, cfg, np.array([q_i]), np.array([v_i]), tol=tol)
    return Region(int(lab[0]))
