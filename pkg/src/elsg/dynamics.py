"""Euler-Lagrange system models in the control-affine second-order form.

A model describes ``qdot = v`` and ``vdot = G(q) (f1(q, v) + f2(q, v) + f3(q) + u)``.
All model callables broadcast over leading batch dimensions, so ``q`` may be
an ``(n,)`` vector or an ``(..., n)`` stack of states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

MASS_MODES = ("point-mass-at-tip", "uniform-rod")


def _inv2(M):
    """Closed-form inverse of a stack of 2x2 matrices."""
    a, b = M[..., 0, 0], M[..., 0, 1]
    c, d = M[..., 1, 0], M[..., 1, 1]
    det = a * d - b * c
    out = np.empty_like(M)
    out[..., 0, 0] = d / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -c / det
    out[..., 1, 1] = a / det
    return out


def mat_inf_norm(A):
    """Induced infinity norm (largest absolute row sum), batched."""
    return np.max(np.sum(np.abs(A), axis=-1), axis=-1)


class SystemModel:
    """Interface shared by all models.

    Subclasses implement ``G``, ``G_plus``, ``f1``, ``f2`` and ``f3``. Models
    that are integrated in different coordinates than the ones the barrier
    works in (see :class:`TransformedSystem`) override ``base``,
    ``from_base`` and ``to_base``.
    """

    n: int = 0
    m: int = 0

    def G(self, q):
        raise NotImplementedError

    def G_plus(self, q):
        raise NotImplementedError

    def f1(self, q, v):
        raise NotImplementedError

    def f2(self, q, v):
        raise NotImplementedError

    def f3(self, q):
        raise NotImplementedError

    def drift(self, q, v):
        """Sum f1 + f2 + f3."""
        return self.f1(q, v) + self.f2(q, v) + self.f3(q)

    def accel(self, q, v, u):
        """Acceleration G(q) (f1 + f2 + f3 + u)."""
        return np.einsum("...ij,...j->...i", self.G(q), self.drift(q, v) + u)

    def rk4_step(self, x, u, h):
        """One classical RK4 step of the first-order system x = (q, v) with u held."""
        n = self.n

        def f(y):
            return np.concatenate([y[n:], self.accel(y[:n], y[n:], u)])

        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    @property
    def base(self) -> "SystemModel":
        return self

    def from_base(self, qb, vb):
        return qb, vb

    def to_base(self, q, v):
        return q, v


def eval_dynamics(model: SystemModel, q, v, u):
    """Evaluate the acceleration after validating shapes and finiteness."""
    q, v, u = (np.asarray(x, dtype=float) for x in (q, v, u))
    if q.shape[-1] != model.n or v.shape[-1] != model.n or u.shape[-1] != model.m:
        raise ConfigurationError("state/input dimensions do not match the model")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v)) and np.all(np.isfinite(u))):
        raise DomainError("non-finite state or input")
    return model.accel(q, v, u)


@dataclass(frozen=True)
class Planar2Dof(SystemModel):
    """Two-link planar arm with revolute joints.

    ``mass_mode`` selects where each link's mass sits: all at the distal tip
    (``point-mass-at-tip``) or spread uniformly along the link
    (``uniform-rod``). Gravity acts along the first joint's zero-angle
    normal plane only when ``gravity`` is True.
    """

    l1: float = 1.0
    l2: float = 1.0
    m1: float = 1.0
    m2: float = 1.0
    F_diag: tuple = (0.001, 0.001)
    gravity: bool = False
    g: float = 9.81
    mass_mode: str = "uniform-rod"
    n: int = field(default=2, init=False)
    m: int = field(default=2, init=False)

    def __post_init__(self):
        if self.mass_mode not in MASS_MODES:
            raise ConfigurationError(f"mass_mode must be one of {MASS_MODES}")
        if min(self.l1, self.l2, self.m1, self.m2) <= 0:
            raise ConfigurationError("link lengths and masses must be positive")
        object.__setattr__(self, "F_diag", tuple(float(x) for x in self.F_diag))
        if len(self.F_diag) != 2:
            raise ConfigurationError("F_diag needs two entries")
        if self.mass_mode == "uniform-rod":
            lc1, lc2 = self.l1 / 2, self.l2 / 2
            I1, I2 = self.m1 * self.l1**2 / 12, self.m2 * self.l2**2 / 12
        else:
            lc1, lc2, I1, I2 = self.l1, self.l2, 0.0, 0.0
        # M11 = p1 + 2 p3 cos q2, M12 = p2 + p3 cos q2, M22 = p2
        p2 = I2 + self.m2 * lc2**2
        p1 = I1 + self.m1 * lc1**2 + self.m2 * self.l1**2 + p2
        p3 = self.m2 * self.l1 * lc2
        object.__setattr__(self, "_p", (p1, p2, p3))
        object.__setattr__(self, "_gk", ((self.m1 * lc1 + self.m2 * self.l1) * self.g, self.m2 * lc2 * self.g))

    def M(self, q):
        q = np.asarray(q, dtype=float)
        p1, p2, p3 = self._p
        c2 = np.cos(q[..., 1])
        out = np.empty(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = p1 + 2 * p3 * c2
        out[..., 0, 1] = out[..., 1, 0] = p2 + p3 * c2
        out[..., 1, 1] = p2
        return out

    def C(self, q, v):
        """Coriolis/centrifugal matrix with the Christoffel convention."""
        q, v = np.asarray(q, dtype=float), np.asarray(v, dtype=float)
        hh = self._p[2] * np.sin(q[..., 1])
        out = np.empty(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = -hh * v[..., 1]
        out[..., 0, 1] = -hh * (v[..., 0] + v[..., 1])
        out[..., 1, 0] = hh * v[..., 0]
        out[..., 1, 1] = 0.0
        return out

    def gravity_torque(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape)
        if self.gravity:
            k1, k2 = self._gk
            c12 = np.cos(q[..., 0] + q[..., 1])
            out[..., 0] = k1 * np.cos(q[..., 0]) + k2 * c12
            out[..., 1] = k2 * c12
        return out

    def G(self, q):
        return _inv2(self.M(q))

    def G_plus(self, q):
        return self.M(q)

    def f1(self, q, v):
        return -np.einsum("...ij,...j->...i", self.C(q, v), v)

    def f2(self, q, v):
        return -np.asarray(self.F_diag) * np.asarray(v, dtype=float)

    def f3(self, q):
        return -self.gravity_torque(q)

    def accel(self, q, v, u):
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            return np.array(self._accel_scalar(q[0], q[1], v[0], v[1], u[0], u[1]))
        return super().accel(q, v, u)

    def rk4_step(self, x, u, h):
        q1, q2, v1, v2 = (float(c) for c in x)
        u1, u2 = float(u[0]), float(u[1])
        acc = self._accel_scalar
        a1, a2 = acc(q1, q2, v1, v2, u1, u2)
        hh = 0.5 * h
        b1, b2 = acc(q1 + hh * v1, q2 + hh * v2, v1 + hh * a1, v2 + hh * a2, u1, u2)
        w1, w2 = v1 + hh * a1, v2 + hh * a2
        c1, c2 = acc(q1 + hh * w1, q2 + hh * w2, v1 + hh * b1, v2 + hh * b2, u1, u2)
        x1, x2 = v1 + hh * b1, v2 + hh * b2
        d1, d2 = acc(q1 + h * x1, q2 + h * x2, v1 + h * c1, v2 + h * c2, u1, u2)
        y1, y2 = v1 + h * c1, v2 + h * c2
        s = h / 6.0
        return np.array([
            q1 + s * (v1 + 2 * w1 + 2 * x1 + y1),
            q2 + s * (v2 + 2 * w2 + 2 * x2 + y2),
            v1 + s * (a1 + 2 * b1 + 2 * c1 + d1),
            v2 + s * (a2 + 2 * b2 + 2 * c2 + d2),
        ])

    def _accel_scalar(self, q1, q2, v1, v2, u1, u2):
        # plain-float path: the simulator calls this ~1e6 times per run
        p1, p2, p3 = self._p
        c2, s2 = math.cos(q2), math.sin(q2)
        m11, m12 = p1 + 2 * p3 * c2, p2 + p3 * c2
        hh = p3 * s2
        r1 = hh * (2 * v1 * v2 + v2 * v2) - self.F_diag[0] * v1 + u1
        r2 = -hh * v1 * v1 - self.F_diag[1] * v2 + u2
        if self.gravity:
            k1, k2 = self._gk
            c12 = math.cos(q1 + q2)
            r1 -= k1 * math.cos(q1) + k2 * c12
            r2 -= k2 * c12
        det = m11 * p2 - m12 * m12
        return ((p2 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det)


@dataclass(frozen=True)
class QuadraticPlaneMap:
    """Coordinate map c(qt) = (-1 + (qt - r1)' P (qt - r1), r2' qt) for n = 2.

    The first output is a quadric level, the second a plane. ``P`` is
    symmetric.
    """

    P: tuple = ((0.5, 0.0), (0.0, 0.5))
    r1: tuple = (5.0, 0.0)
    r2: tuple = (0.1, 1.0)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.size == 4:
            P = P.reshape(2, 2)
        if P.shape != (2, 2) or not np.allclose(P, P.T):
            raise ConfigurationError("P must be a symmetric 2x2 matrix")
        object.__setattr__(self, "_P", P)
        object.__setattr__(self, "_r1", np.asarray(self.r1, dtype=float))
        object.__setattr__(self, "_r2", np.asarray(self.r2, dtype=float))

    def c(self, qt):
        qt = np.asarray(qt, dtype=float)
        d = qt - self._r1
        out = np.empty(qt.shape)
        out[..., 0] = -1.0 + np.einsum("...i,ij,...j->...", d, self._P, d)
        out[..., 1] = qt @ self._r2
        return out

    def jacobian(self, qt):
        """dc/dqt, i.e. the transpose of the gradient matrix."""
        qt = np.asarray(qt, dtype=float)
        d = qt - self._r1
        out = np.empty(qt.shape + (2,))
        out[..., 0, :] = 2.0 * d @ self._P
        out[..., 1, :] = self._r2
        return out

    def jdot_v(self, qt, vt):
        """(d/dt dc/dqt) vt for the velocity vt."""
        vt = np.asarray(vt, dtype=float)
        out = np.zeros(vt.shape)
        out[..., 0] = 2.0 * np.einsum("...i,ij,...j->...", vt, self._P, vt)
        return out


class TransformedSystem(SystemModel):
    """Model expressed in the coordinates q = c(qt), v = J(qt) vt.

    ``base`` is a model in qt coordinates and ``cmap`` provides ``c``,
    ``jacobian`` (J = dc/dqt) and ``jdot_v``. Evaluating the model at a
    point q requires qt = c^{-1}(q), found with Newton's method started
    from ``seed`` (or from the last solution when evaluating single states).

    Writing the base dynamics as qt'' = Gb (fb + u) gives
    v' = J Gb (f1b + f2b + f3b + u) + Jdot vt, so G = J Gb, G+ = Gb+ J^{-1} and
    the curvature term Gb+ J^{-1} Jdot vt joins f1 (it is quadratic in v).
    """

    def __init__(self, base: SystemModel, cmap, seed, newton_tol: float = 1e-13, newton_iter: int = 50):
        self._base = base
        self.cmap = cmap
        self.seed = np.asarray(seed, dtype=float)
        self.n, self.m = base.n, base.m
        self.newton_tol = newton_tol
        self.newton_iter = newton_iter
        self._last = self.seed.copy()
        self._memo = (None, None)

    @property
    def base(self):
        return self._base

    def inverse(self, q):
        """Solve c(qt) = q for qt by Newton iteration (batched)."""
        q = np.asarray(q, dtype=float)
        # model terms are evaluated one after another at the same points
        key = (q.shape, q.tobytes())
        memo = self._memo  # single read: other threads may replace it
        if memo[0] == key:
            return memo[1].copy()
        if q.ndim == 1:
            qt = self._last.copy()
        else:
            qt = np.broadcast_to(self.seed, q.shape).copy()
        for _ in range(self.newton_iter):
            r = self.cmap.c(qt) - q
            step = np.linalg.solve(self.cmap.jacobian(qt), r[..., None])[..., 0]
            qt = qt - step
            if np.max(np.abs(step)) <= self.newton_tol * (1.0 + np.max(np.abs(qt))):
                break
        else:
            raise DomainError("coordinate inverse did not converge; point may be outside the map's range")
        if not np.all(np.isfinite(qt)):
            raise DomainError("coordinate inverse diverged")
        if q.ndim == 1:
            self._last = qt.copy()
        self._memo = (key, qt.copy())
        return qt

    def from_base(self, qb, vb):
        return self.cmap.c(qb), np.einsum("...ij,...j->...i", self.cmap.jacobian(qb), vb)

    def to_base(self, q, v):
        qt = self.inverse(q)
        vt = np.linalg.solve(self.cmap.jacobian(qt), np.asarray(v, dtype=float)[..., None])[..., 0]
        return qt, vt

    def condition_number(self, q):
        return np.linalg.cond(self.cmap.jacobian(self.inverse(q)))

    def G(self, q):
        qt = self.inverse(q)
        return self.cmap.jacobian(qt) @ self._base.G(qt)

    def G_plus(self, q):
        qt = self.inverse(q)
        return self._base.G_plus(qt) @ np.linalg.inv(self.cmap.jacobian(qt))

    def f1(self, q, v):
        qt, vt = self.to_base(q, v)
        Jinv = np.linalg.inv(self.cmap.jacobian(qt))
        curv = np.einsum("...ij,...j->...i", self._base.G_plus(qt) @ Jinv, self.cmap.jdot_v(qt, vt))
        return self._base.f1(qt, vt) + curv

    def f2(self, q, v):
        qt, vt = self.to_base(q, v)
        return self._base.f2(qt, vt)

    def f3(self, q):
        return self._base.f3(self.inverse(q))

    def accel(self, q, v, u):
        qt, vt = self.to_base(q, v)
        J = self.cmap.jacobian(qt)
        at = self._base.accel(qt, vt, u)
        return np.einsum("...ij,...j->...i", J, at) + self.cmap.jdot_v(qt, vt)


@dataclass
class ModelConstants:
    """Bounds on the model terms over Q^delta (all in infinity norms).

    ``k_c``: |f1| <= k_c |v|^2. ``f_bound``: |f2_j| <= f_j |v|.
    ``k_m_inf``: max |G|. ``k_g``: max |f3|. ``c1``: Lipschitz constant of
    G (f1 + f2 + f3) on Q^delta x [-v_bound, v_bound]^n. ``c3``: Lipschitz
    constant of G on Q^delta.
    """

    k_c: float
    f_bound: np.ndarray
    k_m_inf: float
    k_g: float
    c1: float = float("nan")
    c3: float = float("nan")
    v_bound: float = float("nan")

    @property
    def k_f(self) -> float:
        return float(np.max(self.f_bound))

    def to_dict(self):
        return {
            "k_c": float(self.k_c),
            "f_bound": [float(x) for x in self.f_bound],
            "k_m_inf": float(self.k_m_inf),
            "k_g": float(self.k_g),
            "c1": float(self.c1),
            "c3": float(self.c3),
            "v_bound": float(self.v_bound),
        }


def _box_grid(lo, hi, k):
    axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def unit_sphere_inf(n: int, k: int):
    """Points on the boundary of the unit infinity-ball, ``k`` per face edge."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    face = _box_grid(-np.ones(n - 1), np.ones(n - 1), k)
    pts = []
    for i in range(n):
        for s in (-1.0, 1.0):
            p = np.insert(face, i, s, axis=1)
            pts.append(p)
    return np.unique(np.concatenate(pts), axis=0)


def _lipschitz_inf(fun, z, dim_out, h=1e-6):
    """Largest induced infinity norm of the central-difference Jacobian of fun at z."""
    cols = []
    for k in range(z.shape[-1]):
        e = np.zeros(z.shape[-1])
        e[k] = h
        cols.append((fun(z + e) - fun(z - e)) / (2 * h))
    J = np.stack(cols, axis=-1).reshape(z.shape[0], dim_out, z.shape[-1])
    return mat_inf_norm(J)


def estimate_constants(model: SystemModel, q_lo, q_hi, grid: int = 41, v_bound=None,
                       lip_grid: int = 13, lip_factor: float = 1.0, refine: bool = True,
                       chunk: int = 200_000) -> ModelConstants:
    """Estimate the model bounds over the position box ``[q_lo, q_hi]``.

    Every constant is the supremum of a sampled quantity: a dense grid
    search (``grid`` points per position axis, unit directions for the
    velocity-homogeneous terms) followed by a bounded local search from the
    best grid points. ``c1`` and ``c3`` are only computed when ``v_bound`` is
    given; they use the induced norm of central-difference Jacobians on a
    ``lip_grid``-per-axis grid and are scaled by ``lip_factor``.
    """
    q_lo = np.asarray(q_lo, dtype=float)
    q_hi = np.asarray(q_hi, dtype=float)
    if q_lo.shape != (model.n,) or np.any(q_hi <= q_lo):
        raise ConfigurationError("empty or mismatched box for constant estimation")
    n = model.n
    ones = np.ones(n)
    qv_lo = np.concatenate([q_lo, -ones])
    qv_hi = np.concatenate([q_hi, ones])
    k_dir = max(min(grid // 2, 21), 5)
    dirs = unit_sphere_inf(n, k_dir)
    Q = _box_grid(q_lo, q_hi, grid)

    def ratio(fun, power, j=None):
        # |fun(q, v)| / |v|^power, scale-free in v so the v-box can be searched
        def r(z):
            q, v = z[..., :n], z[..., n:]
            nv = np.max(np.abs(v), axis=-1)
            val = np.abs(fun(q, v))
            val = np.max(val, axis=-1) if j is None else val[..., j]
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(nv > 1e-9, val / nv**power, 0.0)
        return r

    def seeds(r):
        best = 0.0
        for start in range(0, len(Q), max(chunk // len(dirs), 1)):
            qs = Q[start:start + max(chunk // len(dirs), 1)]
            z = np.concatenate([np.repeat(qs, len(dirs), axis=0), np.tile(dirs, (len(qs), 1))], axis=1)
            best = max(best, float(np.max(r(z))))
        return best

    r_c = ratio(model.f1, 2)
    k_c = max(seeds(r_c), _sup(r_c, qv_lo, qv_hi, 5, refine) if refine else 0.0)
    f_b = np.zeros(model.m)
    for j in range(model.m):
        r_f = ratio(model.f2, 1, j)
        f_b[j] = max(seeds(r_f), _sup(r_f, qv_lo, qv_hi, 5, refine) if refine else 0.0)
    k_m = _sup(lambda q: mat_inf_norm(model.G(q)), q_lo, q_hi, grid, refine)
    k_g = _sup(lambda q: np.max(np.abs(model.f3(q)), axis=-1), q_lo, q_hi, grid, refine)
    consts = ModelConstants(k_c=k_c, f_bound=f_b, k_m_inf=k_m, k_g=k_g)
    if v_bound is None:
        return consts

    vb = float(v_bound)
    lo = np.concatenate([q_lo, -vb * np.ones(n)])
    hi = np.concatenate([q_hi, vb * np.ones(n)])

    def drift_accel(z):
        q, v = z[..., :n], z[..., n:]
        return np.einsum("...ij,...j->...i", model.G(q), model.drift(q, v))

    def g_lip(z):
        # sum over coordinates of the induced norm of each partial derivative
        h = 1e-6
        tot = 0.0
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            dG = (model.G(z + e) - model.G(z - e)) / (2 * h)
            tot = tot + mat_inf_norm(dG)
        return tot

    def drift_lip(z):
        return _lipschitz_inf(drift_accel, z, n)

    c1 = _sup(drift_lip, lo, hi, lip_grid, refine)
    c3 = _sup(g_lip, q_lo, q_hi, max(lip_grid * 3, 31), refine)
    consts.c1 = c1 * lip_factor
    consts.c3 = c3 * lip_factor
    consts.v_bound = vb
    return consts


def _sup(fun, lo, hi, k, refine, n_starts=4):
    """Maximum of a scalar field over a box: grid search plus local polish."""
    Z = _box_grid(lo, hi, k)
    vals = fun(Z)
    best = float(np.max(vals))
    if not refine:
        return best
    from scipy.optimize import minimize

    bounds = list(zip(lo, hi))
    for idx in np.argsort(vals)[-n_starts:]:
        res = minimize(lambda z: -float(fun(z[None, :])[0]), Z[idx], method="Nelder-Mead", bounds=bounds,
                       options={"xatol": 1e-6, "fatol": 1e-9})
        if np.isfinite(res.fun):
            best = max(best, -float(res.fun))
    return best
