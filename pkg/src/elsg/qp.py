"""Projection QP: min |u - u_nom|^2 subject to A u >= b and lower <= u <= upper.

The solver is a dual active-set method (Goldfarb-Idnani with identity
Hessian). It starts from the unconstrained minimizer and adds the most
violated row each step; rows whose normal is already in the span of the
working set are handled by partial steps that drop blocking rows, so
duplicated or dependent constraints need no preprocessing. When a violated
row is dependent and nothing can be dropped, the problem is infeasible and
a Farkas certificate y >= 0 with A'y = 0, b'y > 0 is returned.

Box bounds are appended as rows: indices ``k .. k+m-1`` are the lower
bounds and ``k+m .. k+2m-1`` the upper bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iterations"
STATUS_CODES = {OPTIMAL: 0, INFEASIBLE: 1, MAX_ITER: 2}


@dataclass
class QpProblem:
    u_nom: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.u_nom = np.atleast_1d(np.asarray(self.u_nom, dtype=float))
        m = self.u_nom.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, m)
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (m,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (m,)).copy()
        if self.b.shape != (self.A.shape[0],):
            raise ConfigurationError("A and b row counts differ")
        if np.any(self.lower > self.upper):
            raise ConfigurationError("box lower bound exceeds upper bound")

    @property
    def m(self):
        return self.u_nom.size

    @property
    def k(self):
        return self.A.shape[0]

    def stacked(self):
        """Rows and right-hand sides with the box appended."""
        eye = np.eye(self.m)
        return np.vstack([self.A, eye, -eye]), np.concatenate([self.b, self.lower, -self.upper])


@dataclass
class QpSolution:
    u_star: np.ndarray
    status: str
    active_set: tuple
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    certificate: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self):
        return self.status == OPTIMAL


def kkt_residual(A, b, u_nom, u, lam):
    """Largest violation among stationarity, primal/dual feasibility and complementarity."""
    s = A @ u - b
    fin = np.isfinite(b)
    stat = np.max(np.abs(u - u_nom - A.T @ lam))
    prim = max(0.0, float(np.max(-s[fin]))) if fin.any() else 0.0
    dual = max(0.0, float(np.max(-lam)))
    pos = lam > 0
    comp = float(np.max(np.abs(lam[pos] * s[pos]))) if pos.any() else 0.0
    return float(max(stat, prim, dual, comp))


def _warm_start(Aa, ba, u0, W, dep_tol=1e-10):
    """Projection onto the rows in W, dropping rows with negative multipliers.

    Rows dependent on earlier ones (and any beyond m) are skipped first.
    """
    m = Aa.shape[1]
    keep = []
    for i in dict.fromkeys(int(i) for i in W):
        a = Aa[i]
        if len(keep) >= m:
            break
        if keep:
            N = Aa[keep]
            z = a - N.T @ np.linalg.solve(N @ N.T, N @ a)
        else:
            z = a
        if z @ z > dep_tol**2 * (a @ a):
            keep.append(i)
    W = keep
    while W:
        N = Aa[W]
        try:
            lam = np.linalg.solve(N @ N.T, ba[W] - N @ u0)
        except np.linalg.LinAlgError:
            return u0.copy(), [], []
        if not np.all(np.isfinite(lam)):
            return u0.copy(), [], []
        if lam.min() >= 0:
            return u0 + N.T @ lam, W, list(lam)
        W.pop(int(np.argmin(lam)))
    return u0.copy(), [], []


def solve(p: QpProblem, tol: float = 1e-9, max_iter: int = 200, working_set=None,
          dep_tol: float = 1e-10) -> QpSolution:
    """Solve the projection QP.

    Args:
        p: problem data.
        tol: feasibility tolerance on every row.
        max_iter: cap on add/drop steps.
        working_set: rows active at a previous solution (warm start).
        dep_tol: relative threshold below which a row counts as dependent
            on the working set.
    """
    Aa, ba = p.stacked()
    u0 = p.u_nom
    K, m = Aa.shape
    if working_set:
        u, W, lam_w = _warm_start(Aa, ba, u0, [i for i in working_set if 0 <= i < K], dep_tol)
    else:
        u, W, lam_w = u0.copy(), [], []
    it = 0
    status = MAX_ITER
    cert = None
    pending = None
    lam_p = 0.0
    while it < max_iter:
        if pending is None:
            s = Aa @ u - ba
            pidx = int(np.argmin(s))
            if not s[pidx] < -tol:
                status = OPTIMAL
                break
            pending, lam_p = pidx, 0.0
        it += 1
        a = Aa[pending]
        if W:
            N = Aa[W]
            r = np.linalg.solve(N @ N.T, N @ a)
            z = a - N.T @ r
        else:
            r = np.zeros(0)
            z = a
        zz = float(z @ z)
        slack = float(a @ u - ba[pending])
        # a full working set spans R^m, so the new row is dependent on it
        indep = len(W) < m and zz > (dep_tol**2) * float(a @ a)
        t1 = -slack / zz if indep else np.inf
        t2, j2 = np.inf, -1
        for j, (lj, rj) in enumerate(zip(lam_w, r)):
            if rj > 1e-14 and lj / rj < t2:
                t2, j2 = lj / rj, j
        if not np.isfinite(t1) and not np.isfinite(t2):
            status = INFEASIBLE
            cert = np.zeros(K)
            cert[pending] = 1.0
            for j, rj in zip(W, r):
                cert[j] = max(-rj, 0.0)
            break
        t = min(t1, t2)
        if np.isfinite(t1):
            u = u + t * z
        lam_w = [lj - t * rj for lj, rj in zip(lam_w, r)]
        lam_p += t
        if t2 < t1:
            W.pop(j2)
            lam_w.pop(j2)
        else:
            W.append(pending)
            lam_w.append(lam_p)
            pending = None
    lam = np.zeros(K)
    for j, lj in zip(W, lam_w):
        lam[j] = max(lj, 0.0)
    if status == OPTIMAL:
        u = np.clip(u, p.lower, p.upper)
    res = kkt_residual(Aa, ba, u0, u, lam)
    return QpSolution(u, status, tuple(sorted(W)), lam, res, it, cert)


def solve_batch(A, b, u_nom, lower, upper, tol: float = 1e-9, max_iter: int = 200,
                dep_tol: float = 1e-10):
    """Vectorized version of :func:`solve` for many problems of equal shape.

    Runs the same add/drop steps in lockstep over the batch (no warm start
    and no certificates). Returns ``(u, status_code)`` with codes from
    :data:`STATUS_CODES`.
    """
    A = np.asarray(A, dtype=float)
    B, k, m = A.shape
    eye = np.broadcast_to(np.eye(m), (B, m, m))
    Aa = np.concatenate([A, eye, -eye], axis=1)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (B, m))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (B, m))
    ba = np.concatenate([np.asarray(b, dtype=float), lower, -upper], axis=1)
    u = np.array(u_nom, dtype=float, copy=True).reshape(B, m)
    slots = np.full((B, m), -1)
    lam = np.zeros((B, m))
    pend = np.full(B, -1)
    lam_p = np.zeros(B)
    status = np.full(B, -1)
    rows = np.arange(B)
    for _ in range(max_iter + 1):
        need = np.nonzero((status < 0) & (pend < 0))[0]
        if need.size:
            s = np.einsum("bkm,bm->bk", Aa[need], u[need]) - ba[need]
            p = np.argmin(s, axis=1)
            sp = s[np.arange(need.size), p]
            done = ~(sp < -tol)
            status[need[done]] = STATUS_CODES[OPTIMAL]
            pend[need[~done]] = p[~done]
            lam_p[need[~done]] = 0.0
        act = np.nonzero(status < 0)[0]
        if not act.size:
            break
        if _ == max_iter:
            status[act] = STATUS_CODES[MAX_ITER]
            break
        a = Aa[act, pend[act]]
        mask = slots[act] >= 0
        N = Aa[act[:, None], np.where(mask, slots[act], 0)] * mask[..., None]
        gram = N @ np.swapaxes(N, 1, 2) + np.eye(m) * (~mask)[:, None, :]
        r = np.linalg.solve(gram, np.einsum("bsm,bm->bs", N, a)[..., None])[..., 0] * mask
        z = a - np.einsum("bs,bsm->bm", r, N)
        zz = np.sum(z * z, axis=1)
        slack = np.sum(a * u[act], axis=1) - ba[act, pend[act]]
        indep = (np.sum(mask, axis=1) < m) & (zz > dep_tol**2 * np.sum(a * a, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(indep, -slack / np.where(indep, zz, 1.0), np.inf)
            ratio = np.where(mask & (r > 1e-14), lam[act] / np.where(r > 1e-14, r, 1.0), np.inf)
        j2 = np.argmin(ratio, axis=1)
        t2 = ratio[np.arange(act.size), j2]
        infeas = ~np.isfinite(t1) & ~np.isfinite(t2)
        status[act[infeas]] = STATUS_CODES[INFEASIBLE]
        go = ~infeas
        act, t1, t2, z, r, j2, mask = act[go], t1[go], t2[go], z[go], r[go], j2[go], mask[go]
        t = np.minimum(t1, t2)
        u[act] += np.where(np.isfinite(t1), t, 0.0)[:, None] * z
        lam[act] -= t[:, None] * r
        lam_p[act] += t
        partial = t2 < t1
        pa = act[partial]
        slots[pa, j2[partial]] = -1
        lam[pa, j2[partial]] = 0.0
        fa = act[~partial]
        free = np.argmax(~mask[~partial], axis=1)
        has_free = ~mask[~partial][np.arange(fa.size), free]
        # a full step with no free slot means the working set lost independence
        status[fa[~has_free]] = STATUS_CODES[MAX_ITER]
        fa, free = fa[has_free], free[has_free]
        slots[fa, free] = pend[fa]
        lam[fa, free] = lam_p[fa]
        pend[fa] = -1
    ok = status == STATUS_CODES[OPTIMAL]
    u[ok] = np.clip(u[ok], lower[ok], upper[ok])
    return u, status
