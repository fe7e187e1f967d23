"""Property checks for a synthesized configuration.

Each check returns a :class:`PropertyResult` with the worst margin seen
(negative means violated) and up to a few counterexample states.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .barrier import (BarrierConfig, ConstraintSpec, b_low, b_up, in_H, rho, velocity_bound, zeta,
                      zeta_closed_form)
from .controller import build_constraints, u_tilde
from .errors import ElsgError
from .qp import STATUS_CODES, QpProblem, solve, solve_batch
from .synthesis import SelectionPolicy, run_algorithm1


@dataclass
class PropertyResult:
    name: str
    passed: bool
    worst: float
    checked: int
    counterexamples: list = field(default_factory=list)
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<34s} worst margin {self.worst + 0.0: .3e}  ({self.checked} checked){self.detail}"


def worker_count():
    """Worker cap from ELSG_THREADS (default 1)."""
    try:
        return max(int(os.environ.get("ELSG_THREADS", "1")), 1)
    except ValueError:
        return 1


def joint_grid(spec: ConstraintSpec, cfg: BarrierConfig, i: int, N: int):
    """N x N grid of H_i^delta: N positions across Q_i^delta and, at each,
    N velocities spanning the admissible interval (endpoints included)."""
    d = cfg.delta
    qs = np.linspace(spec.q_min[i] - d, spec.q_max[i] + d, N)
    lo = -cfg.gamma * cfg.alpha(np.maximum(qs - spec.q_min[i] + d, 0.0))
    hi = cfg.gamma * cfg.alpha(np.maximum(spec.q_max[i] - qs + d, 0.0))
    s = np.linspace(0.0, 1.0, N)
    vs = lo[:, None] + (hi - lo)[:, None] * s[None, :]
    return np.repeat(qs, N), vs.ravel()


def grid_states(spec, cfg, N, chunk=250_000):
    """Yield (q, v) chunks of the product of the per-joint grids."""
    per = [joint_grid(spec, cfg, i, N) for i in range(spec.n)]
    sizes = [len(p[0]) for p in per]
    total = int(np.prod(sizes))
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        sub = np.unravel_index(idx, sizes)
        q = np.stack([per[i][0][sub[i]] for i in range(spec.n)], axis=-1)
        v = np.stack([per[i][1][sub[i]] for i in range(spec.n)], axis=-1)
        yield q, v


def feasibility_sweep(model, cfg: BarrierConfig, spec: ConstraintSpec, margin: float, N: int = 50,
                      qp_scale: float = 3.0, seed: int = 0, tol: float = 1e-9, chunk: int = 250_000):
    """Explicit-input and QP checks on the full grid of H^delta.

    Returns three results: u_tilde in U, the 2n rows at u_tilde, and QP
    optimality (with random nominal inputs of up to ``qp_scale`` u_max,
    also checking that the QP optimum is no farther from u_nom than u_tilde).
    """
    rng = np.random.default_rng(seed)
    chunks = list(grid_states(spec, cfg, N, chunk))
    seeds = rng.integers(0, 2**32, len(chunks))

    def run(args):
        (q, v), sd = args
        ut = u_tilde(model, cfg, spec, q, v, margin, tol=tol)
        A, b = build_constraints(model, cfg, spec, q, v, margin, check=False)
        box = spec.u_max - np.abs(ut)
        rows = np.einsum("bkm,bm->bk", A, ut) - b
        u_nom = np.random.default_rng(sd).uniform(-qp_scale, qp_scale, ut.shape) * spec.u_max
        us, st = solve_batch(A, b, u_nom, -spec.u_max, spec.u_max, tol=tol)
        gap = np.linalg.norm(ut - u_nom, axis=1) - np.linalg.norm(us - u_nom, axis=1)
        return q, v, np.min(box, axis=1), np.min(rows, axis=1), st, gap

    with ThreadPoolExecutor(worker_count()) as ex:
        outs = list(ex.map(run, zip(chunks, seeds)))

    def collect(name, key, ok_fn, worst_fn):
        worst, cex, count = np.inf, [], 0
        for q, v, *vals in outs:
            val = vals[key]
            count += len(val)
            worst = min(worst, worst_fn(val))
            bad = np.nonzero(~ok_fn(val))[0]
            for j in bad[: max(0, 3 - len(cex))]:
                cex.append({"q": q[j].tolist(), "v": v[j].tolist(), "value": float(val[j])})
        return PropertyResult(name, not cex, float(worst), count, cex)

    r1 = collect("u_tilde in U", 0, lambda x: x >= -tol, np.min)
    r2 = collect("stacked rows hold at u_tilde", 1, lambda x: x >= -tol, np.min)
    st_ok = STATUS_CODES["optimal"]
    r3 = collect("QP optimal on grid", 2, lambda x: x == st_ok, lambda x: -float(np.max(x)))
    r4 = collect("QP no worse than u_tilde", 3, lambda x: x >= -1e-7, np.min)
    return [r1, r2, r3, r4]


def sample_H(spec, cfg, n, seed=0, batch=20_000):
    """Rejection-sample ``n`` states of H^delta from a bounding box."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.q_box(cfg.delta)
    vb = velocity_bound(cfg, spec)
    qs, vs = [], []
    got = 0
    while got < n:
        q = rng.uniform(lo, hi, (batch, spec.n))
        v = rng.uniform(-1.25 * vb, 1.25 * vb, (batch, spec.n))
        keep = in_H(spec, cfg, q, v, tol=0.0)
        qs.append(q[keep])
        vs.append(v[keep])
        got += int(keep.sum())
    return np.concatenate(qs)[:n], np.concatenate(vs)[:n]


def velocity_checks(cfg, spec, n=10_000, seed=0):
    q, v = sample_H(spec, cfg, n, seed)
    vb = velocity_bound(cfg, spec)
    speed = np.max(np.abs(v), axis=1)
    m1 = vb - speed
    m2 = np.min(spec.v_max - np.abs(v), axis=1)
    out = []
    for name, m in (("speed bound on H^delta", m1), ("velocity inside V on H^delta", m2)):
        bad = np.nonzero(m < 0)[0][:3]
        out.append(PropertyResult(name, bad.size == 0, float(m.min()), n,
                                  [{"q": q[j].tolist(), "v": v[j].tolist()} for j in bad]))
    return out


def gap_identity(cfg, spec, n=10_000, seed=1, tol=1e-12):
    q, v = sample_H(spec, cfg, n, seed)
    err = np.abs(b_up(spec, cfg, q, v) + b_low(spec, cfg, q, v) - 2 * rho(spec, cfg, q))
    scale = np.maximum(1.0, np.abs(2 * rho(spec, cfg, q)))
    m = tol - np.max(err / scale, axis=1)
    return PropertyResult("b_up + b_low = 2 rho", bool(np.all(m >= 0)), float(m.min()), n)


def zeta_check(cfg, spec, tol=1e-8):
    z, zc = zeta(cfg, spec), zeta_closed_form(cfg, spec)
    return PropertyResult("zeta closed form", abs(z - zc) <= tol, tol - abs(z - zc), 1,
                          detail=f"  [numeric {z:.12g}, closed {zc:.12g}]")


def brute_force_qp(A, b, u_nom, lower, upper):
    """Reference solver: enumerate independent active sets and keep the KKT point.

    Every subset of at most m rows (box rows included) is tried as the active
    set; subsets are handled in batches by size.

    Returns ``(u, status)`` where status is ``"optimal"`` or ``"infeasible"``.
    """
    m = len(u_nom)
    A = np.asarray(A, float).reshape(-1, m)
    eye = np.eye(m)
    Aa = np.vstack([A, eye, -eye])
    ba = np.concatenate([b, lower, -np.asarray(upper, float)])
    u0 = np.asarray(u_nom, float)
    best, best_obj = None, np.inf
    if np.all(Aa @ u0 - ba >= -1e-7):
        return u0.copy(), "optimal"
    for r in range(1, m + 1):
        W = np.array(list(itertools.combinations(range(len(ba)), r)))
        N = Aa[W]
        gram = N @ N.transpose(0, 2, 1)
        # Hadamard ratio: 1 for orthogonal rows, 0 for dependent ones
        keep = np.linalg.det(gram) > 1e-12 * np.prod(np.diagonal(gram, axis1=1, axis2=2), axis=1)
        if not keep.any():
            continue
        N, gram, W = N[keep], gram[keep], W[keep]
        lam = np.linalg.solve(gram, (ba[W] - N @ u0)[..., None])[..., 0]
        u = u0 + np.einsum("bri,br->bi", N, lam)
        ok = np.all(lam >= -1e-10, axis=1) & np.all(u @ Aa.T - ba >= -1e-7, axis=1)
        if ok.any():
            obj = np.sum((u[ok] - u0) ** 2, axis=1)
            j = int(np.argmin(obj))
            if obj[j] < best_obj:
                best, best_obj = u[ok][j], obj[j]
    if best is None:
        return None, "infeasible"
    return best, "optimal"


def random_qp(rng, m=None, k=None, dup=True, feasible=True):
    """Random projection QP with optional duplicated and scaled rows."""
    m = m or int(rng.integers(1, 5))
    k = k or int(rng.integers(1, 11))
    A = rng.normal(size=(k, m))
    if dup and k >= 2:
        for _ in range(int(rng.integers(1, 3))):
            i, j = rng.integers(0, k, 2)
            A[j] = A[i] * (rng.uniform(0.5, 2.0) if rng.random() < 0.5 else 1.0)
    upper = rng.uniform(0.5, 3.0, m)
    lower = -upper
    if feasible:
        uf = rng.uniform(lower, upper) * 0.9
        b = A @ uf - rng.exponential(0.5, k) * (rng.random(k) < 0.7)
    else:
        b = rng.normal(size=k) * 3
    u_nom = rng.normal(size=m) * 4
    return QpProblem(u_nom, A, b, lower, upper)


def qp_oracle_check(n=1000, seed=0, tol=1e-8):
    rng = np.random.default_rng(seed)
    worst, cex = 0.0, []
    for i in range(n):
        p = random_qp(rng, feasible=rng.random() < 0.9)
        sol = solve(p)
        ref, st = brute_force_qp(p.A, p.b, p.u_nom, p.lower, p.upper)
        if st != sol.status:
            cex.append({"instance": i, "status": sol.status, "oracle": st})
            continue
        if st == "optimal":
            err = float(np.max(np.abs(sol.u_star - ref)))
            worst = max(worst, err)
            if err > tol:
                cex.append({"instance": i, "err": err})
    return PropertyResult("QP matches oracle", not cex, tol - worst, n, cex[:3])


def qp_duplicate_check(n=1000, seed=0, tol=1e-10):
    """Appending copies (and positive multiples) of rows must not move the optimum."""
    rng = np.random.default_rng(seed)
    worst, cex = 0.0, []
    for i in range(n):
        p = random_qp(rng, dup=False)
        base = solve(p)
        if not base.ok:
            continue
        idx = rng.integers(0, len(p.b), int(rng.integers(1, 4)))
        s = rng.choice([1.0, 2.0, 0.5], len(idx))[:, None]
        dup = QpProblem(p.u_nom, np.vstack([p.A, p.A[idx] * s]), np.concatenate([p.b, p.b[idx] * s[:, 0]]),
                        p.lower, p.upper)
        sol = solve(dup)
        err = float(np.max(np.abs(sol.u_star - base.u_star))) if sol.ok else np.inf
        worst = max(worst, err)
        if err > tol:
            cex.append({"instance": i, "err": err})
    return PropertyResult("QP duplicate-row invariance", not cex, tol - worst, n, cex[:3])


def synthesis_invariants(model, cfg, spec, delta0, eta0, grid=200):
    """Re-run the synthesis at the configured parameters and check its invariants."""
    pol = SelectionPolicy(gamma=cfg.gamma, delta=cfg.delta, nu=cfg.nu, eta_bar=cfg.eta_bar)
    try:
        rep = run_algorithm1(model, spec, cfg.alpha, cfg.beta, delta0, eta0, pol, grid=grid)
    except ElsgError as exc:
        return PropertyResult("parameter invariants", False, -np.inf, 1, [{"error": str(exc)}])
    inv = rep.invariants()
    bad = [k for k, ok in inv.items() if not ok]
    nu1, nu2 = rep.nu_interval
    return PropertyResult("parameter invariants", not bad, -float(len(bad)), len(inv),
                          [{"failed": k} for k in bad],
                          detail=f"  [nu in [{nu1:.6g}, {nu2:.6g}], gamma* {min(rep.gamma_stars):.6g}, "
                                 f"delta* {rep.delta_star:.6g}]")


def run_suite(model, cfg, spec, margin, delta0, eta0, grid=50, n_random=10_000, qp_instances=1000, seed=0):
    """All checks in a fixed order."""
    results = [synthesis_invariants(model, cfg, spec, delta0, eta0)]
    results += feasibility_sweep(model, cfg, spec, margin, N=grid, seed=seed)
    results += velocity_checks(cfg, spec, n_random, seed)
    results.append(gap_identity(cfg, spec, n_random, seed + 1))
    results.append(zeta_check(cfg, spec))
    results.append(qp_oracle_check(qp_instances, seed))
    results.append(qp_duplicate_check(qp_instances, seed))
    return results
