"""Extended class-K-infinity functions used as barrier gains.

Three families are supported: ``linear:<slope>``, ``atan`` and ``cubic``.
Each provides its value, derivative and a Lipschitz constant on a closed
interval, and all of them broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError

KINDS = ("linear", "atan", "cubic")


@dataclass(frozen=True)
class ClassKFn:
    """A strictly increasing odd-like gain function with f(0) = 0.

    Args:
        kind: one of ``"linear"``, ``"atan"`` or ``"cubic"``.
        slope: gain of the linear family, ignored otherwise.
    """

    kind: str
    slope: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown class-K family {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.slope) and self.slope > 0):
            raise ConfigurationError(f"linear slope must be positive and finite, got {self.slope}")

    @classmethod
    def parse(cls, text) -> "ClassKFn":
        """Build from a config string such as ``atan`` or ``linear:2.5``."""
        if isinstance(text, ClassKFn):
            return text
        s = str(text).strip().lower()
        if s in ("atan", "arctan", "arctangent"):
            return cls("atan")
        if s == "cubic":
            return cls("cubic")
        if s == "linear":
            return cls("linear", 1.0)
        if s.startswith("linear:"):
            try:
                slope = float(s.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigurationError(f"bad linear slope in {text!r}") from exc
            return cls("linear", slope)
        raise ConfigurationError(f"cannot parse class-K function {text!r}")

    def __str__(self):
        if self.kind == "linear":
            return f"linear:{self.slope:.17g}"
        return self.kind

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self} evaluated at a non-finite argument")
        return x

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = self._check(x)
        if self.kind == "linear":
            return self.slope * x
        if self.kind == "atan":
            return np.arctan(x)
        return x * x * x

    def derivative(self, x):
        x = self._check(x)
        if self.kind == "linear":
            return np.full_like(x, self.slope)
        if self.kind == "atan":
            return 1.0 / (1.0 + x * x)
        return 3.0 * x * x

    def lipschitz_on(self, a: float, b: float) -> float:
        """Exact Lipschitz constant on ``[a, b]`` (max of |f'|)."""
        lo, hi = min(a, b), max(a, b)
        if self.kind == "linear":
            return float(self.slope)
        if self.kind == "atan":
            if lo <= 0.0 <= hi:
                return 1.0
            m = min(abs(lo), abs(hi))
            return 1.0 / (1.0 + m * m)
        return 3.0 * max(lo * lo, hi * hi)


class AlphaCheck(NamedTuple):
    ok: bool
    d: float


def check_assumption2_alpha(f: ClassKFn, q_min, q_max, delta: float, n_grid: int = 1000) -> AlphaCheck:
    """Check that alpha(-e) + alpha(w_i + e) stays positive for e in [0, delta].

    The witness ``d`` is the smallest value found on a uniform grid of
    ``n_grid`` points per joint, refined with a bounded scalar search around
    the grid minimum.
    """
    from scipy.optimize import minimize_scalar

    q_min = np.atleast_1d(np.asarray(q_min, dtype=float))
    q_max = np.atleast_1d(np.asarray(q_max, dtype=float))
    if q_min.shape != q_max.shape or np.any(q_max <= q_min):
        raise ConfigurationError("degenerate position box: need q_max > q_min componentwise")
    if delta < 0:
        raise ConfigurationError("delta must be nonnegative")
    widths = q_max - q_min
    e = np.linspace(0.0, delta, max(int(n_grid), 2))
    d = np.inf
    for w in widths:
        vals = f(-e) + f(w + e)
        k = int(np.argmin(vals))
        best = float(vals[k])
        if delta > 0:
            lo, hi = e[max(k - 1, 0)], e[min(k + 1, len(e) - 1)]
            if hi > lo:
                res = minimize_scalar(lambda s: float(f(-s) + f(w + s)), bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-12})
                best = min(best, float(res.fun))
        d = min(d, best)
    return AlphaCheck(bool(d > 0.0), float(d))


def check_assumption2_beta(f: ClassKFn, sample_budget: int = 10_000, seed: int = 0) -> bool:
    """Falsification search for beta(a) + beta(-b) >= beta(c) with a - b = 2c.

    Half the budget goes to a structured log-spaced grid over (b, c) with
    b = 0 included, the rest to log-uniform random draws. Returns False as
    soon as a counterexample beyond rounding is found.
    """
    if sample_budget < 1:
        raise ConfigurationError("sample_budget must be at least 1")
    n_struct = max(int(np.sqrt(sample_budget / 2)), 1)
    c_axis = np.logspace(-6, 4, n_struct)
    b_axis = np.concatenate([[0.0], np.logspace(-6, 4, max(n_struct - 1, 1))])
    bb, cc = np.meshgrid(b_axis, c_axis)
    rng = np.random.default_rng(seed)
    n_rand = max(sample_budget - bb.size, 0)
    c_r = 10.0 ** rng.uniform(-6, 4, n_rand)
    b_r = np.where(rng.random(n_rand) < 0.1, 0.0, 10.0 ** rng.uniform(-6, 4, n_rand))
    b = np.concatenate([bb.ravel(), b_r])
    c = np.concatenate([cc.ravel(), c_r])
    a = b + 2.0 * c
    lhs = f(a) + f(-b)
    rhs = f(c)
    # compare with a rounding allowance scaled to the magnitudes involved
    scale = np.abs(f(a)) + np.abs(f(b)) + np.abs(rhs)
    return bool(np.all(lhs - rhs >= -1e-12 * scale))
