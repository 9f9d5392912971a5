"""Independent feasibility certification and valuation of quantile solutions.

check_fsd / check_ssd implement the dominance orderings directly from
their definitions (pointwise and cumulative-integral comparison of
quantiles); objective_value and budget_value price arbitrary quantiles.
These run against solver output as an independent certifier, so they only
share the quadrature substrate with the solvers, not the solution logic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteIntegrand
from .numerics import Grid, cumulative_integral, integrate_split, pricing_grid

FEAS_TOL = 1e-8


def _merged_ranks(q, q0, grid: Grid, n_ranks: int) -> np.ndarray:
    ts = np.linspace(grid.clip, 1.0 - grid.clip, n_ranks)
    extra = [b for b in (*q.breakpoints(), *q0.breakpoints()) if grid.clip < b < 1.0 - grid.clip]
    return np.union1d(ts, np.asarray(extra, dtype=float))


@dataclass(frozen=True)
class DominanceReport:
    order: str
    feasible: bool
    worst_violation: float
    worst_location: float

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "feasible": bool(self.feasible),
            "worst_violation": float(self.worst_violation),
            "worst_location": float(self.worst_location),
        }


def check_fsd(q, q0, grid: Grid, n_ranks: int = 10_000, tol: float = FEAS_TOL) -> DominanceReport:
    """Pointwise quantile ordering Q >= Q0 on a dense rank grid."""
    ts = _merged_ranks(q, q0, grid, n_ranks)
    gap = np.asarray(q0.eval(ts)) - np.asarray(q.eval(ts))
    scale = np.maximum(1.0, np.abs(np.asarray(q0.eval(ts))))
    worst = int(np.argmax(gap / scale))
    feasible = bool(np.all(gap <= tol * scale))
    return DominanceReport(
        order="first",
        feasible=feasible,
        worst_violation=float(gap[worst]),
        worst_location=float(ts[worst]),
    )


def check_ssd(q, q0, grid: Grid, n_ranks: int = 10_000, tol: float = FEAS_TOL) -> DominanceReport:
    """Cumulative ordering int_0^t Q >= int_0^t Q0 at n_ranks values of t.

    The difference Q0 - Q is integrated directly so spans where the
    solution tracks the benchmark cancel exactly instead of leaving
    tail-truncation residue.
    """
    ts = _merged_ranks(q, q0, grid, n_ranks)
    breaks = [*q.breakpoints(), *q0.breakpoints()]
    deficit = cumulative_integral(
        lambda s: np.asarray(q0.eval(s)) - np.asarray(q.eval(s)), ts, breakpoints=breaks
    )
    cum_q0 = cumulative_integral(lambda s: np.asarray(q0.eval(s)), ts, breakpoints=breaks)
    scale = 1.0 + np.abs(cum_q0)
    worst = int(np.argmax(deficit / scale))
    feasible = bool(np.all(deficit <= tol * scale))
    return DominanceReport(
        order="second",
        feasible=feasible,
        worst_violation=float(deficit[worst]),
        worst_location=float(ts[worst]),
    )


def objective_value(q, u, grid: Grid) -> float:
    """Expected utility int_0^1 U(Q(s)) ds on the clipped grid."""

    def f(s):
        vals = u.value(np.asarray(q.eval(s)))
        return vals

    try:
        return integrate_split(
            f, grid.clip, 1.0 - grid.clip, breakpoints=q.breakpoints(), panels=16
        )
    except NonFiniteIntegrand:
        raise
    except Exception as exc:  # domain errors surface as non-finite objective
        raise NonFiniteIntegrand(f"utility not finite along the quantile: {exc}") from exc


def budget_value(q, kernel, grid: Grid | None = None) -> float:
    """Price int_0^1 Q(s) Q_rho(1-s) ds on the wide-clip pricing grid."""
    clip = pricing_grid().clip

    def f(s):
        return np.asarray(q.eval(s)) * np.asarray(kernel.eval(1.0 - np.asarray(s)))

    return integrate_split(f, clip, 1.0 - clip, breakpoints=q.breakpoints(), panels=24)
