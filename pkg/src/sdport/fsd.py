"""Closed-form optimum under a first-order dominance floor.

The optimal wealth is counter-comonotone with the kernel, so at wealth
rank s it faces price y = lambda Q_rho(1-s) and floor Q0(s).  Pointwise it
takes the unconstrained concave-branch optimum when that clears the floor
(respectively the tangent threshold when the floor sits below the kink)
and the floor otherwise; the multiplier prices the whole profile at x_bar.
No liquidation boundary is needed: the floor supplies it state by state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetUnattainable, Infeasible
from .market import MarketConfig, kernel_quantile
from .numerics import Bracket, Grid, find_root
from .quantiles import Quantile, minimal_budget
from .utilities import SShapedUtility, fsd_tangent, fsd_tangent_many

REGIME_CLASSIC = "classic"
REGIME_FLOOR = "floor"


def pointwise_optimum(u, floor: float, y: float) -> tuple[float, str]:
    """Maximize U(x) - y x over {x >= floor} for one state.

    Ties at the threshold go to the floor regime (the objective values are
    equal there by the tangency construction).
    """
    kink = u.kink if u.kink is not None else -np.inf
    if floor < kink:
        c = fsd_tangent(u, floor)
        threshold = c
    else:
        threshold = max(floor, kink)
    x_classic = float(_concave_inverse(u, np.asarray(y)))
    if x_classic > threshold:
        return x_classic, REGIME_CLASSIC
    return float(floor), REGIME_FLOOR


def _concave_inverse(u, y: np.ndarray) -> np.ndarray:
    """(U1')^{-1} on the concave branch, ignoring any envelope jump."""
    if isinstance(u, SShapedUtility):
        return u.u1_inv_marginal(y)
    return u.conjugate(y)


@dataclass(frozen=True)
class FSDSolution:
    lam: float
    ranks: np.ndarray
    values: np.ndarray
    regimes: np.ndarray
    objective: float
    budget: float
    benchmark: Quantile
    utility: object
    market: MarketConfig
    degenerate: bool = False

    def eval(self, s):
        """Exact pointwise solution quantile at arbitrary ranks."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        vals, _ = _pointwise_profile(self.utility, self.benchmark, self.market, self.lam, s_arr)
        return vals if np.ndim(s) else float(vals[0])

    def __call__(self, s):
        return self.eval(s)

    def breakpoints(self) -> tuple[float, ...]:
        return ()


def _pointwise_profile(u, q0, m: MarketConfig, lam: float, s: np.ndarray):
    """Vectorised state-by-state optimum at wealth ranks s."""
    kernel = kernel_quantile(m)
    floors = np.asarray(q0.eval(s), dtype=float)
    ys = lam * np.asarray(kernel.eval(1.0 - s), dtype=float)
    kink = u.kink if u.kink is not None else -np.inf
    thresholds = np.maximum(floors, kink)
    below = floors < kink
    if below.any():
        thresholds[below] = fsd_tangent_many(u, floors[below])
    x_classic = _concave_inverse(u, ys)
    classic = x_classic > thresholds
    values = np.where(classic, x_classic, floors)
    regimes = np.where(classic, REGIME_CLASSIC, REGIME_FLOOR)
    return values, regimes


def solve_fsd(
    u,
    q0: Quantile,
    m: MarketConfig,
    grid: Grid,
    budget_rtol: float = 1e-4,
) -> FSDSolution:
    """Bind the budget over the floor-constrained pointwise optima.

    When x_bar equals the benchmark price the floor binds everywhere and
    the benchmark itself is returned (the multiplier diverges).
    """
    kernel = kernel_quantile(m)
    from .numerics import pricing_grid

    x_q0 = minimal_budget(q0, kernel, pricing_grid())
    slack = m.x_bar - x_q0
    if slack < -1e-9 * max(1.0, abs(m.x_bar)):
        raise Infeasible(f"x_bar={m.x_bar} below the benchmark price {x_q0:.6f}")

    s_nodes = grid.nodes
    price_weights = grid.weights * np.asarray(kernel.eval(1.0 - s_nodes), dtype=float)

    if slack <= 1e-9 * max(1.0, abs(m.x_bar)):
        values = np.asarray(q0.eval(s_nodes), dtype=float)
        from .validation import objective_value

        return FSDSolution(
            lam=float("inf"),
            ranks=s_nodes.copy(),
            values=values,
            regimes=np.full(s_nodes.shape, REGIME_FLOOR),
            objective=objective_value(q0, u, grid),
            budget=x_q0,
            benchmark=q0,
            utility=u,
            market=m,
            degenerate=True,
        )

    def budget_at(lam: float) -> float:
        vals, _ = _pointwise_profile(u, q0, m, lam, s_nodes)
        return float(np.dot(price_weights, vals))

    def residual(lam: float) -> float:
        return budget_at(lam) - m.x_bar

    lo, hi = 1e-8, 1e8
    r_lo, r_hi = residual(lo), residual(hi)
    if not (r_lo > 0.0 > r_hi):
        raise BudgetUnattainable("budget never crosses x_bar on the multiplier range")
    log_lam = find_root(
        lambda ll: residual(float(np.exp(ll))),
        Bracket(np.log(lo), np.log(hi), r_lo, r_hi),
        tol=1e-12,
        f_tol=0.05 * budget_rtol * abs(m.x_bar),
    )
    lam = float(np.exp(log_lam))
    values, regimes = _pointwise_profile(u, q0, m, lam, s_nodes)
    budget = float(np.dot(price_weights, values))
    objective = float(np.dot(grid.weights, u.value(values)))
    return FSDSolution(
        lam=lam,
        ranks=s_nodes.copy(),
        values=values,
        regimes=regimes,
        objective=objective,
        budget=budget,
        benchmark=q0,
        utility=u,
        market=m,
    )
