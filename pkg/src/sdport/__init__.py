"""Portfolio selection under stochastic dominance constraints.

Closed-form first-order-dominance solutions for S-shaped utilities, the
poor-performance-region construction of feasible second-order-dominance
solutions, and independent feasibility certification, in quantile form
over a Black-Scholes pricing kernel.
"""

from .market import MarketConfig, kernel_quantile
from .numerics import Grid, default_grid, pricing_grid
from .classic import ClassicSolution, solve_classic
from .fsd import FSDSolution, pointwise_optimum, solve_fsd
from .ppra import PPRASolution, Region, detect_region, solve_ppra
from .validation import DominanceReport, budget_value, check_fsd, check_ssd, objective_value

__all__ = [
    "MarketConfig",
    "kernel_quantile",
    "Grid",
    "default_grid",
    "pricing_grid",
    "ClassicSolution",
    "solve_classic",
    "FSDSolution",
    "pointwise_optimum",
    "solve_fsd",
    "PPRASolution",
    "Region",
    "detect_region",
    "solve_ppra",
    "DominanceReport",
    "budget_value",
    "check_fsd",
    "check_ssd",
    "objective_value",
]

__version__ = "0.1.0"
