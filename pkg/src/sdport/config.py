"""Experiment config parsing and feasibility screening."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import quantiles, utilities
from .errors import Infeasible
from .market import MarketConfig, kernel_quantile
from .numerics import Grid, pricing_grid
from .quantiles import Quantile, minimal_budget

PROBLEMS = ("classic", "fsd", "ssd-ppra", "validate")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    market: MarketConfig
    utility: object
    benchmark: Quantile | None
    grid_options: dict
    raw: dict

    def grid(self) -> Grid:
        opts = dict(self.grid_options)
        return Grid.gauss_legendre(
            panels=int(opts.get("panels", 64)),
            order=int(opts.get("order", 16)),
            clip=float(opts.get("clip", 1e-6)),
        )


def parse_config(data: dict) -> ExperimentConfig:
    problem = data.get("problem")
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}, got {problem!r}")
    market = MarketConfig(**data["market"])
    utility = utilities.from_config(data["utility"])
    benchmark = None
    if "benchmark" in data and data["benchmark"] is not None:
        benchmark = quantiles.from_config(data["benchmark"])
    if problem in ("fsd", "ssd-ppra"):
        if benchmark is None:
            raise ValueError(f"{problem} requires a benchmark quantile")
        x_q0 = minimal_budget(benchmark, kernel_quantile(market), pricing_grid())
        if market.x_bar < x_q0 - 1e-9 * max(1.0, abs(market.x_bar)):
            raise Infeasible(
                f"x_bar={market.x_bar} is below the benchmark price {x_q0:.6f}"
            )
    return ExperimentConfig(
        problem=problem,
        market=market,
        utility=utility,
        benchmark=benchmark,
        grid_options=dict(data.get("grid", {})),
        raw=data,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))
