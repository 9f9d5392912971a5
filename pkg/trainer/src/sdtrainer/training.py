"""Penalty-based training loop against the exported problem data.

The objective is the sampled expected utility; the budget miss enters
squared and the cumulative-dominance penalty takes the worst prefix-mean
deficit against the benchmark, exactly as specified for the sampled
problem.  Sample ranks are drawn once (stratified uniform, seeded) so the
loss is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .analytic import benchmark_quantile, kernel_quantile, utility_value
from .model import NetworkSpec, QuantileNetwork


class Divergence(RuntimeError):
    """Total loss became non-finite during training."""


def stratified_samples(n: int, seed: int) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    s = (np.arange(n) + rng.uniform(size=n)) / n
    s = np.clip(s, 1e-9, 1.0 - 1e-9)
    return torch.tensor(np.sort(s), dtype=torch.get_default_dtype())


def loss_terms(q_theta: torch.Tensor, s: torch.Tensor, export: dict, spec: NetworkSpec):
    """(L_obj, C1, C2, L_p1, L_p2, total) on sorted samples s."""
    n = s.shape[0]
    x_bar = export["market"]["x_bar"]
    l_obj = utility_value(export["utility"], q_theta).mean()
    c1 = (q_theta * kernel_quantile(export["market"], 1.0 - s)).mean()
    q0 = benchmark_quantile(export["benchmark"], s)
    prefix_deficit = (torch.cumsum(q0, dim=0) - torch.cumsum(q_theta, dim=0)) / n
    c2 = torch.clamp(prefix_deficit.max(), min=0.0)
    l_p1 = spec.w1 * (c1 - x_bar) ** 2
    l_p2 = spec.w2 * c2
    total = -l_obj + l_p1 + l_p2
    return l_obj, c1, c2, l_p1, l_p2, total


@dataclass
class TrainRun:
    spec: NetworkSpec
    seed: int
    steps: list[dict] = field(default_factory=list)
    c1_satisfied_step: int | None = None
    c2_satisfied_step: int | None = None
    final_objective: float = float("nan")
    eval_ranks: np.ndarray | None = None
    eval_quantile: np.ndarray | None = None
    monotonicity_violation: float = float("nan")

    def summary(self) -> dict:
        return {
            "mode": self.spec.mode,
            "seed": self.seed,
            "steps_run": len(self.steps),
            "final_objective": self.final_objective,
            "c1_satisfied_step": self.c1_satisfied_step,
            "c2_satisfied_step": self.c2_satisfied_step,
            "final_c1": self.steps[-1]["c1"] if self.steps else None,
            "final_c2": self.steps[-1]["c2"] if self.steps else None,
            "monotonicity_violation": self.monotonicity_violation,
        }


def train(spec: NetworkSpec, export: dict, seed: int = 0,
          eval_points: int = 10_000) -> TrainRun:
    """Run the optimizer to the step cap or a loss plateau."""
    torch.manual_seed(seed)
    net = QuantileNetwork(spec, export)
    s = stratified_samples(spec.samples, seed)
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate)
    run = TrainRun(spec=spec, seed=seed)
    x_bar = export["market"]["x_bar"]
    c1_tol = spec.c1_rtol * abs(x_bar)
    c2_tol = spec.c2_atol_scale * (1.0 + abs(x_bar))
    recent: list[float] = []
    for step in range(spec.max_steps):
        opt.zero_grad()
        q_theta = net(s)
        l_obj, c1, c2, l_p1, l_p2, total = loss_terms(q_theta, s, export, spec)
        if not torch.isfinite(total):
            raise Divergence(f"non-finite loss at step {step}")
        total.backward()
        opt.step()
        rec = {
            "step": step,
            "objective": float(l_obj.detach()),
            "c1": float(c1.detach()),
            "c2": float(c2.detach()),
            "penalty_budget": float(l_p1.detach()),
            "penalty_dominance": float(l_p2.detach()),
            "total": float(total.detach()),
        }
        run.steps.append(rec)
        if run.c1_satisfied_step is None and abs(rec["c1"] - x_bar) <= c1_tol:
            run.c1_satisfied_step = step
        if run.c2_satisfied_step is None and rec["c2"] <= c2_tol:
            run.c2_satisfied_step = step
        recent.append(rec["total"])
        if len(recent) > spec.plateau_window:
            recent.pop(0)
            if max(recent) - min(recent) < spec.plateau_delta:
                break
    with torch.no_grad():
        ranks = torch.linspace(1e-6, 1 - 1e-6, eval_points)
        values = net(ranks)
        run.eval_ranks = ranks.numpy().copy()
        run.eval_quantile = values.numpy().copy()
        run.monotonicity_violation = float(
            np.maximum(0.0, -np.diff(run.eval_quantile)).max(initial=0.0)
        )
        q_final = net(s)
        run.final_objective = float(utility_value(export["utility"], q_final).mean())
    return run


def load_export(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
