"""Closed-form market/benchmark/utility pieces re-derived from the export.

The trainer consumes only the solver's export file (multiplier, segment
partition, market parameters, utility and benchmark descriptors).  The
quantile and utility formulas below are re-derived here in torch so the
training graph stays differentiable end to end; they intentionally do not
import the solver package.
"""

from __future__ import annotations

import math

import torch

SQRT2 = math.sqrt(2.0)


def norm_ppf(s: torch.Tensor) -> torch.Tensor:
    return SQRT2 * torch.erfinv(2.0 * s - 1.0)


def kernel_quantile(market: dict, t: torch.Tensor) -> torch.Tensor:
    return torch.exp(market["sigma"] * norm_ppf(t) + market["mu"])


def benchmark_quantile(desc: dict, s: torch.Tensor) -> torch.Tensor:
    family = desc["family"]
    if family == "lognormal":
        return torch.exp(desc["sigma0"] * norm_ppf(s) + desc["mu0"]) + desc.get("shift", 0.0)
    if family == "normal":
        return desc["sigma0"] * norm_ppf(s) + desc["mu0"]
    if family == "exponential":
        return -torch.log1p(-s) / desc["rate"] + desc.get("shift", 0.0)
    if family == "uniform-affine":
        return desc["slope"] * s + desc["intercept"]
    if family == "polynomial":
        out = torch.zeros_like(s)
        for coef in reversed(desc["coeffs"]):
            out = out * s + coef
        return out
    raise ValueError(f"unknown benchmark family {family!r}")


def utility_value(desc: dict, x: torch.Tensor) -> torch.Tensor:
    """U(x) for rectified network output (x >= 0 by construction).

    Families needing strictly positive wealth are floored at 1e-12.
    """
    kind = desc["kind"]
    if kind == "power":
        p = desc["p"]
        return torch.clamp(x, min=1e-12) ** p / p
    if kind == "log":
        return torch.log(torch.clamp(x, min=1e-12))
    if kind == "exponential":
        p = desc["p"]
        return -torch.exp(-p * x) / p
    if kind == "s-shaped":
        # rectified outputs never reach the convex loss branch
        p = desc["p"]
        return torch.clamp(x, min=0.0) ** p / p
    raise ValueError(f"unsupported utility kind {kind!r} for training")


def _sshaped_kappa(desc: dict) -> float:
    """Tangent slope of the concave envelope at the liquidation boundary."""
    p, q, k = desc["p"], desc["q"], desc["k"]
    L = desc["liquidation"]
    anchor = -k * (-L) ** q

    def defect(c: float) -> float:
        return c ** (p - 1.0) * (c - L) - c**p / p + anchor

    lo, hi = 1e-12, 1.0
    while defect(hi) > 0.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if defect(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    c_liq = 0.5 * (lo + hi)
    return c_liq ** (p - 1.0)


def conjugate(desc: dict, y: torch.Tensor) -> torch.Tensor:
    """Unconstrained-optimum wealth at marginal price y, rectified at zero."""
    kind = desc["kind"]
    if kind == "power":
        p = desc["p"]
        return y ** (1.0 / (p - 1.0))
    if kind == "log":
        return 1.0 / y
    if kind == "exponential":
        return torch.clamp(-torch.log(y) / desc["p"], min=0.0)
    if kind == "s-shaped":
        p = desc["p"]
        kappa = _sshaped_kappa(desc)
        branch = y ** (1.0 / (p - 1.0))
        return torch.where(y <= kappa, branch, torch.full_like(y, desc["liquidation"]))
    raise ValueError(f"unsupported utility kind {kind!r} for training")
