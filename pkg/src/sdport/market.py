"""Black-Scholes market primitives and the lognormal pricing-kernel quantile.

The kernel terminal value has log(rho) ~ N(mu, sigma^2) with
mu = -(r + theta^2/2) T and sigma = theta sqrt(T), where
theta = (mu_S - r) / sigma_S is the market price of risk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantiles import LognormalQuantile


@dataclass(frozen=True)
class MarketConfig:
    r: float
    mu_S: float
    sigma_S: float
    T: float
    x_bar: float

    def __post_init__(self) -> None:
        if self.sigma_S <= 0.0:
            raise ValueError("sigma_S must be positive")
        if self.T <= 0.0:
            raise ValueError("T must be positive")
        if self.theta == 0.0:
            raise ValueError(
                "zero market price of risk gives a deterministic kernel; not supported"
            )

    @property
    def theta(self) -> float:
        return (self.mu_S - self.r) / self.sigma_S

    @property
    def mu(self) -> float:
        return -(self.r + 0.5 * self.theta**2) * self.T

    @property
    def sigma(self) -> float:
        return abs(self.theta) * np.sqrt(self.T)

    def descriptor(self) -> dict:
        return {
            "r": self.r,
            "mu_S": self.mu_S,
            "sigma_S": self.sigma_S,
            "T": self.T,
            "x_bar": self.x_bar,
            "mu": self.mu,
            "sigma": self.sigma,
        }


def kernel_quantile(m: MarketConfig) -> LognormalQuantile:
    """Quantile of the terminal pricing kernel: exp(sigma Phi^{-1}(t) + mu)."""
    return LognormalQuantile(mu0=m.mu, sigma0=m.sigma)
