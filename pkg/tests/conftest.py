import numpy as np
import pytest

from sdport.market import MarketConfig
from sdport.numerics import default_grid, pricing_grid


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture(scope="session")
def price_grid():
    return pricing_grid()


@pytest.fixture(scope="session")
def market():
    """Black-Scholes market used throughout the published experiments."""
    return MarketConfig(r=0.05, mu_S=0.086, sigma_S=0.3, T=20.0, x_bar=10.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def lognormal_price_closed_form(mu0, sigma0, mu, sigma):
    """E[Q0(U) Q_rho(1-U)] for lognormal pairs: exp(mu0+mu+(sigma0-sigma)^2/2)."""
    return np.exp(mu0 + mu + 0.5 * (sigma0 - sigma) ** 2)
