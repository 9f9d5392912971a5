import numpy as np
import pytest

from sdport.classic import classic_budget, solve_classic
from sdport.errors import BudgetUnattainable
from sdport.market import MarketConfig, kernel_quantile
from sdport.utilities import ExponentialUtility, LogUtility, PowerUtility, SShapedUtility


def power_lambda_closed_form(p, x_bar, mu, sigma):
    """lambda = (x_bar / E[rho^{p/(p-1)}])^{p-1} via the lognormal moment."""
    k = p / (p - 1.0)
    moment = np.exp(k * mu + 0.5 * k**2 * sigma**2)
    return (x_bar / moment) ** (p - 1.0)


class TestSolve:
    def test_power_published_row(self, market, grid):
        sol = solve_classic(PowerUtility(0.6), market, grid)
        assert sol.lambda_cla == pytest.approx(0.9003, abs=1e-3)
        closed = power_lambda_closed_form(0.6, 10.0, market.mu, market.sigma)
        assert sol.lambda_cla == pytest.approx(closed, rel=1e-6)
        assert abs(sol.budget - market.x_bar) <= 1e-4 * market.x_bar

    def test_sshaped_published_row(self, market, grid):
        u = SShapedUtility(0.6, 0.5, 2.0, liquidation=-5.0)
        sol = solve_classic(u, market, grid)
        assert sol.lambda_cla == pytest.approx(0.8979, abs=2e-3)
        assert abs(sol.budget - market.x_bar) <= 1e-4 * market.x_bar

    def test_random_power_rows_match_closed_form(self, grid, rng):
        # kernel volatility capped so the budget integrand's Gaussian mass
        # (centered at z = sigma p/(p-1)) stays inside the clipped window
        for _ in range(20):
            p = rng.uniform(0.1, 0.75)
            r = rng.uniform(0.0, 0.06)
            m = MarketConfig(
                r=r,
                mu_S=r + rng.uniform(0.02, 0.045),
                sigma_S=rng.uniform(0.25, 0.4),
                T=rng.uniform(4.0, 16.0),
                x_bar=rng.uniform(1.0, 20.0),
            )
            sol = solve_classic(PowerUtility(p), m, grid)
            closed = power_lambda_closed_form(p, m.x_bar, m.mu, m.sigma)
            assert sol.lambda_cla == pytest.approx(closed, rel=1e-6)

    def test_budget_strictly_decreasing_in_lambda(self, market, grid):
        for u in (PowerUtility(0.6), SShapedUtility(0.6, 0.5, 2.0, liquidation=-5.0)):
            lam = solve_classic(u, market, grid).lambda_cla
            budgets = [classic_budget(u, market, f * lam, grid) for f in (0.5, 1.0, 2.0)]
            assert budgets[0] > budgets[1] > budgets[2]

    def test_counter_comonotone_with_kernel(self, market, grid):
        sol = solve_classic(PowerUtility(0.6), market, grid)
        ss = np.linspace(1e-5, 1 - 1e-5, 2000)
        vals = sol.quantile.eval(ss)
        assert np.all(np.diff(vals) >= -1e-10 * np.maximum(1.0, np.abs(vals[:-1])))

    def test_unattainable_budget(self, grid):
        m = MarketConfig(r=0.05, mu_S=0.086, sigma_S=0.3, T=20.0, x_bar=-5.0)
        with pytest.raises(BudgetUnattainable):
            solve_classic(PowerUtility(0.6), m, grid)

    def test_exponential_matches_log_moment_identity(self, grid):
        # closed form without clamping: x_bar = (-ln(lam) E[rho] - E[rho ln rho]) / p
        p = 0.6
        m = MarketConfig(r=0.05, mu_S=0.086, sigma_S=0.3, T=20.0, x_bar=0.3)
        e_rho = np.exp(m.mu + m.sigma**2 / 2)
        e_rho_ln = e_rho * (m.mu + m.sigma**2)
        lam_closed = np.exp(-(p * m.x_bar + e_rho_ln) / e_rho)
        sol = solve_classic(ExponentialUtility(p), m, grid)
        assert sol.lambda_cla == pytest.approx(lam_closed, rel=1e-6)
        assert sol.lambda_cla == pytest.approx(1.4429, abs=1e-3)

    def test_log_is_reciprocal_budget(self, grid):
        m = MarketConfig(r=0.05, mu_S=0.086, sigma_S=0.3, T=20.0, x_bar=1.8)
        sol = solve_classic(LogUtility(), m, grid)
        assert sol.lambda_cla == pytest.approx(1.0 / 1.8, rel=1e-6)
