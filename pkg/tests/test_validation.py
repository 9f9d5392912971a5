import numpy as np
import pytest

from sdport.errors import NonFiniteIntegrand
from sdport.market import MarketConfig, kernel_quantile
from sdport.ppra import solve_ppra
from sdport.quantiles import (
    LognormalQuantile,
    UniformAffineQuantile,
)
from sdport.utilities import ExponentialUtility, LogUtility, LogUtility as _Log, PowerUtility
from sdport.validation import budget_value, check_fsd, check_ssd, objective_value


def bs_market(x_bar=10.0):
    return MarketConfig(r=0.05, mu_S=0.086, sigma_S=0.3, T=20.0, x_bar=x_bar)


class TestFsdCheck:
    def test_reflexive(self, grid):
        q = LognormalQuantile(3.0, 1.0)
        report = check_fsd(q, q, grid)
        assert report.feasible
        assert report.worst_violation == pytest.approx(0.0, abs=1e-14)

    def test_uniform_shift_down_infeasible(self, grid):
        q0 = LognormalQuantile(3.0, 1.0)
        q = LognormalQuantile(3.0, 1.0, shift=-1.0)
        report = check_fsd(q, q0, grid)
        assert not report.feasible
        assert report.worst_violation == pytest.approx(1.0, abs=1e-10)

    def test_fsd_implies_ssd(self, grid, rng):
        for _ in range(100):
            mu0 = rng.uniform(-0.5, 2.0)
            sigma0 = rng.uniform(0.3, 1.5)
            lift = rng.uniform(0.0, 2.0)
            q0 = LognormalQuantile(mu0, sigma0)
            q = LognormalQuantile(mu0, sigma0, shift=lift)
            assert check_fsd(q, q0, grid).feasible
            assert check_ssd(q, q0, grid).feasible


class TestSsdCheck:
    def test_mean_preserving_spread_direction(self, grid):
        # same mean 0.5, q is a spread of q0: q0 dominates q, not conversely
        q0 = UniformAffineQuantile(1.0, 0.0)
        q = UniformAffineQuantile(2.0, -0.5)
        assert not check_ssd(q, q0, grid).feasible
        assert check_ssd(q0, q, grid).feasible
        # closed-form oracle: int_0^t (Q0 - Q) ds = t/2 - t^2/2 >= 0
        ts = np.linspace(0.01, 0.99, 99)
        oracle = 0.5 * ts - 0.5 * ts**2
        assert np.all(oracle >= 0)

    def test_transitive_on_nested_contractions(self, grid):
        qa = UniformAffineQuantile(4.0, -2.0)
        qb = UniformAffineQuantile(2.0, -1.0)
        qc = UniformAffineQuantile(1.0, -0.5)
        assert check_ssd(qb, qa, grid).feasible
        assert check_ssd(qc, qb, grid).feasible
        assert check_ssd(qc, qa, grid).feasible

    def test_violation_location_reported(self, grid):
        q0 = UniformAffineQuantile(1.0, 0.0)
        q = UniformAffineQuantile(2.0, -0.5)
        report = check_ssd(q, q0, grid)
        # deficit t/2 - t^2/2 against scale 1 + t^2/2; the reported location
        # maximizes the relative deficit (the feasibility criterion)
        ts = np.linspace(1e-4, 1 - 1e-4, 100_000)
        rel = (0.5 * ts - 0.5 * ts**2) / (1.0 + 0.5 * ts**2)
        assert report.worst_location == pytest.approx(ts[np.argmax(rel)], abs=2e-3)
        assert report.worst_violation == pytest.approx(
            0.5 * report.worst_location - 0.5 * report.worst_location**2, abs=1e-6
        )


class TestValues:
    def test_unit_quantile_log_objective(self, grid):
        q = UniformAffineQuantile(0.0, 1.0)
        assert objective_value(q, _Log(), grid) == pytest.approx(0.0, abs=1e-12)

    def test_log_of_nonpositive_raises(self, grid):
        q = UniformAffineQuantile(0.0, -1.0)
        with pytest.raises(NonFiniteIntegrand):
            objective_value(q, _Log(), grid)

    def test_kernel_self_price_against_monte_carlo(self, market, rng):
        # E[rho Q_rho(1 - F(rho))] = e^{2 mu}; antithetic MC oracle
        ker = kernel_quantile(market)
        value = budget_value(ker, ker)
        z = rng.standard_normal(5_000_000)
        z = np.concatenate([z, -z])
        samples = np.exp(market.sigma * z + market.mu) * np.exp(-market.sigma * z + market.mu)
        mc = samples.mean()  # deterministic here; antithetic pairs are exact
        assert value == pytest.approx(np.exp(2 * market.mu), rel=1e-6)
        assert abs(value - mc) <= 3 * samples.std() / np.sqrt(samples.size) + 1e-12

    def test_published_objectives_for_trainer_rows(self, grid):
        sol_a = solve_ppra(ExponentialUtility(0.6), UniformAffineQuantile(1.0, 0.0),
                           bs_market(0.3), grid)
        assert sol_a.objective == pytest.approx(-0.8965, abs=2e-3)
        sol_d = solve_ppra(LogUtility(), UniformAffineQuantile(10.0, 0.0),
                           bs_market(1.4), grid)
        assert sol_d.objective == pytest.approx(1.4781, abs=2e-3)
