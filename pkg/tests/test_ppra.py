import numpy as np
import pytest

from sdport.market import MarketConfig, kernel_quantile
from sdport.ppra import (
    STATUS_CLASSIC,
    STATUS_SUBOPTIMAL,
    CorrectionLevels,
    Region,
    assemble_quantile,
    build_correction,
    detect_region,
    solve_ppra,
    verify_suboptimal,
    y0,
)
from sdport.quantiles import (
    LognormalQuantile,
    UniformAffineQuantile,
    minimal_budget,
)
from sdport.utilities import (
    ExponentialUtility,
    LogUtility,
    PowerUtility,
    SShapedUtility,
)
from sdport.validation import budget_value, check_ssd, objective_value


@pytest.fixture(scope="module")
def power():
    return PowerUtility(0.6)


@pytest.fixture(scope="module")
def sshaped():
    return SShapedUtility(0.6, 0.5, 2.0, liquidation=-5.0)


def bs_market(x_bar=10.0):
    return MarketConfig(r=0.05, mu_S=0.086, sigma_S=0.3, T=20.0, x_bar=x_bar)


class TestDetectRegion:
    def test_power_row_a_at_published_multiplier(self, power, grid):
        region = detect_region(power, LognormalQuantile(3.0, 1.0), bs_market(), 0.9104, grid)
        assert region.n == 1
        a, b = region.intervals[0]
        assert a == pytest.approx(0.6092, abs=5e-3)
        assert b == 1.0

    def test_sshaped_two_intervals(self, sshaped, grid):
        region = detect_region(sshaped, LognormalQuantile(2.3, 2.0), bs_market(), 1.1987, grid)
        assert region.n == 2
        assert region.intervals[0][0] == 0.0
        assert region.intervals[0][1] == pytest.approx(0.4355, abs=5e-3)
        assert region.intervals[1][0] == pytest.approx(0.9669, abs=5e-3)
        assert region.intervals[1][1] == 1.0

    def test_deep_benchmark_gives_empty_region(self, power, grid):
        region = detect_region(
            power, UniformAffineQuantile(0.0, -1e6), bs_market(), 0.9, grid
        )
        assert not region

    def test_equals_positive_correction_set(self, power, grid, rng):
        # C = {y0 > 0}
        q0 = LognormalQuantile(3.0, 1.0)
        m = bs_market()
        region = detect_region(power, q0, m, 0.9104, grid)
        ts = rng.uniform(1e-4, 1 - 1e-4, size=500)
        inside = np.zeros_like(ts, dtype=bool)
        for a, b in region.intervals:
            inside |= (ts > a + 1e-6) & (ts < b - 1e-6)
        levels = y0(power, q0, m, 0.9104, ts)
        assert np.all(levels[inside] > 0)
        assert np.all(levels[~inside] <= 1e-10)


class TestCorrectionLevels:
    def test_zero_outside_region(self, power, grid):
        q0 = LognormalQuantile(3.0, 1.0)
        assert y0(power, q0, bs_market(), 0.9104, 0.3) == 0.0

    def test_power_closed_form(self, power):
        # y0(s) = Q_rho(s) - Q0(1-s)^{p-1} / lambda on the concave branch
        q0 = LognormalQuantile(3.0, 1.0)
        m = bs_market()
        lam = 0.9104
        ker = kernel_quantile(m)
        s = 0.8
        expected = float(ker.eval(s)) - float(q0.eval(1 - s)) ** (0.6 - 1.0) / lam
        assert y0(power, q0, m, lam, s) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.037, abs=2e-3)

    def test_matches_bisection_reference(self, sshaped, rng):
        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        levels = CorrectionLevels(sshaped, q0, m, 1.1987)
        for t in rng.uniform(0.02, 0.42, size=25):
            assert float(levels(t)) == pytest.approx(
                levels.bisect_reference(float(t)), abs=1e-8
            )

    def test_brute_force_scan_oracle(self, sshaped, rng):
        # dense scan in the correction variable
        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        lam = 1.1987
        levels = CorrectionLevels(sshaped, q0, m, lam)
        ker = kernel_quantile(m)
        for t in rng.uniform(0.05, 0.4, size=8):
            qr = float(ker.eval(t))
            w = float(q0.eval(1 - t))
            ys = np.linspace(0.0, qr * (1 - 1e-12), 1_000_000)
            ok = np.asarray(sshaped.conjugate(lam * (qr - ys))) >= w
            first = ys[int(np.argmax(ok))] if ok.any() else 0.0
            assert float(levels(t)) == pytest.approx(first, abs=2 * qr / 1_000_000)


class TestBuildAndAssemble:
    def test_row_a_tracks_benchmark_on_region(self, power, grid):
        q0 = LognormalQuantile(3.0, 1.0)
        m = bs_market()
        lam = 0.9104
        region = detect_region(power, q0, m, lam, grid)
        corr = build_correction(power, q0, m, lam, region, grid)
        assert corr.partition[0] == 1.0  # tracked all the way
        quantile = assemble_quantile(corr, power, q0, m, lam)
        ss = np.linspace(1e-4, 1 - region.intervals[0][0] - 1e-4, 400)
        assert np.allclose(quantile.eval(ss), q0.eval(ss), rtol=1e-9)

    def test_interior_partition_row_e(self, power, grid):
        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        lam = 1.1951
        region = detect_region(power, q0, m, lam, grid)
        corr = build_correction(power, q0, m, lam, region, grid)
        assert corr.partition[0] == pytest.approx(0.0057, abs=2e-3)
        flat = corr.flat_spans()[-1]
        assert flat.level == pytest.approx(float(corr.levels(corr.partition[0])), rel=1e-9)

    def test_correction_invariants(self, sshaped, grid):
        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        sol = solve_ppra(sshaped, q0, m, grid)
        ts = np.linspace(1e-6, 1 - 1e-6, 5000)
        ys = np.asarray(sol.correction.eval(ts))
        ker = kernel_quantile(m)
        assert np.all(ys >= 0)
        assert np.all(np.diff(ys) >= -1e-10)
        assert np.all(np.asarray(ker.eval(ts)) - ys > 0)

    def test_mixed_exponential_segment_boundary(self, grid):
        # benchmark segment of the exponential/uniform row starts at 1 - a_1
        u = ExponentialUtility(0.6)
        q0 = UniformAffineQuantile(1.0, 0.0)
        sol = solve_ppra(u, q0, bs_market(0.3), grid)
        a_1 = sol.region.intervals[-1][0]
        assert a_1 == pytest.approx(0.8803, abs=5e-3)
        bps = sol.quantile.segment_breakpoints
        assert np.min(np.abs(bps - (1 - a_1))) < 1e-9
        tags = [seg.tag for seg in sol.quantile.segments]
        assert tags == ["benchmark", "classic-shifted"]

    def test_mixed_log_uniform_interior_structure(self, grid):
        u = LogUtility()
        q0 = UniformAffineQuantile(10.0, 0.0)
        sol = solve_ppra(u, q0, bs_market(1.4), grid)
        (a_1, b_1) = sol.region.intervals[0]
        assert a_1 == pytest.approx(0.0426, abs=5e-3)
        assert b_1 == pytest.approx(0.7236, abs=5e-3)
        assert float(sol.partition[0]) == pytest.approx(0.1766, abs=5e-3)
        tags = [seg.tag for seg in sol.quantile.segments]
        assert tags == ["classic-shifted", "benchmark", "classic-shifted"]


class TestVerify:
    def test_published_rows_verify(self, power, grid):
        q0 = LognormalQuantile(3.0, 1.0)
        m = bs_market()
        sol = solve_ppra(power, q0, m, grid)
        ok, diag = verify_suboptimal(sol.quantile, q0, sol.lam, sol.correction, grid)
        assert ok, diag

    def test_corrupted_level_fails(self, power, grid):
        from dataclasses import replace

        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        lam = 1.1951
        region = detect_region(power, q0, m, lam, grid)
        corr = build_correction(power, q0, m, lam, region, grid)
        bad_pieces = tuple(
            replace(p, level=0.5 * p.level) if p.kind == "flat" else p for p in corr.pieces
        )
        bad = replace(corr, pieces=bad_pieces)
        quantile = assemble_quantile(bad, power, q0, m, lam)
        ok, diag = verify_suboptimal(quantile, q0, lam, bad, grid)
        assert not ok
        assert diag["worst_z"] > 1e-3
        assert not check_ssd(quantile, q0, grid).feasible


class TestSolve:
    def test_power_row_a(self, power, grid):
        sol = solve_ppra(power, LognormalQuantile(3.0, 1.0), bs_market(), grid)
        assert sol.lam == pytest.approx(0.9104, abs=5e-3)
        assert sol.status == STATUS_SUBOPTIMAL
        assert float(sol.partition[0]) == 1.0

    def test_power_row_c_classic_shortcut(self, power, grid):
        sol = solve_ppra(power, LognormalQuantile(3.0, 1.4), bs_market(), grid)
        assert sol.status == STATUS_CLASSIC
        assert sol.lam == sol.lambda_cla
        assert sol.lam == pytest.approx(0.9003, abs=5e-3)
        assert float(sol.partition[0]) == 0.0
        # classic shortcut must hand back the classic quantile verbatim
        ss = np.linspace(1e-5, 1 - 1e-5, 2000)
        from sdport.classic import solve_classic

        classic = solve_classic(power, bs_market(), grid)
        assert np.allclose(sol.quantile.eval(ss), classic.quantile.eval(ss), atol=1e-10)

    def test_sshaped_row_f_two_intervals_with_repair(self, sshaped, grid):
        sol = solve_ppra(sshaped, LognormalQuantile(1.5, 2.5), bs_market(), grid)
        assert sol.status == STATUS_SUBOPTIMAL
        assert sol.lam == pytest.approx(2.1508, abs=2e-2)
        assert sol.region.n == 2
        assert sol.diagnostics["repairs"]

    def test_budget_binds_and_dominates_benchmark(self, power, grid):
        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        sol = solve_ppra(power, q0, m, grid)
        assert abs(sol.budget - m.x_bar) <= 1e-4 * m.x_bar
        assert check_ssd(sol.quantile, q0, grid).feasible
        assert sol.objective >= objective_value(q0, power, grid) - 1e-8

    def test_concave_complementary_slackness(self, power, grid):
        # dy = 0 where z < -1e-6 and z <= 1e-6 everywhere
        q0 = LognormalQuantile(2.3, 2.0)
        m = bs_market()
        sol = solve_ppra(power, q0, m, grid)
        from sdport.numerics import cumulative_integral

        ts = np.linspace(grid.clip, 1 - grid.clip, 4000)
        xs = np.sort(1 - ts)
        deficit = cumulative_integral(
            lambda s: np.asarray(q0.eval(s)) - np.asarray(sol.quantile.eval(s)),
            np.concatenate([[grid.clip], xs]),
            breakpoints=sol.quantile.breakpoints(),
        )[1:]
        z = deficit[::-1]
        scale = 1.0 + m.x_bar
        assert np.all(z <= 1e-6 * scale)
        ys = np.asarray(sol.correction.eval(ts))
        dy = np.diff(ys)
        slack = (z[:-1] < -1e-6 * scale) & (z[1:] < -1e-6 * scale)
        assert np.all(np.abs(dy[slack]) <= 1e-8)

    def test_region_collapse_far_benchmark(self, power, grid):
        # benchmark priced at x_bar but far below the classic curve
        q0 = UniformAffineQuantile(0.0, -100.0)
        sol = solve_ppra(power, q0, bs_market(), grid)
        assert sol.status == STATUS_CLASSIC
        assert not sol.region

    def test_export_schema(self, power, grid):
        q0 = LognormalQuantile(3.0, 1.0)
        m = bs_market()
        sol = solve_ppra(power, q0, m, grid)
        payload = sol.to_export(power, q0, m)
        assert set(payload) >= {
            "lambda", "breakpoints", "segments", "market", "utility", "benchmark",
        }
        assert payload["breakpoints"][0] == 0.0
        assert payload["breakpoints"][-1] == 1.0
        assert len(payload["segments"]) == len(payload["breakpoints"]) - 1
        for seg in payload["segments"]:
            assert seg["tag"] in ("benchmark", "classic-shifted")
            if seg["tag"] == "classic-shifted":
                assert "y_level" in seg
