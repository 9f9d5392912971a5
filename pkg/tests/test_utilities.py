import numpy as np
import pytest

from sdport.errors import AtKink, NoFiniteEnvelope, OutOfDomain
from sdport.utilities import (
    ExponentialUtility,
    LogUtility,
    Piecewise4Utility,
    PowerUtility,
    SShapedUtility,
    _solve_tangent,
    from_config,
    fsd_tangent,
    fsd_tangent_many,
)


@pytest.fixture(scope="module")
def sshaped():
    return SShapedUtility(p=0.6, q=0.5, k=2.0, liquidation=-5.0)


@pytest.fixture(scope="module")
def piecewise():
    return Piecewise4Utility(p1=0.6, q1=0.6, p2=0.8, q2=0.9, lam1=1.0, lam2=2.0)


ALL_UTILITIES = [
    ("power", lambda: PowerUtility(0.6)),
    ("log", lambda: LogUtility()),
    ("exponential", lambda: ExponentialUtility(0.6)),
    ("s-shaped", lambda: SShapedUtility(0.6, 0.5, 2.0, liquidation=-5.0)),
    ("piecewise4", lambda: Piecewise4Utility(0.6, 0.6, 0.8, 0.9, 1.0, 2.0)),
]


def interior_points(u, rng, n):
    lo = u.domain_lo if np.isfinite(u.domain_lo) else -10.0
    xs = rng.uniform(lo + 1e-3, 10.0, size=n)
    for kink in (0.0, 1.0, 2.0):
        xs = xs[np.abs(xs - kink) > 1e-3]
    return xs


class TestValuesAndMarginals:
    def test_published_examples(self, sshaped):
        assert PowerUtility(0.6).value(1.0) == pytest.approx(1 / 0.6)
        assert PowerUtility(0.6).marginal(1.0) == pytest.approx(1.0)
        assert LogUtility().marginal(2.0) == pytest.approx(0.5)
        assert ExponentialUtility(0.6).marginal(1.0) == pytest.approx(np.exp(-0.6))
        assert ExponentialUtility(0.6).value(0.0) == pytest.approx(-1 / 0.6)
        assert sshaped.value(-4.0) == pytest.approx(-2.0 * np.sqrt(4.0))

    @pytest.mark.parametrize("name, make", ALL_UTILITIES)
    def test_marginal_matches_finite_difference(self, name, make, rng):
        u = make()
        xs = interior_points(u, rng, 1000)
        h = 1e-6
        fd = (u.value(xs + h) - u.value(xs - h)) / (2 * h)
        assert np.allclose(u.marginal(xs), fd, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("name, make", ALL_UTILITIES)
    def test_value_increasing(self, name, make):
        u = make()
        lo = u.domain_lo if np.isfinite(u.domain_lo) else -10.0
        xs = np.linspace(lo + 1e-9, 20.0, 5000)
        vals = u.value(xs)
        assert np.all(np.diff(vals) >= -1e-12)

    def test_kink_and_domain_errors(self, sshaped, piecewise):
        with pytest.raises(AtKink):
            sshaped.marginal(0.0)
        with pytest.raises(AtKink):
            piecewise.marginal(2.0)
        with pytest.raises(OutOfDomain):
            sshaped.value(-6.0)
        with pytest.raises(OutOfDomain):
            PowerUtility(0.6).value(-1.0)


class TestConjugate:
    def test_closed_forms(self):
        assert PowerUtility(0.6).conjugate(1.0) == pytest.approx(1.0)
        assert LogUtility().conjugate(0.25) == pytest.approx(4.0)

    def test_exponential_unclamped(self):
        # natural domain is all of R: the conjugate goes negative past y = 1
        u = ExponentialUtility(0.6)
        assert u.conjugate(1.0) == pytest.approx(0.0)
        assert u.conjugate(np.exp(0.6)) == pytest.approx(-1.0)

    def test_rejects_nonpositive_argument(self, sshaped):
        for u in (PowerUtility(0.6), LogUtility(), sshaped):
            with pytest.raises(OutOfDomain):
                u.conjugate(0.0)

    def test_sshaped_jump_at_tangent_slope(self, sshaped):
        env = sshaped.envelope
        assert sshaped.conjugate(env.kappa) == pytest.approx(env.C_liq, rel=1e-10)
        assert sshaped.conjugate(env.kappa * (1 + 1e-9)) == pytest.approx(-5.0)

    def test_no_envelope_without_boundary(self):
        u = SShapedUtility(0.6, 0.5, 2.0)
        with pytest.raises(NoFiniteEnvelope):
            u.conjugate(1.0)

    @pytest.mark.parametrize("name, make", ALL_UTILITIES)
    def test_nonincreasing_in_y(self, name, make):
        u = make()
        ys = np.geomspace(1e-3, 1e3, 1000)
        vals = u.conjugate(ys)
        assert np.all(np.diff(vals) <= 1e-12)

    @pytest.mark.parametrize(
        "name, make",
        [p for p in ALL_UTILITIES if p[0] in ("s-shaped", "piecewise4")],
    )
    def test_brute_force_argmax_oracle(self, name, make, rng):
        # oracle: dense argmax of U(x) - x y over the domain
        u = make()
        xs = np.concatenate(
            [np.linspace(u.domain_lo, 8.0, 900_001), np.geomspace(8.0, 5e4, 200_000)]
        )
        vals = u.value(xs)
        for y in rng.uniform(0.05, 3.0, size=50):
            idx = int(np.argmax(vals - xs * y))
            assert float(u.conjugate(y)) == pytest.approx(
                xs[idx], abs=5e-3 * max(1.0, abs(xs[idx]))
            )

    @pytest.mark.parametrize("name, make", ALL_UTILITIES)
    def test_duality_sup_check(self, name, make, rng):
        # U(x*) - x* y must dominate the dense-grid supremum
        u = make()
        lo = u.domain_lo if np.isfinite(u.domain_lo) else -50.0
        xs = np.linspace(lo + 1e-9, 200.0, 200_001)
        vals = u.value(xs)
        for y in rng.uniform(0.05, 2.0, size=100):
            x_star = min(max(float(u.conjugate(y)), lo + 1e-12), 1e6)
            best = float(np.max(vals - xs * y))
            assert u.value(x_star) - x_star * y >= best - 1e-8 * max(1.0, abs(best))


class TestMarginalSup:
    @pytest.mark.parametrize("name, make", ALL_UTILITIES)
    def test_inverse_relationship(self, name, make):
        # I(M(w)) >= w, with equality wherever w lies on the envelope
        u = make()
        ws = np.linspace(max(u.domain_lo, -4.0) + 1e-6, 30.0, 400)
        ms = np.asarray(u.marginal_sup(ws))
        finite = np.isfinite(ms)
        back = np.asarray(u.conjugate(ms[finite]))
        assert np.all(back >= ws[finite] - 1e-9 * np.maximum(1.0, np.abs(ws[finite])))

    def test_sshaped_branches(self, sshaped):
        env = sshaped.envelope
        assert sshaped.marginal_sup(env.C_liq + 1.0) == pytest.approx(
            (env.C_liq + 1.0) ** (0.6 - 1.0)
        )
        assert sshaped.marginal_sup(0.5 * env.C_liq) == pytest.approx(env.kappa)
        assert np.isinf(sshaped.marginal_sup(-6.0))


class TestEnvelope:
    def test_tangent_line_residual(self, sshaped):
        env = sshaped.envelope
        L = sshaped.liquidation
        chord = (sshaped.u1_value(env.C_liq) - sshaped.value(L)) / (env.C_liq - L)
        assert abs(chord - env.kappa) < 1e-8
        assert env.C_liq > 0.0
        assert env.kappa == pytest.approx(sshaped.u1_marginal(env.C_liq), rel=1e-12)

    def test_piecewise_bridges_are_tangent(self, piecewise):
        for b in piecewise.bridges:
            x_lo = max(b.x_lo, piecewise.liquidation)
            chord = (piecewise.value(b.x_hi) - piecewise.value(x_lo)) / (b.x_hi - x_lo)
            assert chord == pytest.approx(b.slope, rel=1e-6)
            if x_lo > piecewise.liquidation:
                assert piecewise.marginal(x_lo) == pytest.approx(b.slope, rel=1e-6)
            assert piecewise.marginal(b.x_hi) == pytest.approx(b.slope, rel=1e-6)

    def test_piecewise_default_constant_is_continuous(self, piecewise):
        assert piecewise.c == pytest.approx(-2.0)
        assert np.allclose(piecewise.join_gaps, 0.0, atol=1e-12)

    def test_piecewise_reports_discontinuity(self):
        u = Piecewise4Utility(0.6, 0.6, 0.8, 0.9, 1.0, 2.0, c=-2.5)
        assert min(u.join_gaps) < -1e-6 or max(u.join_gaps) > 1e-6


class TestTangent:
    def test_sqrt_closed_form(self):
        # anchor (-1, 0) on U1 = sqrt(x): 2C = C + 1
        c = _solve_tangent(lambda x: np.sqrt(x), lambda x: 0.5 / np.sqrt(x), 0.0, -1.0, 0.0)
        assert c == pytest.approx(1.0, abs=1e-8)

    def test_anchor_near_kink_collapses(self):
        u = SShapedUtility(0.6, 0.5, 2.0)
        assert fsd_tangent(u, -1e-6) < 1e-3

    def test_matches_envelope_at_liquidation(self, sshaped):
        assert fsd_tangent(sshaped, -5.0) == pytest.approx(sshaped.envelope.C_liq, abs=1e-6)

    def test_nonincreasing_in_anchor(self):
        u = SShapedUtility(0.6, 0.5, 2.0)
        ws = np.linspace(-8.0, -1e-4, 100)
        cs = fsd_tangent_many(u, ws)
        assert np.all(np.diff(cs) <= 1e-10)
        spot = np.asarray([fsd_tangent(u, w) for w in ws[::10]])
        assert np.allclose(cs[::10], spot, rtol=1e-9)


class TestConfig:
    def test_roundtrip(self):
        for _, make in ALL_UTILITIES:
            u = make()
            clone = from_config(u.descriptor())
            xs = np.linspace(max(u.domain_lo, -4.0) + 1e-6, 5.0, 101)
            assert np.allclose(clone.value(xs), u.value(xs), rtol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            from_config({"kind": "quadratic"})
