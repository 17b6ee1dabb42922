import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bufwer.distributions import (
    AlternativeDensity,
    RegimeSpec,
    clamp_pvalues,
    density_eval,
    normal_cdf,
    normal_quantile,
    sample_alternative,
    solve_theta,
)

mpmath.mp.dps = 40


def mp_cdf(x: float) -> float:
    return float(mpmath.ncdf(x))


def mp_quantile(u: float) -> float:
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(u) - 1))


def s3_density() -> AlternativeDensity:
    c = (1.0 - 3.0 * 0.03 - 1.4 * 0.02) / 0.95
    return AlternativeDensity.piecewise_constant([0.0, 0.03, 0.05, 1.0], [3.0, 1.4, c])


class TestNormalCdf:
    def test_symmetry_at_zero(self):
        assert normal_cdf(0.0) == 0.5

    def test_known_quantile_point(self):
        # 0.5% point of the standard normal, via the high-precision oracle
        assert normal_cdf(-2.5758293) == pytest.approx(0.005, abs=1e-7)

    def test_accuracy_against_mpmath(self):
        xs = np.linspace(-8.0, 8.0, 2001)
        errs = [abs(normal_cdf(float(x)) - mp_cdf(float(x))) for x in xs]
        assert max(errs) <= 1e-12

    def test_strictly_increasing(self):
        # strict where consecutive double-precision values near 1 can still
        # resolve the increment (the CDF saturates smoothly for large x)
        xs = np.linspace(-8.0, 6.0, 5001)
        assert np.all(np.diff(normal_cdf(xs)) > 0)


class TestNormalQuantile:
    @pytest.mark.parametrize("u,want,tol", [(0.5, 0.0, 1e-12), (0.005, -2.5758, 1e-4), (0.7, 0.5244, 1e-4)])
    def test_reference_points(self, u, want, tol):
        assert normal_quantile(u) == pytest.approx(want, abs=tol)
        assert normal_quantile(u) == pytest.approx(mp_quantile(u), abs=1e-9)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.7])
    def test_domain_error(self, u):
        with pytest.raises(ValueError):
            normal_quantile(u)

    def test_round_trip_grid(self):
        us = np.linspace(1e-8, 1 - 1e-8, 1000)
        assert np.max(np.abs(normal_cdf(normal_quantile(us)) - us)) <= 1e-10

    @given(st.floats(min_value=1e-8, max_value=1 - 1e-8))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, u):
        assert normal_cdf(normal_quantile(u)) == pytest.approx(u, abs=1e-10)


class TestDensity:
    def test_null_shift_is_uniform(self):
        g = AlternativeDensity.normal_shift(0.0)
        for p in (0.001, 0.34, 0.99):
            assert density_eval(g, p) == 1.0

    def test_normal_shift_formula(self):
        g = AlternativeDensity.normal_shift(-2.05)
        want = np.exp(2.05 * 2.5758293 - 2.05**2 / 2)
        assert density_eval(g, 0.005) == pytest.approx(want, abs=0.1)
        assert density_eval(g, 0.005) == pytest.approx(24.0, abs=0.5)

    def test_piecewise_s3_levels(self):
        g = s3_density()
        assert density_eval(g, 0.04) == 1.4
        assert density_eval(g, 0.01) == 3.0
        assert density_eval(g, 0.5) == pytest.approx(0.92842, abs=1e-5)
        # right-continuous at interior breakpoints
        assert density_eval(g, 0.03) == 1.4

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_endpoint_error(self, p):
        with pytest.raises(ValueError):
            density_eval(AlternativeDensity.normal_shift(-1.0), p)

    def test_decreasing_for_negative_shift(self):
        g = AlternativeDensity.normal_shift(-1.3)
        rng = np.random.default_rng(1)
        a = rng.random(10_000) * 0.998 + 1e-3
        b = rng.random(10_000) * 0.998 + 1e-3
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keep = lo < hi
        assert np.all(density_eval(g, lo[keep]) > density_eval(g, hi[keep]))

    @pytest.mark.parametrize("g", [
        AlternativeDensity.normal_shift(-2.05),
        AlternativeDensity.normal_shift(0.0),
    ])
    def test_mc_normalization(self, g):
        rng = np.random.default_rng(7)
        u = rng.random(1_000_000)
        vals = density_eval(g, u)
        se = vals.std() / np.sqrt(u.size)
        assert abs(vals.mean() - 1.0) <= max(3 * se, 0.01)

    def test_piecewise_mc_normalization(self):
        rng = np.random.default_rng(8)
        vals = density_eval(s3_density(), rng.random(1_000_000))
        se = vals.std() / np.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) <= 3 * se

    def test_piecewise_validation(self):
        with pytest.raises(ValueError):
            AlternativeDensity.piecewise_constant([0.0, 0.5, 1.0], [1.5, 0.6])
        with pytest.raises(ValueError):
            AlternativeDensity.piecewise_constant([0.1, 1.0], [1.0])
        with pytest.raises(ValueError):
            AlternativeDensity.normal_shift(0.3)


class TestSampling:
    def test_null_is_identity(self):
        g = AlternativeDensity.normal_shift(0.0)
        assert sample_alternative(g, 0.42) == 0.42

    def test_median_of_shifted(self):
        g = AlternativeDensity.normal_shift(-3.10)
        assert sample_alternative(g, 0.5) == pytest.approx(normal_cdf(-3.10), rel=1e-10)
        assert sample_alternative(g, 0.5) == pytest.approx(0.000968, abs=2e-6)

    @pytest.mark.parametrize("g", [
        AlternativeDensity.normal_shift(-2.05),
        "s3",
    ])
    def test_empirical_cdf_matches_analytic(self, g):
        if g == "s3":
            g = s3_density()
        rng = np.random.default_rng(11)
        draws = sample_alternative(g, rng.random(1_000_000))
        for p in (0.01, 0.05, 0.5):
            if g.kind == "normal_shift":
                target = normal_cdf(normal_quantile(p) - g.theta)
            else:
                b = np.asarray(g.breakpoints)
                target = float(np.sum(np.asarray(g.values) * np.clip(p - b[:-1], 0, np.diff(b))))
            se = np.sqrt(target * (1 - target) / draws.size)
            assert abs((draws <= p).mean() - target) <= 3 * se + 1e-9


class TestSolveTheta:
    def test_low_power_regime(self):
        assert solve_theta(RegimeSpec(0.05, 10, 0.3)) == pytest.approx(-2.05, abs=0.01)

    def test_high_power_regime(self):
        assert solve_theta(RegimeSpec(0.05, 10, 0.7)) == pytest.approx(-3.10, abs=0.01)

    def test_target_equal_to_level_gives_zero(self):
        assert solve_theta(RegimeSpec(0.05, 1, 0.05)) == pytest.approx(0.0, abs=1e-12)

    def test_power_identity(self):
        spec = RegimeSpec(0.05, 10, 0.44)
        theta = solve_theta(spec)
        power = normal_cdf(normal_quantile(0.05 / 10) - theta)
        assert power == pytest.approx(0.44, abs=1e-8)

    def test_invalid_regimes(self):
        with pytest.raises(ValueError):
            RegimeSpec(0.05, 10, 0.004)  # below alpha/K
        with pytest.raises(ValueError):
            RegimeSpec(0.05, 10, 1.0)


def test_clamp_warns_and_clips():
    with pytest.warns(UserWarning):
        out = clamp_pvalues(np.array([0.0, 0.5, 1.0]))
    assert out[0] == 1e-15 and out[2] == 1 - 1e-15 and out[1] == 0.5
