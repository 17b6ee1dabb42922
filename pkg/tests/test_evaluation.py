import numpy as np
import pytest

from bufwer.bottomup import derived_rng
from bufwer.distributions import AlternativeDensity, sample_alternative
from bufwer.evaluation import (
    K1Setting,
    PiecewiseSetup,
    SimulationConfig,
    build_procedure,
    compare_table,
    exact_power_piecewise,
    region_csv_rows,
    region_grid,
    run_simulation,
    tri_level_setup,
    simulation_csv_rows,
)

ALPHA = 0.05


@pytest.fixture(scope="module")
def small_procs():
    return tuple(
        build_procedure(d, K=4, alpha=ALPHA, B=10_000, seed=1)
        for d in ["bonferroni", "hommel", "gou", "bu-mix:-2.05"]
    )


class TestHarness:
    def test_shapes_and_pure_null(self, small_procs):
        cfg = SimulationConfig(
            K=4, alpha=ALPHA, theta_true=-2.05,
            settings=(K1Setting.fixed(0), K1Setting.fixed(2), K1Setting.mix()),
            reps=20_000, seed=5, procedures=small_procs,
        )
        rows = run_simulation(cfg)
        assert len(rows) == 3 * len(small_procs)
        null_rows = [r for r in rows if r.k1_setting == "0"]
        for r in null_rows:
            assert r.tpr is None and r.tpr_se is None
            assert r.fwer <= ALPHA + 3 * r.fwer_se
        mixed = [r for r in rows if r.k1_setting == "mix"]
        assert all(r.tpr is not None for r in mixed)

    def test_deterministic(self, small_procs):
        cfg = SimulationConfig(
            K=4, alpha=ALPHA, theta_true=-2.05,
            settings=(K1Setting.fixed(1), K1Setting.mix()),
            reps=5000, seed=8, procedures=small_procs,
        )
        assert simulation_csv_rows(run_simulation(cfg)) == simulation_csv_rows(run_simulation(cfg))

    def test_csv_schema(self, small_procs):
        cfg = SimulationConfig(
            K=4, alpha=ALPHA, theta_true=-2.05,
            settings=(K1Setting.fixed(1),), reps=2000, seed=8,
            procedures=small_procs[:1],
        )
        lines = simulation_csv_rows(run_simulation(cfg))
        assert lines[0] == "procedure,K,k1_setting,theta_true,alpha,reps,seed,fwer,fwer_se,tpr,tpr_se"
        assert len(lines) == 2

    def test_config_validation(self, small_procs):
        with pytest.raises(ValueError):
            SimulationConfig(K=4, alpha=ALPHA, theta_true=-2.0,
                             settings=(K1Setting.fixed(5),), reps=2000, seed=0,
                             procedures=small_procs)
        with pytest.raises(ValueError):
            SimulationConfig(K=4, alpha=ALPHA, theta_true=-2.0,
                             settings=(K1Setting.fixed(1),), reps=10, seed=0,
                             procedures=small_procs)
        with pytest.raises(ValueError):
            K1Setting.mix(0.0)

    def test_bad_descriptor(self):
        with pytest.raises(ValueError):
            build_procedure("tukey", K=4, alpha=ALPHA)
        with pytest.raises(ValueError):
            build_procedure("bu-mix", K=4, alpha=ALPHA)


class TestExactPiecewise:
    def test_tri_level_bottom_up(self):
        res = exact_power_piecewise(tri_level_setup(), "bu")
        assert res.pair_boundary == pytest.approx(0.02521, abs=1e-5)
        assert res.pair_null_measure == pytest.approx(ALPHA, abs=1e-12)
        assert res.top_null_measure == pytest.approx(ALPHA, abs=1e-12)
        assert res.tpr == pytest.approx(0.1558337, abs=2e-4)

    def test_tri_level_improved_hommel(self):
        res = exact_power_piecewise(tri_level_setup(), "ih")
        assert res.top_null_measure == pytest.approx(ALPHA, abs=1e-12)
        assert res.tpr == pytest.approx(0.1558538, abs=2e-4)

    def test_ordering(self):
        bu = exact_power_piecewise(tri_level_setup(), "bu")
        ih = exact_power_piecewise(tri_level_setup(), "ih")
        assert ih.tpr > bu.tpr

    def test_uniform_density_pair_exhausts_alpha(self):
        # single-interval density: the two-hypothesis region is {both <= a}
        # plus refined single strips, with total null measure exactly alpha
        g = AlternativeDensity.piecewise_constant([0.0, 1.0], [1.0])
        setup = PiecewiseSetup(K=2, alpha=ALPHA, density=g, objective_kind="single")
        res = exact_power_piecewise(setup, "bu")
        assert res.pair_null_measure == pytest.approx(ALPHA, abs=1e-12)
        # both <= alpha has mass alpha^2; strips supply the rest
        assert res.pair_boundary is not None
        want = (ALPHA - ALPHA**2) / (2 * (1 - ALPHA))
        assert res.pair_boundary == pytest.approx(want, abs=1e-10)

    def test_mc_agrees_with_exact(self):
        setup = tri_level_setup()
        res = exact_power_piecewise(setup, "bu")
        rng = derived_rng(31, 0xE7A, 1)
        n = 300_000
        pos = rng.integers(0, 3, size=n)
        U = rng.random((n, 3))
        P = U.copy()
        alt = sample_alternative(setup.density, U[np.arange(n), pos])
        P[np.arange(n), pos] = alt
        hits = 0
        for row, bp in zip(P, pos):
            hits += int(res.decide(row)[bp])
        tpr_mc = 3.0 * hits / n
        se = 3.0 * np.sqrt((hits / n) * (1 - hits / n) / n)
        assert tpr_mc == pytest.approx(res.tpr, abs=3 * se)

    def test_rejects_non_piecewise(self):
        with pytest.raises(ValueError):
            PiecewiseSetup(K=3, alpha=ALPHA,
                           density=AlternativeDensity.normal_shift(-2.0))
        g = AlternativeDensity.piecewise_constant([0.0, 1.0], [1.0])
        with pytest.raises(ValueError):
            PiecewiseSetup(K=4, alpha=ALPHA, density=g)


class TestRegionGrid:
    def test_gou_everything_large_is_zero(self):
        proc = build_procedure("gou", K=3, alpha=ALPHA)
        recs = region_grid(proc, K=3, resolution=6, window=(0.2, 0.5))
        assert all(r["n_reject"] == 0 for r in recs)

    def test_permutation_consistency(self):
        proc = build_procedure("gou", K=3, alpha=ALPHA)
        recs = region_grid(proc, K=3, resolution=8, window=(0.0, 0.5))
        table = {(round(r["p1"], 9), round(r["p2"], 9), round(r["p3"], 9)): r for r in recs}
        for (a, b, c), r in table.items():
            mirror = table[(b, a, c)]
            assert (r["d1"], r["d2"]) == (mirror["d2"], mirror["d1"])

    def test_fixed_axis_shape_and_csv(self):
        proc = build_procedure("hommel", K=3, alpha=ALPHA)
        recs = region_grid(proc, K=3, fixed=("p3", 0.03), resolution=10)
        assert len(recs) == 100
        assert all(r["p3"] == 0.03 for r in recs)
        lines = region_csv_rows(recs, K=3)
        assert lines[0] == "procedure,p1,p2,p3,d1,d2,d3,n_reject"
        assert len(lines) == 101

    def test_resolution_validation(self):
        proc = build_procedure("gou", K=3, alpha=ALPHA)
        with pytest.raises(ValueError):
            region_grid(proc, K=3, resolution=1)


class TestCompareTable:
    def test_no_discoveries(self, small_procs):
        P = np.full((50, 4), 0.7)
        res = compare_table(P, small_procs)
        assert all(v == 0.0 for v in res.avg_discoveries.values())
        assert all(v == 0.0 for v in res.frac_any_discovery.values())

    def test_identical_procedures_diagonal(self, small_procs):
        rng = np.random.default_rng(2)
        P = rng.random((500, 4)) * np.where(rng.random((500, 4)) < 0.5, 0.1, 1.0)
        res = compare_table(P, [small_procs[1], small_procs[1]])
        tab = res.crosstab[(small_procs[1].name, small_procs[1].name)]
        assert np.array_equal(tab, np.diag(np.diag(tab)))
        assert tab.sum() == 500

    def test_ragged_rejected(self, small_procs):
        with pytest.raises(ValueError):
            compare_table(np.array([[0.1, 0.2], [0.3]], dtype=object), small_procs)

    def test_bu_mix_leads_on_synthetic_mix_data(self):
        # regenerated two-group data at K=5; the bottom-up mix objective
        # should collect the most discoveries on average
        K, theta = 5, -1.80
        descs = ["bu-mix:-1.80", "bu-single:-1.80", "ih-mix:-1.80",
                 "ih-single:-1.80", "hommel", "gou"]
        procs = [build_procedure(d, K, ALPHA, B=50_000, seed=7) for d in descs]
        rng = derived_rng(7, 0xE7A, 2)
        n = 20_000
        H = rng.random((n, K)) < 0.5
        U = rng.random((n, K))
        g = AlternativeDensity.normal_shift(theta)
        P = np.where(H, sample_alternative(g, U), U)
        res = compare_table(P, procs)
        best = res.avg_discoveries["bu-mix:-1.80"]
        for name, val in res.avg_discoveries.items():
            assert best >= val - 1e-12, (name, val, best)
