import numpy as np
import pytest

from bufwer.bottomup import derived_rng
from bufwer.classical import (
    ImprovedProcedure,
    LocalTestSuite,
    UnsupportedSuiteError,
    bonferroni,
    bonferroni_suite,
    closed_testing_bruteforce,
    gou_hybrid0,
    holm,
    hommel,
    last_step_improve,
    simes_local,
    simes_suite,
    subset_products,
)
from bufwer.distributions import AlternativeDensity
from bufwer.objectives import ObjectiveSpec

ALPHA = 0.05


def random_pvalues(rng, n, K, small_frac=0.4, small_scale=0.1):
    P = rng.random((n, K))
    P = P * np.where(rng.random((n, K)) < small_frac, small_scale, 1.0)
    return P


class TestBonferroni:
    def test_threshold(self):
        p = [0.2] * 9 + [0.004]
        d = bonferroni(p, ALPHA)
        assert d.sum() == 1 and d[-1] == 1

    def test_boundary_inclusive(self):
        assert np.all(bonferroni([0.005] * 10, ALPHA) == 1)

    def test_none(self):
        assert np.all(bonferroni([0.0051] * 10, ALPHA) == 0)


class TestHolm:
    def test_paper_example_rejects_both(self):
        assert np.array_equal(holm([0.02, 0.04], ALPHA), [1, 1])

    def test_paper_example_rejects_neither(self):
        assert np.array_equal(holm([0.03, 0.04], ALPHA), [0, 0])

    def test_all_zero(self):
        assert np.all(holm([0.0] * 6, ALPHA) == 1)

    def test_dominates_bonferroni(self):
        rng = np.random.default_rng(0)
        P = random_pvalues(rng, 5000, 7)
        assert np.all(holm(P, ALPHA) >= bonferroni(P, ALPHA))

    def test_matches_bonferroni_closure(self):
        rng = np.random.default_rng(1)
        P = random_pvalues(rng, 1000, 5)
        assert np.array_equal(holm(P, ALPHA), closed_testing_bruteforce(bonferroni_suite(), P, ALPHA))


class TestSimes:
    def test_boundary_all_alpha(self):
        assert simes_local([ALPHA] * 4, ALPHA) == 1

    def test_all_above(self):
        assert simes_local([0.06, 0.2, 0.9], ALPHA) == 0

    def test_traced_example(self):
        # i=1: 0.02 > 0.0167, i=2: 0.04 > 0.0333, i=3: 0.2 > 0.05
        assert simes_local([0.02, 0.04, 0.2], ALPHA) == 0


class TestHommel:
    def test_k2_closed_form(self):
        # max <= alpha, or either below alpha/2
        assert np.array_equal(hommel([0.03, 0.045], ALPHA), [1, 1])
        assert np.array_equal(hommel([0.02, 0.3], ALPHA), [1, 0])
        assert np.array_equal(hommel([0.026, 0.3], ALPHA), [0, 0])

    def test_none_above_alpha(self):
        assert np.all(hommel([0.2, 0.6, 0.9], ALPHA) == 0)

    @pytest.mark.parametrize("K", [2, 3, 5, 8])
    def test_matches_simes_closure(self, K):
        rng = np.random.default_rng(K)
        P = random_pvalues(rng, 3000, K)
        assert np.array_equal(hommel(P, ALPHA), closed_testing_bruteforce(simes_suite(), P, ALPHA))


class TestGou:
    def test_all_rejected_if_max_small(self):
        assert np.all(gou_hybrid0([0.01, 0.03, 0.049], ALPHA) == 1)

    def test_traced_example(self):
        # i=3 fires via 0.01 <= (4/6) alpha; only p <= alpha/3 rejected
        assert np.array_equal(gou_hybrid0([0.01, 0.2, 0.2], ALPHA), [1, 0, 0])

    def test_none(self):
        assert np.all(gou_hybrid0([0.06, 0.2, 0.9], ALPHA) == 0)

    @pytest.mark.parametrize("K", [2, 3])
    def test_dominates_hommel_small_k(self, K):
        rng = np.random.default_rng(40 + K)
        P = random_pvalues(rng, 10_000, K)
        assert np.all(gou_hybrid0(P, ALPHA) >= hommel(P, ALPHA))

    def test_monotone(self):
        rng = np.random.default_rng(44)
        P = random_pvalues(rng, 5000, 6)
        Q = P * rng.random((5000, 6))
        assert np.all(gou_hybrid0(Q, ALPHA) >= gou_hybrid0(P, ALPHA))


class TestBruteForce:
    def test_all_zero_rejects_everything(self):
        assert np.all(closed_testing_bruteforce(simes_suite(), [0.0] * 5, ALPHA) == 1)

    def test_k_limit(self):
        with pytest.raises(ValueError):
            closed_testing_bruteforce(simes_suite(), [0.5] * 13, ALPHA)


class TestSubsetProducts:
    @pytest.mark.parametrize("K", [2, 3, 4, 6])
    def test_equals_explicit_product_over_proper_subsets(self, K):
        rng = np.random.default_rng(60 + K)
        SP = np.sort(random_pvalues(rng, 1000, K, small_scale=0.2), axis=1)
        suite = simes_suite()
        got = subset_products(suite, SP, ALPHA)
        want = np.ones((1000, K), dtype=bool)
        for mask in range(1, 1 << K):
            idx = [b for b in range(K) if mask >> b & 1]
            if len(idx) == K:
                continue
            val = np.asarray(suite.test(len(idx), SP[:, idx], ALPHA), dtype=bool)
            want[:, idx] &= val[:, None]
        assert np.array_equal(got, want)


class TestLastStep:
    def obj(self, theta=-2.05):
        return ObjectiveSpec.mix(AlternativeDensity.normal_shift(theta))

    def test_requires_symmetric_monotone(self):
        bad = LocalTestSuite(name="odd", phi=lambda l, Q, a: Q[:, 0] <= a, symmetric=False)
        with pytest.raises(UnsupportedSuiteError):
            last_step_improve(bad, self.obj(), 5, ALPHA, B=2000, seed=0)

    def test_degenerate_suite_equals_score_on_singleton_gates(self):
        # with phi_l == 1 for 2 <= l < K, only the singleton tests remain in
        # the sub-products, so D_k = I(p_k <= alpha) * I(score > t)
        always = LocalTestSuite(name="pass", phi=lambda l, Q, a: np.ones(Q.shape[0], dtype=bool))
        obj = self.obj()
        proc = last_step_improve(always, obj, 4, ALPHA, B=50_000, seed=3)
        from bufwer.objectives import projected_fh
        f, h = projected_fh(obj)
        rng = np.random.default_rng(5)
        P = random_pvalues(rng, 2000, 4)
        D = proc.apply_batch(P).astype(bool)
        SP = np.sort(P, axis=1)
        fv, hv = f(SP), h(SP)
        score = (np.where(SP <= ALPHA, fv, 0.0)).sum(axis=1) * hv.prod(axis=1)
        want = (P <= ALPHA) & (score > proc.t_K)[:, None]
        assert np.array_equal(D, want)

    def test_improved_hommel_fwer_null(self):
        proc = last_step_improve(simes_suite(), self.obj(), 6, ALPHA, B=100_000, seed=9)
        U = derived_rng(123, 0xAB).random((200_000, 6))
        fwer = proc.apply_batch(U).any(axis=1).mean()
        assert fwer <= ALPHA + 3 * np.sqrt(ALPHA * (1 - ALPHA) / 200_000)

    def test_monotone_decisions(self):
        proc = last_step_improve(simes_suite(), self.obj(), 5, ALPHA, B=20_000, seed=2)
        rng = np.random.default_rng(17)
        P = random_pvalues(rng, 3000, 5)
        Q = P * rng.random((3000, 5))
        assert np.all(proc.apply_batch(Q) >= proc.apply_batch(P))

    def test_table_round_trip(self):
        proc = last_step_improve(simes_suite(), self.obj(), 5, ALPHA, B=2000, seed=2)
        tt = proc.to_table()
        assert tt.suite == "simes" and len(tt.thresholds) == 1
        assert '"suite": "simes"' in tt.to_json()
