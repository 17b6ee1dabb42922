"""Classical FWER-controlling competitors and the generic last-step
improvement of a symmetric monotone local-test suite.

Implemented procedures: Bonferroni, Holm, Hommel's step-up (equivalently
closed testing with the Simes local test; verified against brute force),
the Hybrid-0 consonant step-up of Gou et al., a brute-force closed-testing
oracle for small K, and the last-step improvement that replaces a suite's
complete-null test by the optimal score test for a power objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bottomup import CALIBRATION_DOMAIN, ThresholdTable, conformal_rank, derived_rng
from .distributions import clamp_pvalues
from .objectives import ObjectiveSpec, objective_fingerprint, projected_fh

__all__ = [
    "LocalTestSuite",
    "UnsupportedSuiteError",
    "bonferroni",
    "holm",
    "simes_local",
    "hommel",
    "gou_hybrid0",
    "closed_testing_bruteforce",
    "last_step_improve",
    "ImprovedProcedure",
    "simes_suite",
    "bonferroni_suite",
    "subset_products",
]

BRUTEFORCE_MAX_K = 12


class UnsupportedSuiteError(ValueError):
    """The suite lacks the symmetry/monotonicity the operation requires."""


def _as_batch(p):
    arr = np.asarray(p, dtype=float)
    squeeze = arr.ndim == 1
    return (arr[None, :] if squeeze else arr), squeeze


def bonferroni(p, alpha: float) -> np.ndarray:
    P, squeeze = _as_batch(p)
    D = (P <= alpha / P.shape[1]).astype(np.int8)
    return D[0] if squeeze else D


def holm(p, alpha: float) -> np.ndarray:
    """Step-down Holm: reject the r smallest p-values, r maximal with
    p_(i) <= alpha / (K - i + 1) for all i <= r."""
    P, squeeze = _as_batch(p)
    n, K = P.shape
    order = np.argsort(P, axis=1, kind="stable")
    SP = np.take_along_axis(P, order, axis=1)
    ok = SP <= alpha / (K - np.arange(K))
    passed = np.cumprod(ok, axis=1).astype(bool)
    D = np.empty((n, K), dtype=np.int8)
    np.put_along_axis(D, order, passed.astype(np.int8), axis=1)
    return D[0] if squeeze else D


def simes_local(q, alpha: float) -> int:
    """Simes test of an intersection: 1 iff some q_(i) <= i' * alpha / l."""
    arr = np.asarray(q, dtype=float)
    ell = arr.shape[-1]
    crit = np.arange(1, ell + 1) * alpha / ell
    out = np.any(arr <= crit, axis=-1)
    return int(out) if arr.ndim == 1 else out.astype(np.int8)


def hommel(p, alpha: float) -> np.ndarray:
    """Hommel's step-up procedure (closed testing with Simes local tests).

    With sorted p-values, let j be the largest i in 1..K such that
    p_(K-i+k) > k * alpha / i for all k = 1..i.  If no such i exists all
    hypotheses are rejected; otherwise those with p <= alpha / j are.
    """
    P, squeeze = _as_batch(p)
    n, K = P.shape
    SP = np.sort(P, axis=1)
    j = np.zeros(n, dtype=int)
    exists = np.zeros(n, dtype=bool)
    for i in range(1, K + 1):
        crit = np.arange(1, i + 1) * alpha / i
        ok = np.all(SP[:, K - i :] > crit, axis=1)
        j = np.where(ok, i, j)
        exists |= ok
    cutoff = np.where(exists, alpha / np.maximum(j, 1), np.inf)
    D = (P <= cutoff[:, None]).astype(np.int8)
    return D[0] if squeeze else D


def gou_hybrid0(p, alpha: float) -> np.ndarray:
    """Hybrid-0 step-up of Gou et al.: scan i = 1..K over sorted p-values
    and, at the first i with p_(K-i+1) <= (i+1) alpha / (2i), reject every
    hypothesis with p <= alpha / i; if no i fires, reject nothing."""
    P, squeeze = _as_batch(p)
    n, K = P.shape
    SP = np.sort(P, axis=1)
    i_vals = np.arange(1, K + 1)
    crit = (i_vals + 1) / (2.0 * i_vals) * alpha
    fires = SP[:, K - i_vals] <= crit  # column i-1 tests p_(K-i+1)
    any_fire = fires.any(axis=1)
    first = np.argmax(fires, axis=1) + 1
    cutoff = np.where(any_fire, alpha / first, -np.inf)
    D = (P <= cutoff[:, None]).astype(np.int8)
    return D[0] if squeeze else D


@dataclass(frozen=True)
class LocalTestSuite:
    """Per-size local tests phi_l over sorted arguments, for l = 2..K-ish;
    the singleton test is always I(p <= alpha).  ``phi(ell, Q, alpha)``
    takes an (n, ell) array of ascending rows and returns n booleans."""

    name: str
    phi: callable
    symmetric: bool = True
    monotone: bool = True

    def test(self, ell: int, Q, alpha: float):
        if ell == 1:
            return np.asarray(Q)[..., 0] <= alpha
        return self.phi(ell, np.atleast_2d(np.asarray(Q, dtype=float)), alpha)


def simes_suite() -> LocalTestSuite:
    return LocalTestSuite(name="simes", phi=lambda ell, Q, a: np.asarray(simes_local(Q, a), dtype=bool))


def bonferroni_suite() -> LocalTestSuite:
    return LocalTestSuite(
        name="bonferroni", phi=lambda ell, Q, a: Q[:, 0] <= a / ell
    )


def closed_testing_bruteforce(suite: LocalTestSuite, p, alpha: float) -> np.ndarray:
    """Reference closed-testing oracle: D_k = prod over all subsets
    containing k of the subset's local test.  Exponential in K."""
    P, squeeze = _as_batch(p)
    n, K = P.shape
    if K > BRUTEFORCE_MAX_K:
        raise ValueError(f"brute-force closure supports K <= {BRUTEFORCE_MAX_K}")
    order = np.argsort(P, axis=1, kind="stable")
    SP = np.take_along_axis(P, order, axis=1)
    D_sorted = np.ones((n, K), dtype=bool)
    for mask in range(1, 1 << K):
        idx = [b for b in range(K) if mask >> b & 1]
        passed = suite.test(len(idx), SP[:, idx], alpha)
        D_sorted[:, idx] &= np.asarray(passed, dtype=bool)[:, None]
    D = np.empty((n, K), dtype=np.int8)
    np.put_along_axis(D, order, D_sorted.astype(np.int8), axis=1)
    return D[0] if squeeze else D


def _subset_columns(K: int, pos: int, ell: int) -> list:
    """Sorted positions of {p_(pos)} plus the ell-1 largest other values."""
    others = [j for j in range(K) if j != pos]
    chosen = others[len(others) - (ell - 1) :] if ell > 1 else []
    return sorted(chosen + [pos])


def subset_products(suite: LocalTestSuite, SP, alpha: float) -> np.ndarray:
    """For each sorted position k, the product of the suite's local tests
    over all proper subsets containing that hypothesis.

    For a symmetric monotone suite the product over all size-l subsets
    containing p_(k) reduces to the single hardest one: p_(k) joined with
    the l-1 largest of the other p-values.
    """
    SP = np.atleast_2d(np.asarray(SP, dtype=float))
    n, K = SP.shape
    out = np.empty((n, K), dtype=bool)
    for pos in range(K):
        prod = SP[:, pos] <= alpha
        for ell in range(2, K):
            cols = _subset_columns(K, pos, ell)
            prod = prod & np.asarray(suite.test(ell, SP[:, cols], alpha), dtype=bool)
        out[:, pos] = prod
    return out


@dataclass(frozen=True)
class ImprovedProcedure:
    """A suite for the proper subsets plus the calibrated optimal
    complete-null score test for a power objective."""

    suite: LocalTestSuite
    obj: ObjectiveSpec
    alpha: float
    K: int
    B: int
    seed: int
    t_K: float

    def _score_and_products(self, SP):
        f, h = projected_fh(self.obj)
        sub = subset_products(self.suite, SP, self.alpha)
        fv = np.asarray(f(SP), dtype=float)
        hv = np.asarray(h(SP), dtype=float)
        h_all = np.prod(hv, axis=1)
        score = np.where(sub, fv, 0.0).sum(axis=1) * h_all
        return score, sub

    def apply(self, p) -> np.ndarray:
        return self.apply_batch(np.asarray(p, dtype=float)[None, :])[0]

    def apply_batch(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        if P.shape[1] != self.K:
            raise ValueError(f"procedure calibrated for K={self.K}")
        P = clamp_pvalues(P, warn=False)
        order = np.argsort(P, axis=1, kind="stable")
        SP = np.take_along_axis(P, order, axis=1)
        score, sub = self._score_and_products(SP)
        D_sorted = (sub & (score > self.t_K)[:, None]).astype(np.int8)
        out = np.empty_like(D_sorted)
        np.put_along_axis(out, order, D_sorted, axis=1)
        return out

    def to_table(self) -> ThresholdTable:
        return ThresholdTable(
            alpha=self.alpha,
            K=self.K,
            B=self.B,
            seed=self.seed,
            objective=self.obj.to_config(),
            thresholds=(self.t_K,),
            fingerprint=objective_fingerprint(self.obj),
            suite=self.suite.name,
        )


def last_step_improve(suite: LocalTestSuite, obj: ObjectiveSpec, K: int,
                      alpha: float, B: int, seed: int) -> ImprovedProcedure:
    """Replace the suite's complete-null test by the optimal one for the
    objective: threshold the score sum_k a_k(p) * SubProd_k(p) at its
    conformal (1 - alpha) null quantile, where SubProd_k multiplies the
    suite's tests over every proper subset containing hypothesis k."""
    if not (suite.symmetric and suite.monotone):
        raise UnsupportedSuiteError(
            "last-step improvement requires a symmetric, monotone suite"
        )
    if B < 1000:
        raise ValueError("calibration requires B >= 1000")
    r = conformal_rank(alpha, B)
    proc = ImprovedProcedure(
        suite=suite, obj=obj, alpha=alpha, K=K, B=B, seed=seed, t_K=np.inf
    )
    U = derived_rng(seed, CALIBRATION_DOMAIN, K).random((B, K))
    U.sort(axis=1)
    score, _ = proc._score_and_products(U)
    t_K = float(np.partition(score, r - 1)[r - 1])
    return ImprovedProcedure(
        suite=suite, obj=obj, alpha=alpha, K=K, B=B, seed=seed, t_K=t_K
    )
