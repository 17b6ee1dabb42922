"""The bottom-up engine: score recursion, threshold calibration, step-down
application, the optimal two-hypothesis test, and the general (non
exchangeable) three-hypothesis construction.

For a sorted p-value vector q_1 <= ... <= q_k and an exchangeable objective
with coefficient functions (f, h), the level-k score satisfies the recursion

    s_k(q) = I(s_{k-1}(q_1, q_3, ..., q_k) > t_{k-1}) * a_1^k(q)
           + h(q_1) * I(s_{k-1}(q_2, ..., q_k) > t_{k-1}) * s_{k-1}(q_2, ..., q_k)

with a_1^k(q) = f(q_1) * prod_i h(q_i), base case s_1(q) = f(q) * h(q), and
the level-1 test I(q <= alpha) in place of a level-1 threshold.  Computing
s_k this way touches k(k+1)/2 score nodes in total.

Thresholds are calibrated level by level as conformal (1 - alpha) quantiles:
t_k is the ceil((1-alpha)(B+1))-th smallest of B scores of sorted uniform
k-vectors, which guarantees that a fresh null score exceeds t_k with
probability at most alpha.  Rejection is strict (s_k > t_k); ties at the
threshold are accepted.

Randomness contract: the B replicates of level k are read from a Philox
stream keyed by (seed, CALIBRATION_DOMAIN, k); replicate b occupies counter
positions [b*k, (b+1)*k).  Worker count therefore never changes results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import clamp_pvalues
from .objectives import ObjectiveSpec, objective_fingerprint, projected_fh

__all__ = [
    "SortedPValues",
    "ThresholdTable",
    "ScoreStack",
    "CalibrationInfeasibleError",
    "compute_scores",
    "calibrate",
    "apply_bu",
    "apply_bu_batch",
    "omt2_calibrate",
    "omt2_apply",
    "bu_general_k3",
    "conformal_rank",
]

CALIBRATION_DOMAIN = 0xCA1
SIMULATION_DOMAIN = 0x51E
EVALUATION_DOMAIN = 0xE7A


class CalibrationInfeasibleError(ValueError):
    """B is too small for the conformal (1 - alpha) quantile to exist."""


def derived_rng(seed: int, *tags: int) -> np.random.Generator:
    """Counter-based generator mixed from (seed, tags)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), *map(int, tags)))))


def conformal_rank(alpha: float, B: int) -> int:
    """1-based order statistic index of the conformal (1 - alpha) quantile."""
    r = math.ceil((1.0 - alpha) * (B + 1))
    if r > B:
        raise CalibrationInfeasibleError(
            f"B={B} cannot calibrate level alpha={alpha}: need ceil((1-alpha)(B+1)) <= B"
        )
    return r


@dataclass(frozen=True)
class SortedPValues:
    """A p-value family together with its sorting permutation."""

    sorted: np.ndarray
    perm: np.ndarray  # perm[i] = original index of the i-th smallest value

    @staticmethod
    def from_pvalues(p) -> "SortedPValues":
        arr = np.asarray(p, dtype=float)
        if arr.ndim != 1:
            raise ValueError("expected a one-dimensional p-value vector")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("p-values must lie in [0, 1]")
        perm = np.argsort(arr, kind="stable")
        return SortedPValues(sorted=arr[perm], perm=perm)

    def restore(self, decisions_sorted: np.ndarray) -> np.ndarray:
        out = np.empty_like(decisions_sorted)
        out[self.perm] = decisions_sorted
        return out


@dataclass(frozen=True)
class ThresholdTable:
    """Calibrated thresholds t_2, ..., t_K with their calibration metadata.

    A table is only valid for the exact (alpha, objective) pair it was
    calibrated for; the objective fingerprint is checked at application
    time.  ``suite`` is "bu" for bottom-up tables (K - 1 thresholds) and
    names the sub-test family for last-step tables (single threshold t_K).
    """

    alpha: float
    K: int
    B: int
    seed: int
    objective: dict
    thresholds: tuple
    fingerprint: str
    suite: str = "bu"

    def __post_init__(self):
        expected = self.K - 1 if self.suite == "bu" else 1
        if len(self.thresholds) != expected:
            raise ValueError(
                f"suite {self.suite!r} with K={self.K} needs {expected} thresholds, "
                f"got {len(self.thresholds)}"
            )
        if any(t < 0 for t in self.thresholds):
            raise ValueError("thresholds must be nonnegative")

    def threshold(self, level: int) -> float:
        """t_level for 2 <= level <= K (bottom-up tables only)."""
        if self.suite != "bu":
            raise ValueError("per-level thresholds exist only for bottom-up tables")
        if not 2 <= level <= self.K:
            raise KeyError(f"no threshold for level {level}")
        return self.thresholds[level - 2]

    def to_json(self) -> str:
        # field order and 17-significant-digit reals are part of the format
        parts = [
            f'"alpha": {format(self.alpha, ".17g")}',
            f'"K": {self.K}',
            f'"B": {self.B}',
            f'"seed": {self.seed}',
            f'"objective": {json.dumps(_format_reals(self.objective))}',
            '"thresholds": [' + ", ".join(format(t, ".17g") for t in self.thresholds) + "]",
            f'"fingerprint": {json.dumps(self.fingerprint)}',
        ]
        if self.suite != "bu":
            parts.append(f'"suite": {json.dumps(self.suite)}')
        return "{" + ", ".join(parts) + "}"

    @staticmethod
    def from_json(text: str) -> "ThresholdTable":
        raw = json.loads(text)
        return ThresholdTable(
            alpha=float(raw["alpha"]),
            K=int(raw["K"]),
            B=int(raw["B"]),
            seed=int(raw["seed"]),
            objective=raw["objective"],
            thresholds=tuple(float(t) for t in raw["thresholds"]),
            fingerprint=raw["fingerprint"],
            suite=raw.get("suite", "bu"),
        )


def _format_reals(value):
    if isinstance(value, dict):
        return {k: _format_reals(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_format_reals(v) for v in value]
    if isinstance(value, float):
        return float(format(value, ".17g"))
    return value


@dataclass
class ScoreStack:
    """Suffix scores s_K(p_1..p_K), s_{K-1}(p_2..p_K), ..., s_1(p_K) of a
    sorted vector, their local test flags, and the node-evaluation count."""

    scores: np.ndarray       # scores[l-1] = s_l applied to the last l entries
    local_flags: np.ndarray  # flags[l-1] = phi_l on the same suffix
    n_nodes: int


def _suffix_scores(P: np.ndarray, thresholds, f, h, alpha: float, want_stack: bool = False):
    """Score recursion over a batch of sorted rows.

    P is (n, k) with rows ascending; thresholds holds t_2, ..., t_{k-1}
    (may extend further; extra entries are ignored).  Returns the top-level
    scores s_k, plus the full suffix stack when requested, and the number of
    score nodes evaluated per row.
    """
    n, k = P.shape
    if k >= 3 and len(thresholds) < k - 2:
        raise ValueError(
            f"scoring level {k} needs thresholds t_2..t_{k - 1}; got {len(thresholds)}"
        )
    fv = np.asarray(f(P), dtype=float)
    hv = np.asarray(h(P), dtype=float)
    phi1 = P <= alpha

    # level 1: one node per coordinate; the stored score carries the phi_1
    # gate (idempotent inside the recursion, and it keeps every stack level
    # zero when all of its arguments exceed alpha)
    a1_prev = [fv[:, m] * hv[:, m] for m in range(k)]
    s_prev = [np.where(phi1[:, m], a1_prev[m], 0.0) for m in range(k)]
    n_nodes = k
    stack_scores = [s_prev[k - 1]] if want_stack else None

    for level in range(2, k + 1):
        j2 = k - level + 1  # column of the second-smallest member of every level set
        if level == 2:
            ind_second = phi1[:, j2]
        else:
            ind_second = s_prev[j2] > thresholds[level - 3]
        tail = np.where(ind_second, s_prev[j2], 0.0)
        h_tail = hv[:, : k - level + 1]
        s_cur = []
        for m in range(k - level + 1):
            a1 = a1_prev[m] * hv[:, j2]
            if level == 2:
                ind_first = phi1[:, m]
            else:
                ind_first = s_prev[m] > thresholds[level - 3]
            s_cur.append(np.where(ind_first, a1, 0.0) + h_tail[:, m] * tail)
            a1_prev[m] = a1
        n_nodes += k - level + 1
        s_prev = s_cur
        if want_stack:
            stack_scores.append(s_prev[k - level])

    if want_stack:
        return s_prev[0], stack_scores, n_nodes
    return s_prev[0], None, n_nodes


def compute_scores(p: SortedPValues, thresholds, f, h, alpha: float) -> ScoreStack:
    """All suffix scores of one sorted vector, given thresholds t_2..t_{k-1}."""
    row = np.asarray(p.sorted, dtype=float)[None, :]
    k = row.shape[1]
    _, stack, n_nodes = _suffix_scores(row, tuple(thresholds), f, h, alpha, want_stack=True)
    scores = np.array([stack[l - 1][0] for l in range(1, k + 1)])
    flags = np.empty(k, dtype=bool)
    flags[0] = p.sorted[k - 1] <= alpha
    for level in range(2, k + 1):
        ts = tuple(thresholds)
        if level - 2 < len(ts):
            flags[level - 1] = scores[level - 1] > ts[level - 2]
        else:
            flags[level - 1] = False  # top-level flag needs t_k from a full table
    return ScoreStack(scores=scores, local_flags=flags, n_nodes=n_nodes)


def _chunk_ranges(n: int, workers: int):
    step = max(1, -(-n // max(1, workers)))
    return [(lo, min(n, lo + step)) for lo in range(0, n, step)]


def _top_scores(P, thresholds, f, h, alpha, workers: int = 1) -> np.ndarray:
    if workers <= 1 or P.shape[0] < 2 * workers:
        return _suffix_scores(P, thresholds, f, h, alpha)[0]
    from concurrent.futures import ThreadPoolExecutor

    ranges = _chunk_ranges(P.shape[0], workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(lambda r: _suffix_scores(P[r[0] : r[1]], thresholds, f, h, alpha)[0], ranges)
        )
    return np.concatenate(parts)


def calibrate(obj: ObjectiveSpec, K: int, alpha: float, B: int, seed: int,
              workers: int = 1) -> ThresholdTable:
    """Calibrate t_2, ..., t_K for an exchangeable objective.

    Levels are processed in order; level k draws B sorted uniform k-vectors
    and sets t_k to the conformal (1 - alpha) quantile of their scores,
    using the thresholds already fixed for the lower levels.
    """
    if B < 1000:
        raise ValueError("calibration requires B >= 1000")
    if not 0.0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    if K < 2:
        raise ValueError("calibration needs K >= 2")
    r = conformal_rank(alpha, B)
    f, h = projected_fh(obj)
    thresholds = []
    for k in range(2, K + 1):
        U = derived_rng(seed, CALIBRATION_DOMAIN, k).random((B, k))
        U.sort(axis=1)
        scores = _top_scores(U, tuple(thresholds), f, h, alpha, workers=workers)
        thresholds.append(float(np.partition(scores, r - 1)[r - 1]))
    return ThresholdTable(
        alpha=float(alpha),
        K=int(K),
        B=int(B),
        seed=int(seed),
        objective=obj.to_config(),
        thresholds=tuple(thresholds),
        fingerprint=objective_fingerprint(obj),
    )


def _check_table(p_len: int, tt: ThresholdTable, obj: ObjectiveSpec):
    if tt.K != p_len:
        raise ValueError(f"threshold table is for K={tt.K}, got {p_len} p-values")
    fp = objective_fingerprint(obj)
    if fp != tt.fingerprint:
        raise ValueError(
            f"objective fingerprint {fp} does not match the table's {tt.fingerprint}"
        )


def apply_bu(p, tt: ThresholdTable, obj: ObjectiveSpec) -> np.ndarray:
    """Decisions of the calibrated bottom-up procedure, in input order.

    Follows the step-down form: with phi_l = I(s_l > t_l) on the l largest
    suffix (and phi_1 = I(p <= alpha)), D_(1) = phi_K and
    D_(r) = D_(r-1) * phi_{K-r+1}(p_(r), ..., p_(K)).
    """
    return apply_bu_batch(np.asarray(p, dtype=float)[None, :], tt, obj)[0]


def apply_bu_batch(P, tt: ThresholdTable, obj: ObjectiveSpec) -> np.ndarray:
    """Vectorized apply_bu over rows of P; returns (n, K) 0/1 decisions."""
    P = np.asarray(P, dtype=float)
    _check_table(P.shape[1], tt, obj)
    if np.any(P < 0.0) or np.any(P > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    P = clamp_pvalues(P, warn=False)  # keep f, h finite at exact 0 / 1
    K = tt.K
    order = np.argsort(P, axis=1, kind="stable")
    SP = np.take_along_axis(P, order, axis=1)
    f, h = projected_fh(obj)
    _, stack, _ = _suffix_scores(SP, tt.thresholds, f, h, tt.alpha, want_stack=True)
    # flags[:, l-1] = phi_l on the last l coordinates
    flags = np.empty((P.shape[0], K), dtype=bool)
    flags[:, 0] = SP[:, K - 1] <= tt.alpha
    for level in range(2, K + 1):
        flags[:, level - 1] = stack[level - 1] > tt.threshold(level)
    D_sorted = np.empty((P.shape[0], K), dtype=np.int8)
    running = flags[:, K - 1]
    D_sorted[:, 0] = running
    for r in range(2, K + 1):
        running = running & flags[:, K - r]
        D_sorted[:, r - 1] = running
    out = np.empty_like(D_sorted)
    np.put_along_axis(out, order, D_sorted, axis=1)
    return out


def node_count(K: int) -> int:
    """Score nodes touched when applying the procedure to K hypotheses."""
    return K * (K + 1) // 2


def omt2_calibrate(a1, a2, alpha: float, B: int, seed: int) -> float:
    """Threshold of the optimal two-hypothesis test for coefficient
    functions a1(p1, p2), a2(p1, p2); supports asymmetric coefficients.

    The score is s(p) = a1(p) I(p1 <= alpha) + a2(p) I(p2 <= alpha); t_2 is
    its conformal (1 - alpha) quantile under unsorted uniform pairs (the
    coefficients may be asymmetric), drawn from the same stream the
    bottom-up calibration uses at level 2.
    """
    if B < 1000:
        raise ValueError("calibration requires B >= 1000")
    r = conformal_rank(alpha, B)
    U = derived_rng(seed, CALIBRATION_DOMAIN, 2).random((B, 2))
    s = _omt2_scores(U[:, 0], U[:, 1], a1, a2, alpha)
    return float(np.partition(s, r - 1)[r - 1])


def _omt2_scores(p1, p2, a1, a2, alpha):
    ind1 = p1 <= alpha
    ind2 = p2 <= alpha
    return np.where(ind1, a1(p1, p2), 0.0) + np.where(ind2, a2(p1, p2), 0.0)


def omt2_apply(p1, p2, a1, a2, alpha: float, t2: float) -> np.ndarray:
    """Decisions D_k = I(p_k <= alpha) I(s(p) > t2); vectorized over arrays."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    s = _omt2_scores(p1, p2, a1, a2, alpha)
    top = s > t2
    d = np.stack([(p1 <= alpha) & top, (p2 <= alpha) & top], axis=-1)
    return d.astype(np.int8)


def _gen_pair_score(obj: ObjectiveSpec, alpha: float, i: int, j: int, u, v):
    """Two-hypothesis score for hypotheses (i, j) at p-values (u, v)."""
    fi, hi = obj.components[i]
    fj, hj = obj.components[j]
    hh = np.asarray(hi(u)) * np.asarray(hj(v))
    return np.where(u <= alpha, np.asarray(fi(u)) * hh, 0.0) + np.where(
        v <= alpha, np.asarray(fj(v)) * hh, 0.0
    )


@dataclass(frozen=True)
class GeneralBUK3:
    """Calibrated general (non exchangeable) bottom-up procedure for K = 3."""

    obj: ObjectiveSpec
    alpha: float
    B: int
    seed: int
    pair_thresholds: dict = field(default_factory=dict)  # {(i, j): t} with i < j
    t_top: float = np.inf

    def _pair_flag(self, i: int, j: int, u, v):
        a, b = (i, j) if i < j else (j, i)
        s = _gen_pair_score(self.obj, self.alpha, a, b, u if a == i else v, v if a == i else u)
        return s > self.pair_thresholds[(a, b)]

    def _triple_score(self, u1, u2, u3):
        u = (u1, u2, u3)
        h_all = np.ones_like(np.asarray(u1, dtype=float))
        for i in range(3):
            h_all = h_all * np.asarray(self.obj.components[i][1](u[i]))
        total = np.zeros_like(h_all)
        for i, j, k in ((0, 1, 2), (1, 0, 2), (2, 0, 1)):
            fi = np.asarray(self.obj.components[i][0](u[i]))
            term = np.where(u[i] <= self.alpha, fi, 0.0)
            term = term * self._pair_flag(i, j, u[i], u[j])
            term = term * self._pair_flag(i, k, u[i], u[k])
            total = total + term
        return h_all * total

    def apply(self, p) -> np.ndarray:
        return self.apply_batch(np.asarray(p, dtype=float)[None, :])[0]

    def apply_batch(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        if P.shape[1] != 3:
            raise ValueError("this procedure is calibrated for K = 3")
        top = self._triple_score(P[:, 0], P[:, 1], P[:, 2]) > self.t_top
        D = np.empty((P.shape[0], 3), dtype=np.int8)
        for k in range(3):
            d = (P[:, k] <= self.alpha) & top
            for j in (j for j in range(3) if j != k):
                d = d & self._pair_flag(k, j, P[:, k], P[:, j])
            D[:, k] = d
        return D


def bu_general_k3(obj: ObjectiveSpec, alpha: float, B: int, seed: int) -> GeneralBUK3:
    """Calibrate the general bottom-up procedure for three hypotheses.

    Pairwise thresholds come first: each pair score integrates over
    unsorted uniform pairs (the scores are asymmetric in general), all
    three pairs reading the level-2 stream.  The triple threshold is then
    the conformal quantile of the triple score on the level-3 stream.
    With identical per-hypothesis coefficients this matches the
    exchangeable construction up to floating-point association.
    """
    if obj.kind != "general" or obj.n_components != 3:
        raise ValueError("bu_general_k3 needs a general objective with 3 components")
    if B < 1000:
        raise ValueError("calibration requires B >= 1000")
    r = conformal_rank(alpha, B)
    U2 = derived_rng(seed, CALIBRATION_DOMAIN, 2).random((B, 2))
    pair_thresholds = {}
    for i, j in ((0, 1), (0, 2), (1, 2)):
        s = _gen_pair_score(obj, alpha, i, j, U2[:, 0], U2[:, 1])
        pair_thresholds[(i, j)] = float(np.partition(s, r - 1)[r - 1])
    proc = GeneralBUK3(
        obj=obj, alpha=alpha, B=B, seed=seed, pair_thresholds=pair_thresholds
    )
    U3 = derived_rng(seed, CALIBRATION_DOMAIN, 3).random((B, 3))
    s3 = proc._triple_score(U3[:, 0], U3[:, 1], U3[:, 2])
    t_top = float(np.partition(s3, r - 1)[r - 1])
    return GeneralBUK3(
        obj=obj, alpha=alpha, B=B, seed=seed, pair_thresholds=pair_thresholds, t_top=t_top
    )
