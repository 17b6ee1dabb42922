"""Simulation harness and exact small-K evaluation.

* ``run_simulation`` reproduces FWER / TPR sweeps: per replicate a true-state
  vector is drawn (a fixed count of false nulls, or iid Bernoulli in the
  two-group setting), null p-values are uniform, non-null ones come from the
  alternative density, and every procedure is applied to the same vectors.
  TPR is the ratio of total true rejections to total false nulls across
  replicates; its standard error comes from a 100-block jackknife since the
  ratio is not binomial.

* ``exact_power_piecewise`` computes thresholds and power for K <= 3 with a
  piecewise-constant alternative by enumerating lattice cells, on which all
  scores are constant.  Calibration here exhausts the level exactly: cells
  strictly above the critical score atom enter whole, and the tied cells are
  refined by shrinking along the smallest-p-value axis (the unique monotone,
  symmetric refinement) until the accumulated null mass equals alpha.  The
  reported power follows the one-false-null convention, summed over the K
  possible placements of the false null.

* ``region_grid`` and ``compare_table`` export rejection-region lattices and
  dataset discovery summaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bottomup import (
    SIMULATION_DOMAIN,
    ThresholdTable,
    apply_bu_batch,
    calibrate,
    derived_rng,
)
from .classical import (
    bonferroni,
    gou_hybrid0,
    holm,
    hommel,
    last_step_improve,
    simes_suite,
)
from .distributions import AlternativeDensity, density_eval, sample_alternative
from .objectives import ObjectiveSpec, projected_fh

__all__ = [
    "K1Setting",
    "Procedure",
    "SimulationConfig",
    "SimulationRow",
    "build_procedure",
    "run_simulation",
    "simulation_csv_rows",
    "PiecewiseSetup",
    "ExactPiecewiseResult",
    "exact_power_piecewise",
    "tri_level_setup",
    "region_grid",
    "region_csv_rows",
    "compare_table",
    "ComparisonResult",
]

SIMULATION_CSV_HEADER = [
    "procedure", "K", "k1_setting", "theta_true", "alpha", "reps", "seed",
    "fwer", "fwer_se", "tpr", "tpr_se",
]
REGION_CSV_HEADER = ["procedure", "p1", "p2", "p3", "d1", "d2", "d3", "n_reject"]

JACKKNIFE_BLOCKS = 100


# ---------------------------------------------------------------------------
# procedures and the simulation harness

@dataclass(frozen=True)
class Procedure:
    """A named batch decision rule: (n, K) p-values -> (n, K) 0/1 flags."""

    name: str
    apply_batch: callable


def build_procedure(descriptor: str, K: int, alpha: float, B: int = 100_000,
                    seed: int = 0, workers: int = 1) -> Procedure:
    """Instantiate a procedure from its descriptor.

    Plain names: ``bonferroni``, ``holm``, ``hommel``, ``gou``.  Calibrated
    ones carry the design shift after a colon, e.g. ``bu-mix:-3.10`` or
    ``ih-single:-2.05`` (bottom-up and improved-Hommel variants of the
    single / mix / avg objectives).
    """
    name, _, arg = descriptor.partition(":")
    plain = {"bonferroni": bonferroni, "holm": holm, "hommel": hommel, "gou": gou_hybrid0}
    if name in plain:
        fn = plain[name]
        return Procedure(name=descriptor, apply_batch=lambda P, fn=fn: fn(P, alpha))
    family, _, kind = name.partition("-")
    kind = {"avg": "average", "1": "single"}.get(kind, kind)
    if family not in ("bu", "ih") or kind not in ("single", "mix", "average"):
        raise ValueError(f"unknown procedure descriptor {descriptor!r}")
    if not arg:
        raise ValueError(f"descriptor {descriptor!r} needs a design shift, e.g. {name}:-3.10")
    obj = ObjectiveSpec.exchangeable(kind, AlternativeDensity.normal_shift(float(arg)))
    if family == "bu":
        tt = calibrate(obj, K, alpha, B, seed, workers=workers)
        return Procedure(
            name=descriptor,
            apply_batch=lambda P, tt=tt, obj=obj: apply_bu_batch(P, tt, obj),
        )
    proc = last_step_improve(simes_suite(), obj, K, alpha, B, seed)
    return Procedure(name=descriptor, apply_batch=proc.apply_batch)


@dataclass(frozen=True)
class K1Setting:
    """How many nulls are false: Fixed(k1) or the two-group Mix(prob)."""

    kind: str  # "fixed" | "mix"
    k1: int = 0
    prob: float = 0.5

    @staticmethod
    def fixed(k1: int) -> "K1Setting":
        return K1Setting(kind="fixed", k1=int(k1))

    @staticmethod
    def mix(prob: float = 0.5) -> "K1Setting":
        if not 0.0 < prob < 1.0:
            raise ValueError("mix probability must lie in (0, 1)")
        return K1Setting(kind="mix", prob=float(prob))

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return str(self.k1)
        return "mix" if self.prob == 0.5 else f"mix:{self.prob:g}"


@dataclass(frozen=True)
class SimulationConfig:
    K: int
    alpha: float
    theta_true: float
    settings: tuple
    reps: int
    seed: int
    procedures: tuple  # of Procedure
    workers: int = 1

    def __post_init__(self):
        if self.reps < 1000:
            raise ValueError("reps >= 1000 required for meaningful standard errors")
        for s in self.settings:
            if s.kind == "fixed" and not 0 <= s.k1 <= self.K:
                raise ValueError(f"fixed k1 must lie in 0..K, got {s.k1}")


@dataclass
class SimulationRow:
    procedure: str
    K: int
    k1_setting: str
    theta_true: float
    alpha: float
    reps: int
    seed: int
    fwer: float
    fwer_se: float
    tpr: float | None
    tpr_se: float | None
    true_rejections: int
    false_nulls: int
    replicates_with_false_rejection: int


def _jackknife_ratio(num: np.ndarray, den: np.ndarray) -> float | None:
    """SE of sum(num)/sum(den) by leave-one-block-out over 100 blocks."""
    n = num.size
    nb = min(JACKKNIFE_BLOCKS, n)
    edges = np.linspace(0, n, nb + 1).astype(int)
    bn = np.add.reduceat(num, edges[:-1])
    bd = np.add.reduceat(den, edges[:-1])
    tot_n, tot_d = num.sum(), den.sum()
    keep = (tot_d - bd) > 0
    if tot_d <= 0 or keep.sum() < 2:
        return None
    loo = (tot_n - bn[keep]) / (tot_d - bd[keep])
    m = loo.size
    return float(np.sqrt((m - 1) / m * ((loo - loo.mean()) ** 2).sum()))


def run_simulation(cfg: SimulationConfig) -> list:
    """One row per (procedure, setting); deterministic given cfg.seed.

    Per-setting replicate draws come from a stream keyed by
    (seed, SIMULATION_DOMAIN, setting index); replicate r occupies fixed
    counter positions, so worker count cannot change any output.
    """
    g_true = AlternativeDensity.normal_shift(cfg.theta_true)
    rows = []
    for si, setting in enumerate(cfg.settings):
        rng = derived_rng(cfg.seed, SIMULATION_DOMAIN, si)
        if setting.kind == "mix":
            H = rng.random((cfg.reps, cfg.K)) < setting.prob
        else:
            H = np.zeros((cfg.reps, cfg.K), dtype=bool)
            H[:, : setting.k1] = True
        U = rng.random((cfg.reps, cfg.K))
        P = np.where(H, sample_alternative(g_true, U), U)
        false_per_rep = H.sum(axis=1)
        total_false = int(false_per_rep.sum())
        for proc in cfg.procedures:
            D = np.asarray(proc.apply_batch(P), dtype=bool)
            false_rej = (D & ~H).any(axis=1)
            n_false_rej = int(np.count_nonzero(false_rej))
            fwer = n_false_rej / cfg.reps
            fwer_se = float(np.sqrt(fwer * (1.0 - fwer) / cfg.reps))
            true_per_rep = (D & H).sum(axis=1)
            total_true = int(true_per_rep.sum())
            if total_false > 0:
                tpr = total_true / total_false
                tpr_se = _jackknife_ratio(
                    true_per_rep.astype(float), false_per_rep.astype(float)
                )
            else:
                tpr = tpr_se = None
            rows.append(SimulationRow(
                procedure=proc.name, K=cfg.K, k1_setting=setting.label,
                theta_true=cfg.theta_true, alpha=cfg.alpha, reps=cfg.reps,
                seed=cfg.seed, fwer=fwer, fwer_se=fwer_se, tpr=tpr,
                tpr_se=tpr_se, true_rejections=total_true,
                false_nulls=total_false,
                replicates_with_false_rejection=n_false_rej,
            ))
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def simulation_csv_rows(rows) -> list:
    out = [",".join(SIMULATION_CSV_HEADER)]
    for r in rows:
        out.append(",".join(_fmt(v) for v in (
            r.procedure, r.K, r.k1_setting, r.theta_true, r.alpha, r.reps,
            r.seed, r.fwer, r.fwer_se, r.tpr, r.tpr_se,
        )))
    return out


# ---------------------------------------------------------------------------
# exact integration for piecewise-constant alternatives, K <= 3

@dataclass(frozen=True)
class PiecewiseSetup:
    K: int
    alpha: float
    density: AlternativeDensity
    objective_kind: str = "single"

    def __post_init__(self):
        if self.density.kind != "piecewise_constant":
            raise ValueError("exact integration requires a piecewise-constant density")
        if not 2 <= self.K <= 3:
            raise ValueError("exact integration supports K in {2, 3}")


def tri_level_setup(alpha: float = 0.05) -> PiecewiseSetup:
    """Built-in three-level density: 3 below 0.03, 1.4 on (0.03, 0.05),
    and the normalization remainder c above 0.05."""
    c = (1.0 - 3.0 * 0.03 - 1.4 * 0.02) / 0.95
    g = AlternativeDensity.piecewise_constant([0.0, 0.03, 0.05, 1.0], [3.0, 1.4, c])
    return PiecewiseSetup(K=3, alpha=alpha, density=g, objective_kind="single")


@dataclass
class _Lattice:
    """Axis intervals with interval-constant values of f, h, g and phi_1."""

    edges: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    length: np.ndarray
    rep: np.ndarray
    f: np.ndarray
    h: np.ndarray
    gmass: np.ndarray
    phi1: np.ndarray

    @staticmethod
    def build(edges, setup: PiecewiseSetup) -> "_Lattice":
        edges = np.asarray(sorted(set(float(e) for e in edges)))
        lo, hi = edges[:-1], edges[1:]
        rep = (lo + hi) / 2.0
        obj = ObjectiveSpec.exchangeable(setup.objective_kind, setup.density)
        f, h = projected_fh(obj)
        g = density_eval(setup.density, rep)
        return _Lattice(
            edges=edges, lo=lo, hi=hi, length=hi - lo, rep=rep,
            f=np.asarray(f(rep), dtype=float), h=np.asarray(h(rep), dtype=float),
            gmass=g * (hi - lo), phi1=rep <= setup.alpha,
        )

    def locate(self, p: float) -> int:
        i = int(np.searchsorted(self.edges, p, side="right") - 1)
        return min(max(i, 0), len(self.lo) - 1)


def _min_mass(lat: _Lattice, ivs, x: float) -> float:
    """Volume of the box prod_d I_{ivs[d]} intersected with {min_d p_d < x}."""
    vol = float(np.prod([lat.length[i] for i in ivs]))
    above = 1.0
    for i in ivs:
        above *= max(0.0, lat.hi[i] - max(lat.lo[i], x))
    return vol - above


def _exact_threshold(cells, alpha: float, lat: "_Lattice"):
    """Level-exhausting threshold over (score, volume, ivs) cells.

    Returns (t, x, mass): the rejection region is {score > t} plus, when x
    is not None, the part of {score == t} whose smallest coordinate lies
    below x.  ``mass`` is the region's total null measure.
    """
    by_score = {}
    for score, vol, ivs in cells:
        if score <= 0.0:
            continue
        by_score.setdefault(score, []).append((vol, ivs))
    cum = 0.0
    for s in sorted(by_score, reverse=True):
        group = by_score[s]
        gmass = sum(v for v, _ in group)
        if cum + gmass > alpha + 1e-15:
            need = alpha - cum
            if need <= 1e-15:
                return s, None, cum
            tied_mass = lambda x: sum(_min_mass(lat, ivs, x) for _, ivs in group)
            lo_x, hi_x = 0.0, 1.0
            for _ in range(200):
                mid = 0.5 * (lo_x + hi_x)
                if tied_mass(mid) < need:
                    lo_x = mid
                else:
                    hi_x = mid
            x = 0.5 * (lo_x + hi_x)
            return s, x, cum + tied_mass(x)
        cum += gmass
    # every positive atom fits inside alpha: reject all positive scores
    return 0.0, None, cum


@dataclass
class ExactPiecewiseResult:
    procedure: str
    setup: PiecewiseSetup
    pair_threshold: float | None
    pair_boundary: float | None
    pair_null_measure: float | None
    top_threshold: float
    top_boundary: float | None
    top_null_measure: float
    tpr: float
    decide: callable = field(repr=False, default=None)


class _ExactTests:
    """Interval-level tests and scores on one lattice.

    All thresholds and refinement boundaries are passed in; scores are pure
    step-function arithmetic, so their values agree exactly across lattice
    refinements (splitting an interval never changes the looked-up levels).
    """

    def __init__(self, lat: _Lattice, procedure: str, alpha: float,
                 pair_t, pair_x, top_t=None, top_x=None):
        self.lat = lat
        self.procedure = procedure
        self.alpha = alpha
        self.pair_t, self.pair_x = pair_t, pair_x
        self.top_t, self.top_x = top_t, top_x

    def pair_score(self, a: int, b: int) -> float:
        lat = self.lat
        return lat.h[a] * lat.h[b] * (lat.f[a] * lat.phi1[a] + lat.f[b] * lat.phi1[b])

    def pair_test(self, a: int, b: int) -> bool:
        a, b = (a, b) if self.lat.rep[a] <= self.lat.rep[b] else (b, a)
        if self.procedure == "ih":
            return bool(self.lat.rep[a] <= self.alpha / 2.0 or self.lat.rep[b] <= self.alpha)
        s = self.pair_score(a, b)
        if s > self.pair_t:
            return True
        return s == self.pair_t and self.pair_x is not None and self.lat.rep[a] < self.pair_x

    def triple_score(self, ivs_sorted) -> float:
        lat = self.lat
        a, b, c = ivs_sorted
        if self.procedure == "bu":
            a1 = lat.f[a] * lat.h[a] * lat.h[b] * lat.h[c]
            s2bc = self.pair_score(b, c)
            return self.pair_test(a, c) * a1 + lat.h[a] * self.pair_test(b, c) * s2bc
        h_all = lat.h[a] * lat.h[b] * lat.h[c]
        sub = (
            lat.f[a] * (lat.phi1[a] and self.pair_test(a, c))
            + lat.f[b] * (lat.phi1[b] and self.pair_test(b, c))
            + lat.f[c] * (lat.phi1[c] and self.pair_test(b, c))
        )
        return h_all * sub

    def top_score(self, ivs_sorted) -> float:
        if len(ivs_sorted) == 2:
            return self.pair_score(*ivs_sorted)
        return self.triple_score(ivs_sorted)

    def top_test(self, ivs_sorted) -> bool:
        if len(ivs_sorted) == 2 and self.procedure == "bu":
            return self.pair_test(*ivs_sorted)
        s = self.top_score(ivs_sorted)
        if s > self.top_t:
            return True
        return s == self.top_t and self.top_x is not None and self.lat.rep[ivs_sorted[0]] < self.top_x

    def box_decisions(self, ivs) -> np.ndarray:
        lat, K = self.lat, len(ivs)
        order = np.argsort([lat.rep[i] for i in ivs], kind="stable")
        s_ivs = tuple(ivs[o] for o in order)
        D_sorted = np.zeros(K, dtype=np.int8)
        if self.top_test(s_ivs):
            for pos in range(K):
                me = s_ivs[pos]
                ok = bool(lat.phi1[me])
                if K == 3:
                    if self.procedure == "bu":
                        for q in range(K):
                            if q != pos:
                                ok = ok and self.pair_test(me, s_ivs[q])
                    else:
                        largest_other = s_ivs[K - 1] if pos < K - 1 else s_ivs[K - 2]
                        ok = ok and self.pair_test(me, largest_other)
                D_sorted[pos] = ok
        out = np.zeros(K, dtype=np.int8)
        out[order] = D_sorted
        return out


def _enumerate_cells(tests: _ExactTests, K: int):
    lat = tests.lat
    n = len(lat.lo)
    if K == 2:
        for i in range(n):
            for j in range(n):
                srt = (i, j) if lat.rep[i] <= lat.rep[j] else (j, i)
                yield tests.top_score(srt), lat.length[i] * lat.length[j], (i, j)
    else:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    ivs = (i, j, k)
                    srt = tuple(sorted(ivs, key=lambda q: lat.rep[q]))
                    yield (
                        tests.top_score(srt),
                        lat.length[i] * lat.length[j] * lat.length[k],
                        ivs,
                    )


def exact_power_piecewise(setup: PiecewiseSetup, procedure: str = "bu") -> ExactPiecewiseResult:
    """Exact thresholds, refinement boundaries and power for BU or the
    last-step-improved Hommel (IH) under a piecewise-constant alternative.

    The reported power is sum_k P(reject H_k | H_k is the only false null),
    i.e. K times the per-replicate true positive rate of the one-false-null
    model.
    """
    if procedure not in ("bu", "ih"):
        raise ValueError("procedure must be 'bu' or 'ih'")
    alpha = setup.alpha
    edges = list(setup.density.breakpoints) + [0.0, 1.0, alpha, alpha / 2.0]

    pair_t = pair_x = pair_mass = None
    if procedure == "bu":
        lat = _Lattice.build(edges, setup)
        tests = _ExactTests(lat, procedure, alpha, None, None)
        n = len(lat.lo)
        cells = [
            (tests.pair_score(*((i, j) if lat.rep[i] <= lat.rep[j] else (j, i))),
             lat.length[i] * lat.length[j], (i, j))
            for i in range(n) for j in range(n)
        ]
        pair_t, pair_x, pair_mass = _exact_threshold(cells, alpha, lat)
        if pair_x is not None:
            edges.append(pair_x)

    # calibrate the top level, then refine the lattice along its boundary
    lat = _Lattice.build(edges, setup)
    tests = _ExactTests(lat, procedure, alpha, pair_t, pair_x)
    top_t, top_x, top_mass = _exact_threshold(
        list(_enumerate_cells(tests, setup.K)), alpha, lat
    )
    if setup.K == 2 and procedure == "bu":
        # the pair test is already the complete-null test
        top_t, top_x, top_mass = pair_t, pair_x, pair_mass
    if top_x is not None:
        edges.append(top_x)

    lat = _Lattice.build(edges, setup)
    tests = _ExactTests(lat, procedure, alpha, pair_t, pair_x, top_t, top_x)
    n = len(lat.lo)

    # exact power: sum over placements of the single false null
    tpr = 0.0
    if setup.K == 3:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if tests.box_decisions((i, j, k))[0]:
                        tpr += lat.gmass[i] * lat.length[j] * lat.length[k]
        tpr *= 3.0
    else:
        for i in range(n):
            for j in range(n):
                if tests.box_decisions((i, j))[0]:
                    tpr += lat.gmass[i] * lat.length[j]
        tpr *= 2.0

    def decide(p) -> np.ndarray:
        p = np.asarray(p, dtype=float).ravel()
        if p.size != setup.K:
            raise ValueError(f"expected {setup.K} p-values")
        return tests.box_decisions(tuple(lat.locate(v) for v in p))

    return ExactPiecewiseResult(
        procedure=procedure, setup=setup,
        pair_threshold=pair_t, pair_boundary=pair_x, pair_null_measure=pair_mass,
        top_threshold=top_t, top_boundary=top_x, top_null_measure=top_mass,
        tpr=float(tpr), decide=decide,
    )


# ---------------------------------------------------------------------------
# rejection-region export and dataset comparison

def region_grid(proc: Procedure, K: int = 3, fixed: tuple | None = None,
                resolution: int = 200, window: tuple = (0.0, 0.5)) -> list:
    """Decisions on a lattice of cell centers over ``window`` per axis.

    ``fixed`` pins one axis, e.g. ("p3", 0.03), producing an N^(K-1) slice.
    Returns records (p_1..p_K, d_1..d_K, n_reject).
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    lo, hi = window
    centers = lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution
    fixed_axis = fixed_value = None
    if fixed is not None:
        fixed_axis = int(str(fixed[0]).lstrip("p")) - 1
        fixed_value = float(fixed[1])
        if not 0 <= fixed_axis < K:
            raise ValueError(f"fixed axis {fixed[0]!r} out of range")
    free = [a for a in range(K) if a != fixed_axis]
    grids = np.meshgrid(*([centers] * len(free)), indexing="ij")
    npts = grids[0].size
    P = np.empty((npts, K))
    for pos, a in enumerate(free):
        P[:, a] = grids[pos].ravel()
    if fixed_axis is not None:
        P[:, fixed_axis] = fixed_value
    D = np.asarray(proc.apply_batch(P), dtype=int)
    return [
        {"procedure": proc.name,
         **{f"p{a + 1}": P[r, a] for a in range(K)},
         **{f"d{a + 1}": int(D[r, a]) for a in range(K)},
         "n_reject": int(D[r].sum())}
        for r in range(npts)
    ]


def region_csv_rows(records, K: int = 3) -> list:
    header = ["procedure"] + [f"p{i+1}" for i in range(K)] + [f"d{i+1}" for i in range(K)] + ["n_reject"]
    out = [",".join(header)]
    for rec in records:
        vals = [rec["procedure"]]
        vals += [format(rec[f"p{i+1}"], ".10g") for i in range(K)]
        vals += [str(rec[f"d{i+1}"]) for i in range(K)]
        vals.append(str(rec["n_reject"]))
        out.append(",".join(vals))
    return out


@dataclass
class ComparisonResult:
    procedures: tuple
    avg_discoveries: dict
    frac_any_discovery: dict
    crosstab: dict  # (name_a, name_b) -> (K+1) x (K+1) count matrix


def compare_table(dataset, procedures) -> ComparisonResult:
    """Discovery summary over a dataset of p-value families (rows of equal
    length K) plus pairwise cross-tabulations of discovery counts."""
    P = np.asarray(dataset, dtype=float)
    if P.ndim != 2:
        raise ValueError("dataset must be a 2-d array of families (ragged input?)")
    K = P.shape[1]
    counts = {}
    for proc in procedures:
        D = np.asarray(proc.apply_batch(P), dtype=int)
        counts[proc.name] = D.sum(axis=1)
    avg = {name: float(c.mean()) for name, c in counts.items()}
    frac = {name: float((c > 0).mean()) for name, c in counts.items()}
    crosstab = {}
    names = [p.name for p in procedures]
    for a in names:
        for b in names:
            tab = np.zeros((K + 1, K + 1), dtype=int)
            np.add.at(tab, (counts[a], counts[b]), 1)
            crosstab[(a, b)] = tab
    return ComparisonResult(
        procedures=tuple(names), avg_discoveries=avg,
        frac_any_discovery=frac, crosstab=crosstab,
    )
