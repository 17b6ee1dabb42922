"""Power objectives and their projected coefficient functions.

Every supported power objective has coefficients that factor as

    a_k(p) = f_k(p_k) * prod_j h_j(p_j),

so the objective projects consistently onto sub-families.  The exchangeable
kinds share a single (f, h) pair derived from the alternative density g:

    single  : f = g,              h = 1
    mix     : f = 2g / (1 + g),   h = (1 + g) / 2
    average : f = 1,              h = g

The constant prefactors of the objectives (1/K for single, 1/2^K for the
two-group mix) are dropped: thresholds are calibrated as score quantiles, so
a positive rescaling of all coefficients changes no decision.

The one-dimensional base coefficient is a_1(p) = f(p) * h(p).  This is the
|I| = 1 case of the factored form above; it differs from the pseudo-code
shorthand s_1 = f and is required for the two-hypothesis score to reduce to
the known optimal K = 2 test when h is not constant.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .distributions import AlternativeDensity, density_eval

__all__ = [
    "ObjectiveSpec",
    "ObjectiveCoefficients",
    "projected_fh",
    "coefficient_a1",
    "general_coefficients",
    "objective_fingerprint",
]

EXCHANGEABLE_KINDS = ("single", "mix", "average")

# direct products underflow for long prefixes when h < 1; switch to log space
LOG_SPACE_PREFIX = 20


def _fh_from_density(kind: str, g: AlternativeDensity):
    """Vectorized (f, h) pair for one exchangeable kind and density."""
    if kind == "single":
        return (lambda u: density_eval(g, u), lambda u: np.ones_like(np.asarray(u, dtype=float)))
    if kind == "mix":
        def f(u):
            gv = density_eval(g, u)
            return 2.0 * gv / (1.0 + gv)

        def h(u):
            return (1.0 + density_eval(g, u)) / 2.0

        return f, h
    if kind == "average":
        return (lambda u: np.ones_like(np.asarray(u, dtype=float)), lambda u: density_eval(g, u))
    raise ValueError(f"unknown objective kind {kind!r}")


@dataclass(frozen=True)
class ObjectiveSpec:
    """A power objective: an exchangeable kind with one density, or a
    general per-hypothesis list of (f_k, h_k) coefficient functions."""

    kind: str
    density: AlternativeDensity | None = None
    components: tuple = field(default=())       # (f_k, h_k) callables, general kind
    component_config: tuple = field(default=()) # serializable origin, if any

    @staticmethod
    def exchangeable(kind: str, density: AlternativeDensity) -> "ObjectiveSpec":
        if kind not in EXCHANGEABLE_KINDS:
            raise ValueError(f"exchangeable kind must be one of {EXCHANGEABLE_KINDS}")
        return ObjectiveSpec(kind=kind, density=density)

    @staticmethod
    def single(density: AlternativeDensity) -> "ObjectiveSpec":
        return ObjectiveSpec.exchangeable("single", density)

    @staticmethod
    def mix(density: AlternativeDensity) -> "ObjectiveSpec":
        return ObjectiveSpec.exchangeable("mix", density)

    @staticmethod
    def average(density: AlternativeDensity) -> "ObjectiveSpec":
        return ObjectiveSpec.exchangeable("average", density)

    @staticmethod
    def general_from_densities(base_kind: str, densities) -> "ObjectiveSpec":
        """General objective with per-hypothesis densities sharing one kind."""
        if base_kind not in EXCHANGEABLE_KINDS:
            raise ValueError(f"base kind must be one of {EXCHANGEABLE_KINDS}")
        comps = tuple(_fh_from_density(base_kind, g) for g in densities)
        cfg = tuple({"kind": base_kind, **g.to_config()} for g in densities)
        return ObjectiveSpec(kind="general", components=comps, component_config=cfg)

    @staticmethod
    def general_from_functions(pairs) -> "ObjectiveSpec":
        """General objective from raw (f_k, h_k) callables (not serializable)."""
        return ObjectiveSpec(kind="general", components=tuple(tuple(p) for p in pairs))

    @property
    def n_components(self) -> int:
        return len(self.components)

    def to_config(self) -> dict:
        if self.kind == "general":
            if not self.component_config:
                raise ValueError("general objective built from raw callables cannot be serialized")
            return {"kind": "general", "per_hypothesis": [dict(c) for c in self.component_config]}
        return {"kind": self.kind, **self.density.to_config()}

    @staticmethod
    def from_config(cfg: dict) -> "ObjectiveSpec":
        if cfg["kind"] == "general":
            entries = cfg["per_hypothesis"]
            kinds = {e["kind"] for e in entries}
            if len(kinds) != 1:
                raise ValueError("general objective entries must share one kind")
            densities = [AlternativeDensity.from_config(e) for e in entries]
            return ObjectiveSpec.general_from_densities(kinds.pop(), densities)
        return ObjectiveSpec.exchangeable(cfg["kind"], AlternativeDensity.from_config(cfg))


def projected_fh(obj: ObjectiveSpec):
    """The (f, h) coefficient pair of an exchangeable objective."""
    if obj.kind == "general":
        raise ValueError("projected_fh is defined for exchangeable objectives only")
    return _fh_from_density(obj.kind, obj.density)


@dataclass
class ObjectiveCoefficients:
    """Incrementally maintained a_1 coefficient over a growing sorted prefix:
    a_1^{|I|}(p_I) = f(min p_I) * prod_{i in I} h(p_i)."""

    f_smallest: float
    h_product: float
    log_h_sum: float
    n: int

    @property
    def a1_prefix(self) -> float:
        if self.n > LOG_SPACE_PREFIX:
            return self.f_smallest * float(np.exp(self.log_h_sum))
        return self.f_smallest * self.h_product

    def extend(self, f, h, p: float) -> "ObjectiveCoefficients":
        hv = float(h(p))
        return ObjectiveCoefficients(
            f_smallest=self.f_smallest,
            h_product=self.h_product * hv,
            log_h_sum=self.log_h_sum + float(np.log(hv)),
            n=self.n + 1,
        )


def coefficient_a1(f, h, sorted_prefix) -> float:
    """a_1 over a sorted prefix: f of the smallest value times the h product."""
    prefix = np.asarray(sorted_prefix, dtype=float)
    if prefix.size == 0:
        raise ValueError("prefix must be nonempty")
    hv = np.asarray(h(prefix), dtype=float)
    state = ObjectiveCoefficients(
        f_smallest=float(f(prefix[0])),
        h_product=float(np.prod(hv)),
        log_h_sum=float(np.sum(np.log(hv))),
        n=prefix.size,
    )
    return state.a1_prefix


def general_coefficients(obj: ObjectiveSpec, subset_indices, p_subset) -> np.ndarray:
    """Coefficients a_k^{(I)} = f_{j_k}(u_k) * prod_i h_{j_i}(u_i) for a
    subset I = (j_1, ..., j_l) of hypotheses with reduced p-values u."""
    if obj.kind != "general":
        raise ValueError("general_coefficients requires a general objective")
    idx = list(subset_indices)
    u = np.asarray(p_subset, dtype=float)
    if len(idx) != u.size:
        raise ValueError("subset and p-value lengths differ")
    if any(j < 0 or j >= obj.n_components for j in idx):
        raise IndexError("hypothesis index out of range")
    h_prod = 1.0
    for pos, j in enumerate(idx):
        h_prod *= float(obj.components[j][1](u[pos]))
    return np.array(
        [float(obj.components[j][0](u[pos])) * h_prod for pos, j in enumerate(idx)]
    )


def objective_fingerprint(obj: ObjectiveSpec) -> str:
    """Stable hash of an objective, used to pair threshold tables with the
    objective they were calibrated for."""
    canonical = json.dumps(_canonical(obj.to_config()), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _canonical(value):
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, float):
        return format(value, ".17g")
    return value
