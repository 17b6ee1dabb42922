"""Normal CDF/quantile primitives, alternative p-value densities and sampling.

The one-sided testing model is p = Phi(X) with X ~ N(theta, 1), theta <= 0
under the alternative, so the p-value density under the alternative is

    g_theta(p) = exp(theta * Phi^{-1}(p) - theta^2 / 2),

which is strictly decreasing on (0, 1) for theta < 0 and identically 1 for
theta = 0.  A piecewise-constant density variant is supported as well.

Normal CDF and quantile are delegated to scipy.special (ndtr / ndtri), which
evaluate via erfc and its inverse with absolute error far below the 1e-12 /
1e-10 contracts required here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "AlternativeDensity",
    "RegimeSpec",
    "normal_cdf",
    "normal_quantile",
    "density_eval",
    "sample_alternative",
    "solve_theta",
    "clamp_pvalues",
]

# p-values of exactly 0 or 1 are pulled inside the open interval before any
# density evaluation, since g_theta diverges at 0 for theta < 0.
PVALUE_CLAMP = 1e-15


def normal_cdf(x):
    """Standard normal CDF, elementwise on scalars or arrays."""
    return ndtr(x)


def normal_quantile(u):
    """Standard normal quantile; requires u strictly inside (0, 1)."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ValueError("normal_quantile requires u in the open interval (0, 1)")
    out = ndtri(u_arr)
    return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out


@dataclass(frozen=True)
class AlternativeDensity:
    """Density of a p-value under the alternative.

    Two variants:

    * ``normal_shift``: g_theta(p) = exp(theta * Phi^{-1}(p) - theta^2/2)
      with theta <= 0.
    * ``piecewise_constant``: constant ``values[i]`` on the half-open
      interval [breakpoints[i], breakpoints[i+1]); the breakpoints start at
      0, end at 1, and the values must integrate to 1.
    """

    kind: str
    theta: float = 0.0
    breakpoints: tuple = field(default=())
    values: tuple = field(default=())

    @staticmethod
    def normal_shift(theta: float) -> "AlternativeDensity":
        theta = float(theta)
        if not np.isfinite(theta) or theta > 0.0:
            raise ValueError(f"normal shift requires a finite theta <= 0, got {theta}")
        return AlternativeDensity(kind="normal_shift", theta=theta)

    @staticmethod
    def piecewise_constant(breakpoints, values) -> "AlternativeDensity":
        b = tuple(float(x) for x in breakpoints)
        v = tuple(float(x) for x in values)
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("breakpoints must be strictly ascending")
        if len(v) != len(b) - 1:
            raise ValueError("need one density value per interval")
        if any(x <= 0.0 for x in v):
            raise ValueError("density values must be positive")
        total = sum(v[i] * (b[i + 1] - b[i]) for i in range(len(v)))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"density must integrate to 1, got {total!r}")
        return AlternativeDensity(kind="piecewise_constant", breakpoints=b, values=v)

    def to_config(self) -> dict:
        if self.kind == "normal_shift":
            return {"theta": self.theta}
        return {
            "piecewise": {
                "breakpoints": list(self.breakpoints),
                "values": list(self.values),
            }
        }

    @staticmethod
    def from_config(cfg: dict) -> "AlternativeDensity":
        if "piecewise" in cfg:
            pw = cfg["piecewise"]
            return AlternativeDensity.piecewise_constant(pw["breakpoints"], pw["values"])
        return AlternativeDensity.normal_shift(cfg["theta"])


def density_eval(g: AlternativeDensity, p):
    """Evaluate g at p, elementwise; p must lie strictly inside (0, 1).

    Piecewise densities use the right-continuous convention: a point on an
    interior breakpoint takes the value of the interval to its right.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("density_eval requires p in the open interval (0, 1)")
    if g.kind == "normal_shift":
        out = np.exp(g.theta * ndtri(p_arr) - 0.5 * g.theta**2)
    else:
        idx = np.searchsorted(np.asarray(g.breakpoints), p_arr, side="right") - 1
        out = np.asarray(g.values)[idx]
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def sample_alternative(g: AlternativeDensity, u):
    """Map a uniform variate u through the inverse CDF of g.

    For the normal shift this is Phi(Phi^{-1}(u) + theta); for the piecewise
    density it is the piecewise-linear inverse of the cumulative mass.
    """
    u_arr = np.asarray(u, dtype=float)
    if g.kind == "normal_shift":
        if g.theta == 0.0:
            out = u_arr.copy()
        else:
            out = ndtr(ndtri(u_arr) + g.theta)
    else:
        b = np.asarray(g.breakpoints)
        v = np.asarray(g.values)
        cum = np.concatenate(([0.0], np.cumsum(v * np.diff(b))))
        cum[-1] = 1.0
        idx = np.clip(np.searchsorted(cum, u_arr, side="right") - 1, 0, len(v) - 1)
        out = b[idx] + (u_arr - cum[idx]) / v[idx]
    return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out


@dataclass(frozen=True)
class RegimeSpec:
    """Target regime: level, family size and desired Bonferroni power."""

    alpha: float
    K: int
    target_bonferroni_power: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        t = self.target_bonferroni_power
        # target == alpha/K is the degenerate null case (theta = 0)
        if not self.alpha / self.K <= t < 1.0:
            raise ValueError("target power must lie in [alpha/K, 1)")


def solve_theta(spec: RegimeSpec) -> float:
    """Shift theta at which Bonferroni has the requested one-sided power.

    Bonferroni power is Phi(Phi^{-1}(alpha/K) - theta), so
    theta = Phi^{-1}(alpha/K) - Phi^{-1}(target).
    """
    return float(ndtri(spec.alpha / spec.K) - ndtri(spec.target_bonferroni_power))


def clamp_pvalues(p, eps: float = PVALUE_CLAMP, warn: bool = True):
    """Clamp p-values into [eps, 1 - eps], warning if anything moved."""
    p_arr = np.asarray(p, dtype=float)
    clipped = np.clip(p_arr, eps, 1.0 - eps)
    if warn and np.any(clipped != p_arr):
        warnings.warn(
            "p-values at 0 or 1 were clamped into the open interval before "
            "density evaluation",
            stacklevel=2,
        )
    return clipped
