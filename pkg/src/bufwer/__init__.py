"""Bottom-up consonant closed testing with FWER control.

Power-objective-driven multiple testing: the bottom-up score recursion and
its Monte Carlo threshold calibration, classical competitor procedures,
a simulation harness, and exact small-K integration for piecewise-constant
alternatives.
"""

__version__ = "0.1.0"

from .bottomup import (
    ScoreStack,
    SortedPValues,
    ThresholdTable,
    apply_bu,
    apply_bu_batch,
    bu_general_k3,
    calibrate,
    compute_scores,
    omt2_apply,
    omt2_calibrate,
)
from .classical import (
    bonferroni,
    closed_testing_bruteforce,
    gou_hybrid0,
    holm,
    hommel,
    last_step_improve,
    simes_local,
    simes_suite,
)
from .distributions import (
    AlternativeDensity,
    RegimeSpec,
    density_eval,
    normal_cdf,
    normal_quantile,
    sample_alternative,
    solve_theta,
)
from .objectives import ObjectiveSpec, coefficient_a1, general_coefficients, projected_fh

__all__ = [
    "__version__",
    "AlternativeDensity",
    "ObjectiveSpec",
    "RegimeSpec",
    "ScoreStack",
    "SortedPValues",
    "ThresholdTable",
    "apply_bu",
    "apply_bu_batch",
    "bonferroni",
    "bu_general_k3",
    "calibrate",
    "closed_testing_bruteforce",
    "coefficient_a1",
    "compute_scores",
    "density_eval",
    "general_coefficients",
    "gou_hybrid0",
    "holm",
    "hommel",
    "last_step_improve",
    "normal_cdf",
    "normal_quantile",
    "omt2_apply",
    "omt2_calibrate",
    "projected_fh",
    "sample_alternative",
    "simes_local",
    "simes_suite",
    "solve_theta",
]
