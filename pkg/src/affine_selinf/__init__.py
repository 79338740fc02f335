"""Selective inference for affine selection procedures."""

from .diagnostics import (InfluenceSummary, RateConfig, SmoothedMaxParams, influence_constant,
                          smoothed_max, sparsity_bound, submatrix_influence_check,
                          theorem2_bound, theorem3_condition)
from .events import (DegenerateSelectionError, GlmFamily, KnotState, LassoState,
                     RankDeficiencyError, SelectionEvent, coefficient_contrast,
                     covariance_test_bounds, first_knot_event, glm_family, knot_contrast,
                     lasso_event, score_covariance)
from .lasso import DesignMatrix, LassoConvergenceError, LassoFit, solve_lasso, verify_kkt
from .simharness import (ErrorFamily, SimulationConfig, SimulationReport, draw_errors,
                         generate_design, ks_statistic, run_campaign)
from .truncnorm import (DeltaCheckConfig, PivotInputs, SelectionPreconditionError,
                        TruncationInterval, delta_assumption_check, invert_pivot_interval,
                        selective_pvalue, truncated_gaussian_cdf, truncation_interval,
                        two_sided_pivot)

__version__ = "0.1.0"
