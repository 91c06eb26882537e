"""Template null distributions for single-subject motor-adaptation assessment."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .data import (Dataset, DesignSpec, ModelParams, PriorConfig, RunConfig, TrialRecord, ValidationError,
                   format_design, ingest_csv, load_config, parse_design, validate_test_design, write_csv)
from .decision import (AssessmentReport, ChartRow, Decision, assess, error_rate_interval, fnr_by_overlap,
                       format_chart, p_value, physician_chart, write_chart_csv)
from .estimator import NaiveSlope, naive_slope, pair_coefficients, slope_ci
from .gibbs import (DegenerateDataError, JointPosteriorDraws, NonConvergenceError, PosteriorDraws, fit_joint, fit_training,
                    gelman_rubin, posterior_prob_delta_leq_zero, sample_var_alpha_prior)
from .simlab import (BResult, CResult, ErrorRateTable, PowerCurves, SimScenario, empirical_fpr_A,
                     load_scenario, power_study, run_table, run_test_A, run_test_B, run_test_C, scenario,
                     simulate_outcomes, simulate_subject)
from .template import (TemplateDistribution, build_template, critical_value, draw_pseudo_subject,
                       draw_pseudo_subjects, load_template, save_template, shift_template)

__all__ = [
    "__version__",
    "AssessmentReport",
    "BResult",
    "CResult",
    "ChartRow",
    "Dataset",
    "Decision",
    "DegenerateDataError",
    "DesignSpec",
    "ErrorRateTable",
    "JointPosteriorDraws",
    "ModelParams",
    "NaiveSlope",
    "NonConvergenceError",
    "PosteriorDraws",
    "PowerCurves",
    "PriorConfig",
    "RunConfig",
    "SimScenario",
    "TemplateDistribution",
    "TrialRecord",
    "ValidationError",
    "assess",
    "build_template",
    "critical_value",
    "draw_pseudo_subject",
    "draw_pseudo_subjects",
    "empirical_fpr_A",
    "error_rate_interval",
    "fit_joint",
    "fit_training",
    "fnr_by_overlap",
    "format_chart",
    "format_design",
    "gelman_rubin",
    "ingest_csv",
    "load_config",
    "load_scenario",
    "load_template",
    "naive_slope",
    "p_value",
    "pair_coefficients",
    "parse_design",
    "physician_chart",
    "posterior_prob_delta_leq_zero",
    "power_study",
    "run_table",
    "run_test_A",
    "run_test_B",
    "run_test_C",
    "sample_var_alpha_prior",
    "save_template",
    "scenario",
    "shift_template",
    "simulate_outcomes",
    "simulate_subject",
    "slope_ci",
    "validate_test_design",
    "write_chart_csv",
    "write_csv",
]
