"""Variable-decision-rule Thurstonian models for rating-scale data."""

__version__ = "0.1.0"

from .errors import (AllEqualRatings, DataMismatch, DegenerateSeries, InfeasibleSpec,  # noqa: E402
                     NoStablePoint, ParseError, QuadratureFailure, SampleTooSmall, VDRError)
from .gof import (ComparisonReport, GofBundle, aicc, compare, gof, kl_divergence,  # noqa: E402
                  percent_delta_gf)
from .likelihood import (csdt_matrix, log_likelihood, mixture_matrix, predict,  # noqa: E402
                         rule1_matrix, rule2_matrix, rule3_matrix, sdt_matrix)
from .model import (CSDT_EV, CSDT_UV, SDT_EV, SDT_UV, VDR, CountMatrix, FitResult,  # noqa: E402
                    ModelSpec, ParamSet, canonicalize, check_fit_feasible, count_parameters,
                    validate_params)
from .optimizer import (SearchConfig, default_starts, fit, multi_start_fit,  # noqa: E402
                        percent_inconsistency)
from .quadrature import JumpRecorder, QuadConfig, QuadResult, integrate  # noqa: E402
from .simulator import (SimConfig, apply_rule, mc_matrix, perturb_params, run_batch,  # noqa: E402
                        simulate_matrix)

__all__ = [
    "AllEqualRatings", "DataMismatch", "DegenerateSeries", "InfeasibleSpec", "NoStablePoint",
    "ParseError", "QuadratureFailure", "SampleTooSmall", "VDRError",
    "ComparisonReport", "GofBundle", "aicc", "compare", "gof", "kl_divergence",
    "percent_delta_gf",
    "csdt_matrix", "log_likelihood", "mixture_matrix", "predict", "rule1_matrix",
    "rule2_matrix", "rule3_matrix", "sdt_matrix",
    "CSDT_EV", "CSDT_UV", "SDT_EV", "SDT_UV", "VDR", "CountMatrix", "FitResult", "ModelSpec",
    "ParamSet", "canonicalize", "check_fit_feasible", "count_parameters", "validate_params",
    "SearchConfig", "default_starts", "fit", "multi_start_fit", "percent_inconsistency",
    "JumpRecorder", "QuadConfig", "QuadResult", "integrate",
    "SimConfig", "apply_rule", "mc_matrix", "perturb_params", "run_batch", "simulate_matrix",
]
