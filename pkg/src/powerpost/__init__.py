"""Power-posterior (alpha-posterior) quadrature, limiting-Gaussian comparisons and bound checks."""

from .asymptotics import (CurvatureEstimates, LimitingGaussian, MleFit, estimate_curvature, fit_mle,
                          gaussian_abs_moment, limiting_gaussian, tensor_moment_distance_corollary)
from .diagnostics import (DiagnosticsConfig, DiagnosticsReport, concentration_tail_mass, fn_ratio_suprema,
                          lan_remainder, lemma1_bound_check, lemma2_tail_bound, markov_tail_bound,
                          tv_distance, weighted_l1_distance)
from .errors import (ConfigError, ConvergenceError, CurvatureError, DomainError, GridTooNarrowError,
                     MixingError, NonUniqueMleError, NumericalError, PowerPostError, PropertyViolation)
from .harness import ExperimentConfig, Theorem2Row, check_lemmas, load_config, run_cell, run_sweep
from .model import (ModelSpec, Prior, TrueProcess, make_model, make_prior, make_process,
                    pseudo_true_parameter, sample_data)
from .posterior import (AlphaConfig, GridDensity, grid_covariance, grid_mean, grid_moment,
                        normalize_on_grid, sample_posterior, to_lan_frame)

__version__ = "0.1.0"
