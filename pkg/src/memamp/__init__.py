"""Memory AMP signal recovery: GD-MAMP, overflow-avoiding OA-GD-MAMP and CR-GD-MAMP."""

from .denoiser import BgPrior, DenoiseResult, denoise_bg, sample_bg
from .errors import (ConfigurationError, DegenerateSpectrumError, DimensionError, LedgerError,
                     NumericalFailure, OverflowContractError)
from .harness import ExperimentConfig, Problem, generate_problem, measure, overflow_demo, run_experiment
from .operator import LinearOperator, StructuredSpec, apply_b, build_dense, build_structured
from .solvers import MampConfig, Trajectory, run
from .spectral import (ScaledScalar, SpectralTable, chi_table_exact, chi_table_stochastic,
                       estimate_extremes, naive_b_moments, scaled_w, scaled_wbar)

__version__ = "0.1.0"
