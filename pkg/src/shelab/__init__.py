"""Lattice laboratory for stochastic heat equations with colored noise."""

from .errors import (BlowUpError, ConfigError, CouplingError,
                     DiagnosticsError, EmbeddingError, PowerIterationError,
                     QuadratureError, RegimeError, RegressionError,
                     ResolutionError, TorusSizeError)
from .lattice_sde import (InitialProfile, SigmaSpec, SimConfig, SimPath,
                          SimState, Simulator, generator_apply,
                          project_initial, simulate,
                          simulate_coupled_refinement, step)
from .local_limit import LLTErrorReport, RateFit, fit_rate, llt_sup_error
from .riesz_noise import (CellCovariance, NoiseSampler, build_covariance,
                          cell_covariance_1d, cell_covariance_nd,
                          sample_increments)
from .stable_kernel import (QuadratureSpec, StableKernel, StableParams,
                            correlation_smoothing, default_quadrature,
                            envelope, gradient_ratio_check, stable_density)
from .walk import (AssumptionDiagnostics, DislocationDistribution,
                   TransitionTable, char_fn, diagnose_assumptions, heavy_tail,
                   heavy_tail_mixture, nearest_neighbor, product_moment,
                   scaled_transition, transition_probabilities)

__version__ = "0.1.0"
