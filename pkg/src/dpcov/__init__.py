"""Differentially private testing of large-dimensional covariance structures.

Eigenvalues of the sample covariance (or correlation) matrix are privatized
with sensitivity-calibrated Laplace noise; three standardized loss averages
and their maximum are compared against the asymptotic null calibration
derived from the Marchenko-Pastur law convolved with the noise.
"""

__version__ = "0.1.0"

from .engine import (CriticalValue, TestConfig, TestReport, TestStatistics,
                     clr_statistic, compute_L, critical_value, lr_statistic,
                     p_value_max, run_test, standardize)
from .errors import (CalibrationError, ConvergenceError, DpcovError,
                     InputError, QuadratureError, SingularityError, UsageError)
from .mechanism import (PrivacyParams, PrivatizedSpectrum, SensitivityBound,
                        empirical_sensitivity, laplace_noise, noise_scale,
                        privatize_spectrum, sensitivity_bound_theorem1,
                        sensitivity_bound_theorem2)
from .moments import (LOSS_TAGS, MomentInterpolator, MomentTable, NoiseLaw,
                      b_g, b_gg, loss, moment_table, moment_table_cached)
from .rmt import (MarchenkoPastur, PopulationMeasure, SpectralLaw,
                  classical_locations, mp_cdf, mp_density, mp_moment_rule,
                  mp_quantile, solve_generalized_mp)
from .simulation import (ExperimentConfig, ExperimentResult, ModelSpec,
                         SigmaFactor, SigmaSpec, generate_data, make_sigma,
                         run_experiment)
from .spectra import (SpectrumResult, correlation_spectrum,
                      covariance_spectrum, load_csv, pretransform_sigma0)

__all__ = [name for name in dir() if not name.startswith("_")]
