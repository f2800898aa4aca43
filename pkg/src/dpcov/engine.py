"""The privatized test: statistics, calibration, decision, baselines.

Pipeline per run: spectrum -> two-stage privatization -> null moment table
at the realized noise scale -> loss averages L_m -> standardized T_m ->
T_max against a Monte Carlo critical value of the trivariate max-|normal|
limit.  Classical LR / CLR values are available as non-private baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erfc, ndtri

from .errors import CalibrationError, InputError, SingularityError
from .mechanism import PrivacyParams, PrivatizedSpectrum, privatize_spectrum
from .moments import LOSS_TAGS, MomentTable, NoiseLaw, loss, moment_table
from .rmt import MarchenkoPastur
from .spectra import SpectrumResult, correlation_spectrum, covariance_spectrum

__all__ = [
    "TestConfig",
    "TestStatistics",
    "CriticalValue",
    "TestReport",
    "compute_L",
    "standardize",
    "critical_value",
    "p_value_max",
    "run_test",
    "lr_statistic",
    "clr_statistic",
    "marginal_z",
]


def marginal_z(alpha: float) -> float:
    """Two-sided standard-normal critical value Phi^{-1}(1 - alpha/2)."""
    return float(ndtri(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # not a pytest class despite the name
    epsilon: float
    gamma_tilde: float = 2.0
    sigma: float = 1.0
    alpha: float = 0.05
    mc_samples: int = 1_000_000
    seed: int = 0
    source: str = "covariance"  # or "correlation"
    center: bool = False
    mp_nodes: int = 512

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if self.source not in ("covariance", "correlation"):
            raise InputError(f"unknown source {self.source!r}")
        if self.mc_samples < 1000:
            raise InputError("mc_samples must be >= 1000")


@dataclass(frozen=True)
class TestStatistics:
    __test__ = False  # not a pytest class despite the name
    L: np.ndarray
    T: np.ndarray
    T_max: float
    K: int
    n: int
    d: int


@dataclass(frozen=True)
class CriticalValue:
    z_alpha: float
    alpha: float
    mc_samples: int
    seed: int
    R_used: np.ndarray


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest class despite the name
    statistics: TestStatistics
    critical: CriticalValue
    p_max: float
    p_marginal: np.ndarray
    decision: str  # "reject" | "accept"
    moment_table: MomentTable
    spectrum: PrivatizedSpectrum
    config: TestConfig
    notes: dict = field(default_factory=dict)


def compute_L(spec, tag: str) -> float:
    """Average loss over the privatized eigenvalues."""
    values = spec.privatized if isinstance(spec, PrivatizedSpectrum) else spec
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise InputError("need at least one eigenvalue")
    if tag == "g1" and np.any(values == 0.0):
        raise SingularityError(
            "logarithm singularity: a privatized eigenvalue is exactly zero")
    return float(np.mean(loss(tag)(values)))


def standardize(L, table: MomentTable, K: int) -> TestStatistics:
    """T_m = sqrt(K) |L_m - mu_m| / sqrt(v_mm) and their maximum."""
    L = np.asarray(L, dtype=float)
    if L.shape != (3,):
        raise InputError("L must be a 3-vector")
    v = np.diag(table.V)
    if np.any(v <= 0):
        raise CalibrationError("degenerate calibration: zero variance entry")
    T = np.sqrt(K) * np.abs(L - table.mu) / np.sqrt(v)
    return TestStatistics(L=L, T=T, T_max=float(T.max()), K=K, n=-1, d=-1)


def _max_abs_samples(R, mc_samples: int, seed: int) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R, R.T, atol=1e-12):
        raise InputError("R must be a symmetric 3x3 matrix")
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(R + 1e-12 * np.eye(3))
        except np.linalg.LinAlgError:
            raise CalibrationError("correlation matrix is not PSD after jitter")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    z = rng.standard_normal((int(mc_samples), 3)) @ L.T
    return np.max(np.abs(z), axis=1)


def critical_value(R, alpha: float, mc_samples: int = 1_000_000,
                   seed: int = 0) -> CriticalValue:
    """(1 - alpha) Monte Carlo quantile of max_m |Y_m| under correlation R."""
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    samples = _max_abs_samples(R, mc_samples, seed)
    z = float(np.quantile(samples, 1.0 - alpha))
    return CriticalValue(z_alpha=z, alpha=alpha, mc_samples=int(mc_samples),
                         seed=int(seed), R_used=np.asarray(R, dtype=float))


def p_value_max(R, t_obs: float, mc_samples: int = 1_000_000,
                seed: int = 0) -> float:
    """Monte Carlo survival probability of max_m |Y_m| beyond t_obs."""
    if t_obs < 0:
        raise InputError("t_obs must be nonnegative")
    samples = _max_abs_samples(R, mc_samples, seed)
    return float(np.mean(samples > t_obs))


def run_test(data, config: TestConfig, spectrum: Optional[SpectrumResult] = None,
             table: Optional[MomentTable] = None) -> TestReport:
    """Full privatized decision for a dataset (or precomputed spectrum).

    Seeds derive deterministically from config.seed: one stream for the two
    noise stages, an independent one for the Monte Carlo critical value.
    A caller-supplied moment table (e.g. an interpolated one) must match
    the realized noise scale; by default the table is computed exactly.
    """
    if spectrum is None:
        if config.source == "correlation":
            spectrum = correlation_spectrum(data)
        else:
            spectrum = covariance_spectrum(data, centered=config.center)
    n, d, K = spectrum.n, spectrum.d, spectrum.K

    root = np.random.SeedSequence(int(config.seed))
    noise_seed, mc_seed = (int(s.generate_state(1)[0]) for s in root.spawn(2))

    params = PrivacyParams(epsilon=config.epsilon,
                           gamma_tilde=config.gamma_tilde, sigma=config.sigma)
    priv = privatize_spectrum(spectrum, params, noise_seed)

    y = d / n
    if table is None:
        table = moment_table(MarchenkoPastur(y), NoiseLaw(priv.noise_scale),
                             n_nodes=config.mp_nodes)
    elif abs(table.b - priv.noise_scale) > 1e-9 * max(1.0, priv.noise_scale):
        raise InputError("supplied moment table does not match realized scale")

    L = np.array([compute_L(priv, tag) for tag in LOSS_TAGS])
    stats = standardize(L, table, K)
    stats = TestStatistics(L=stats.L, T=stats.T, T_max=stats.T_max,
                           K=K, n=n, d=d)

    samples = _max_abs_samples(table.R, config.mc_samples, mc_seed)
    z_alpha = float(np.quantile(samples, 1.0 - config.alpha))
    crit = CriticalValue(z_alpha=z_alpha, alpha=config.alpha,
                         mc_samples=config.mc_samples, seed=mc_seed,
                         R_used=table.R)
    p_max = float(np.mean(samples > stats.T_max))
    p_marg = erfc(stats.T / math.sqrt(2.0))
    decision = "reject" if stats.T_max > z_alpha else "accept"

    notes = {
        "noise_seed": noise_seed,
        "mc_seed": mc_seed,
        "y": y,
        "p_marginal_convention": "two-sided normal per statistic; joint "
                                 "p-value from the Monte Carlo max "
                                 "distribution",
    }
    return TestReport(statistics=stats, critical=crit, p_max=p_max,
                      p_marginal=p_marg, decision=decision,
                      moment_table=table, spectrum=priv, config=config,
                      notes=notes)


def lr_statistic(spectrum: SpectrumResult, n: int) -> float:
    """Classical likelihood-ratio value n * sum(lam - log lam - 1).

    Valid for d < n with a strictly positive spectrum; the chi-square
    reference with d(d+1)/2 degrees of freedom only applies at fixed d.
    """
    lam = np.asarray(spectrum.eigenvalues, dtype=float)
    if spectrum.d >= n:
        raise InputError("LR statistic requires d < n")
    if np.any(lam <= 0):
        raise SingularityError("LR undefined: zero eigenvalue in spectrum")
    return float(n * np.sum(lam - np.log(lam) - 1.0))


def clr_statistic(spectrum: SpectrumResult, n: int, d: int) -> float:
    """Corrected likelihood ratio: sum(lam - log lam - 1 - F) with
    F = 1 + (1 - y_n) log(1 - y_n) / y_n, y_n = d/n < 1."""
    y_n = d / n
    if not 0.0 < y_n < 1.0:
        raise InputError("CLR requires 0 < d/n < 1")
    lam = np.asarray(spectrum.eigenvalues, dtype=float)
    if np.any(lam <= 0):
        raise SingularityError("CLR undefined: zero eigenvalue in spectrum")
    F = 1.0 + (1.0 - y_n) * np.log(1.0 - y_n) / y_n
    return float(np.sum(lam - np.log(lam) - 1.0 - F))
