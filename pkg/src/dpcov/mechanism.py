"""Sensitivity bounds and the two-stage Laplace privatization.

The eigenvalue query has unbounded worst-case sensitivity for unbounded
data; the bounds here hold with high probability and calibrate the noise
scale ``2.01 * sigma^2 * gamma * d / (n * eps)``.  Privatization runs in
two stages: preset-scale noise releases a trace estimate ``gamma_hat``,
then fresh noise at the estimated scale is added to the raw eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .spectra import SpectrumResult, validate_data

__all__ = [
    "PrivacyParams",
    "PrivatizedSpectrum",
    "SensitivityBound",
    "sensitivity_bound_theorem1",
    "sensitivity_bound_theorem2",
    "laplace_noise",
    "privatize_spectrum",
    "empirical_sensitivity",
]


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget and the constants entering the noise scale."""

    epsilon: float
    gamma_tilde: float = 2.0
    sigma: float = 1.0
    r: float = 0.25  # tail exponent, diagnostic only

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if self.gamma_tilde < 1.0:
            raise InputError("gamma_tilde must be >= 1")
        if self.sigma <= 0:
            raise InputError("sigma must be positive")
        if not 0.0 < self.r < 0.5:
            raise InputError("tail exponent r must lie in (0, 1/2)")


@dataclass(frozen=True)
class SensitivityBound:
    value: float
    failure_probability: float
    formula: str  # "theorem1" | "theorem2"


@dataclass(frozen=True)
class PrivatizedSpectrum:
    """Raw spectrum, both noise stages, and the realized noise scale."""

    raw: np.ndarray
    stage1_noisy: np.ndarray
    gamma_hat: float
    noise_scale: float
    privatized: np.ndarray
    seed: int
    K: int
    n: int
    d: int


def sensitivity_bound_theorem1(trace: float, trace_sq: float, opnorm: float,
                               sigma: float, n: int, t: float) -> SensitivityBound:
    """High-probability l1-sensitivity bound from the population spectrum.

    value = sigma^2 * (2*trace/n + 4*sqrt(trace_sq)*sqrt(t/n) + 4*opnorm*t),
    holding except with probability 2*exp(-n*t).
    """
    for name, v in (("trace", trace), ("trace_sq", trace_sq),
                    ("opnorm", opnorm), ("sigma", sigma), ("n", n), ("t", t)):
        if not (np.isfinite(v) and v > 0):
            raise InputError(f"{name} must be positive, got {v}")
    value = sigma ** 2 * (2.0 * trace / n
                          + 4.0 * np.sqrt(trace_sq) * np.sqrt(t / n)
                          + 4.0 * opnorm * t)
    return SensitivityBound(value=float(value),
                            failure_probability=float(2.0 * np.exp(-n * t)),
                            formula="theorem1")


def sensitivity_bound_theorem2(gamma: float, sigma: float, d: int,
                               n: int, r: float = 0.25) -> SensitivityBound:
    """Asymptotic l1-sensitivity bound 2.01 * sigma^2 * gamma * d / n."""
    if gamma < 1.0:
        raise InputError("gamma must be >= 1")
    if sigma <= 0 or d < 1 or n < 1:
        raise InputError("sigma, d, n must be positive")
    if not 0.0 < r < 0.5:
        raise InputError("tail exponent r must lie in (0, 1/2)")
    value = 2.01 * sigma ** 2 * gamma * d / n
    fail = 2.0 * np.exp(-float(n) ** (1.0 - 2.0 * r))
    return SensitivityBound(value=float(value), failure_probability=float(fail),
                            formula="theorem2")


def laplace_noise(scale: float, count: int, rng: np.random.Generator):
    """I.i.d. centered Laplace draws via inverse CDF of a uniform stream.

    The explicit inverse-CDF construction pins the exact consumption of the
    underlying uniform stream, so seeded runs are bit-reproducible across
    library versions.
    """
    if not (np.isfinite(scale) and scale > 0):
        raise InputError(f"noise scale must be positive, got {scale}")
    if count < 1:
        raise InputError("count must be >= 1")
    p = rng.random(count) - 0.5
    return -scale * np.sign(p) * np.log1p(-2.0 * np.abs(p))


def noise_scale(epsilon: float, gamma: float, sigma: float, d: int,
                n: int) -> float:
    """Laplace scale b = 2.01 * sigma^2 * gamma * d / (n * epsilon)."""
    return 2.01 * sigma ** 2 * gamma * d / (n * epsilon)


def privatize_spectrum(spectrum: SpectrumResult, params: PrivacyParams,
                       seed) -> PrivatizedSpectrum:
    """Two-stage privatization of the sample eigenvalues.

    Stage 1 adds noise at the preset scale and releases
    gamma_hat = |sum of stage-1 values| / d; stage 2 adds fresh noise at the
    realized scale to the *raw* eigenvalues.  Both stages consume one seeded
    stream in that order.
    """
    lam = np.asarray(spectrum.eigenvalues, dtype=float)
    K, n, d = spectrum.K, spectrum.n, spectrum.d
    if K != min(n, d):
        raise InputError(f"expected K = min(d, n) = {min(n, d)}, got {K}")
    seed = int(seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    b1 = noise_scale(params.epsilon, params.gamma_tilde, params.sigma, d, n)
    stage1 = lam + laplace_noise(b1, K, rng)
    gamma_hat = abs(stage1.sum()) / d
    if gamma_hat == 0.0:
        raise InputError("privatized trace collapsed to zero")
    b2 = noise_scale(params.epsilon, gamma_hat, params.sigma, d, n)
    privatized = lam + laplace_noise(b2, K, rng)
    return PrivatizedSpectrum(raw=lam, stage1_noisy=stage1,
                              gamma_hat=float(gamma_hat),
                              noise_scale=float(b2), privatized=privatized,
                              seed=seed, K=K, n=n, d=d)


def empirical_sensitivity(X, X_tilde) -> float:
    """l1 distance of the two eigenvalue vectors of neighboring datasets.

    Test oracle: spectra are padded with zeros to length d before the
    l1 norm.  Inputs must differ in exactly one row.
    """
    X = validate_data(X)
    X_tilde = validate_data(X_tilde)
    if X.shape != X_tilde.shape:
        raise InputError("neighboring datasets must share a shape")
    differs = ~np.all(X == X_tilde, axis=1)
    if differs.sum() == 0:
        return 0.0
    if differs.sum() > 1:
        raise InputError(
            f"datasets differ in {differs.sum()} rows; neighbors differ in 1")
    n, d = X.shape

    def padded(A):
        lam = np.linalg.eigvalsh(A.T @ A / n)[::-1]
        out = np.zeros(d)
        out[: lam.shape[0]] = np.maximum(lam, 0.0)
        return out

    return float(np.abs(padded(X) - padded(X_tilde)).sum())
