"""Sample covariance / correlation spectra.

Computes the K = min(d, n) eigenvalues that can be nonzero, switching to
the n x n Gram matrix when the data are wider than tall.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "SpectrumResult",
    "validate_data",
    "covariance_spectrum",
    "correlation_spectrum",
    "pretransform_sigma0",
    "load_csv",
]


@dataclass(frozen=True)
class SpectrumResult:
    """Descending nonzero-capable eigenvalues of a sample matrix."""

    eigenvalues: np.ndarray
    trace: float
    centered: bool
    source: str  # "covariance" | "correlation"
    n: int
    d: int

    @property
    def K(self) -> int:
        return self.eigenvalues.shape[0]


def validate_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("data must be a 2-d array (rows = observations)")
    n, d = X.shape
    if n < 2 or d < 1:
        raise InputError(f"need n >= 2 and d >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("data contains non-finite entries")
    return X


def _gram_eigenvalues(X: np.ndarray, n: int) -> np.ndarray:
    """Eigenvalues of X^T X / n via the smaller of the two Gram matrices."""
    rows, cols = X.shape
    if cols <= rows:
        mat = X.T @ X / n
    else:
        mat = X @ X.T / n
    lam = np.linalg.eigvalsh(mat)[::-1]
    return np.maximum(lam, 0.0)


def covariance_spectrum(X, centered: bool = False) -> SpectrumResult:
    """Eigenvalues of the sample covariance matrix, descending.

    Uncentered by default: the statistic of interest averages losses over
    the spectrum of X^T X / n.  With ``centered=True`` column means are
    removed first (divisor stays n).
    """
    X = validate_data(X)
    n, d = X.shape
    if centered:
        X = X - X.mean(axis=0, keepdims=True)
    lam = _gram_eigenvalues(X, n)[: min(n, d)]
    return SpectrumResult(eigenvalues=lam, trace=float(lam.sum()),
                          centered=centered, source="covariance", n=n, d=d)


def correlation_spectrum(X) -> SpectrumResult:
    """Eigenvalues of the sample correlation matrix, descending.

    The trace equals d exactly up to floating point.  Columns with zero
    sample standard deviation are rejected by index.
    """
    X = validate_data(X)
    n, d = X.shape
    Xc = X - X.mean(axis=0, keepdims=True)
    sd = np.sqrt((Xc ** 2).mean(axis=0))
    bad = np.where(sd <= 0)[0]
    if bad.size:
        raise InputError(f"zero-variance column at index {bad[0]}")
    Z = Xc / sd
    lam = _gram_eigenvalues(Z, n)[: min(n, d)]
    return SpectrumResult(eigenvalues=lam, trace=float(lam.sum()),
                          centered=True, source="correlation", n=n, d=d)


def pretransform_sigma0(X, sigma0) -> np.ndarray:
    """Map x -> Sigma0^{-1/2} x so a general null reduces to identity."""
    X = validate_data(X)
    sigma0 = np.asarray(sigma0, dtype=float)
    if sigma0.shape != (X.shape[1], X.shape[1]):
        raise InputError("Sigma0 shape must match the data dimension")
    w, U = np.linalg.eigh(0.5 * (sigma0 + sigma0.T))
    if w.min() <= 0:
        raise InputError("Sigma0 must be positive definite")
    inv_root = (U / np.sqrt(w)) @ U.T
    return X @ inv_root


def load_csv(path, header: bool = False) -> np.ndarray:
    """Read an observations-by-variables CSV; rejects ragged rows."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for k, row in enumerate(reader):
            if k == 0 and header:
                continue
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise InputError(
                    f"ragged CSV row at line {k + 1}: {len(row)} fields, "
                    f"expected {width}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InputError(f"non-numeric CSV value at line {k + 1}: {exc}")
    if not rows:
        raise InputError("CSV file contains no data rows")
    return validate_data(np.array(rows))
