"""Laplace-convolved loss transforms and asymptotic moment tables.

For a loss g and centered Laplace noise ell with scale b, the transforms

    b_g(t)      = E g(t + ell)
    b_{g,g'}(t) = E g(t + ell) g'(t + ell)

feed the null/alternative mean vector and covariance matrix of the noisy
spectral averages: mu(g) = (1 v y) * int_{t>0} b_g dF and
v(g, g') = (1 v y) * int_{t>0} (b_{g,g'} - b_g b_{g'}) dF.

Quadratic and absolute losses admit closed forms; anything involving the
entropy loss g1 is integrated by a fixed-node panel scheme (tanh-sinh
panels split at the integrand kinks, Laguerre tails) that is verified by
node doubling.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, InputError, QuadratureError
from .rmt import MarchenkoPastur, SpectralLaw, mp_moment_rule

__all__ = [
    "LOSS_TAGS",
    "NoiseLaw",
    "MomentTable",
    "loss",
    "b_g",
    "b_gg",
    "moment_table",
    "moment_table_cached",
    "MomentInterpolator",
]

LOSS_TAGS = ("g1", "g2", "g3")


def _g1(x):
    ax = np.abs(x)
    return ax - np.log(ax) - 1.0


def _g2(x):
    return (x - 1.0) ** 2


def _g3(x):
    return np.abs(x - 1.0)


_LOSSES = {"g1": _g1, "g2": _g2, "g3": _g3}


def loss(tag: str):
    """The loss function for a tag in {'g1', 'g2', 'g3'}."""
    try:
        return _LOSSES[tag]
    except KeyError:
        raise InputError(f"unknown loss tag {tag!r}") from None


@dataclass(frozen=True)
class NoiseLaw:
    """Centered Laplace noise with the given scale parameter."""

    scale: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InputError(f"Laplace scale must be positive, got {self.scale}")


# ---------------------------------------------------------------------------
# fixed-node panel quadrature for E[phi(t + ell)]
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _tanh_sinh_rule(npts: int, vmax: float = 3.1):
    v = np.linspace(-vmax, vmax, npts)
    dv = v[1] - v[0]
    sv = np.sinh(v)
    x = np.tanh(0.5 * np.pi * sv)
    w = dv * 0.5 * np.pi * np.cosh(v) / np.cosh(0.5 * np.pi * sv) ** 2
    return x, w


@functools.lru_cache(maxsize=8)
def _laguerre_rule(npts: int):
    return np.polynomial.laguerre.laggauss(npts)


def _laplace_expect_fixed(phi, t, b, n_panel, n_tail):
    """One pass of the panel scheme at a given node density.

    Integrates ``(1/2b) int phi(u) exp(-|u - t|/b) du`` with panels split at
    u in {0, 1, t} (loss kinks, log singularity, noise-density kink) plus a
    guard panel keeping the singular point away from the left tail.
    """
    t = np.asarray(t, dtype=float)
    n = t.shape[0]
    ts_x, ts_w = _tanh_sinh_rule(n_panel)
    lg_x, lg_w = _laguerre_rule(n_tail)
    # guard panels push the log singularity at u = 0 several noise scales
    # away from both Laguerre tails
    guard = max(1.0, 4.0 * b)
    right = np.maximum(t, 1.0) + guard
    bp = np.sort(np.stack([np.full(n, -guard), np.zeros(n), np.ones(n), t,
                           right], axis=1), axis=1)
    total = np.zeros(n)
    for j in range(bp.shape[1] - 1):
        lo_, hi_ = bp[:, j], bp[:, j + 1]
        half = 0.5 * (hi_ - lo_)
        mid = 0.5 * (hi_ + lo_)
        live = half > 0
        if not live.any():
            continue
        u = mid[:, None] + half[:, None] * ts_x[None, :]
        u = np.where(live[:, None], u, 1.0)  # keep phi off its singularity
        w = half[:, None] * ts_w[None, :]
        vals = np.where(live[:, None],
                        w * phi(u) * np.exp(-np.abs(u - t[:, None]) / b), 0.0)
        total += vals.sum(axis=1)
    lo_, hi_ = bp[:, 0], bp[:, -1]
    total += b * (np.exp(-(t - lo_) / b)[:, None] * lg_w[None, :]
                  * phi(lo_[:, None] - b * lg_x[None, :])).sum(axis=1)
    total += b * (np.exp(-(hi_ - t) / b)[:, None] * lg_w[None, :]
                  * phi(hi_[:, None] + b * lg_x[None, :])).sum(axis=1)
    return total / (2.0 * b)


def laplace_expectation(phi, t, b: float, tol: float = 1e-10):
    """E[phi(t + ell)] under Laplace(0, b), adaptive by node doubling.

    Noise scales below 1e-7 are degenerate for the panel scheme and the
    expectation collapses to phi(t) up to O(b^2) anyway.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise InputError("transform argument t must be nonnegative")
    if b < 1e-7:
        return phi(np.maximum(t, 1e-300))
    prev = _laplace_expect_fixed(phi, t, b, 101, 48)
    for n_panel, n_tail in ((201, 80), (401, 120)):
        cur = _laplace_expect_fixed(phi, t, b, n_panel, n_tail)
        err = np.max(np.abs(cur - prev) / np.maximum(np.abs(cur), 1.0))
        if err < tol:
            return cur
        prev = cur
    raise QuadratureError(
        f"noise-convolution quadrature stalled at tolerance {err:.3e}")


def b_g(tag: str, t, noise: NoiseLaw, method: str = "auto"):
    """The transform b_g(t) = E g(t + ell).

    Closed forms for g2 and g3; the entropy loss goes through quadrature.
    ``method='quadrature'`` forces the panel scheme for any tag.
    """
    b = noise.scale
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if method not in ("auto", "quadrature"):
        raise InputError(f"unknown method {method!r}")
    if method == "auto" and tag == "g2":
        out = (t - 1.0) ** 2 + 2.0 * b * b
    elif method == "auto" and tag == "g3":
        a = np.abs(t - 1.0)
        out = a + b * np.exp(-a / b)
    else:
        out = laplace_expectation(loss(tag), t, b)
    return out[0] if scalar else out


_CLOSED_PAIRS = {("g2", "g2"), ("g2", "g3"), ("g3", "g2"), ("g3", "g3")}


def b_gg(tag_m: str, tag_s: str, t, noise: NoiseLaw, method: str = "auto"):
    """The product transform b_{g_m,g_s}(t) = E g_m(t + ell) g_s(t + ell).

    (g2, g2) follows from the Laplace moments E ell^2 = 2 b^2 and
    E ell^4 = 24 b^4; (g2, g3) from the third absolute moment; (g3, g3)
    equals b_{g2} identically.  Pairs involving g1 are integrated.
    """
    b = noise.scale
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    key = (tag_m, tag_s)
    if method == "auto" and key in _CLOSED_PAIRS:
        if key == ("g2", "g2"):
            c2 = (t - 1.0) ** 2
            out = c2 * c2 + 12.0 * c2 * b * b + 24.0 * b ** 4
        elif key == ("g3", "g3"):
            out = (t - 1.0) ** 2 + 2.0 * b * b
        else:  # (g2, g3) either order: E|t + ell - 1|^3
            a = np.abs(t - 1.0)
            out = a ** 3 + 6.0 * a * b * b + 6.0 * b ** 3 * np.exp(-a / b)
    else:
        gm, gs = loss(tag_m), loss(tag_s)
        out = laplace_expectation(lambda u: gm(u) * gs(u), t, b)
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# moment tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentTable:
    """Asymptotic mean vector and covariance of the three noisy averages."""

    mu: np.ndarray
    V: np.ndarray
    Gamma: np.ndarray
    R: np.ndarray
    kappa: str
    b: float
    y: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.V)) and np.all(np.isfinite(self.R))
                and np.all(np.diag(self.V) > 0)):
            raise CalibrationError(
                "limiting covariance degenerated to zero/non-finite entries "
                "(noise scale too small for a calibrated test)")
        scale = max(1.0, float(np.max(np.abs(self.V))))
        eig = np.linalg.eigvalsh(0.5 * (self.V + self.V.T))
        if eig.min() < -1e-10 * scale:
            raise CalibrationError(
                f"moment covariance not PSD (min eigenvalue {eig.min():.3e})")
        r_eig = np.linalg.eigvalsh(0.5 * (self.R + self.R.T))
        if r_eig.min() <= 1e-8:
            raise CalibrationError(
                "limiting correlation is numerically degenerate "
                f"(min eigenvalue {r_eig.min():.3e})")
        if np.max(np.abs(np.diag(self.R) - 1.0)) > 1e-10:
            raise CalibrationError("correlation matrix diagonal is not 1")


def _table_from_rule(t, w, b: float, y: float, kappa: str) -> MomentTable:
    noise = NoiseLaw(b)
    bg = {tag: b_g(tag, t, noise) for tag in LOSS_TAGS}
    scale = max(1.0, y)
    mu = scale * np.array([w @ bg[tag] for tag in LOSS_TAGS])
    V = np.empty((3, 3))
    for i, tm in enumerate(LOSS_TAGS):
        for j, ts in enumerate(LOSS_TAGS):
            if j < i:
                continue
            pair = b_gg(tm, ts, t, noise)
            V[i, j] = V[j, i] = scale * (w @ (pair - bg[tm] * bg[ts]))
    if not (np.all(np.isfinite(V)) and np.all(np.diag(V) > 0)):
        raise CalibrationError(
            "limiting covariance degenerated to zero/non-finite entries "
            "(noise scale too small for a calibrated test)")
    gam = np.sqrt(np.diag(V))
    R = V / np.outer(gam, gam)
    np.fill_diagonal(R, 1.0)
    return MomentTable(mu=mu, V=V, Gamma=gam, R=R, kappa=kappa, b=b, y=y)


def moment_table(law, noise: NoiseLaw, n_nodes: int = 512,
                 tol: float = 1e-9) -> MomentTable:
    """Mean vector and covariance matrix of the noisy averages under `law`.

    For the Marchenko-Pastur law the outer integral uses the cosine-
    substituted Chebyshev rule, doubling the node count until two passes
    agree within `tol`; a tabulated generalized law brings its own nodes.
    """
    if isinstance(law, MarchenkoPastur):
        kappa = "null"
        prev = None
        n = n_nodes
        while n <= 8 * n_nodes:
            t, w = mp_moment_rule(law, n)
            cur = _table_from_rule(t, w, noise.scale, law.y, kappa)
            if prev is not None:
                err = max(
                    np.max(np.abs(cur.mu - prev.mu)
                           / np.maximum(np.abs(cur.mu), 1.0)),
                    np.max(np.abs(cur.V - prev.V)
                           / np.maximum(np.abs(cur.V), 1.0)),
                )
                if err < tol:
                    return cur
            prev = cur
            n *= 2
        raise QuadratureError(
            "moment-table quadrature did not stabilize under node doubling")
    if isinstance(law, SpectralLaw):
        t, w = law.moment_rule()
        return _table_from_rule(t, w, noise.scale, law.y, "alternative")
    raise InputError(f"unsupported law type {type(law).__name__}")


@functools.lru_cache(maxsize=4096)
def _cached_null_table(y: float, b_rounded: float, n_nodes: int) -> MomentTable:
    return moment_table(MarchenkoPastur(y), NoiseLaw(b_rounded),
                        n_nodes=n_nodes)


def moment_table_cached(y: float, b: float, n_nodes: int = 512) -> MomentTable:
    """Null moment table with the noise scale rounded to 1e-6 for reuse."""
    return _cached_null_table(float(y), round(float(b), 6), n_nodes)


class MomentInterpolator:
    """Chebyshev interpolation of the null table over a noise-scale range.

    Batch runs draw a fresh noise scale every replication; exact tables at
    each scale are wasteful because the entries are analytic in b.  This
    fits degree-(npts-1) Chebyshev series through exact tables at npts
    Chebyshev nodes of [b_lo, b_hi]; interpolation error is checked in the
    test suite at 1e-8.
    """

    def __init__(self, y: float, b_lo: float, b_hi: float, npts: int = 13,
                 n_nodes: int = 512, check_tol: float = 1e-7):
        if not (0 < b_lo < b_hi):
            raise InputError("need 0 < b_lo < b_hi")
        self.y = float(y)
        self.b_lo = float(b_lo)
        self.b_hi = float(b_hi)
        law = MarchenkoPastur(y)
        while True:
            k = np.arange(npts)
            xn = np.cos(np.pi * (k + 0.5) / npts)
            self.b_nodes = 0.5 * (b_lo + b_hi) + 0.5 * (b_hi - b_lo) * xn
            tables = [moment_table(law, NoiseLaw(b), n_nodes=n_nodes)
                      for b in self.b_nodes]
            xs = self._xmap(self.b_nodes)
            from numpy.polynomial import chebyshev as ch
            self._mu_coef = [ch.chebfit(xs, np.array([t.mu[i] for t in tables]),
                                        npts - 1) for i in range(3)]
            self._v_coef = [[ch.chebfit(xs,
                                        np.array([t.V[i, j] for t in tables]),
                                        npts - 1) for j in range(3)]
                            for i in range(3)]
            if self._fit_error(law, n_nodes) <= check_tol or npts >= 49:
                break
            npts = 2 * npts - 1

    def _fit_error(self, law, n_nodes) -> float:
        """Worst relative error of the fit at three off-node scales."""
        probes = self.b_lo + np.array([0.13, 0.52, 0.91]) * (self.b_hi
                                                             - self.b_lo)
        err = 0.0
        for b in probes:
            exact = moment_table(law, NoiseLaw(b), n_nodes=n_nodes)
            got = self(b)
            scale = max(1.0, np.max(np.abs(exact.V)))
            err = max(err,
                      float(np.max(np.abs(got.mu - exact.mu))) / scale,
                      float(np.max(np.abs(got.V - exact.V))) / scale)
        return err

    def _xmap(self, b):
        return (2.0 * np.asarray(b) - (self.b_lo + self.b_hi)) / (
            self.b_hi - self.b_lo)

    def __call__(self, b: float) -> MomentTable:
        if not (self.b_lo - 1e-12 <= b <= self.b_hi + 1e-12):
            raise InputError(
                f"noise scale {b!r} outside interpolation range "
                f"[{self.b_lo}, {self.b_hi}]")
        from numpy.polynomial import chebyshev as ch
        x = self._xmap(b)
        mu = np.array([ch.chebval(x, c) for c in self._mu_coef])
        V = np.array([[ch.chebval(x, self._v_coef[i][j]) for j in range(3)]
                      for i in range(3)])
        V = 0.5 * (V + V.T)
        gam = np.sqrt(np.diag(V))
        R = V / np.outer(gam, gam)
        np.fill_diagonal(R, 1.0)
        return MomentTable(mu=mu, V=V, Gamma=gam, R=R, kappa="null",
                           b=float(b), y=self.y)
