"""Limiting spectral laws of large sample covariance matrices.

Closed-form Marchenko-Pastur density/CDF/quantiles, classical eigenvalue
locations, and the generalized law for an arbitrary discrete population
spectrum, obtained by solving the self-consistent Stieltjes-transform
equation and inverting it to a density.

All integrals against a law use the cosine substitution
``t = mid + rad*cos(theta)`` on each support interval, which turns the
square-root edge factors into smooth functions of ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from numpy.polynomial import polynomial as _poly

from .errors import ConvergenceError, InputError

__all__ = [
    "MarchenkoPastur",
    "PopulationMeasure",
    "SpectralLaw",
    "mp_density",
    "mp_cdf",
    "mp_quantile",
    "mp_moment_rule",
    "classical_locations",
    "solve_generalized_mp",
]

# Gauss-Legendre rule reused by the M-P CDF integrals.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(128)


@dataclass(frozen=True)
class MarchenkoPastur:
    """The Marchenko-Pastur law with aspect ratio ``y = d/n``.

    Carries the support edges and the point mass at the origin (present for
    ``y > 1``); the continuous bulk has total mass ``min(1, 1/y)``.
    """

    y: float
    lambda_minus: float = field(init=False)
    lambda_plus: float = field(init=False)
    zero_mass: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.y) and self.y > 0):
            raise InputError(f"aspect ratio must be positive, got {self.y}")
        ry = np.sqrt(self.y)
        object.__setattr__(self, "lambda_minus", (1.0 - ry) ** 2)
        object.__setattr__(self, "lambda_plus", (1.0 + ry) ** 2)
        object.__setattr__(self, "zero_mass", max(0.0, 1.0 - 1.0 / self.y))

    # Uniform interface shared with SpectralLaw
    @property
    def support(self):
        return ((self.lambda_minus, self.lambda_plus),)

    def density(self, t):
        return mp_density(self, t)

    def cdf(self, t):
        return mp_cdf(self, t)

    def quantile(self, p):
        return mp_quantile(self, p)


def mp_density(law: MarchenkoPastur, t):
    """Density of the continuous part of the M-P law (atom excluded)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if not np.all(np.isfinite(t)):
        raise InputError("density argument must be finite")
    lm, lp = law.lambda_minus, law.lambda_plus
    inside = (t > lm) & (t < lp) & (t > 0)
    out = np.zeros_like(t)
    ti = t[inside]
    out[inside] = np.sqrt((ti - lm) * (lp - ti)) / (2.0 * np.pi * law.y * ti)
    return out[0] if scalar else out


def _mp_bulk_mass(law: MarchenkoPastur, t):
    """Integral of the density over [lambda_minus, t], vectorized.

    In theta coordinates the integrand ``sin^2(theta)/t(theta)`` is smooth
    (also at a hard edge when y = 1), so a fixed Gauss-Legendre rule is
    accurate to machine precision.
    """
    lm, lp = law.lambda_minus, law.lambda_plus
    mid, rad = 0.5 * (lp + lm), 0.5 * (lp - lm)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    theta_x = np.arccos(np.clip((t - mid) / rad, -1.0, 1.0))
    half = 0.5 * (np.pi - theta_x)
    theta = theta_x[:, None] + half[:, None] * (_GL_X[None, :] + 1.0)
    tt = mid + rad * np.cos(theta)
    integrand = np.sin(theta) ** 2 / tt
    return (2.0 / np.pi) * half * (integrand @ _GL_W)


def mp_cdf(law: MarchenkoPastur, t):
    """CDF of the M-P law, including the atom at zero when y > 1."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if not np.all(np.isfinite(t)):
        raise InputError("cdf argument must be finite")
    lm, lp = law.lambda_minus, law.lambda_plus
    out = np.empty_like(t)
    out[t < 0] = 0.0
    below = (t >= 0) & (t <= lm)
    out[below] = law.zero_mass
    out[t >= lp] = 1.0
    mid_mask = (t > lm) & (t < lp)
    if np.any(mid_mask):
        out[mid_mask] = law.zero_mass + _mp_bulk_mass(law, t[mid_mask])
    return out[0] if scalar else out


def mp_quantile(law: MarchenkoPastur, p):
    """Quantile of the M-P law by bracketed bisection on the bulk.

    Requires ``zero_mass < p <= 1``; levels at or below the atom have no
    bulk preimage.
    """
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if np.any(p > 1.0) or np.any(~np.isfinite(p)):
        raise InputError("quantile level must lie in (zero_mass, 1]")
    if np.any(p <= law.zero_mass):
        raise InputError("quantile lies in the atom at zero")
    lo = np.full_like(p, law.lambda_minus)
    hi = np.full_like(p, law.lambda_plus)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        c = mp_cdf(law, mid)
        go_left = c >= p
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_left, lo, mid)
    out = 0.5 * (lo + hi)
    out[p == 1.0] = law.lambda_plus
    return out[0] if scalar else out


def mp_moment_rule(law: MarchenkoPastur, n_nodes: int = 512):
    """Nodes and weights integrating a function against the M-P bulk.

    ``sum(w * phi(t))`` approximates ``int phi dF_y`` over ``t > 0``; the
    weights sum to ``min(1, 1/y)``.  Each piece of the bulk is integrated
    in the cosine variable (Gauss-Legendre in theta), which absorbs the
    square-root edge factors; the bulk is split at t = 1 because the
    noise-convolved losses develop a boundary layer of width b there.
    """
    lm, lp = law.lambda_minus, law.lambda_plus
    cuts = [lm, lp] if not lm < 1.0 < lp else [lm, 1.0, lp]
    per_piece = max(8, n_nodes // (len(cuts) - 1))
    glx, glw = np.polynomial.legendre.leggauss(per_piece)
    ts, ws = [], []
    for a, c in zip(cuts[:-1], cuts[1:]):
        mid, rad = 0.5 * (a + c), 0.5 * (c - a)
        theta = 0.5 * np.pi * (glx + 1.0)
        t = mid + rad * np.cos(theta)
        f = np.sqrt(np.maximum((t - lm) * (lp - t), 0.0)) / (
            2.0 * np.pi * law.y * t)
        ts.append(t)
        ws.append(0.5 * np.pi * glw * f * rad * np.sin(theta))
    return np.concatenate(ts), np.concatenate(ws)


@dataclass(frozen=True)
class PopulationMeasure:
    """Discrete population spectral measure: atoms (location, weight)."""

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((float(loc), float(wt)) for loc, wt in self.atoms)
        if not atoms:
            raise InputError("population measure needs at least one atom")
        locs = np.array([a[0] for a in atoms])
        wts = np.array([a[1] for a in atoms])
        if np.any(locs <= 0):
            raise InputError("atom locations must be positive")
        if np.any(wts < 0):
            raise InputError("atom weights must be nonnegative")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise InputError(f"atom weights must sum to 1, got {wts.sum()!r}")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def point_mass(cls, location: float) -> "PopulationMeasure":
        return cls(((location, 1.0),))

    @property
    def locations(self):
        return np.array([a[0] for a in self.atoms])

    @property
    def weights(self):
        return np.array([a[1] for a in self.atoms])


@dataclass(frozen=True)
class _IntervalRule:
    """Quadrature and cumulative-mass machinery on one support interval."""

    a: float
    b: float
    mass: float
    t_nodes: np.ndarray
    w_mass: np.ndarray
    anti: np.ndarray  # Chebyshev antiderivative coefficients in c

    def mass_below(self, ts):
        """Mass of [a, min(ts, b)] under the law's continuous part."""
        ts = np.asarray(ts, dtype=float)
        mid, rad = 0.5 * (self.a + self.b), 0.5 * (self.b - self.a)
        cc = np.clip((ts - mid) / max(rad, 1e-300), -1.0, 1.0)
        cs = 2.0 * np.arccos(cc) / np.pi - 1.0
        hi = _cheb.chebval(1.0, self.anti)
        return (np.pi / 2.0) * (hi - _cheb.chebval(cs, self.anti))


@dataclass(frozen=True)
class SpectralLaw:
    """A limiting spectral law tabulated from its Stieltjes transform."""

    y: float
    support: tuple
    grid: np.ndarray
    density_grid: np.ndarray
    cdf_grid: np.ndarray
    zero_mass: float
    population: PopulationMeasure
    _rules: tuple = field(repr=False, default=())

    @property
    def total_mass(self) -> float:
        """zero_mass plus the quadrature mass of every support interval."""
        return self.zero_mass + sum(r.mass for r in self._rules)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.grid, self.density_grid, left=0.0, right=0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        out = np.full_like(t, self.zero_mass)
        out[t < 0] = 0.0
        acc = self.zero_mass
        for r in self._rules:
            out = np.where(t >= r.a, acc + r.mass_below(np.minimum(t, r.b)), out)
            acc += r.mass
            out = np.where(t >= r.b, acc, out)
        return out[0] if scalar else out

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        if np.any(p > self.total_mass + 1e-9) or np.any(~np.isfinite(p)):
            raise InputError("quantile level above total mass")
        if np.any(p <= self.zero_mass):
            raise InputError("quantile lies in the atom at zero")
        out = np.empty_like(p)
        acc = self.zero_mass
        for r in self._rules:
            sel = (p > acc) & (p <= acc + r.mass + 1e-12)
            if np.any(sel):
                target = p[sel]
                lo = np.full(target.shape, r.a)
                hi = np.full(target.shape, r.b)
                for _ in range(64):
                    mid = 0.5 * (lo + hi)
                    c = acc + r.mass_below(mid)
                    left = c >= target
                    hi = np.where(left, mid, hi)
                    lo = np.where(left, lo, mid)
                out[sel] = 0.5 * (lo + hi)
            acc += r.mass
        return out[0] if scalar else out

    def moment_rule(self):
        """Concatenated (nodes, mass weights) over all support intervals."""
        t = np.concatenate([r.t_nodes for r in self._rules])
        w = np.concatenate([r.w_mass for r in self._rules])
        return t, w


# ---------------------------------------------------------------------------
# Stieltjes-transform machinery
# ---------------------------------------------------------------------------

def _companion_iterate(locs, wts, y, z, m0=None, max_iter=10000, tol=1e-11,
                       damp=0.5):
    """Damped fixed point for the companion transform.

    The companion form ``mb = -1/(z - y*sum w t/(1 + t*mb))`` maps the upper
    half plane to itself, so the iteration cannot cross to the conjugate
    branch.  Returns (mb, converged_mask).
    """
    mb = -1.0 / z if m0 is None else m0
    locs = locs[None, :]
    wts = wts[None, :]
    ok = np.zeros(z.shape, dtype=bool)
    for _ in range(max_iter):
        w = y * np.sum(wts * locs / (1.0 + locs * mb[:, None]), axis=1)
        mb_new = -1.0 / (z - w)
        mb_next = damp * mb + (1.0 - damp) * mb_new
        delta = np.abs(mb_next - mb) / np.maximum(np.abs(mb_next), 1e-300)
        mb = mb_next
        ok = delta < tol
        if ok.all():
            break
    return mb, ok


def _companion_newton(locs, wts, y, z, mb, steps=80, tol=1e-14):
    """Newton polish of the companion equation, constrained to Im > 0."""
    locs = locs[None, :]
    wts = wts[None, :]
    for _ in range(steps):
        q = 1.0 + locs * mb[:, None]
        w = y * np.sum(wts * locs / q, axis=1)
        wp = -y * np.sum(wts * locs ** 2 / q ** 2, axis=1)
        G = mb + 1.0 / (z - w)
        Gp = 1.0 + wp / (z - w) ** 2
        step = G / Gp
        new = mb - step
        for _ in range(60):
            bad = new.imag <= 0
            if not bad.any():
                break
            step = np.where(bad, 0.5 * step, step)
            new = mb - step
        mb = new
        if np.max(np.abs(step) / np.maximum(np.abs(mb), 1e-300)) < tol:
            break
    return mb


def _solve_m(locs, wts, y, z, max_iter=10000):
    """Stieltjes transform m(z) of the sample law, with residual check.

    Solves the companion equation (warm start + constrained Newton), maps
    back to the d-side transform, and verifies the fixed-point identity
    ``m = int dQ(t) / (t(1 - y - y z m) - z)`` at every point.
    """
    z = np.asarray(z, dtype=complex)
    mb, _ = _companion_iterate(locs, wts, y, z, max_iter=min(max_iter, 3000),
                               tol=1e-8)
    mb = _companion_newton(locs, wts, y, z, mb)
    m = (mb + (1.0 - y) / z) / y
    denom = locs[None, :] * (1.0 - y - y * z[:, None] * m[:, None]) - z[:, None]
    res = np.abs(m - np.sum(wts[None, :] / denom, axis=1))
    rel = res / np.maximum(np.abs(m), 1.0)
    if np.any(rel > 1e-9) or np.any(~np.isfinite(m)):
        idx = int(np.argmax(np.where(np.isfinite(rel), rel, np.inf)))
        raise ConvergenceError(
            f"Stieltjes iteration did not converge at abscissa {z[idx].real!r}"
        )
    return m


def _continuous_density(locs, wts, y, x, nu, zero_mass, max_iter=10000):
    """Inverse-formula density at x + i*nu with the zero atom removed."""
    x = np.asarray(x, dtype=float)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), x.shape)
    m = _solve_m(locs, wts, y, x + 1j * nu, max_iter=max_iter)
    rho = m.imag / np.pi
    if zero_mass > 0:
        rho = rho - zero_mass * nu / (np.pi * (x ** 2 + nu ** 2))
    return rho


def _edge_candidates(locs, wts, y):
    """Support-edge candidates: critical values of the companion functional.

    Edges of the sample law are stationary values of
    ``psi(m) = -1/m + y * sum w t/(1 + t m)`` over real m; the stationarity
    condition clears to a polynomial of degree 2p.
    """
    polys = [np.array([1.0, t]) for t in locs]  # 1 + t m
    full = np.array([1.0])
    for p in polys:
        full = _poly.polymul(full, _poly.polymul(p, p))
    acc = np.array([0.0])
    for j, t in enumerate(locs):
        rest = np.array([1.0])
        for k, p in enumerate(polys):
            if k != j:
                rest = _poly.polymul(rest, _poly.polymul(p, p))
        acc = _poly.polyadd(acc, wts[j] * t ** 2 * rest)
    lhs = _poly.polysub(full, _poly.polymul(np.array([0.0, 0.0, y]), acc))
    roots = np.roots(lhs[::-1])
    real = roots[np.abs(roots.imag) <= 1e-9 * (1 + np.abs(roots))].real
    vals = []
    for m in real:
        if abs(m) < 1e-13 or np.any(np.abs(1.0 + locs * m) < 1e-12):
            continue
        vals.append(-1.0 / m + y * np.sum(wts * locs / (1.0 + locs * m)))
    vals = sorted(v for v in vals if v > 1e-12)
    # dedupe near-coincident critical values
    out = []
    for v in vals:
        if not out or v - out[-1] > 1e-10 * max(1.0, v):
            out.append(v)
    return out


def _support_intervals(locs, wts, y, zero_mass):
    """Pair edge candidates into disjoint support intervals.

    Midpoints between consecutive candidates are classified by evaluating
    the inverse-formula density there.
    """
    cand = _edge_candidates(locs, wts, y)
    if len(cand) < 2:
        raise ConvergenceError("support-edge search found fewer than two edges")
    mids = 0.5 * (np.array(cand[:-1]) + np.array(cand[1:]))
    rho = _continuous_density(locs, wts, y, mids, 1e-7, zero_mass)
    scale = max(rho.max(), 1e-12)
    inside = rho > 1e-5 * scale
    intervals = []
    for k, flag in enumerate(inside):
        if flag:
            intervals.append((cand[k], cand[k + 1]))
    # merge adjacent intervals sharing an endpoint (double root at a merge)
    merged = []
    for iv in intervals:
        if merged and iv[0] - merged[-1][1] <= 1e-10 * max(1.0, iv[0]):
            merged[-1] = (merged[-1][0], iv[1])
        else:
            merged.append(iv)
    if not merged:
        raise ConvergenceError("no support interval found above threshold")
    return merged


def _fejer1_weights(n: int):
    """Fejer first-rule weights on Chebyshev points of the first kind."""
    j = np.arange(n)
    theta = (2 * j + 1) * np.pi / (2 * n)
    k = np.arange(1, n // 2 + 1)
    w = 1.0 - 2.0 * np.sum(np.cos(2.0 * k[None, :] * theta[:, None])
                           / (4.0 * k[None, :] ** 2 - 1.0), axis=1)
    return (2.0 / n) * w


def _build_interval_rule(locs, wts, y, a, b, zero_mass, n_nodes, nu_quad):
    """Accurate mass / cumulative machinery for one support interval.

    Density is sampled at Chebyshev angles with a per-node imaginary offset
    proportional to the distance from the nearest edge, extrapolated to the
    real axis (two-point Richardson), then fit by a Chebyshev series whose
    antiderivative gives the cumulative mass.
    """
    j = np.arange(n_nodes)
    c = np.cos((2 * j + 1) * np.pi / (2 * n_nodes))
    theta = np.pi * (1.0 + c) / 2.0
    mid, rad = 0.5 * (a + b), 0.5 * (b - a)
    t = mid + rad * np.cos(theta)
    dist = np.minimum(t - a, b - t)
    nu = np.clip(1e-3 * dist, 1e-13, nu_quad)
    r1 = _continuous_density(locs, wts, y, t, nu, zero_mass, max_iter=20000)
    r2 = _continuous_density(locs, wts, y, t, 0.5 * nu, zero_mass,
                             max_iter=20000)
    rho = 2.0 * r2 - r1
    gamma = rho * rad * np.sin(theta)
    deg = max(8, int(0.8 * n_nodes))
    coef = _cheb.chebfit(c, gamma, deg)
    anti = _cheb.chebint(coef)
    mass = (np.pi / 2.0) * (_cheb.chebval(1.0, anti) - _cheb.chebval(-1.0, anti))
    w_mass = _fejer1_weights(n_nodes) * gamma * (np.pi / 2.0)
    return _IntervalRule(a=a, b=b, mass=float(mass), t_nodes=t, w_mass=w_mass,
                         anti=anti)


def solve_generalized_mp(Q: PopulationMeasure, y: float, grid=None,
                         nu: float = 1e-5, n_grid: int = 2001,
                         n_quad: int = 400, max_iter: int = 10000,
                         support_threshold: float = 1e-6) -> SpectralLaw:
    """Limiting law of the sample covariance spectrum for population Q.

    The Stieltjes transform is solved point by point at ``x + i*nu`` and
    inverted to a density on ``grid`` (default: 2001 uniform points on a
    conservative superset of the support).  Support intervals come from the
    stationary values of the companion functional, refined against the
    density; each interval then gets a spectrally accurate mass/cumulative
    rule used for the CDF, quantiles and moment integration.
    """
    if y <= 0 or not np.isfinite(y):
        raise InputError("aspect ratio must be positive")
    if nu <= 0:
        raise InputError("imaginary offset nu must be positive")
    locs, wts = Q.locations, Q.weights
    zero_mass = max(0.0, 1.0 - 1.0 / y)

    if grid is None:
        hi = 1.5 * locs.max() * (1.0 + np.sqrt(y)) ** 2
        grid = np.linspace(0.0, hi, n_grid)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise InputError("grid must be a 1-d array with >= 2 points")

    rho_grid = _continuous_density(locs, wts, y, grid, nu, zero_mass,
                                   max_iter=max_iter)
    if np.any(rho_grid < -1e-8):
        raise ConvergenceError("inversion failed: negative density beyond -1e-8")
    rho_grid = np.maximum(rho_grid, 0.0)

    intervals = _support_intervals(locs, wts, y, zero_mass)
    intervals = [(a, min(b, grid[-1])) for a, b in intervals if a < grid[-1]]

    # sanity: thresholded grid support must cover each analytic interval
    thr = support_threshold * rho_grid.max()
    for a, b in intervals:
        sel = (grid >= a + 0.05 * (b - a)) & (grid <= b - 0.05 * (b - a))
        if np.any(sel) and not np.all(rho_grid[sel] > thr):
            raise ConvergenceError(
                f"density below threshold inside support interval ({a}, {b})")

    rules = tuple(
        _build_interval_rule(locs, wts, y, a, b, zero_mass, n_quad, 1e-6)
        for a, b in intervals
    )

    cdf_grid = np.full_like(grid, zero_mass)
    cdf_grid[grid < 0] = 0.0
    acc = zero_mass
    for r in rules:
        cdf_grid = np.where(grid >= r.a,
                            acc + r.mass_below(np.minimum(grid, r.b)), cdf_grid)
        acc += r.mass
        cdf_grid = np.where(grid >= r.b, acc, cdf_grid)
    cdf_grid = np.maximum.accumulate(np.clip(cdf_grid, 0.0, 1.0))

    total = zero_mass + sum(r.mass for r in rules)
    if abs(total - 1.0) > 1e-4:
        raise ConvergenceError(
            f"law mass {total!r} deviates from 1 beyond sanity tolerance")

    return SpectralLaw(y=float(y), support=tuple(intervals), grid=grid,
                       density_grid=rho_grid, cdf_grid=cdf_grid,
                       zero_mass=zero_mass, population=Q, _rules=rules)


def classical_locations(law, d: int):
    """Deterministic bulk locations: the (1 - i/d) quantiles of the law.

    Returns the descending vector of all locations with level at or above
    the zero-atom mass; levels hitting the atom boundary map to the lower
    support edge.
    """
    if d < 1:
        raise InputError("d must be a positive integer")
    i = np.arange(1, d + 1)
    p = 1.0 - i / d
    keep = p >= law.zero_mass - 1e-12
    p = p[keep]
    floor = law.support[0][0]
    out = np.empty(p.shape)
    at_atom = p <= law.zero_mass + 1e-12
    out[at_atom] = floor
    if np.any(~at_atom):
        out[~at_atom] = law.quantile(p[~at_atom])
    return out
