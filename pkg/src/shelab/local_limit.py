"""Local-limit-theorem error between scaled walk laws and stable densities.

Compares the cell-density normalization eps^-d P(eps X_(t/eps^alpha) = x)
with the stable density p_t(x) over a spatial window, in the uniform
regime (sup over the window) and the heavy-tail regime (error weighted by
|x|^(d+alpha+a) / (t eps^a) beyond |x| = t^(1/alpha)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RegimeError, RegressionError, TorusSizeError
from .stable_kernel import StableKernel
from .util import fit_loglog
from .walk import (DislocationDistribution, diagnose_assumptions,
                   scaled_transition, suggest_torus_n)


@dataclass(frozen=True)
class LLTErrorReport:
    epsilon: float
    t: float
    sup_error: float
    tail_stat: float
    window_radius: float
    a_exponent: float

    def __post_init__(self):
        if self.sup_error < 0.0 or self.tail_stat < 0.0:
            raise ValueError("error statistics must be nonnegative")


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log error against log eps."""

    points: tuple  # (log eps, log error) pairs
    slope: float
    intercept: float
    r_squared: float

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a rate fit needs at least 2 points")
        if not 0.0 <= self.r_squared <= 1.0 + 1e-12:
            raise ValueError("r_squared out of range")


def default_window(t: float, alpha: float) -> float:
    """Beyond ~10 t^(1/alpha) both laws are negligible and add only noise."""
    return 10.0 * t ** (1.0 / alpha)


def llt_sup_error(walk: DislocationDistribution, kernel: StableKernel,
                  epsilon: float, t: float, window_radius: float | None = None,
                  a_exponent: float | None = None, torus_n: int | None = None,
                  wrap_tol: float = 1e-8) -> LLTErrorReport:
    """Sup-norm comparison on the window, plus the tail-regime statistic.

    Valid for t >= eps^alpha. The torus is sized so the wrapped mass inside
    the window stays below wrap_tol (or validated, if a size is given).
    """
    alpha = walk.alpha_target
    d = walk.dim
    if kernel.params.dim != d or kernel.params.alpha != alpha:
        raise ValueError("kernel and walk disagree on alpha or dim")
    if t < epsilon**alpha:
        raise RegimeError(
            f"t={t} below eps^alpha={epsilon**alpha:.3g}; the comparison "
            "regime needs t >= eps^alpha")
    if window_radius is None:
        window_radius = default_window(t, alpha)
    window_sites = int(np.floor(window_radius / epsilon))
    if torus_n is None:
        torus_n = suggest_torus_n(walk, t / epsilon**alpha,
                                  window_sites=window_sites, tol=wrap_tol)
    elif 2 * window_sites + 1 > torus_n:
        raise TorusSizeError(
            f"window of {window_sites} sites exceeds torus_n={torus_n}",
            suggested_n=suggest_torus_n(walk, t / epsilon**alpha,
                                        window_sites=window_sites,
                                        tol=wrap_tol))
    if a_exponent is None:
        diag = diagnose_assumptions(walk)
        a_exponent = min(diag.a_hat, walk.a_cap)

    table = scaled_transition(walk, epsilon, t, torus_n, tol=wrap_tol)
    sites, vals = table.window(window_sites)
    if d == 1:
        x = sites.astype(float) * epsilon
        radii = np.abs(x)
        points = x
    else:
        grids = np.meshgrid(*[sites] * d, indexing="ij")
        points = np.stack([g * epsilon for g in grids], axis=-1)
        radii = np.sqrt(np.sum(points**2, axis=-1))
    dens = kernel.density(t, points)
    diff = np.abs(vals * epsilon**-d - dens)
    sup_error = float(diff.max())

    tail_stat = 0.0
    if alpha < 2.0:
        mask = radii > t ** (1.0 / alpha)
        if np.any(mask):
            weight = radii[mask] ** (d + alpha + a_exponent)
            tail_stat = float(np.max(diff[mask] * weight)
                              / (t * epsilon**a_exponent))
    return LLTErrorReport(epsilon=float(epsilon), t=float(t),
                          sup_error=sup_error, tail_stat=tail_stat,
                          window_radius=float(window_radius),
                          a_exponent=float(a_exponent))


def fit_rate(reports) -> RateFit:
    """Empirical rate from reports at a common t and >= 4 eps values.

    The eps ladder must span at least two octaves.
    """
    reports = list(reports)
    if len({r.t for r in reports}) != 1:
        raise RegressionError("rate fits need a common comparison time")
    eps = np.array([r.epsilon for r in reports])
    err = np.array([r.sup_error for r in reports])
    if np.unique(eps).size < 4:
        raise RegressionError("need at least 4 distinct eps values")
    if eps.max() / eps.min() < 4.0 - 1e-12:
        raise RegressionError("eps ladder must span at least two octaves")
    slope, intercept, r2 = fit_loglog(eps, err)
    pts = tuple(zip(np.log(eps).tolist(), np.log(err).tolist()))
    return RateFit(points=pts, slope=slope, intercept=intercept, r_squared=r2)


def pointwise_envelope_stat(walk, kernel, epsilon, t,
                            window_radius: float | None = None,
                            a_exponent: float | None = None,
                            torus_n: int | None = None) -> float:
    """Fitted constant C in |error| <= C eps^a p_t(x) / t^(a/alpha).

    Only meaningful for alpha < 2, where the density has polynomial tails.
    """
    alpha = walk.alpha_target
    if alpha >= 2.0:
        raise RegimeError("the pointwise envelope bound needs alpha < 2")
    if window_radius is None:
        window_radius = default_window(t, alpha)
    if a_exponent is None:
        diag = diagnose_assumptions(walk)
        a_exponent = min(diag.a_hat, walk.a_cap)
    if t < epsilon**alpha:
        raise RegimeError("need t >= eps^alpha")
    window_sites = int(np.floor(window_radius / epsilon))
    if torus_n is None:
        torus_n = suggest_torus_n(walk, t / epsilon**alpha,
                                  window_sites=window_sites)
    table = scaled_transition(walk, epsilon, t, torus_n)
    sites, vals = table.window(window_sites)
    x = sites.astype(float) * epsilon if walk.dim == 1 else None
    if walk.dim != 1:
        raise RegimeError("pointwise envelope statistic implemented for dim=1")
    dens = kernel.density(t, x)
    diff = np.abs(vals / epsilon - dens)
    bound = epsilon**a_exponent * dens / t ** (a_exponent / alpha)
    return float(np.max(diff / bound))
