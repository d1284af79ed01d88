"""Cell-integrated noise covariance on the torus and correlated sampling.

The driving field has covariance f(x - y) in space and is white in time;
integrating it over lattice cells of side eps gives Brownian motions with

    Cov(B_t(eps k), B_s(eps l)) = min(s, t) * R(k - l),
    R(m) = int_cell(0) int_cell(m) f(u - v) du dv.

For the Riesz kernel f = |.|^(-beta) in one dimension the cell integral
has an exact closed form (second difference of the double antiderivative).
Higher dimensions use singular quadrature near the diagonal and midpoint
rules with Richardson refinement far from it. Sampling colors white noise
by the square root of the covariance spectrum on the torus (exact for the
wrapped covariance, after clipping of roundoff-negative eigenvalues).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.special

from .errors import EmbeddingError, QuadratureError
from .util import gauss_legendre, rng_for

_CHOLESKY_SITE_LIMIT = 4096
_CLIP_BUDGET = 1e-6


# ----------------------------------------------------------------------
# correlation kernels
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationKernel:
    """Stationary spatial correlation f(x); singular kernels get special
    cell quadrature."""

    name: str
    beta: float | None
    scale: float = 1.0
    singular: bool = False

    def __call__(self, radii):
        radii = np.asarray(radii, dtype=float)
        if self.name == "riesz":
            return radii**-self.beta
        if self.name == "cauchy":
            return (1.0 + (radii / self.scale) ** 2) ** -1.0
        if self.name == "ou":
            return np.exp(-radii / self.scale)
        if self.name == "poisson":
            s = self.scale
            return s / (s**2 + radii**2) ** 1.5
        raise ValueError(f"unknown correlation kernel {self.name!r}")


def correlation_kernel(name: str, beta: float | None = None,
                       scale: float = 1.0) -> CorrelationKernel:
    if name == "riesz":
        if beta is None:
            raise ValueError("the riesz kernel needs beta")
        return CorrelationKernel("riesz", beta=float(beta), singular=True)
    if name in ("cauchy", "ou", "poisson"):
        return CorrelationKernel(name, beta=None, scale=float(scale))
    raise ValueError(f"unknown correlation kernel {name!r}")


# ----------------------------------------------------------------------
# cell integrals
# ----------------------------------------------------------------------

def cell_covariance_1d(m, epsilon: float, beta: float):
    """Exact Riesz cell covariance in one dimension.

    With G(r) = |r|^(2-beta) / ((1-beta)(2-beta)), the double integral over
    cells at offset m is the second difference G((m+1)e) - 2 G(me) + G((m-1)e).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1) for dim=1, got {beta}")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    m = np.asarray(m, dtype=float)

    def anti(r):
        return np.abs(r) ** (2.0 - beta) / ((1.0 - beta) * (2.0 - beta))

    out = anti((m + 1.0) * epsilon) - 2.0 * anti(m * epsilon) + anti((m - 1.0) * epsilon)
    return float(out) if out.ndim == 0 else out


def cell_covariance_nd(offset, epsilon: float, beta: float,
                       order: int = 12, rel_tol: float = 1e-6) -> float:
    """Riesz cell covariance for dim in {2, 3}.

    Reduction to difference coordinates turns the 2d-dimensional cell pair
    integral into int tent(w) f(w + eps m) dw over [-eps, eps]^d with the
    tent weight prod(eps - |w_i|). Far offsets use midpoint evaluation with
    Richardson refinement; offsets touching the singularity use per-box
    Gauss-Legendre with corner pyramids mapped to remove the singularity.
    """
    offset = np.sort(np.abs(np.asarray(offset, dtype=int)))  # exact symmetry
    d = offset.size
    if d not in (2, 3):
        raise ValueError("cell_covariance_nd covers dim 2 and 3")
    if not 0.0 < beta < d:
        raise ValueError(f"beta must lie in (0, dim), got {beta}")
    if np.max(offset) >= 2:
        return _far_cell_value(offset, epsilon, beta, rel_tol)
    return _near_cell_value(offset, epsilon, beta, order, rel_tol)


def _far_cell_value(offset, epsilon, beta, rel_tol):
    """Midpoint refinement with Richardson extrapolation, away from the
    singularity.

    Works on the tent-reduced d-dimensional integral, one octant-box per
    axis sign so the tent weight is linear on each box and the midpoint
    error has a clean h^2 expansion.
    """
    d = offset.size
    centers = offset.astype(float) * epsilon
    estimates = []
    for level in range(8):
        n_sub = 2**level
        frac = (np.arange(n_sub) + 0.5) / n_sub  # sub-midpoints of [0, 1]
        est = 0.0
        for signs in itertools.product((-1.0, 1.0), repeat=d):
            axes = [c + s * epsilon * frac for c, s in zip(centers, signs)]
            grids = np.meshgrid(*axes, indexing="ij")
            s = np.stack(grids, axis=-1)
            radii = np.sqrt(np.sum(s**2, axis=-1))
            est += float(np.sum(_tent_weight(s, centers, epsilon)
                                * radii**-beta)) * (epsilon / n_sub) ** d
        estimates.append(est)
        if len(estimates) >= 3:
            extrap1 = estimates[-2] + (estimates[-2] - estimates[-3]) / 3.0
            extrap2 = estimates[-1] + (estimates[-1] - estimates[-2]) / 3.0
            if abs(extrap2 - extrap1) <= rel_tol * abs(extrap2):
                return extrap2
    raise QuadratureError(
        f"midpoint refinement stalled at offset {offset.tolist()}",
        estimates=tuple(estimates[-2:]))


def _near_cell_value(offset, epsilon, beta, order, rel_tol):
    coarse = _tent_quadrature(offset, epsilon, beta, order)
    fine = _tent_quadrature(offset, epsilon, beta, order + 6)
    if abs(fine - coarse) > max(rel_tol * abs(fine), 1e-14):
        raise QuadratureError(
            f"singular cell quadrature did not converge at offset "
            f"{offset.tolist()}", estimates=(coarse, fine))
    return fine


def _tent_quadrature(offset, epsilon, beta, order):
    """int tent(s - eps*m) |s|^(-beta) ds, split at weight kinks and the origin.

    Each axis interval is cut where the tent weight has a kink and where s
    changes sign. Boxes with the origin as a corner are integrated over
    pyramids with Gauss-Jacobi radial quadrature, which absorbs the
    r^(d-1-beta) factor exactly; all other boxes take plain tensor
    Gauss-Legendre.
    """
    d = offset.size
    centers = offset.astype(float) * epsilon
    axes_pieces = []
    for c in centers:
        cuts = sorted({c - epsilon, c, c + epsilon, 0.0})
        pieces = [(a, b) for a, b in zip(cuts, cuts[1:])
                  if a >= c - epsilon - 1e-15 and b - a > 1e-15]
        axes_pieces.append(pieces)
    total = 0.0
    for combo in itertools.product(*axes_pieces):
        if all(a == 0.0 or b == 0.0 for a, b in combo):
            total += _pyramid_box(combo, centers, epsilon, beta, order)
        else:
            total += _plain_box(combo, centers, epsilon, beta, order)
    return total


def _tent_weight(s, centers, epsilon):
    w = np.ones(s.shape[:-1])
    for i in range(s.shape[-1]):
        w = w * np.maximum(epsilon - np.abs(s[..., i] - centers[i]), 0.0)
    return w


def _plain_box(combo, centers, epsilon, beta, order):
    d = len(combo)
    pts_w = [gauss_legendre(order, a, b) for a, b in combo]
    grids = np.meshgrid(*[p for p, _ in pts_w], indexing="ij")
    s = np.stack(grids, axis=-1)
    weight = np.ones(s.shape[:-1])
    for i, (_, w) in enumerate(pts_w):
        shape = [1] * d
        shape[i] = -1
        weight = weight * w.reshape(shape)
    radii = np.sqrt(np.sum(s**2, axis=-1))
    return float(np.sum(weight * _tent_weight(s, centers, epsilon)
                        * radii**-beta))


def _pyramid_box(combo, centers, epsilon, beta, order):
    """Box with the origin as a corner, one pyramid per leading axis.

    With s_lead = ext_lead * xi and s_o = ext_o * xi * u_o, the Jacobian
    contributes xi^(d-1) and |s|^(-beta) contributes xi^(-beta); the
    combined weight xi^(d-1-beta) is handled by Gauss-Jacobi nodes, so the
    remaining integrand is polynomial times a smooth factor.
    """
    d = len(combo)
    ext = np.array([b if a == 0.0 else a for a, b in combo])  # signed extents
    mags = np.abs(ext)
    if np.any(mags < 1e-15):
        return 0.0
    mu = d - 1.0 - beta
    xj, wj = scipy.special.roots_jacobi(order, 0.0, mu)
    xi = (xj + 1.0) / 2.0
    wxi = wj * 2.0 ** (-mu - 1.0)
    total = 0.0
    for lead in range(d):
        others = [o for o in range(d) if o != lead]
        u_nodes = [gauss_legendre(order, 0.0, 1.0) for _ in others]
        grids = np.meshgrid(xi, *[u for u, _ in u_nodes], indexing="ij")
        xi_g = grids[0]
        s = np.empty(xi_g.shape + (d,))
        s[..., lead] = ext[lead] * xi_g
        rho2 = np.ones_like(xi_g)
        for j, o in enumerate(others):
            s[..., o] = ext[o] * xi_g * grids[1 + j]
            rho2 = rho2 + (mags[o] / mags[lead] * grids[1 + j]) ** 2
        weight = wxi.reshape((-1,) + (1,) * (d - 1)).copy()
        for j, (_, uw) in enumerate(u_nodes):
            shape = [1] * d
            shape[1 + j] = -1
            weight = weight * uw.reshape(shape)
        vals = mags[lead] ** -beta * rho2 ** (-beta / 2.0) \
            * _tent_weight(s, centers, epsilon)
        total += float(np.sum(weight * vals)) * float(np.prod(mags))
    return total


def _smooth_cell_value(kernel: CorrelationKernel, offset, epsilon: float,
                       order: int = 12) -> float:
    """Cell covariance for a bounded kernel: tent-weighted tensor GL."""
    offset = np.asarray(offset, dtype=int)
    d = offset.size
    centers = offset.astype(float) * epsilon
    pts_w = [gauss_legendre(order, c - epsilon, c + epsilon) for c in centers]
    grids = np.meshgrid(*[p for p, _ in pts_w], indexing="ij")
    s = np.stack(grids, axis=-1)
    weight = np.ones(s.shape[:-1])
    for i, (_, w) in enumerate(pts_w):
        shape = [1] * d
        shape[i] = -1
        weight = weight * w.reshape(shape)
    radii = np.sqrt(np.sum(s**2, axis=-1))
    return float(np.sum(weight * _tent_weight(s, centers, epsilon)
                        * kernel(radii)))


# ----------------------------------------------------------------------
# torus covariance operator
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CellCovariance:
    """Wrapped cell covariance R and its nonnegative torus spectrum."""

    epsilon: float
    beta: float | None
    dim: int
    torus_n: int
    kernel_name: str
    table: np.ndarray = field(repr=False)     # FFT layout over torus offsets
    spectrum: np.ndarray = field(repr=False)  # clipped DFT eigenvalues
    clipped_mass: float = 0.0
    min_eigenvalue: float = 0.0               # before clipping

    def value(self, offset) -> float:
        """R at a signed lattice offset (minimum image)."""
        idx = tuple(np.atleast_1d(np.asarray(offset, dtype=int)) % self.torus_n)
        return float(self.table[idx])

    @property
    def n_sites(self) -> int:
        return self.torus_n**self.dim


def _min_image(n: int):
    """Signed minimum-image offsets in FFT layout; R is even, so the
    Nyquist site of an even torus is unambiguous."""
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


def build_covariance(epsilon: float, dim: int, torus_n: int,
                     beta: float | None = None, kernel: str = "riesz",
                     corr_scale: float = 1.0, clip_budget: float = _CLIP_BUDGET
                     ) -> CellCovariance:
    """Wrap the cell covariance on the torus and clip its spectrum.

    Wrapping uses the minimum-image convention. Negative DFT eigenvalues
    (roundoff-sized for these convex decreasing tables) are clipped to
    zero; more than clip_budget of relative clipped mass raises, advising
    a larger torus.
    """
    n = int(torus_n)
    if n < 1:
        raise ValueError("torus_n must be >= 1")
    ck = correlation_kernel(kernel, beta=beta, scale=corr_scale)
    signed = _min_image(n)
    if dim == 1:
        if ck.name == "riesz":
            table = cell_covariance_1d(signed, epsilon, ck.beta)
        else:
            table = np.array([_smooth_cell_value(ck, [m], epsilon)
                              for m in signed])
        table = np.atleast_1d(np.asarray(table, dtype=float))
    else:
        grids = np.meshgrid(*[signed] * dim, indexing="ij")
        offsets = np.stack(grids, axis=-1).reshape(-1, dim)
        cache: dict = {}
        vals = np.empty(offsets.shape[0])
        for i, off in enumerate(offsets):
            key = tuple(sorted(np.abs(off).tolist()))
            if key not in cache:
                if ck.name == "riesz":
                    cache[key] = cell_covariance_nd(np.abs(off), epsilon,
                                                    ck.beta)
                else:
                    cache[key] = _smooth_cell_value(ck, np.abs(off), epsilon)
            vals[i] = cache[key]
        table = vals.reshape((n,) * dim)
    spectrum = scipy.fft.fftn(table) if dim > 1 else scipy.fft.fft(table)
    spectrum = np.real(spectrum)
    min_eig = float(spectrum.min())
    negative = spectrum < 0.0
    clipped = float(-spectrum[negative].sum())
    total = float(np.abs(spectrum).sum())
    frac = clipped / total if total > 0.0 else 0.0
    if frac > clip_budget:
        raise EmbeddingError(
            f"clipped {frac:.2e} of the covariance spectrum on torus_n={n}; "
            "use a larger torus")
    spectrum = np.maximum(spectrum, 0.0)
    return CellCovariance(epsilon=float(epsilon), beta=ck.beta, dim=dim,
                          torus_n=n, kernel_name=ck.name, table=table,
                          spectrum=spectrum, clipped_mass=frac,
                          min_eigenvalue=min_eig)


def summability_check(cov: CellCovariance, walk, t_max: float,
                      n_times: int = 33) -> float:
    """Time integral of the exchange functional sum_yz P_s(y) R(y-z) P_s(z).

    Finiteness of this integral is the well-posedness condition for the
    interacting system; on the torus it is a plain Parseval sum.
    """
    from .walk import transition_probabilities

    times = np.linspace(0.0, t_max, n_times)
    vals = []
    for s in times:
        tab = transition_probabilities(walk, s, cov.torus_n)
        spec = (scipy.fft.fftn(tab.values) if cov.dim > 1
                else scipy.fft.fft(tab.values))
        vals.append(float(np.sum(cov.spectrum * np.abs(spec) ** 2))
                    / cov.n_sites)
    return float(np.trapezoid(vals, times))


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------

class NoiseSampler:
    """Stationary Gaussian increments with Cov = dt * R on the torus.

    Spectral mode colors white noise with sqrt of the covariance spectrum
    (one FFT pair per draw); cholesky mode factors the dense covariance
    rebuilt from the clipped spectrum, so both modes sample the same law.
    Draws are a pure function of (seed_root, step_index, block_index).
    """

    def __init__(self, cov: CellCovariance, mode: str = "spectral",
                 seed_root: int = 0):
        if mode not in ("spectral", "cholesky"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        if mode == "cholesky" and cov.n_sites > _CHOLESKY_SITE_LIMIT:
            raise ValueError(
                f"cholesky mode supports up to {_CHOLESKY_SITE_LIMIT} sites, "
                f"got {cov.n_sites}")
        self.cov = cov
        self.mode = mode
        self.seed_root = int(seed_root)
        if mode == "cholesky":
            clean = np.real(scipy.fft.ifftn(cov.spectrum.reshape(
                (cov.torus_n,) * cov.dim)))
            n_sites = cov.n_sites
            flat = clean.reshape(-1)
            idx = np.arange(n_sites)
            coords = np.unravel_index(idx, (cov.torus_n,) * cov.dim)
            dense = np.empty((n_sites, n_sites))
            for j in range(n_sites):
                cj = np.unravel_index(j, (cov.torus_n,) * cov.dim)
                rel = [(coords[a] - cj[a]) % cov.torus_n for a in range(cov.dim)]
                dense[:, j] = flat[np.ravel_multi_index(rel, (cov.torus_n,) * cov.dim)]
            jitter = 1e-12 * max(float(dense.diagonal().max()), 1.0)
            self._factor = np.linalg.cholesky(dense + jitter * np.eye(n_sites))
        else:
            self._sqrt_spec = np.sqrt(cov.spectrum)

    def sample(self, dt: float, step_index: int, n_replicas: int = 1,
               block_index: int = 0) -> np.ndarray:
        """Increment fields of shape (n_replicas, *torus); dt = 0 gives zeros."""
        if dt < 0.0:
            raise ValueError("dt must be >= 0")
        shape = (self.cov.torus_n,) * self.cov.dim
        rng = rng_for(self.seed_root, step_index, block_index)
        white = rng.standard_normal((n_replicas,) + shape)
        if dt == 0.0:
            return np.zeros_like(white)
        if self.mode == "cholesky":
            colored = white.reshape(n_replicas, -1) @ self._factor.T
            return math.sqrt(dt) * colored.reshape((n_replicas,) + shape)
        axes = tuple(range(1, self.cov.dim + 1))
        spec = scipy.fft.fftn(white, axes=axes) * self._sqrt_spec
        colored = np.real(scipy.fft.ifftn(spec, axes=axes))
        return math.sqrt(dt) * colored


def sample_increments(sampler: NoiseSampler, dt: float, step_index: int
                      ) -> np.ndarray:
    """Single increment field for one step (first replica of the block)."""
    return sampler.sample(dt, step_index)[0]
