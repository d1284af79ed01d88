"""Heat kernel of the fractional Laplacian -nu (-Delta)^(alpha/2) on R^d.

The density at time t is the Fourier inversion of exp(-t nu |z|^alpha).
Closed forms are used for the Gaussian (alpha = 2) and Cauchy (alpha = 1)
cases; everything else is a cosine-transform trapezoid rule evaluated only
at the reference time t = 1, with all other (t, x) reduced to it through
the exact rescaling

    p_t(x) = c^d p_{c^alpha t}(c x),   c = t^(-1/alpha).

The density is radial, so tensor-grid quadrature in d >= 2 collapses to a
one-dimensional transform with the off-axis weight pre-integrated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import QuadratureError, ResolutionError
from .util import gauss_legendre

_WEIGHT_FLOOR = 1e-14  # symbol magnitude at the frequency cutoff
_MIN_SYMBOL_RESOLUTION = 1e-12


@dataclass(frozen=True)
class StableParams:
    """Index, diffusivity and dimension of the stable semigroup."""

    alpha: float
    nu: float
    dim: int

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.nu <= 0.0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Frequency cutoff / node count of the reference-time inversion grid.

    ``x_max`` is the largest |x| resolvable at t = 1; ``alias_tol`` bounds
    the relative aliasing error of the trapezoid rule inside that radius.
    """

    z_max: float
    n_nodes: int
    x_max: float
    alias_tol: float


def default_quadrature(params: StableParams, x_max: float = 40.0,
                       alias_tol: float = 1e-7) -> QuadratureSpec:
    """Pick cutoff and node count for the requested resolution.

    The cutoff makes the symbol fall below 1e-14. Node spacing h sets the
    period 2*pi/h of the trapezoid aliasing; spacing is chosen so the
    nearest aliased density image, at distance >= alias_dist, is below
    alias_tol relative to the density at x_max (polynomial tails for
    alpha < 2, Gaussian for alpha = 2).
    """
    alpha, nu, d = params.alpha, params.nu, params.dim
    z_max = (math.log(1.0 / _WEIGHT_FLOOR) / nu) ** (1.0 / alpha)
    if alpha < 2.0:
        alias_dist = x_max * alias_tol ** (-1.0 / (d + alpha))
    else:
        alias_dist = x_max + math.sqrt(x_max**2 + 4.0 * nu * math.log(1.0 / alias_tol))
    period = x_max + alias_dist
    h_target = 2.0 * math.pi / period
    n_nodes = int(math.ceil(z_max / h_target)) + 1
    return QuadratureSpec(z_max=z_max, n_nodes=n_nodes, x_max=x_max,
                          alias_tol=alias_tol)


class StableKernel:
    """Evaluator for the stable heat kernel; immutable after construction."""

    def __init__(self, params: StableParams, quadrature: QuadratureSpec | None = None):
        self.params = params
        self.quadrature = quadrature or default_quadrature(params)
        q = self.quadrature
        z_need = (math.log(1.0 / _MIN_SYMBOL_RESOLUTION) / params.nu) ** (1.0 / params.alpha)
        if q.z_max < z_need:
            raise ResolutionError(
                f"frequency cutoff {q.z_max:.3g} below required {z_need:.3g}",
                required_nodes=int(math.ceil(z_need / max(q.z_max, 1e-12) * q.n_nodes)),
            )
        self._z = np.linspace(0.0, q.z_max, q.n_nodes)
        self._h = self._z[1] - self._z[0]
        trap = np.full(q.n_nodes, self._h)
        trap[0] *= 0.5
        trap[-1] *= 0.5
        self._trap = trap

    # ------------------------------------------------------------------
    # reference-time transforms
    # ------------------------------------------------------------------

    @cached_property
    def _axis_weight(self):
        """Trapezoid weights with the off-axis directions pre-integrated.

        p_1 is radial, so the tensor rule evaluated at (r, 0, ..., 0)
        equals a 1-d cosine transform against this weight vector.
        """
        z, trap = self._z, self._trap
        alpha, nu, d = self.params.alpha, self.params.nu, self.params.dim
        if d == 1:
            return trap * np.exp(-nu * z**alpha)
        if z.size > 20000:
            raise ValueError(
                f"{z.size} nodes per axis is too large for the dim={d} "
                "transform; loosen alias_tol or reduce x_max")
        row = np.zeros_like(z)
        if d == 2:
            chunk = 2048
            for lo in range(0, z.size, chunk):
                zi = z[lo:lo + chunk, None]
                row[lo:lo + chunk] = np.exp(
                    -nu * (zi**2 + z[None, :] ** 2) ** (alpha / 2.0)
                ) @ trap
        elif d == 3:
            chunk = 256
            z2 = z[None, :, None] ** 2 + z[None, None, :] ** 2
            for lo in range(0, z.size, chunk):
                zi = z[lo:lo + chunk, None, None]
                w = np.exp(-nu * (zi**2 + z2) ** (alpha / 2.0))
                row[lo:lo + chunk] = (w @ trap) @ trap
        else:
            raise ResolutionError(
                f"tensor quadrature supports dim <= 3, got dim={d}")
        return trap * row

    def _reference_density(self, radii):
        """p_1 at |x| = radii via the cosine transform (no closed forms)."""
        q = self.quadrature
        bad = radii > q.x_max * (1.0 + 1e-12)
        if np.any(bad):
            worst = float(np.max(radii))
            needed = int(math.ceil(q.n_nodes * worst / q.x_max)) + 1
            raise ResolutionError(
                f"|x|={worst:.4g} exceeds resolvable radius {q.x_max:.4g} at t=1",
                required_nodes=needed,
            )
        weight = self._axis_weight
        out = np.empty_like(radii, dtype=float)
        chunk = max(1, int(4e6 // max(weight.size, 1)))
        for lo in range(0, radii.size, chunk):
            out[lo:lo + chunk] = np.cos(np.outer(radii[lo:lo + chunk], self._z)) @ weight
        if self.params.alpha == 1.0 and self.params.dim == 1:
            # Euler-Maclaurin end correction for the |z| kink of the symbol.
            out -= (self._h**2) * self.params.nu / 12.0
        return out / math.pi ** self.params.dim

    # ------------------------------------------------------------------
    # closed forms
    # ------------------------------------------------------------------

    def _gaussian(self, t, radii):
        nu, d = self.params.nu, self.params.dim
        var = 2.0 * nu * t  # per-axis variance of exp(-t nu |z|^2)
        return np.exp(-(radii**2) / (2.0 * var)) / (2.0 * math.pi * var) ** (d / 2.0)

    def _cauchy(self, t, radii):
        nu, d = self.params.nu, self.params.dim
        scale = nu * t
        const = math.gamma((d + 1) / 2.0) / math.pi ** ((d + 1) / 2.0)
        return const * scale / (scale**2 + radii**2) ** ((d + 1) / 2.0)

    @property
    def has_closed_form(self) -> bool:
        return self.params.alpha in (1.0, 2.0)

    # ------------------------------------------------------------------
    # public evaluation
    # ------------------------------------------------------------------

    def density(self, t, x, method: str = "auto", return_clamp_count: bool = False):
        """p_t(x) for x of shape (..., dim) ((...,) accepted when dim = 1).

        method: "auto" (closed form when available), "closed", "fourier".
        Tiny negative quadrature artifacts are clamped to zero; pass
        return_clamp_count=True to also get how many values were clamped.
        """
        if t <= 0.0:
            raise ValueError(f"t must be positive, got {t}")
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0 or (self.params.dim > 1 and x.ndim == 1)
        if self.params.dim == 1:
            radii = np.abs(np.atleast_1d(x)).reshape(-1)
        else:
            pts = np.atleast_2d(x)
            if pts.shape[-1] != self.params.dim:
                raise ValueError(
                    f"points must have last dimension {self.params.dim}")
            radii = np.sqrt(np.sum(pts**2, axis=-1)).reshape(-1)
        values, clamped = self._density_radial(t, radii, method)
        values = values.reshape(() if scalar else x.shape[: x.ndim - (self.params.dim > 1)])
        result = float(values) if scalar else values
        if return_clamp_count:
            return result, clamped
        return result

    def _density_radial(self, t, radii, method):
        if method not in ("auto", "closed", "fourier"):
            raise ValueError(f"unknown method {method!r}")
        if method == "closed" and not self.has_closed_form:
            raise ValueError(f"no closed form for alpha={self.params.alpha}")
        use_closed = method == "closed" or (method == "auto" and self.has_closed_form)
        if use_closed:
            fn = self._gaussian if self.params.alpha == 2.0 else self._cauchy
            return fn(t, radii), 0
        scale = t ** (-1.0 / self.params.alpha)
        raw = self._reference_density(radii * scale)
        values = scale ** self.params.dim * raw
        clamped = int(np.count_nonzero(values < 0.0))
        return np.maximum(values, 0.0), clamped

    def _radial_batch(self, t, radii, method):
        """Evaluate a flat radius array, deduplicating for the transform path."""
        use_closed = method == "closed" or (method == "auto" and self.has_closed_form)
        if use_closed:
            return self._density_radial(t, radii, method)
        uniq, inverse = np.unique(np.round(radii, 12), return_inverse=True)
        vals, clamped = self._density_radial(t, uniq, method)
        return vals[inverse], clamped

    def density_grid(self, t, axes, method: str = "auto",
                     return_clamp_count: bool = False):
        """p_t on the Cartesian product of 1-d coordinate arrays.

        Radial symmetry is exploited: only unique radii are transformed.
        """
        if len(axes) != self.params.dim:
            raise ValueError(f"need {self.params.dim} coordinate axes")
        grids = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes],
                            indexing="ij")
        radii = np.sqrt(sum(g**2 for g in grids))
        vals, clamped = self._radial_batch(t, radii.reshape(-1), method)
        out = vals.reshape(radii.shape)
        if return_clamp_count:
            return out, clamped
        return out

    def normalization(self, t, window: float, spacing: float,
                      method: str = "auto") -> float:
        """Grid sum of p_t over [-window, window]^d times the cell volume.

        The grid is symmetric about the origin, so only one orthant is
        evaluated, with multiplicity weights on the axes.
        """
        pos = np.arange(0.0, window + spacing / 2.0, spacing)
        mult = np.full(pos.size, 2.0)
        mult[0] = 1.0
        d = self.params.dim
        if d == 1:
            vals, _ = self._radial_batch(t, pos, method)
            total = float(np.dot(mult, vals))
        elif d == 2:
            total = 0.0
            chunk = 512
            pos2 = pos**2
            for lo in range(0, pos.size, chunk):
                radii = np.sqrt(pos2[lo:lo + chunk, None] + pos2[None, :])
                vals, _ = self._radial_batch(t, radii.reshape(-1), method)
                vals = vals.reshape(radii.shape)
                total += float(mult[lo:lo + chunk] @ vals @ mult)
        elif d == 3:
            total = 0.0
            pos2 = pos**2
            plane = pos2[:, None] + pos2[None, :]
            w2 = np.outer(mult, mult)
            for i, a2 in enumerate(pos2):
                radii = np.sqrt(a2 + plane)
                vals, _ = self._radial_batch(t, radii.reshape(-1), method)
                total += mult[i] * float(np.sum(w2 * vals.reshape(radii.shape)))
        else:
            raise ValueError("normalization implemented for dim <= 3")
        return total * spacing**d


# ----------------------------------------------------------------------
# shape functions and derived checks
# ----------------------------------------------------------------------

def stable_density(kernel: StableKernel, t, x, method: str = "auto"):
    """p_t(x) for the kernel's parameters; see StableKernel.density."""
    return kernel.density(t, x, method=method)


def envelope(params: StableParams, t, x):
    """Two-sided bound shape min(t^(-d/alpha), t/|x|^(d+alpha)).

    Only valid for alpha < 2; the Gaussian case has no polynomial tail.
    """
    if params.alpha >= 2.0:
        raise ValueError("envelope shape requires alpha < 2")
    if t <= 0.0:
        raise ValueError(f"t must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    if params.dim == 1:
        radii = np.abs(x)
    else:
        radii = np.sqrt(np.sum(np.atleast_2d(x)**2, axis=-1))
    body = t ** (-params.dim / params.alpha)
    with np.errstate(divide="ignore"):
        tail = t / radii ** (params.dim + params.alpha)
    shape = np.minimum(body, tail)
    return float(shape) if shape.ndim == 0 else shape


def gradient_ratio_check(kernel: StableKernel, t, x) -> float:
    """Ratio |grad p_t(x)| * t^(1/alpha) / p_t(x/2).

    Bounded ratios confirm the gradient decays no slower than the density
    at half the distance. Central differences with step 1e-4 * t^(1/alpha).
    """
    d = kernel.params.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != d:
        raise ValueError(f"x must have {d} components")
    h = 1e-4 * t ** (1.0 / kernel.params.alpha)
    point = x if d > 1 else x[0]
    grad = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        up = kernel.density(t, point + (e if d > 1 else h))
        down = kernel.density(t, point - (e if d > 1 else h))
        grad[i] = (up - down) / (2.0 * h)
    denom = kernel.density(t, point / 2.0)
    return float(np.linalg.norm(grad) * t ** (1.0 / kernel.params.alpha) / denom)


def correlation_smoothing(kernel: StableKernel, t, offset, beta,
                          rel_tol: float = 1e-8) -> float:
    """Smoothed Riesz pairing int p_2t(w - offset) |w|^(-beta) dw.

    Equals the double integral of p_t (x-.) p_t (y-.) against the kernel
    |.|^(-beta) with offset = x - y, by the semigroup property.
    """
    d = kernel.params.dim
    alpha = kernel.params.alpha
    if not 0.0 < beta < min(alpha, d):
        raise ValueError(
            f"beta must lie in (0, min(alpha, dim)) = (0, {min(alpha, d)}), got {beta}")
    if t <= 0.0:
        raise ValueError(f"t must be positive, got {t}")
    if d == 1:
        off = float(np.asarray(offset).reshape(()))
        value = (_smoothing_1d(kernel, t, off, beta, order=24)
                 + _smoothing_1d(kernel, t, -off, beta, order=24))
        check = (_smoothing_1d(kernel, t, off, beta, order=32)
                 + _smoothing_1d(kernel, t, -off, beta, order=32))
    elif d == 2:
        off = np.asarray(offset, dtype=float).reshape(2)
        value = _smoothing_2d(kernel, t, off, beta, order=24, n_angles=96)
        check = _smoothing_2d(kernel, t, off, beta, order=32, n_angles=128)
    else:
        raise ValueError("smoothing integral implemented for dim <= 2")
    if abs(check - value) > max(rel_tol * abs(check), 1e-13):
        raise QuadratureError(
            "smoothing integral did not converge",
            estimates=(value, check),
        )
    return check


def _smoothing_reach(kernel, t, center_dist, beta):
    """Integration cutoff: far enough for the tail, within kernel resolution.

    For alpha < 2 the cutoff is capped at the resolvable radius and the
    polynomial tail beyond it is added back analytically.
    """
    alpha, nu = kernel.params.alpha, kernel.params.nu
    scale = (2.0 * t * nu) ** (1.0 / alpha)
    if alpha == 2.0:
        return center_dist + 20.0 * math.sqrt(2.0 * t * nu), False
    want = center_dist + scale * 1e6 ** (1.0 / (alpha + beta))
    cap = center_dist + 0.95 * kernel.quadrature.x_max * (2.0 * t) ** (1.0 / alpha)
    if want <= cap:
        return want, False
    return cap, True


def _smoothing_panels(scale, reach):
    edges = [0.0, min(scale, reach / 2.0)]
    while edges[-1] < reach:
        edges.append(min(edges[-1] * 2.0, reach))
    return edges


def _smoothing_1d(kernel, t, off, beta, order):
    """Half-line part int_0^inf p_2t(w - off) w^(-beta) dw."""
    scale = (2.0 * t * kernel.params.nu) ** (1.0 / kernel.params.alpha)
    reach, tail = _smoothing_reach(kernel, t, abs(off), beta)
    total = 0.0
    edges = _smoothing_panels(scale, reach)
    # singular panel: substitute w = u^(1/(1-beta)) so w^(-beta) dw = du/(1-beta)
    u, wu = gauss_legendre(order, 0.0, edges[1] ** (1.0 - beta))
    w = u ** (1.0 / (1.0 - beta))
    total += float(np.sum(wu * kernel.density(2.0 * t, w - off))) / (1.0 - beta)
    for a, b in zip(edges[1:-1], edges[2:]):
        w, ww = gauss_legendre(order, a, b)
        total += float(np.sum(ww * kernel.density(2.0 * t, w - off) * w**-beta))
    if tail:
        # polynomial-tail remainder: density falls like C u^-(1+alpha) past
        # the cutoff, with C read off from the last computed value
        eff = reach - abs(off)
        total += (kernel.density(2.0 * t, eff) * eff ** (1.0 - beta)
                  / (kernel.params.alpha + beta))
    return total


def _smoothing_2d(kernel, t, off, beta, order, n_angles):
    """Polar form int r^(1-beta) avg_theta p_2t(r w(theta) - off) dtheta dr."""
    scale = (2.0 * t * kernel.params.nu) ** (1.0 / kernel.params.alpha)
    center = float(np.linalg.norm(off))
    reach, tail = _smoothing_reach(kernel, t, center, beta)
    theta = np.arange(n_angles) * (2.0 * math.pi / n_angles)
    ring = np.column_stack([np.cos(theta), np.sin(theta)])
    dtheta = 2.0 * math.pi / n_angles

    def ring_sum(radii):
        pts = radii[:, None, None] * ring[None, :, :] - off[None, None, :]
        return kernel.density(2.0 * t, pts).sum(axis=1) * dtheta

    total = 0.0
    edges = _smoothing_panels(scale, reach)
    power = 2.0 - beta  # r^(1-beta) dr = d(r^(2-beta))/(2-beta)
    u, wu = gauss_legendre(order, 0.0, edges[1] ** power)
    r = u ** (1.0 / power)
    total += float(np.sum(wu * ring_sum(r))) / power
    for a, b in zip(edges[1:-1], edges[2:]):
        r, wr = gauss_legendre(order, a, b)
        total += float(np.sum(wr * ring_sum(r) * r ** (1.0 - beta)))
    if tail:
        # ring integral falls like A(reach) (r/reach)^-(2+alpha) past cutoff
        ring_value = float(ring_sum(np.array([reach]))[0])
        total += ring_value * reach ** (2.0 - beta) / (kernel.params.alpha + beta)
    return total
