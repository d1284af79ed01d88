"""Random-walk jump laws, characteristic functions and torus transitions.

A rate-one continuous-time walk is described by its dislocation law: the
distribution of the first jump. Two families are provided, one attracted
to Brownian motion (products of mean-zero one-dimensional laws with high
moments) and one attracted to a genuinely stable process (polynomially
decaying jump weights, truncated at a configurable radius). Transition
probabilities on the periodic lattice come from the discrete Fourier
transform of the wrapped jump law, which is exact up to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import DiagnosticsError, TorusSizeError
from .util import next_odd_fast_len

_WEIGHT_TOL = 1e-12
_CLAMP_BUDGET = 1e-9


@dataclass(frozen=True)
class DislocationDistribution:
    """Symmetric jump law on the integer lattice with no mass at zero."""

    family: str
    dim: int
    alpha_target: float
    support_radius: int
    offsets: np.ndarray = field(repr=False)  # (K, dim) integer jump vectors
    weights: np.ndarray = field(repr=False)  # (K,) probabilities
    correction_exponents: tuple = ()  # expansion exponents past |z|^alpha

    def __post_init__(self):
        w = self.weights
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("jump weights must be a probability vector")
        if np.any(np.all(self.offsets == 0, axis=1)):
            raise ValueError("the zero offset cannot carry jump mass")

    @property
    def expansion_exponents(self) -> tuple:
        """Correction exponents of the symbol expansion past |z|^alpha."""
        if self.correction_exponents:
            return self.correction_exponents
        if self.family == "product_moment":
            return (2.0, 4.0)
        a = 2.0 - self.alpha_target
        return (a, a + 2.0)

    @property
    def theoretical_a(self) -> float:
        """Leading correction exponent of the symbol expansion."""
        return self.expansion_exponents[0]

    @property
    def a_cap(self) -> float:
        """Correction exponent usable in tail statistics (at most 1)."""
        return min(self.theoretical_a, 1.0)

    @property
    def max_jump(self) -> int:
        return int(np.max(np.abs(self.offsets)))

    def jump_variance(self) -> float:
        """Per-axis variance of a single jump."""
        return float(np.sum(self.weights * self.offsets[:, 0].astype(float) ** 2))


def nearest_neighbor(dim: int = 1) -> DislocationDistribution:
    """Simple walk: +-1 per axis (dim = 1 only; products need a lazy law)."""
    if dim != 1:
        raise ValueError("nearest-neighbor jump law is one-dimensional; "
                         "use product_moment for dim >= 2")
    offsets = np.array([[1], [-1]], dtype=np.int64)
    weights = np.array([0.5, 0.5])
    return DislocationDistribution("product_moment", 1, 2.0, 1, offsets, weights)


def product_moment(dim: int, component_weights: dict[int, float] | None = None
                   ) -> DislocationDistribution:
    """Product of identical symmetric mean-zero one-dimensional laws.

    component_weights maps positive jump sizes to probabilities (each size
    j also gets weight at -j). The default for dim >= 2 mixes jumps of
    size 1 and 2, so the symbol equals one only at the origin; the plain
    +-1 product fails that at the corner of the frequency torus.
    """
    if component_weights is None:
        if dim == 1:
            component_weights = {1: 0.5}
        else:
            component_weights = {1: 0.375, 2: 0.125}
    sizes = sorted(component_weights)
    probs = np.array([component_weights[s] for s in sizes])
    if abs(2.0 * probs.sum() - 1.0) > _WEIGHT_TOL:
        raise ValueError("component weights must sum to 1/2 per sign")
    steps = np.array([s for s in sizes] + [-s for s in sizes])
    p1 = np.concatenate([probs, probs])
    grids = np.meshgrid(*[steps] * dim, indexing="ij")
    offsets = np.column_stack([g.reshape(-1) for g in grids]).astype(np.int64)
    pgrids = np.meshgrid(*[p1] * dim, indexing="ij")
    weights = np.ones(offsets.shape[0])
    for g in pgrids:
        weights *= g.reshape(-1)
    return DislocationDistribution("product_moment", dim, 2.0, max(sizes),
                                   offsets, weights)


def heavy_tail(dim: int, alpha: float, support_radius: int
               ) -> DislocationDistribution:
    """Jump weights proportional to |j|^-(dim+alpha), truncated at radius J.

    The neglected mass is O(J^-alpha); diagnostics quantify the induced
    bias on the fitted diffusivity.
    """
    return heavy_tail_mixture(dim, [(alpha, 1.0)], support_radius)


def heavy_tail_mixture(dim: int, terms, support_radius: int
                       ) -> DislocationDistribution:
    """Mixture sum_i c_i |j|^-(dim+alpha_i) truncated at the support radius."""
    terms = sorted((float(a), float(c)) for a, c in terms)
    if not terms or any(not 0.0 < a < 2.0 for a, _ in terms):
        raise ValueError("mixture exponents must lie in (0, 2)")
    if any(c <= 0.0 for _, c in terms):
        raise ValueError("mixture coefficients must be positive")
    J = int(support_radius)
    if J < 1:
        raise ValueError("support_radius must be >= 1")
    if dim == 1:
        j = np.arange(1, J + 1, dtype=np.int64)
        radii = j.astype(float)
        offsets = np.concatenate([j, -j])[:, None]
    else:
        axes = [np.arange(-J, J + 1, dtype=np.int64)] * dim
        grids = np.meshgrid(*axes, indexing="ij")
        offsets = np.column_stack([g.reshape(-1) for g in grids])
        offsets = offsets[np.any(offsets != 0, axis=1)]
        radii = np.sqrt(np.sum(offsets.astype(float) ** 2, axis=1))
    raw = np.zeros(radii.size)
    for a, c in terms:
        raw += c * radii ** -(dim + a)
    if dim == 1:
        raw = np.concatenate([raw, raw])
    weights = raw / raw.sum()
    alpha = terms[0][0]
    if len(terms) == 1:
        return DislocationDistribution("heavy_tail", dim, alpha, J, offsets,
                                       weights)
    gaps = sorted({round(a - alpha, 12) for a, _ in terms[1:]} | {2.0 - alpha})
    return DislocationDistribution("heavy_tail_mixture", dim, alpha, J,
                                   offsets, weights,
                                   correction_exponents=tuple(gaps[:2]) if
                                   len(gaps) >= 2 else (gaps[0], gaps[0] + 2.0))


# ----------------------------------------------------------------------
# characteristic function and assumption diagnostics
# ----------------------------------------------------------------------

def char_fn(walk: DislocationDistribution, z):
    """Characteristic function of the jump law at frequencies z.

    Symmetry makes it the plain cosine sum over the truncated support,
    real-valued and exact.
    """
    z = np.asarray(z, dtype=float)
    if walk.dim == 1:
        zz = np.atleast_1d(z).reshape(-1, 1)
    else:
        zz = np.atleast_2d(z)
    out = np.zeros(zz.shape[0])
    chunk = max(1, int(5e6) // max(walk.offsets.shape[0], 1))
    for lo in range(0, zz.shape[0], chunk):
        phase = zz[lo:lo + chunk] @ walk.offsets.T.astype(float)
        out[lo:lo + chunk] = np.cos(phase) @ walk.weights
    if z.ndim == 0 or (walk.dim > 1 and z.ndim == 1):
        return float(out[0])
    return out.reshape(z.shape if walk.dim == 1 else z.shape[:-1])


@dataclass(frozen=True)
class AssumptionDiagnostics:
    """Fitted small-frequency behaviour of the symbol."""

    nu_hat: float
    a_hat: float
    residual_curve: np.ndarray = field(repr=False)  # columns |z|, |D(z)|
    max_charfn_away_from_zero: float
    r_squared: float

    def __post_init__(self):
        if self.nu_hat <= 0.0:
            raise ValueError("fitted diffusivity must be positive")


def default_z_grid(walk: DislocationDistribution, n_points: int = 32):
    """Log-spaced fit grid, kept above the truncation crossover 1/J.

    Below ~40/J the symbol of a truncated heavy-tail law leaves its stable
    regime (finite support means an analytic symbol), so those frequencies
    would bias the fit.
    """
    lo = 1e-3
    if walk.family.startswith("heavy_tail"):
        lo = max(lo, 40.0 / walk.support_radius)
    if lo >= 0.25:
        raise ValueError("support radius too small for a stable-regime fit")
    return np.geomspace(lo, 0.5, n_points)


def diagnose_assumptions(walk: DislocationDistribution, z_grid=None,
                         min_r_squared: float = 0.99) -> AssumptionDiagnostics:
    """Fit 1 - charfn ~ nu |z|^alpha and the correction exponent a.

    The diffusivity comes from a two-term least squares in |z|^alpha and
    |z|^(alpha+a0) (a0 the family's expected correction), which keeps the
    intercept clean; a_hat is the log-log slope of the residual D(z).
    Verifies the symbol stays below one away from the origin.
    """
    if z_grid is None:
        z_grid = default_z_grid(walk)
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid.size < 8:
        raise ValueError("need at least 8 fit frequencies")
    alpha = walk.alpha_target
    direction = np.zeros(walk.dim)
    direction[0] = 1.0
    mu = char_fn(walk, np.outer(z_grid, direction) if walk.dim > 1 else z_grid)
    # relative form (1 - mu)/|z|^alpha = nu + C z^a0 + ..., fitted with two
    # correction terms so the intercept is clean
    nu_of_z = (1.0 - mu) / z_grid**alpha
    exps = walk.expansion_exponents
    design = np.column_stack([np.ones_like(z_grid)]
                             + [z_grid**e for e in exps])
    coef, _, _, _ = np.linalg.lstsq(design, nu_of_z, rcond=None)
    nu_hat = float(coef[0])
    if nu_hat <= 0.0:
        raise DiagnosticsError(
            f"{walk.family} walk: fitted diffusivity {nu_hat:.3g} is not positive")
    resid = np.abs(mu - 1.0 + nu_hat * z_grid**alpha)
    # restrict the power-law fit to the upper half of the grid, where the
    # residual dominates both roundoff and the nu_hat estimation error
    keep = (z_grid >= math.sqrt(z_grid[0] * z_grid[-1])) & (resid > 1e-13)
    if np.count_nonzero(keep) < 6:
        raise DiagnosticsError(
            f"{walk.family} walk: symbol residual at roundoff, cannot fit a")
    lz = np.log(z_grid[keep])
    lr = np.log(resid[keep])
    dm = np.column_stack([lz, np.ones_like(lz)])
    fit, _, _, _ = np.linalg.lstsq(dm, lr, rcond=None)
    pred = dm @ fit
    ss_tot = float(np.sum((lr - lr.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum((lr - pred) ** 2)) / ss_tot
    if r2 < min_r_squared:
        raise DiagnosticsError(
            f"{walk.family} walk: residual power-law fit has R^2={r2:.4f} < "
            f"{min_r_squared}")
    a_hat = float(fit[0]) - alpha
    # aperiodicity: symbol must stay below 1 outside a ball at the origin
    probe = np.linspace(-math.pi, math.pi, 65 if walk.dim == 1 else 17)[:-1]
    grids = np.meshgrid(*[probe] * walk.dim, indexing="ij")
    pts = np.column_stack([g.reshape(-1) for g in grids])
    away = np.max(np.abs(pts), axis=1) > 0.25
    mu_away = char_fn(walk, pts[away] if walk.dim > 1 else pts[away, 0])
    max_away = float(np.max(mu_away))
    if max_away >= 1.0 - 1e-3:
        raise DiagnosticsError(
            f"{walk.family} walk: symbol reaches {max_away:.6f} away from the "
            "origin; the walk is not aperiodic enough")
    return AssumptionDiagnostics(
        nu_hat=nu_hat,
        a_hat=a_hat,
        residual_curve=np.column_stack([z_grid, resid]),
        max_charfn_away_from_zero=max_away,
        r_squared=r2,
    )


# ----------------------------------------------------------------------
# transition tables on the torus
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionTable:
    """Law of the walk at one time on a periodic lattice (FFT layout)."""

    epsilon: float
    t: float
    torus_n: int
    values: np.ndarray = field(repr=False)
    clamp_count: int = 0
    clamped_mass: float = 0.0

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def density_values(self) -> np.ndarray:
        """Cell-density normalization eps^-dim * P."""
        return self.values * self.epsilon ** -self.dim

    def value_at(self, offset) -> float:
        idx = tuple(np.atleast_1d(np.asarray(offset, dtype=int)) % self.torus_n)
        return float(self.values[idx])

    def window(self, radius_sites: int):
        """Signed site indices in [-radius, radius]^dim and their values."""
        if 2 * radius_sites + 1 > self.torus_n:
            raise TorusSizeError(
                f"window of {radius_sites} sites exceeds torus_n={self.torus_n}",
                suggested_n=next_odd_fast_len(2 * radius_sites + 1))
        sites = np.arange(-radius_sites, radius_sites + 1)
        vals = self.values
        for axis in range(self.dim):
            vals = np.take(vals, sites, axis=axis, mode="wrap")
        return sites, vals


def tail_mass_estimate(walk: DislocationDistribution, t: float, radius: float
                       ) -> float:
    """Estimated probability that the walk has strayed past the radius.

    Heavy tails use the polynomial jump-tail estimate t * sum_{|j|>R} mu(j)
    extended past the truncation radius; light tails use a Bernstein bound
    with the per-axis jump variance.
    """
    if radius <= 0.0:
        return 1.0
    if t == 0.0:
        return 0.0
    if walk.family.startswith("heavy_tail"):
        # t / |x|^(d+alpha) shape integrated over |x| > R, per unit direction
        alpha, d = walk.alpha_target, walk.dim
        far = np.sqrt(np.sum(walk.offsets.astype(float) ** 2, axis=1)) > radius
        jump_tail = float(walk.weights[far].sum())
        if radius >= walk.support_radius:
            norm = float(walk.weights[0])  # smallest |j| carries c1 scale
            c1 = norm  # weights ~ c1 |j|^-(d+alpha) with |j|=1 reference
            surface = 2.0 if d == 1 else 2.0 * math.pi if d == 2 else 4.0 * math.pi
            jump_tail = c1 * surface * radius**-alpha / alpha
        return min(1.0, t * jump_tail)
    var = walk.jump_variance() * t
    b = float(walk.max_jump)
    exponent = radius**2 / (2.0 * (var + b * radius / 3.0))
    return min(1.0, 2.0 * walk.dim * math.exp(-exponent))


def suggest_torus_n(walk: DislocationDistribution, t: float,
                    window_sites: int = 0, tol: float = 1e-8) -> int:
    """Smallest FFT-friendly odd torus with wrap mass below tol in the window."""
    lo, hi = 3, 3
    while tail_mass_estimate(walk, t, (hi - 1) // 2 - window_sites) > tol:
        hi *= 2
        if hi > 1 << 34:
            raise TorusSizeError("no feasible torus size below 2^34 sites")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_mass_estimate(walk, t, (mid - 1) // 2 - window_sites) > tol:
            lo = mid
        else:
            hi = mid
    return next_odd_fast_len(max(hi, 2 * window_sites + 3))


def transition_probabilities(walk: DislocationDistribution, t: float,
                             torus_n: int, tol: float = 1e-8
                             ) -> TransitionTable:
    """Torus-wrapped law of the rate-one walk at time t.

    values = inverse DFT of exp(-t (1 - charfn)) on the torus frequencies,
    which is the exact law of the walk wrapped onto the torus.
    """
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    n = int(torus_n)
    if n < 3:
        raise ValueError(f"torus_n must be >= 3, got {torus_n}")
    leak = tail_mass_estimate(walk, t, (n - 1) // 2)
    if leak > tol:
        raise TorusSizeError(
            f"torus_n={n} leaks ~{leak:.2e} transition mass (tolerance {tol:.0e})",
            suggested_n=suggest_torus_n(walk, t, tol=tol))
    symbol = _torus_symbol(walk, n)
    spectrum = np.exp(-t * (1.0 - symbol))
    if walk.dim == 1:
        values = scipy.fft.irfft(spectrum, n=n)
    else:
        values = np.real(scipy.fft.ifftn(spectrum))
    negative = values < 0.0
    clamped_mass = float(-values[negative].sum())
    if clamped_mass > _CLAMP_BUDGET:
        raise TorusSizeError(
            f"DFT produced {clamped_mass:.2e} negative transition mass",
            suggested_n=next_odd_fast_len(2 * n))
    values[negative] = 0.0
    return TransitionTable(epsilon=1.0, t=t, torus_n=n, values=values,
                           clamp_count=int(np.count_nonzero(negative)),
                           clamped_mass=clamped_mass)


def _torus_symbol(walk: DislocationDistribution, n: int) -> np.ndarray:
    """charfn on the torus frequency grid, via the FFT of the wrapped law."""
    if walk.dim == 1:
        wrapped = np.zeros(n)
        np.add.at(wrapped, walk.offsets[:, 0] % n, walk.weights)
        return np.real(scipy.fft.rfft(wrapped))
    wrapped = np.zeros((n,) * walk.dim)
    np.add.at(wrapped, tuple((walk.offsets % n).T), walk.weights)
    return np.real(scipy.fft.fftn(wrapped))


def scaled_transition(walk: DislocationDistribution, epsilon: float, t: float,
                      torus_n: int, tol: float = 1e-8) -> TransitionTable:
    """Law of the rescaled walk eps * X_(t / eps^alpha) on the eps-lattice."""
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    base = transition_probabilities(
        walk, t / epsilon**walk.alpha_target, torus_n, tol=tol)
    return TransitionTable(epsilon=float(epsilon), t=float(t), torus_n=base.torus_n,
                           values=base.values, clamp_count=base.clamp_count,
                           clamped_mass=base.clamped_mass)
