"""Exact and semi-exact references for the linear-noise lattice system.

For sigma(u) = lam * u the moments obey closed linear equations: the
second moment matrix satisfies

    dM2/dt = L M2 + M2 L + lam^2 eps^(-2d) R(x - y) . M2,

and the m-point correlation tensor evolves under the Kronecker-sum drift
plus the pairwise coupling sum_{i<j} lam^2 eps^(-2d) R(x_i - x_j). The
top eigenvalue of that flow is the moment growth rate, obtained here by
shifted power iteration with a matrix-free apply.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PowerIterationError
from .lattice_sde import SimConfig, WalkOperators, project_initial
from .riesz_noise import build_covariance
from .util import rng_for

_DENSE_SITE_LIMIT = 64
_TENSOR_STATE_LIMIT = 40_000


def _require_linear(config: SimConfig):
    if config.sigma.kind != "linear":
        raise ValueError("moment references exist only for linear sigma")


def _drift_matrix(config: SimConfig) -> np.ndarray:
    """Dense circulant generator on the torus (dim 1 only)."""
    if config.dim != 1:
        raise ValueError("dense moment references cover dim 1")
    n = config.torus_n
    if n > _DENSE_SITE_LIMIT:
        raise ValueError(
            f"dense moment solve supports torus_n <= {_DENSE_SITE_LIMIT}; "
            f"got {n}. Use a coarser torus.")
    ops = WalkOperators(config.walk, config.epsilon, n)
    first_row = ops.wrapped_weights
    mat = np.empty((n, n))
    for i in range(n):
        mat[i] = np.roll(first_row, i)
    return ops.rate * (mat - np.eye(n))


def coupling_matrix(config: SimConfig) -> np.ndarray:
    """Pairwise noise coupling lam^2 eps^(-2d) R(i - j)."""
    cov = build_covariance(config.epsilon, config.dim, config.torus_n,
                           beta=config.beta, kernel=config.correlation,
                           corr_scale=config.corr_scale)
    n = config.torus_n
    gain = config.sigma.lam**2 * config.epsilon ** (-2 * config.dim)
    rel = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return gain * cov.table[rel]


def pam_mean(config: SimConfig, t: float | None = None) -> np.ndarray:
    """First moment: the noise is a mean-zero martingale term, so the mean
    solves the deterministic drift flow."""
    _require_linear(config)
    t = config.t_end if t is None else t
    ops = WalkOperators(config.walk, config.epsilon, config.torus_n)
    u0 = project_initial(config.u0, config.epsilon, config.torus_n, config.dim)
    return ops.apply_semigroup(u0, ops.semigroup_factor(t))


def pam_second_moment(config: SimConfig, t: float, method: str = "auto"
                      ) -> np.ndarray:
    """Two-point moment table M2(x, y, t), by eigensolve or RK4."""
    _require_linear(config)
    drift = _drift_matrix(config)
    couple = coupling_matrix(config)
    u0 = project_initial(config.u0, config.epsilon, config.torus_n, config.dim)
    m2 = np.outer(u0, u0)
    n = config.torus_n
    if method == "auto":
        method = "eigen" if n * n <= 1024 else "rk4"
    if method == "eigen":
        if n * n > 4096:
            raise ValueError(f"eigendecomposition supports torus_n^2 <= 4096, "
                             f"got {n * n}; use method='rk4'")
        flow = (np.kron(drift, np.eye(n)) + np.kron(np.eye(n), drift)
                + np.diag(couple.reshape(-1)))
        eigval, eigvec = np.linalg.eigh(flow)
        coeff = eigvec.T @ m2.reshape(-1)
        return (eigvec @ (np.exp(eigval * t) * coeff)).reshape(n, n)
    dt = min(config.epsilon**config.alpha / 64.0, t / 8.0)
    steps = max(int(math.ceil(t / dt)), 1)
    dt = t / steps

    def rhs(m):
        return drift @ m + m @ drift.T + couple * m

    for _ in range(steps):
        k1 = rhs(m2)
        k2 = rhs(m2 + 0.5 * dt * k1)
        k3 = rhs(m2 + 0.5 * dt * k2)
        k4 = rhs(m2 + dt * k3)
        m2 = m2 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return m2


# ----------------------------------------------------------------------
# m-point moment flow
# ----------------------------------------------------------------------

@dataclass
class MomentODESystem:
    """Moment-flow operator for order m: Kronecker-sum drift plus the
    pairwise coupling diagonal."""

    order: int
    torus_n: int
    drift: np.ndarray = field(repr=False)
    coupling: np.ndarray = field(repr=False)  # (n,)*order diagonal tensor

    @property
    def n_states(self) -> int:
        return self.torus_n**self.order

    def apply(self, tensor: np.ndarray) -> np.ndarray:
        out = self.coupling * tensor
        for axis in range(self.order):
            out += np.moveaxis(
                np.tensordot(self.drift, tensor, axes=([1], [axis])), 0, axis)
        return out


def moment_system(config: SimConfig, order: int) -> MomentODESystem:
    _require_linear(config)
    if order < 1:
        raise ValueError("moment order must be >= 1")
    n = config.torus_n
    if n**order > _TENSOR_STATE_LIMIT:
        raise ValueError(
            f"torus_n^order = {n**order} exceeds the {_TENSOR_STATE_LIMIT} "
            f"state budget; reduce torus_n to "
            f"{int(_TENSOR_STATE_LIMIT ** (1.0 / order))} or below")
    drift = _drift_matrix(config)
    couple = coupling_matrix(config)
    coupling = np.zeros((n,) * order)
    idx = [np.arange(n)] * order
    for i, j in itertools.combinations(range(order), 2):
        grids = np.meshgrid(*idx, indexing="ij", sparse=True)
        coupling = coupling + couple[grids[i], grids[j]]
    return MomentODESystem(order=order, torus_n=n, drift=drift,
                           coupling=coupling)


@dataclass
class MomentGrowth:
    order: int
    tensor: np.ndarray = field(repr=False)  # m-point correlations at time t
    gamma: float                            # top growth rate of the flow
    residual: float
    iterations: int


def pam_mth_moment(config: SimConfig, order: int, t: float,
                   tol: float = 1e-10, max_iter: int = 100_000,
                   engine: str = "lanczos") -> MomentGrowth:
    """m-point correlation tensor at time t and the top growth rate.

    The tensor is advanced by RK4. The growth rate is the dominant
    eigenvalue of the (symmetric) moment flow, via matrix-free iteration
    on the shifted-positive operator: Lanczos by default, since the top of
    the spectrum clusters under translation symmetry; plain power
    iteration as the "power" engine. The returned residual is
    ||A v - gamma v|| for the final vector.
    """
    if order not in (2, 3):
        raise ValueError("moment tensors are computed for orders 2 and 3")
    system = moment_system(config, order)
    u0 = project_initial(config.u0, config.epsilon, config.torus_n, config.dim)
    tensor = u0.copy()
    for _ in range(order - 1):
        tensor = np.multiply.outer(tensor, u0)
    dt = min(config.epsilon**config.alpha / 64.0, t / 8.0)
    steps = max(int(math.ceil(t / dt)), 1)
    dt = t / steps
    for _ in range(steps):
        k1 = system.apply(tensor)
        k2 = system.apply(tensor + 0.5 * dt * k1)
        k3 = system.apply(tensor + 0.5 * dt * k2)
        k4 = system.apply(tensor + dt * k3)
        tensor = tensor + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    gamma, residual, iters = _top_eigenvalue(system, config, tol, max_iter,
                                             engine)
    return MomentGrowth(order=order, tensor=tensor, gamma=gamma,
                        residual=residual, iterations=iters)


def _top_eigenvalue(system: MomentODESystem, config: SimConfig, tol, max_iter,
                    engine):
    import scipy.sparse.linalg as sla

    shape = (system.torus_n,) * system.order
    shift = 2.0 * system.order * config.epsilon**-config.alpha

    def shifted_apply(vec):
        return system.apply(vec) + shift * vec

    if system.n_states == 1:
        gamma = float(system.coupling.reshape(()))
        return gamma, 0.0, 1
    if engine == "lanczos":
        counter = {"n": 0}

        def matvec(flat):
            counter["n"] += 1
            return shifted_apply(flat.reshape(shape)).reshape(-1)

        op = sla.LinearOperator((system.n_states, system.n_states),
                                matvec=matvec, dtype=float)
        v0 = np.ones(system.n_states)
        try:
            vals, vecs = sla.eigsh(op, k=1, which="LA", v0=v0,
                                   tol=tol, maxiter=max_iter)
        except sla.ArpackNoConvergence as err:
            raise PowerIterationError(
                f"matrix-free eigensolve did not converge: {err}",
                residual=float("nan")) from err
        vec = vecs[:, 0].reshape(shape)
        lam = float(vals[0])
        residual = float(np.linalg.norm(
            shifted_apply(vec) - lam * vec))
        return lam - shift, residual, counter["n"]
    if engine != "power":
        raise ValueError(f"unknown eigen engine {engine!r}")
    rng = rng_for(config.seed, 0xBEEF)
    vec = np.abs(rng.standard_normal(shape)) + 0.1
    vec /= np.linalg.norm(vec)
    residual = float("inf")
    for it in range(1, max_iter + 1):
        nxt = shifted_apply(vec)
        vec = nxt / float(np.linalg.norm(nxt))
        if it % 10 == 0 or it == max_iter:
            image = shifted_apply(vec)
            lam = float(np.vdot(vec, image))
            residual = float(np.linalg.norm(image - lam * vec))
            if residual <= tol * abs(lam):
                return lam - shift, residual, it
    raise PowerIterationError(
        f"power iteration residual {residual:.2e} after {max_iter} steps",
        residual=residual)


# ----------------------------------------------------------------------
# scalar SDE reference
# ----------------------------------------------------------------------

@dataclass
class ScalarReference:
    times: np.ndarray
    coarse: np.ndarray  # (n_paths, n_steps + 1), Euler at dt
    fine: np.ndarray    # same Brownian path, Euler at dt / ratio

    @property
    def strong_error(self) -> float:
        return float(np.mean(np.abs(self.coarse[:, -1] - self.fine[:, -1])))


def scalar_sde_reference(sigma, r0: float, dt: float, t_end: float,
                         seed: int, n_paths: int = 1, u0: float = 1.0,
                         ratio: int = 100) -> ScalarReference:
    """Euler paths of dU = sigma(U) dB with Var(dB) = r0 dt, at two steps.

    Fine increments are drawn once and aggregated to the coarse grid, so
    both resolutions ride the same Brownian path.
    """
    n_coarse = int(round(t_end / dt))
    rng = rng_for(seed, 0xF00D)
    scale = math.sqrt(r0 * dt / ratio)
    fine = np.empty((n_paths, n_coarse + 1))
    coarse = np.empty((n_paths, n_coarse + 1))
    fine[:, 0] = coarse[:, 0] = u0
    uf = np.full(n_paths, float(u0))
    uc = np.full(n_paths, float(u0))
    for k in range(n_coarse):
        step_db = scale * rng.standard_normal((ratio, n_paths))
        for j in range(ratio):
            uf = uf + np.asarray(sigma(uf)) * step_db[j]
        uc = uc + np.asarray(sigma(uc)) * step_db.sum(axis=0)
        fine[:, k + 1] = uf
        coarse[:, k + 1] = uc
    times = dt * np.arange(n_coarse + 1)
    return ScalarReference(times=times, coarse=coarse, fine=fine)
