"""Theorem-level studies: self-convergence rate, pathwise and moment
comparisons, moment growth rates, and time-increment regularity.

Every study is a pure function of (config, seed): replicas are processed
in fixed blocks with per-block noise streams and compensated reduction,
so results do not depend on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, CouplingError
from .lattice_sde import (NOISE_BLOCK, InitialProfile, SigmaSpec, SimConfig,
                          Simulator, aggregate_fine_noise, sigma_dominates)
from .local_limit import RateFit
from .oracles import pam_mth_moment, pam_second_moment
from .util import KahanSum, fit_loglog


@dataclass(frozen=True)
class RateTargets:
    """Theoretical rate exponents for noise roughness beta and walk
    correction a."""

    alpha: float
    beta: float
    a: float

    def __post_init__(self):
        if not 0.0 < self.beta < self.alpha:
            raise ConfigError("rate targets need 0 < beta < alpha")
        if self.a <= 0.0:
            raise ConfigError("rate targets need a > 0")

    @property
    def eta(self) -> float:
        return (self.alpha - self.beta) / 2.0

    @property
    def eta_tilde(self) -> float:
        return (self.alpha - self.beta) / (2.0 * self.alpha)

    @property
    def rho(self) -> float:
        return min(self.eta, self.a)


@dataclass
class MomentReport:
    """Per-time, per-site moment estimates with standard errors."""

    times: tuple
    orders: tuple
    estimates: dict       # order -> array (n_times, n_sites)
    standard_errors: dict
    replicas: int


def _blocks(replicas: int):
    out = []
    start = 0
    while start < replicas:
        size = min(NOISE_BLOCK, replicas - start)
        out.append((start // NOISE_BLOCK, size))
        start += size
    return out


def _run_blocks(fn, replicas: int, threads: int = 1):
    """Map fn(block_index, block_size) over fixed blocks, reduce in order."""
    blocks = _blocks(replicas)
    if threads <= 1:
        return [fn(bi, bs) for bi, bs in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, bi, bs) for bi, bs in blocks]
        return [f.result() for f in futures]


# ----------------------------------------------------------------------
# self-convergence under nested noise
# ----------------------------------------------------------------------

@dataclass
class ConvergenceResult:
    epsilons: tuple
    epsilon_ref: float
    errors: tuple           # (E|U_eps(0) - U_ref(0)|^m)^(1/m)
    standard_errors: tuple  # delta-method SEs of the errors
    moment_order: int
    replicas: int
    fit: RateFit | None
    targets: RateTargets


def convergence_study(config: SimConfig, epsilon_ladder, moment_order: int = 2,
                      replicas: int = 200, a_exponent: float = 1.0,
                      threads: int = 1, site: int = 0) -> ConvergenceResult:
    """Coupled self-convergence across a nested eps ladder.

    The ladder lists eps values coarse to fine; the finest is the
    reference. All levels ride noise aggregated from the reference level,
    which is exactly consistent with every level integrating the same
    driving field over nested cells.
    """
    ladder = sorted(set(float(e) for e in epsilon_ladder), reverse=True)
    if len(ladder) < 2:
        raise CouplingError("the ladder needs at least one eps plus the "
                            "reference")
    eps_ref = ladder[-1]
    length = config.torus_n * config.epsilon
    configs = []
    ratios = []
    for eps in ladder:
        ratio = eps / eps_ref
        if abs(ratio - round(ratio)) > 1e-9:
            raise CouplingError(f"eps={eps} is not an integer multiple of the "
                                f"reference {eps_ref}")
        n = length / eps
        if abs(n - round(n)) > 1e-9:
            raise CouplingError(f"eps={eps} does not tile the torus length "
                                f"{length}")
        ratios.append(int(round(ratio)))
        configs.append(replace(config, epsilon=eps, torus_n=int(round(n))))
    sims = [Simulator(c) for c in configs]
    ref_sim = sims[-1]
    n_steps = config.n_steps
    deterministic = config.sigma.kind == "linear" and config.sigma.lam == 0.0
    if deterministic:
        replicas = 1

    def run_block(block_index, block_size):
        fields = [np.broadcast_to(s.initial, (block_size,) + s.initial.shape
                                  ).copy() for s in sims]
        for step in range(n_steps):
            if deterministic:
                noise_ref = np.zeros((block_size,) + ref_sim.initial.shape)
            else:
                noise_ref = ref_sim.sampler.sample(
                    config.dt, step, n_replicas=block_size,
                    block_index=block_index)
            t_now = (step + 1) * config.dt
            for lvl, sim in enumerate(sims):
                noise = noise_ref if ratios[lvl] == 1 else \
                    aggregate_fine_noise(noise_ref, ratios[lvl], config.dim)
                fields[lvl] = sim.apply_step(fields[lvl], noise, t_now)
        ref_vals = fields[-1][:, site]
        sums = np.zeros(len(sims) - 1)
        sums_sq = np.zeros(len(sims) - 1)
        for lvl in range(len(sims) - 1):
            diff = np.abs(fields[lvl][:, site] - ref_vals) ** moment_order
            sums[lvl] = diff.sum()
            sums_sq[lvl] = (diff**2).sum()
        return sums, sums_sq, block_size

    results = _run_blocks(run_block, replicas, threads)
    total = KahanSum(len(sims) - 1)
    total_sq = KahanSum(len(sims) - 1)
    count = 0
    for sums, sums_sq, size in results:
        total.add(sums)
        total_sq.add(sums_sq)
        count += size
    mean = total.total / count
    var = np.maximum(total_sq.total / count - mean**2, 0.0)
    se_mean = np.sqrt(var / count)
    errors = mean ** (1.0 / moment_order)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_err = np.where(mean > 0.0,
                          se_mean / moment_order
                          * mean ** (1.0 / moment_order - 1.0), 0.0)
    fit = None
    eps_arr = np.array(ladder[:-1])
    if len(ladder) >= 3 and np.all(errors > 0.0):
        slope, intercept, r2 = fit_loglog(eps_arr, errors)
        pts = tuple(zip(np.log(eps_arr).tolist(), np.log(errors).tolist()))
        fit = RateFit(points=pts, slope=slope, intercept=intercept,
                      r_squared=r2)
    targets = RateTargets(alpha=config.alpha, beta=config.beta, a=a_exponent)
    return ConvergenceResult(epsilons=tuple(ladder[:-1]), epsilon_ref=eps_ref,
                             errors=tuple(errors.tolist()),
                             standard_errors=tuple(se_err.tolist()),
                             moment_order=moment_order, replicas=count,
                             fit=fit, targets=targets)


# ----------------------------------------------------------------------
# pathwise comparison
# ----------------------------------------------------------------------

@dataclass
class PathwiseComparison:
    replicas: int
    checks: int
    violations: int
    max_excess: float
    tolerance_scale: float

    @property
    def violation_fraction(self) -> float:
        return self.violations / max(self.checks, 1)


def pathwise_comparison(config: SimConfig, u0_low: InitialProfile,
                        u0_high: InitialProfile, replicas: int = 100,
                        tol_scale: float = 1e-9, threads: int = 1
                        ) -> PathwiseComparison:
    """Coupled runs from ordered initial data; counts order violations.

    Both fields ride the same noise, so the lattice comparison principle
    predicts zero violations up to a scale-relative tolerance.
    """
    sim_low = Simulator(replace(config, u0=u0_low))
    sim_high = Simulator(replace(config, u0=u0_high), cov=sim_low.cov)
    if np.any(sim_low.initial > sim_high.initial + 1e-12):
        raise ConfigError("initial profiles are not ordered: need u0 <= v0")
    n_steps = config.n_steps

    def run_block(block_index, block_size):
        low = np.broadcast_to(sim_low.initial,
                              (block_size,) + sim_low.initial.shape).copy()
        high = np.broadcast_to(sim_high.initial,
                               (block_size,) + sim_high.initial.shape).copy()
        violations = 0
        checks = 0
        max_excess = 0.0
        for step in range(n_steps):
            noise = sim_low.sampler.sample(config.dt, step,
                                           n_replicas=block_size,
                                           block_index=block_index)
            t_now = (step + 1) * config.dt
            low = sim_low.apply_step(low, noise, t_now)
            high = sim_high.apply_step(high, noise, t_now)
            scale = max(1.0, float(np.max(np.abs(high))),
                        float(np.max(np.abs(low))))
            excess = low - high
            violations += int(np.count_nonzero(excess > tol_scale * scale))
            max_excess = max(max_excess, float(excess.max()))
            checks += excess.size
        return violations, checks, max_excess

    results = _run_blocks(run_block, replicas, threads)
    violations = sum(r[0] for r in results)
    checks = sum(r[1] for r in results)
    max_excess = max(r[2] for r in results)
    return PathwiseComparison(replicas=replicas, checks=checks,
                              violations=violations, max_excess=max_excess,
                              tolerance_scale=tol_scale)


# ----------------------------------------------------------------------
# moment comparison
# ----------------------------------------------------------------------

@dataclass
class MomentComparison:
    report_upper: MomentReport
    report_lower: MomentReport
    ordered_within_3se: bool
    worst_margin: float     # min over (k, t, x) of m1 + 3 SE1 - m2
    oracle_upper: np.ndarray | None = None  # second-moment diagonals
    oracle_lower: np.ndarray | None = None
    oracle_strict: bool | None = None


def moment_comparison(config: SimConfig, sigma_upper: SigmaSpec,
                      sigma_lower: SigmaSpec, replicas: int = 2000,
                      times=None, orders=(1, 2, 3), threads: int = 1
                      ) -> MomentComparison:
    """Moment ordering for dominating diffusion coefficients.

    The coefficient ordering sigma_upper >= sigma_lower >= 0 on the
    positive axis is verified on a grid first. Runs are coupled (same
    noise); for a linear pair the exact second-moment tables are attached.
    """
    if not sigma_dominates(sigma_upper, sigma_lower):
        raise ConfigError("sigma ordering violated on the check grid: need "
                          "sigma_upper >= sigma_lower >= 0 on [0, inf)")
    times = tuple(times) if times else (config.t_end,)
    steps = sorted({int(round(t / config.dt)) for t in times})
    sim_up = Simulator(replace(config, sigma=sigma_upper))
    sim_lo = Simulator(replace(config, sigma=sigma_lower), cov=sim_up.cov)
    n_sites = sim_up.initial.size
    n_steps = config.n_steps
    shape = (len(orders), len(steps), n_sites)

    def run_block(block_index, block_size):
        up = np.broadcast_to(sim_up.initial,
                             (block_size,) + sim_up.initial.shape).copy()
        lo = np.broadcast_to(sim_lo.initial,
                             (block_size,) + sim_lo.initial.shape).copy()
        sums = np.zeros((2,) + shape)
        sums_sq = np.zeros((2,) + shape)
        for step in range(n_steps):
            noise = sim_up.sampler.sample(config.dt, step,
                                          n_replicas=block_size,
                                          block_index=block_index)
            t_now = (step + 1) * config.dt
            up = sim_up.apply_step(up, noise, t_now)
            lo = sim_lo.apply_step(lo, noise, t_now)
            if step + 1 in steps:
                ti = steps.index(step + 1)
                for oi, k in enumerate(orders):
                    for fi, f in enumerate((up, lo)):
                        powd = f.reshape(block_size, -1) ** k
                        sums[fi, oi, ti] += powd.sum(axis=0)
                        sums_sq[fi, oi, ti] += (powd**2).sum(axis=0)
        return sums, sums_sq, block_size

    results = _run_blocks(run_block, replicas, threads)
    sums = KahanSum((2,) + shape)
    sums_sq = KahanSum((2,) + shape)
    count = 0
    for s, ssq, size in results:
        sums.add(s)
        sums_sq.add(ssq)
        count += size
    mean = sums.total / count
    var = np.maximum(sums_sq.total / count - mean**2, 0.0)
    se = np.sqrt(var / count)
    reports = []
    for fi in range(2):
        reports.append(MomentReport(
            times=times, orders=tuple(orders),
            estimates={k: mean[fi, oi] for oi, k in enumerate(orders)},
            standard_errors={k: se[fi, oi] for oi, k in enumerate(orders)},
            replicas=count))
    margin = mean[0] + 3.0 * se[0] - mean[1]
    ordered = bool(np.all(margin >= 0.0))
    oracle_up = oracle_lo = None
    strict = None
    if sigma_upper.kind == "linear" and sigma_lower.kind == "linear" \
            and config.dim == 1 and config.torus_n <= 64:
        diag_up = [np.diag(pam_second_moment(
            replace(config, sigma=sigma_upper), t)) for t in times]
        diag_lo = [np.diag(pam_second_moment(
            replace(config, sigma=sigma_lower), t)) for t in times]
        oracle_up = np.array(diag_up)
        oracle_lo = np.array(diag_lo)
        strict = bool(np.all(oracle_up > oracle_lo)) if \
            sigma_upper.lam != sigma_lower.lam else \
            bool(np.allclose(oracle_up, oracle_lo))
    return MomentComparison(report_upper=reports[0], report_lower=reports[1],
                            ordered_within_3se=ordered,
                            worst_margin=float(margin.min()),
                            oracle_upper=oracle_up, oracle_lower=oracle_lo,
                            oracle_strict=strict)


# ----------------------------------------------------------------------
# moment growth rates
# ----------------------------------------------------------------------

@dataclass
class LyapunovRow:
    lam: float
    gamma2: float
    gamma3: float
    residual2: float
    residual3: float

    @property
    def intermittent(self) -> bool:
        return self.gamma3 / 3.0 > self.gamma2 / 2.0 > 0.0


def continuum_moment_exponent(alpha: float, beta: float) -> float:
    """Continuum moment-scaling exponent (2 alpha - beta)/(alpha - beta).

    Reported for reference only; needs beta < alpha (the borderline
    beta = dim case is admissible here even though it cannot be simulated).
    """
    if not 0.0 < beta < alpha:
        raise ConfigError("the moment exponent needs 0 < beta < alpha")
    return (2.0 * alpha - beta) / (alpha - beta)


@dataclass
class LyapunovStudy:
    rows: tuple
    reference_exponent: float  # continuum moment scaling (2a-b)/(a-b)
    all_intermittent: bool


def lyapunov_study(config: SimConfig, lambdas=(1.0,), t: float = 1.0
                   ) -> LyapunovStudy:
    """Growth rates gamma(2), gamma(3) across coupling strengths.

    The continuum scaling exponent (2 alpha - beta)/(alpha - beta) is
    reported for reference, not asserted: the lattice rates at fixed eps
    approximate it only in the refinement limit.
    """
    rows = []
    for lam in lambdas:
        cfg = replace(config, sigma=SigmaSpec("linear", lam=float(lam)))
        if lam == 0.0:
            rows.append(LyapunovRow(lam=0.0, gamma2=0.0, gamma3=0.0,
                                    residual2=0.0, residual3=0.0))
            continue
        g2 = pam_mth_moment(cfg, 2, t)
        g3 = pam_mth_moment(cfg, 3, t)
        rows.append(LyapunovRow(lam=float(lam), gamma2=g2.gamma,
                                gamma3=g3.gamma, residual2=g2.residual,
                                residual3=g3.residual))
    reference = continuum_moment_exponent(config.alpha, config.beta)
    active = [r for r in rows if r.lam > 0.0]
    return LyapunovStudy(rows=tuple(rows), reference_exponent=reference,
                         all_intermittent=all(r.intermittent for r in active))


# ----------------------------------------------------------------------
# time-increment regularity
# ----------------------------------------------------------------------

@dataclass
class HolderResult:
    lags: tuple
    mean_square_increments: tuple
    slope: float
    r_squared: float
    beta_scale: float  # (t - s) / eps^beta reference scale


def holder_increment_study(config: SimConfig, base_time: float, lags,
                           replicas: int = 2000, threads: int = 1
                           ) -> HolderResult:
    """Mean-square time increments E|U_(s+lag) - U_s|^2 and their log-log
    slope in the lag."""
    lags = tuple(sorted(float(x) for x in lags))
    base_step = int(round(base_time / config.dt))
    lag_steps = [int(round((base_time + lag) / config.dt)) for lag in lags]
    record = sorted({base_step, *lag_steps})
    if any(abs(s * config.dt - (base_time + lag)) > 1e-9
           for s, lag in zip(lag_steps, lags)):
        raise ConfigError("lags must be multiples of dt")
    if lag_steps[-1] > config.n_steps:
        raise ConfigError("base_time + max lag exceeds t_end")
    sim = Simulator(config)

    def run_block(block_index, block_size):
        recorded, _ = sim.run_block(block_size, block_index=block_index,
                                    record_steps=record)
        base = recorded[base_step]
        sums = np.zeros(len(lags))
        for i, s in enumerate(lag_steps):
            sums[i] = np.sum((recorded[s] - base) ** 2)
        return sums, base.size

    results = _run_blocks(run_block, replicas, threads)
    total = KahanSum(len(lags))
    count = 0
    for sums, size in results:
        total.add(sums)
        count += size
    msd = total.total / count
    slope, _, r2 = fit_loglog(np.array(lags), msd)
    return HolderResult(lags=lags, mean_square_increments=tuple(msd.tolist()),
                        slope=slope, r_squared=r2,
                        beta_scale=config.epsilon ** -config.beta)
