"""Command-line entry point: config in, CSV + JSON + figures + manifest out.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 contract assertion failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiments, local_limit, oracles, reporting, riesz_noise, walk
from .errors import (BlowUpError, ConfigError, CouplingError,
                     DiagnosticsError, EmbeddingError, PowerIterationError,
                     QuadratureError, RegimeError, RegressionError,
                     ResolutionError, TorusSizeError)
from .lattice_sde import (InitialProfile, SigmaSpec, SimConfig, simulate,
                          site_coordinates)
from .stable_kernel import StableKernel, StableParams, default_quadrature

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ASSERTION = 4

_NUMERICAL_ERRORS = (BlowUpError, PowerIterationError, QuadratureError,
                     EmbeddingError, ResolutionError, TorusSizeError,
                     DiagnosticsError, RegressionError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    watch = reporting.Stopwatch()
    manifest = reporting.RunManifest(
        subcommand=args.subcommand, config=cfg, seed=int(cfg.get("seed", 0)),
        versions=reporting.package_versions())
    try:
        handler = _HANDLERS[args.subcommand]
        handler(cfg, args, manifest)
    except (ConfigError, RegimeError, CouplingError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    manifest.wall_time_s = watch.elapsed
    manifest.write(os.path.join(args.out, f"{args.subcommand}_manifest.json"))
    if manifest.assertions and not all(manifest.assertions.values()):
        failed = [k for k, v in manifest.assertions.items() if not v]
        print(f"assertion failure: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shelab",
        description="Lattice laboratory for stochastic heat equations "
                    "driven by spatially correlated noise.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, doc in [
        ("kernel", "dump a stable heat-kernel grid"),
        ("walk", "dump characteristic-function curves and transition tables"),
        ("llt", "local-limit-theorem error scan over an eps ladder"),
        ("noise", "dump cell covariance tables and spectra"),
        ("simulate", "integrate the interacting SDE system"),
        ("oracle", "moment tables and growth rates for linear noise"),
        ("converge", "coupled self-convergence study"),
        ("compare-path", "pathwise comparison of ordered initial data"),
        ("compare-moment", "moment comparison of ordered coefficients"),
        ("lyapunov", "moment growth rates and intermittency check"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    return parser


def load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}")
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _need(cfg, key, kind=None):
    if key not in cfg:
        raise ConfigError(f"config key '{key}' is required")
    value = cfg[key]
    if kind is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key '{key}' has invalid value "
                              f"{value!r}")
    return value


def build_walk(cfg) -> walk.DislocationDistribution:
    family = cfg.get("family", "nearest_neighbor")
    dim = int(cfg.get("dim", 1))
    if family == "nearest_neighbor":
        return walk.nearest_neighbor(dim)
    if family == "product_moment":
        weights = cfg.get("component_weights")
        if weights is not None:
            weights = {int(k): float(v) for k, v in weights.items()}
        return walk.product_moment(dim, weights)
    if family == "heavy_tail":
        return walk.heavy_tail(dim, _need(cfg, "alpha", float),
                               int(cfg.get("support_radius", 10_000)))
    if family == "heavy_tail_mixture":
        return walk.heavy_tail_mixture(dim, _need(cfg, "mixture_terms"),
                                       int(cfg.get("support_radius", 10_000)))
    raise ConfigError(f"unknown walk family {family!r}")


def build_kernel(cfg, dim=None, nu=None) -> StableKernel:
    params = StableParams(alpha=_need(cfg, "alpha", float),
                          nu=float(nu if nu is not None
                                   else cfg.get("nu", 1.0)),
                          dim=int(dim if dim is not None
                                  else cfg.get("dim", 1)))
    quad = default_quadrature(params,
                              x_max=float(cfg.get("kernel_x_max", 40.0)),
                              alias_tol=float(cfg.get("kernel_alias_tol",
                                                      1e-7)))
    return StableKernel(params, quad)


def build_sigma(cfg, prefix="sigma") -> SigmaSpec:
    return SigmaSpec(kind=cfg.get(f"{prefix}_kind", "linear"),
                     lam=float(cfg.get(f"{prefix}_lam", 1.0)),
                     cutoff=cfg.get(f"{prefix}_cutoff"))


def build_u0(cfg, key="u0") -> InitialProfile:
    return InitialProfile(kind=cfg.get(key, "constant"),
                          value=float(cfg.get(f"{key}_value", 1.0)))


def build_sim_config(cfg) -> SimConfig:
    w = build_walk(cfg)
    return SimConfig(
        walk=w,
        beta=_need(cfg, "beta", float),
        epsilon=_need(cfg, "epsilon", float),
        torus_n=_need(cfg, "torus_n", int),
        sigma=build_sigma(cfg),
        u0=build_u0(cfg),
        dt=_need(cfg, "dt", float),
        t_end=_need(cfg, "t_end", float),
        scheme=cfg.get("scheme", "splitting"),
        seed=int(cfg.get("seed", 0)),
        correlation=cfg.get("correlation", "riesz"),
        corr_scale=float(cfg.get("corr_scale", 1.0)),
        output_times=tuple(cfg.get("output_times", ())),
    )


# ----------------------------------------------------------------------
# handlers
# ----------------------------------------------------------------------

def _out(args, name):
    return os.path.join(args.out, name)


def cmd_kernel(cfg, args, manifest):
    kernel = build_kernel(cfg)
    times = [float(t) for t in cfg.get("times", [0.5, 1.0, 2.0])]
    x_max = float(cfg.get("x_max", 10.0))
    xs = np.linspace(-x_max, x_max, int(cfg.get("x_points", 201)))
    rows = []
    curves = {}
    for t in times:
        dens = kernel.density(t, xs) if kernel.params.dim == 1 else \
            kernel.density(t, np.column_stack([xs] +
                                              [np.zeros_like(xs)] *
                                              (kernel.params.dim - 1)))
        curves[f"t={t:g}"] = dens
        rows.extend([(t, x, p) for x, p in zip(xs, dens)])
    path = reporting.write_csv(_out(args, "kernel_grid.csv"),
                               ["t", "x", "p"], rows)
    manifest.register(path)
    if not args.no_figures:
        fig = reporting.fig_curves(xs, curves, xlabel="x", ylabel="p_t(x)",
                                   title="stable heat kernel")
        manifest.register(reporting.save_figure(fig, _out(args, "kernel_grid.png")))


def cmd_walk(cfg, args, manifest):
    w = build_walk(cfg)
    diag = walk.diagnose_assumptions(w)
    zs = walk.default_z_grid(w, 64)
    mu = walk.char_fn(w, zs if w.dim == 1 else
                      np.column_stack([zs] + [np.zeros_like(zs)] * (w.dim - 1)))
    path = reporting.write_csv(_out(args, "walk_charfn.csv"), ["z", "char_fn"],
                               list(zip(zs, mu)))
    manifest.register(path)
    t = float(cfg.get("t", 1.0))
    torus_n = cfg.get("torus_n")
    n = int(torus_n) if torus_n else walk.suggest_torus_n(w, t)
    table = walk.transition_probabilities(w, t, n)
    radius = min(int(cfg.get("dump_radius", 50)), (n - 1) // 2)
    sites, vals = table.window(radius)
    if w.dim == 1:
        rows = list(zip(sites.tolist(), vals.tolist()))
    else:
        rows = [(str(idx), float(vals[idx])) for idx in np.ndindex(vals.shape)]
    path2 = reporting.write_csv(_out(args, "walk_transitions.csv"),
                                ["site", "probability"], rows)
    manifest.register(path2)
    summary = {"family": w.family, "dim": w.dim, "nu_hat": diag.nu_hat,
               "a_hat": diag.a_hat, "r_squared": diag.r_squared,
               "max_charfn_away_from_zero": diag.max_charfn_away_from_zero,
               "torus_n": n, "clamp_count": table.clamp_count}
    manifest.register(reporting.write_json(_out(args, "walk_summary.json"),
                                           summary))
    if not args.no_figures:
        fig = reporting.fig_curves(zs, {"char_fn": mu}, xlabel="|z|",
                                   ylabel="char fn",
                                   title=f"{w.family} characteristic function")
        manifest.register(reporting.save_figure(fig, _out(args, "walk_charfn.png")))
        if w.dim == 1:
            fig2 = reporting.fig_curves(sites, {f"t={t:g}": vals},
                                        xlabel="site", ylabel="P",
                                        title="transition probabilities")
            manifest.register(reporting.save_figure(
                fig2, _out(args, "walk_transitions.png")))


def cmd_llt(cfg, args, manifest):
    w = build_walk(cfg)
    diag = walk.diagnose_assumptions(w)
    kernel = build_kernel(cfg, dim=w.dim, nu=cfg.get("nu", diag.nu_hat))
    t = float(cfg.get("t", 1.0))
    epsilons = [float(e) for e in _need(cfg, "epsilons")]
    a_exp = min(diag.a_hat, w.a_cap)
    reports = [local_limit.llt_sup_error(w, kernel, eps, t,
                                         window_radius=cfg.get("window_radius"),
                                         a_exponent=a_exp)
               for eps in epsilons]
    rows = [(r.epsilon, r.t, r.sup_error, r.tail_stat, r.window_radius)
            for r in reports]
    path = reporting.write_csv(
        _out(args, "llt_errors.csv"),
        ["epsilon", "t", "sup_error", "tail_stat", "window_radius"], rows)
    manifest.register(path)
    summary = {"a_exponent": a_exp, "nu_hat": diag.nu_hat, "t": t}
    fit = None
    if len(set(epsilons)) >= 4:
        fit = local_limit.fit_rate(reports)
        summary.update({"slope": fit.slope, "intercept": fit.intercept,
                        "r_squared": fit.r_squared})
        min_slope = cfg.get("min_slope")
        if min_slope is not None:
            manifest.assertions["rate_slope"] = fit.slope >= float(min_slope)
    manifest.register(reporting.write_json(_out(args, "llt_summary.json"),
                                           summary))
    if not args.no_figures:
        fig = reporting.fig_loglog_rate(
            [r.epsilon for r in reports], [r.sup_error for r in reports],
            slope=None if fit is None else fit.slope,
            intercept=None if fit is None else fit.intercept,
            title="local limit theorem error")
        manifest.register(reporting.save_figure(fig, _out(args, "llt_errors.png")))


def cmd_noise(cfg, args, manifest):
    dim = int(cfg.get("dim", 1))
    cov = riesz_noise.build_covariance(
        _need(cfg, "epsilon", float), dim, _need(cfg, "torus_n", int),
        beta=cfg.get("beta"), kernel=cfg.get("correlation", "riesz"),
        corr_scale=float(cfg.get("corr_scale", 1.0)))
    if dim == 1:
        offsets = np.arange(cov.torus_n)
        signed = np.where(offsets <= cov.torus_n // 2, offsets,
                          offsets - cov.torus_n)
        order = np.argsort(signed)
        rows = list(zip(signed[order].tolist(),
                        cov.table[order].tolist()))
        spec_rows = list(enumerate(cov.spectrum.tolist()))
    else:
        rows = [(str((int(i), int(j))), float(cov.table[i, j]))
                for i, j in np.ndindex(cov.table.shape)]
        spec_rows = [(str((int(i), int(j))), float(cov.spectrum[i, j]))
                     for i, j in np.ndindex(cov.spectrum.shape)]
    manifest.register(reporting.write_csv(_out(args, "noise_covariance.csv"),
                                          ["offset", "R"], rows))
    manifest.register(reporting.write_csv(_out(args, "noise_spectrum.csv"),
                                          ["frequency", "eigenvalue"],
                                          spec_rows))
    manifest.register(reporting.write_json(_out(args, "noise_summary.json"), {
        "kernel": cov.kernel_name, "clipped_mass": cov.clipped_mass,
        "min_eigenvalue": cov.min_eigenvalue, "torus_n": cov.torus_n}))
    if not args.no_figures and dim == 1:
        fig = reporting.fig_curves(
            [r[0] for r in rows], {"R": [r[1] for r in rows]},
            xlabel="offset", ylabel="R", title="cell covariance")
        manifest.register(reporting.save_figure(fig, _out(args, "noise_covariance.png")))


def cmd_simulate(cfg, args, manifest):
    sim_cfg = build_sim_config(cfg)
    path = simulate(sim_cfg)
    coords = site_coordinates(sim_cfg.epsilon, sim_cfg.torus_n)
    rows = []
    for state in path.states:
        f = state.field.reshape(-1)
        for i, v in enumerate(f):
            rows.append((state.time, i, float(v)))
    manifest.register(reporting.write_csv(_out(args, "simulate_fields.csv"),
                                          ["time", "site", "value"], rows))
    stats_rows = [(s.time, float(s.field.mean()), float(s.field.min()),
                   float(s.field.max())) for s in path.states]
    manifest.register(reporting.write_csv(
        _out(args, "simulate_stats.csv"), ["time", "mean", "min", "max"],
        stats_rows))
    manifest.register(reporting.write_json(_out(args, "simulate_summary.json"), {
        "running_min": path.running_min, "running_max": path.running_max,
        "negativity_fraction": path.negativity_fraction,
        "times": list(path.times)}))
    if not args.no_figures:
        fig = reporting.fig_field(path.final_field, sim_cfg.epsilon,
                                  title=f"field at t={path.times[-1]:g}")
        manifest.register(reporting.save_figure(fig, _out(args, "simulate_final.png")))


def cmd_oracle(cfg, args, manifest):
    sim_cfg = build_sim_config(cfg)
    t = float(cfg.get("t", sim_cfg.t_end))
    m2 = oracles.pam_second_moment(sim_cfg, t)
    rows = [(i, j, float(m2[i, j])) for i, j in np.ndindex(m2.shape)]
    manifest.register(reporting.write_csv(_out(args, "oracle_m2.csv"),
                                          ["x", "y", "M2"], rows))
    orders = [int(k) for k in cfg.get("orders", [2, 3])]
    growth = {}
    for k in orders:
        g = oracles.pam_mth_moment(sim_cfg, k, t)
        growth[f"gamma{k}"] = g.gamma
        growth[f"residual{k}"] = g.residual
    manifest.register(reporting.write_json(_out(args, "oracle_summary.json"),
                                           growth))
    if not args.no_figures:
        fig = reporting.fig_curves(np.arange(m2.shape[0]),
                                   {"M2(x,x)": np.diag(m2)}, xlabel="site",
                                   ylabel="second moment",
                                   title=f"moment table at t={t:g}")
        manifest.register(reporting.save_figure(fig, _out(args, "oracle_m2.png")))


def cmd_converge(cfg, args, manifest):
    sim_cfg = build_sim_config(cfg)
    diag = walk.diagnose_assumptions(sim_cfg.walk)
    a_exp = min(diag.a_hat, sim_cfg.walk.a_cap)
    result = experiments.convergence_study(
        sim_cfg, _need(cfg, "epsilon_ladder"),
        moment_order=int(cfg.get("moment_order", 2)),
        replicas=int(cfg.get("replicas", 200)), a_exponent=a_exp,
        threads=args.threads)
    rows = list(zip(result.epsilons, result.errors, result.standard_errors))
    manifest.register(reporting.write_csv(
        _out(args, "converge_errors.csv"), ["epsilon", "error", "se"], rows))
    summary = {
        "moment_order": result.moment_order, "replicas": result.replicas,
        "epsilon_ref": result.epsilon_ref, "rho_target": result.targets.rho,
        "eta": result.targets.eta, "a_exponent": a_exp,
    }
    if result.fit is not None:
        summary.update({"slope": result.fit.slope,
                        "r_squared": result.fit.r_squared})
        min_frac = float(cfg.get("min_slope_fraction", 0.0))
        if min_frac > 0.0:
            manifest.assertions["rate_slope"] = \
                result.fit.slope >= min_frac * result.targets.rho
    manifest.register(reporting.write_json(_out(args, "converge_summary.json"),
                                           summary))
    if not args.no_figures and result.fit is not None:
        fig = reporting.fig_loglog_rate(
            result.epsilons, result.errors, slope=result.fit.slope,
            intercept=result.fit.intercept,
            reference_slope=result.targets.rho,
            title="coupled self-convergence")
        manifest.register(reporting.save_figure(fig, _out(args, "converge_errors.png")))


def cmd_compare_path(cfg, args, manifest):
    sim_cfg = build_sim_config(cfg)
    low = InitialProfile(kind=cfg.get("u0_low", "constant"),
                         value=float(cfg.get("u0_low_value", 0.5)))
    high = InitialProfile(kind=cfg.get("u0_high", "constant"),
                          value=float(cfg.get("u0_high_value", 1.0)))
    result = experiments.pathwise_comparison(
        sim_cfg, low, high, replicas=int(cfg.get("replicas", 100)),
        threads=args.threads)
    manifest.register(reporting.write_json(_out(args, "compare_path.json"), {
        "replicas": result.replicas, "checks": result.checks,
        "violations": result.violations,
        "violation_fraction": result.violation_fraction,
        "max_excess": result.max_excess}))
    manifest.assertions["no_order_violations"] = result.violations == 0


def cmd_compare_moment(cfg, args, manifest):
    sim_cfg = build_sim_config(cfg)
    upper = build_sigma(cfg, "sigma")
    lower = build_sigma(cfg, "sigma2")
    times = tuple(cfg.get("times", (sim_cfg.t_end,)))
    result = experiments.moment_comparison(
        sim_cfg, upper, lower, replicas=int(cfg.get("replicas", 2000)),
        times=times, threads=args.threads)
    rows = []
    for k in result.report_upper.orders:
        for ti, t in enumerate(times):
            up = result.report_upper.estimates[k][ti]
            lo = result.report_lower.estimates[k][ti]
            se_up = result.report_upper.standard_errors[k][ti]
            for site in range(up.size):
                rows.append((k, t, site, float(up[site]), float(lo[site]),
                             float(se_up[site])))
    manifest.register(reporting.write_csv(
        _out(args, "compare_moment.csv"),
        ["order", "time", "site", "upper", "lower", "se_upper"], rows))
    summary = {"ordered_within_3se": result.ordered_within_3se,
               "worst_margin": result.worst_margin}
    if result.oracle_strict is not None:
        summary["oracle_strict"] = result.oracle_strict
    manifest.register(reporting.write_json(_out(args, "compare_moment.json"),
                                           summary))
    manifest.assertions["moments_ordered"] = result.ordered_within_3se
    if result.oracle_strict is not None:
        manifest.assertions["oracle_ordered"] = result.oracle_strict
    if not args.no_figures:
        k = max(result.report_upper.orders)
        fig = reporting.fig_curves(
            np.arange(result.report_upper.estimates[k].shape[-1]),
            {"upper": result.report_upper.estimates[k][-1],
             "lower": result.report_lower.estimates[k][-1]},
            xlabel="site", ylabel=f"E[U^{k}]",
            title="moment comparison at final time")
        manifest.register(reporting.save_figure(fig, _out(args, "compare_moment.png")))


def cmd_lyapunov(cfg, args, manifest):
    sim_cfg = build_sim_config(cfg)
    lambdas = [float(x) for x in cfg.get("lambdas", [1.0])]
    result = experiments.lyapunov_study(sim_cfg, lambdas,
                                        t=float(cfg.get("t", 1.0)))
    rows = [(r.lam, r.gamma2, r.gamma3, r.gamma2 / 2.0, r.gamma3 / 3.0,
             r.residual2, r.residual3) for r in result.rows]
    manifest.register(reporting.write_csv(
        _out(args, "lyapunov_rates.csv"),
        ["lambda", "gamma2", "gamma3", "gamma2_over_2", "gamma3_over_3",
         "residual2", "residual3"], rows))
    manifest.register(reporting.write_json(_out(args, "lyapunov_summary.json"), {
        "reference_exponent": result.reference_exponent,
        "all_intermittent": result.all_intermittent}))
    manifest.assertions["intermittency_ordering"] = result.all_intermittent
    if not args.no_figures:
        active = [r for r in result.rows if r.lam > 0.0]
        if active:
            fig = reporting.fig_curves(
                [r.lam for r in active],
                {"gamma2/2": [r.gamma2 / 2.0 for r in active],
                 "gamma3/3": [r.gamma3 / 3.0 for r in active]},
                xlabel="lambda", ylabel="gamma(m)/m",
                title="moment growth rates")
            manifest.register(reporting.save_figure(fig, _out(args, "lyapunov_rates.png")))


_HANDLERS = {
    "kernel": cmd_kernel,
    "walk": cmd_walk,
    "llt": cmd_llt,
    "noise": cmd_noise,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "converge": cmd_converge,
    "compare-path": cmd_compare_path,
    "compare-moment": cmd_compare_moment,
    "lyapunov": cmd_lyapunov,
}


if __name__ == "__main__":
    sys.exit(main())
