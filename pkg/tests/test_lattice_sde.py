import numpy as np
import pytest

from shelab.errors import ConfigError, CouplingError
from shelab.lattice_sde import (
    InitialProfile,
    SigmaSpec,
    SimConfig,
    SimState,
    Simulator,
    WalkOperators,
    aggregate_fine_noise,
    generator_apply,
    project_initial,
    simulate,
    simulate_coupled_refinement,
    site_coordinates,
    step,
)
from shelab.riesz_noise import NoiseSampler, build_covariance
from shelab.walk import nearest_neighbor, transition_probabilities


def make_config(**kw):
    base = dict(walk=nearest_neighbor(), beta=0.5, epsilon=0.25, torus_n=16,
                sigma=SigmaSpec("linear", lam=1.0),
                u0=InitialProfile("constant", 1.0),
                dt=1.0 / 256, t_end=0.25, scheme="splitting", seed=1)
    base.update(kw)
    return SimConfig(**base)


class TestSigmaSpec:
    def test_linear_and_lipschitz(self):
        s = SigmaSpec("linear", lam=2.0)
        assert s(3.0) == 6.0
        assert s.lip_const == 2.0

    def test_cutoff_shape(self):
        s = SigmaSpec("cutoff", lam=1.0, cutoff=2.0)
        assert s(0.0) == 0.0
        assert s(1.5) == 1.5            # linear inside the level
        assert s(2.0) == 2.0
        assert s(3.0) == pytest.approx(1.0)   # ramp down
        assert s(4.0) == 0.0
        assert s(-3.0) == pytest.approx(-1.0)

    def test_smooth_bounded(self):
        s = SigmaSpec("smooth_bounded", lam=1.0)
        u = np.linspace(-5, 5, 101)
        assert np.max(np.abs(s(u))) <= 0.5 + 1e-12
        assert s(0.0) == 0.0

    def test_lipschitz_sampled_on_grid(self):
        for spec in (SigmaSpec("linear", lam=1.5),
                     SigmaSpec("cutoff", lam=1.5, cutoff=3.0),
                     SigmaSpec("smooth_bounded", lam=1.5)):
            u = np.linspace(-10, 10, 4001)
            slopes = np.abs(np.diff(spec(u)) / np.diff(u))
            assert np.max(slopes) <= spec.lip_const + 1e-9


class TestProjectInitial:
    def test_constant(self):
        field = project_initial(InitialProfile("constant", 1.0), 0.25, 16)
        assert np.allclose(field, 1.0)

    def test_linear_exact_at_centers(self):
        lin = InitialProfile("custom", fn=lambda x: x + 10.0)
        field = project_initial(lin, 0.25, 16)
        assert np.allclose(field, site_coordinates(0.25, 16) + 10.0)

    def test_half_line_boundary_cell(self):
        field = project_initial(InitialProfile("indicator", 1.0), 0.25, 16)
        assert field[0] == pytest.approx(0.5, abs=1e-12)
        assert field[1] == pytest.approx(1.0)
        assert field[-1] == pytest.approx(0.0)

    def test_dim2_constant(self):
        field = project_initial(InitialProfile("constant", 2.0), 0.5, 8, dim=2)
        assert field.shape == (8, 8)
        assert np.allclose(field, 2.0)


class TestGenerator:
    def test_kills_constants(self):
        ops = WalkOperators(nearest_neighbor(), 0.5, 16)
        assert np.max(np.abs(ops.generator(np.ones(16)))) == 0.0

    def test_indicator_stencil(self):
        eps = 0.5
        ops = WalkOperators(nearest_neighbor(), eps, 16)
        delta = np.zeros(16)
        delta[0] = 1.0
        g = ops.generator(delta)
        assert g[0] == pytest.approx(-eps**-2.0)
        assert g[1] == pytest.approx(eps**-2.0 / 2.0)
        assert g[-1] == pytest.approx(eps**-2.0 / 2.0)

    def test_mass_conservation(self):
        ops = WalkOperators(nearest_neighbor(), 0.25, 32)
        field = np.random.default_rng(0).random(32)
        assert abs(ops.generator(field).sum()) < 1e-9

    def test_module_level_entry_point(self):
        field = np.random.default_rng(1).random(16)
        ops = WalkOperators(nearest_neighbor(), 0.5, 16)
        assert np.allclose(generator_apply(nearest_neighbor(), 0.5, field),
                           ops.generator(field))


class TestStepping:
    def test_splitting_equals_semigroup_for_zero_sigma(self):
        cfg = make_config(sigma=SigmaSpec("linear", lam=0.0),
                          u0=InitialProfile("indicator"), t_end=1.0, dt=0.125)
        path = simulate(cfg)
        tab = transition_probabilities(cfg.walk, 1.0 / cfg.epsilon**2,
                                       cfg.torus_n, tol=1.0)
        u0 = project_initial(cfg.u0, cfg.epsilon, cfg.torus_n)
        expected = np.real(np.fft.ifft(np.fft.fft(tab.values)
                                       * np.fft.fft(u0)))
        assert np.max(np.abs(path.final_field - expected)) < 1e-12

    def test_constant_invariant_without_noise_gain(self):
        cfg = make_config(sigma=SigmaSpec("linear", lam=0.0))
        path = simulate(cfg)
        assert np.allclose(path.final_field, 1.0)
        assert path.negativity_fraction == 0.0

    def test_determinism(self):
        cfg = make_config(seed=9, output_times=(0.125, 0.25))
        a, b = simulate(cfg), simulate(cfg)
        for sa, sb in zip(a.states, b.states):
            assert sa.field.tobytes() == sb.field.tobytes()

    def test_seed_changes_path(self):
        a = simulate(make_config(seed=1))
        b = simulate(make_config(seed=2))
        assert not np.array_equal(a.final_field, b.final_field)

    def test_em_and_splitting_agree_at_small_dt(self):
        em = simulate(make_config(scheme="em", dt=1.0 / 1024, seed=3))
        sp = simulate(make_config(scheme="splitting", dt=1.0 / 1024, seed=3))
        assert np.max(np.abs(em.final_field - sp.final_field)) < 0.05

    def test_single_step_function(self):
        cfg = make_config()
        sim = Simulator(cfg)
        state = SimState(time=0.0, field=sim.initial.copy(), step_index=0)
        noise = sim.sampler.sample(cfg.dt, 0)[0]
        nxt = step(state, cfg, noise, simulator=sim)
        assert nxt.time == pytest.approx(cfg.dt)
        assert nxt.step_index == 1
        assert nxt.field.shape == state.field.shape

    def test_mean_preserved_for_linear_noise(self):
        # the stochastic term is a mean-zero martingale increment
        cfg = make_config(torus_n=16, t_end=0.5, dt=1 / 256, seed=11)
        sim = Simulator(cfg)
        total = np.zeros(16)
        n_blocks = 40
        for b in range(n_blocks):
            rec, _ = sim.run_block(64, block_index=b,
                                   record_steps=[cfg.n_steps])
            total += rec[cfg.n_steps].mean(axis=0)
        mean = total / n_blocks
        # E U = 1; allow 4 standard errors of the ensemble mean
        assert np.max(np.abs(mean - 1.0)) < 0.05


class TestValidation:
    def test_beta_alpha_constraint(self):
        with pytest.raises(ConfigError):
            make_config(beta=2.5)

    def test_em_dt_constraint(self):
        with pytest.raises(ConfigError):
            make_config(scheme="em", dt=0.1)

    def test_output_times_multiple_of_dt(self):
        cfg = make_config(output_times=(0.1234,))
        with pytest.raises(ConfigError):
            simulate(cfg)


class TestCoupledRefinement:
    def fine_coarse(self, seed=3, lam=1.0, t_end=0.125):
        coarse = make_config(epsilon=0.25, torus_n=16, seed=seed,
                             sigma=SigmaSpec("linear", lam=lam), t_end=t_end)
        fine = make_config(epsilon=0.125, torus_n=32, seed=seed,
                           sigma=SigmaSpec("linear", lam=lam), t_end=t_end)
        return coarse, fine

    def test_aggregation_is_pairwise_sum(self):
        cov = build_covariance(0.125, 1, 32, beta=0.5)
        noise = NoiseSampler(cov, seed_root=4).sample(0.01, 0, n_replicas=3)
        agg = aggregate_fine_noise(noise, 2, 1)
        assert np.array_equal(agg[:, 5], noise[:, 10] + noise[:, 11])

    def test_variance_additivity_identity(self):
        # sum of pairwise fine covariances equals the coarse variance
        cov_f = build_covariance(0.125, 1, 32, beta=0.5)
        cov_c = build_covariance(0.25, 1, 16, beta=0.5)
        lhs = 2.0 * cov_f.value(0) + 2.0 * cov_f.value(1)
        assert abs(lhs - cov_c.value(0)) < 1e-10

    def test_coarse_noise_has_coarse_covariance(self):
        cov_f = build_covariance(0.125, 1, 32, beta=0.5)
        cov_c = build_covariance(0.25, 1, 16, beta=0.5)
        s = NoiseSampler(cov_f, seed_root=9)
        dt = 0.01
        draws = np.concatenate(
            [aggregate_fine_noise(s.sample(dt, k, n_replicas=400), 2, 1)
             for k in range(25)])
        emp = float(np.mean(draws**2))
        assert emp == pytest.approx(dt * cov_c.value(0), rel=0.05)

    def test_deterministic_levels_converge_together(self):
        coarse, fine = self.fine_coarse(lam=0.0, t_end=0.25)
        coarse = SimConfig(**{**coarse.__dict__,
                              "u0": InitialProfile("bump", 0.5)})
        fine = SimConfig(**{**fine.__dict__,
                            "u0": InitialProfile("bump", 0.5)})
        uc, uf = simulate_coupled_refinement(coarse, fine)
        # coarse sites sit at even fine sites (same physical coordinates)
        coarse_sites = site_coordinates(0.25, 16)
        fine_sites = site_coordinates(0.125, 32)
        idx = [int(np.argmin(np.abs(fine_sites - x))) for x in coarse_sites]
        assert np.max(np.abs(uc[0] - uf[0][idx])) < 0.02

    def test_non_nested_rejected(self):
        coarse, fine = self.fine_coarse()
        bad = make_config(epsilon=0.1, torus_n=32)
        with pytest.raises(CouplingError):
            simulate_coupled_refinement(coarse, bad)

    def test_coupled_difference_smaller_than_independent(self):
        coarse, fine = self.fine_coarse(seed=5)
        uc, uf = simulate_coupled_refinement(coarse, fine, n_replicas=64)
        coupled_diff = np.mean((uc[:, 0] - uf[:, 0]) ** 2)
        indep_c = simulate(coarse)
        indep_f = simulate(SimConfig(**{**fine.__dict__, "seed": 77}))
        indep_diff = np.mean((indep_c.final_field[0]
                              - indep_f.final_field[0]) ** 2)
        assert coupled_diff < max(indep_diff, 0.05)


class TestStrongOrder:
    def test_single_site_em_order_half(self):
        # single-site torus reduces to a scalar SDE; compare against the
        # fine-step reference on the same Brownian path
        from shelab.oracles import scalar_sde_reference
        from shelab.util import fit_loglog

        errs = []
        dts = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
        for dt in dts:
            ref = scalar_sde_reference(lambda u: 0.5 * u / (1 + u * u), 1.0,
                                       dt=dt, t_end=1.0, seed=5, n_paths=4000)
            errs.append(ref.strong_error)
        slope, _, _ = fit_loglog(dts, errs)
        assert 0.4 <= slope <= 0.6
