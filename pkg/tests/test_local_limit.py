import numpy as np
import pytest

from shelab.errors import RegimeError, RegressionError, TorusSizeError
from shelab.local_limit import LLTErrorReport, RateFit, fit_rate, llt_sup_error
from shelab.stable_kernel import StableKernel, StableParams
from shelab.walk import diagnose_assumptions, nearest_neighbor


@pytest.fixture(scope="module")
def nn_setup():
    walk = nearest_neighbor()
    diag = diagnose_assumptions(walk)
    kernel = StableKernel(StableParams(2.0, diag.nu_hat, 1))
    return walk, kernel, min(diag.a_hat, walk.a_cap)


def synthetic_report(eps, err):
    return LLTErrorReport(epsilon=eps, t=1.0, sup_error=err, tail_stat=0.0,
                          window_radius=10.0, a_exponent=1.0)


class TestSupError:
    def test_boundary_regime_finite_positive(self, nn_setup):
        walk, kernel, a = nn_setup
        # eps = t^(1/alpha): the walk has taken order-one steps
        rep = llt_sup_error(walk, kernel, 1.0, 1.0, a_exponent=a)
        assert np.isfinite(rep.sup_error)
        assert rep.sup_error > 0.0

    def test_monotone_refinement(self, nn_setup):
        walk, kernel, a = nn_setup
        coarse = llt_sup_error(walk, kernel, 0.25, 1.0, a_exponent=a)
        fine = llt_sup_error(walk, kernel, 0.125, 1.0, a_exponent=a)
        assert fine.sup_error < coarse.sup_error

    def test_smoothing_in_time(self, nn_setup):
        walk, kernel, a = nn_setup
        sups = [llt_sup_error(walk, kernel, 0.25, t, a_exponent=a).sup_error
                for t in (0.5, 1.0, 2.0, 4.0)]
        assert all(x > y for x, y in zip(sups, sups[1:]))

    def test_regime_error(self, nn_setup):
        walk, kernel, a = nn_setup
        with pytest.raises(RegimeError):
            llt_sup_error(walk, kernel, 0.5, 0.1, a_exponent=a)

    def test_window_exceeding_torus(self, nn_setup):
        walk, kernel, a = nn_setup
        with pytest.raises(TorusSizeError):
            llt_sup_error(walk, kernel, 0.25, 1.0, a_exponent=a,
                          window_radius=8.0, torus_n=33)

    def test_alpha2_has_no_tail_stat(self, nn_setup):
        walk, kernel, a = nn_setup
        rep = llt_sup_error(walk, kernel, 0.25, 1.0, a_exponent=a)
        assert rep.tail_stat == 0.0


class TestFitRate:
    def test_synthetic_line_exact(self):
        reports = [synthetic_report(e, 0.37 * e) for e in (0.5, 0.25, 0.125, 0.0625)]
        fit = fit_rate(reports)
        assert fit.slope == pytest.approx(1.0, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_requires_four_points(self):
        reports = [synthetic_report(e, e) for e in (0.5, 0.25, 0.125)]
        with pytest.raises(RegressionError):
            fit_rate(reports)

    def test_requires_two_octaves(self):
        reports = [synthetic_report(e, e) for e in (0.5, 0.4, 0.3, 0.2)]
        with pytest.raises(RegressionError):
            fit_rate(reports)

    def test_requires_common_time(self):
        reports = [synthetic_report(e, e) for e in (0.5, 0.25, 0.125, 0.0625)]
        bumped = LLTErrorReport(epsilon=0.03125, t=2.0, sup_error=0.03,
                                tail_stat=0.0, window_radius=10.0,
                                a_exponent=1.0)
        with pytest.raises(RegressionError):
            fit_rate(reports + [bumped])

    def test_rate_fit_validation(self):
        with pytest.raises(ValueError):
            RateFit(points=((0.0, 0.0),), slope=1.0, intercept=0.0,
                    r_squared=0.5)
