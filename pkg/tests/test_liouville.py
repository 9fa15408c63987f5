"""Cutoff-measure identities: normalization, moments, tilt mechanism."""

import math

import numpy as np
import pytest

from gff4 import covariance, liouville, sampler
from gff4.covariance import SphereSpec
from gff4.errors import GeometryError, ParameterError
from gff4.liouville import DensityOverflowWarning, LiouvilleParams
from gff4.sampler import RngStream


class TestParams:
    def test_validation(self):
        with pytest.raises(ParameterError):
            LiouvilleParams(gamma=1.0, eps0=1.5)
        with pytest.raises(ParameterError):
            LiouvilleParams(gamma=1.0, eps0=0.5, n_levels=0)
        with pytest.raises(ParameterError):
            LiouvilleParams(gamma=float("nan"))

    def test_thickness_and_regime(self):
        p = LiouvilleParams(gamma=math.pi)
        assert p.thickness == pytest.approx(0.25)
        assert p.in_l2_regime
        assert not LiouvilleParams(gamma=0.0).in_l2_regime
        assert not LiouvilleParams(gamma=2 * math.pi).in_l2_regime

    def test_levels(self):
        p = LiouvilleParams(gamma=1.0, eps0=0.1, n_levels=3)
        assert p.levels() == pytest.approx((0.1, 0.01, 0.001))


class TestCutoffDensity:
    def test_zero_field_value(self):
        p = LiouvilleParams(gamma=1.5)
        val = liouville.cutoff_density(0.0, 0.1, p)
        assert val == pytest.approx(math.exp(-0.5 * 1.5**2 * float(covariance.green_g(0.1))))
        assert val < 1.0

    def test_gamma_zero_is_lebesgue(self):
        p = LiouvilleParams(gamma=0.0)
        assert liouville.cutoff_density(123.4, 0.05, p) == 1.0

    def test_normalization_monte_carlo(self, seed):
        # E[exp(gamma X - gamma^2 G/2)] = 1 for X ~ N(0, G(eps))
        p = LiouvilleParams(gamma=math.pi)
        eps = 0.1
        g = float(covariance.green_g(eps))
        z = sampler.standard_normal(RngStream(seed, 21).generator(), 1_000_000)
        w = liouville.cutoff_density(math.sqrt(g) * z, eps, p)
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - 1.0) < 3.0 * se

    def test_overflow_saturates_with_warning(self):
        p = LiouvilleParams(gamma=1.0)
        with pytest.warns(DensityOverflowWarning):
            val = liouville.cutoff_density(800.0, 0.1, p)
        assert math.isfinite(val)


class TestMeasureOnGrid:
    def test_gamma_zero_exact_volume(self, seed):
        centers = sampler.hypercube_centers(3)
        grid = sampler.hierarchical_sample(
            centers, (0.05,), RngStream(seed, 22), cell_volume=(1.0 / 3) ** 4
        )
        p = LiouvilleParams(gamma=0.0, eps0=0.05)
        measure = liouville.measure_on_grid(grid, 0, p)
        assert measure.total_mass == (1.0 / 3) ** 4 * 81
        assert np.all(measure.cell_weights >= 0.0)

    def test_missing_cell_volume_rejected(self, seed):
        centers = sampler.hypercube_centers(3)
        grid = sampler.hierarchical_sample(centers, (0.05,), RngStream(seed, 23))
        with pytest.raises(ParameterError):
            liouville.measure_on_grid(grid, 0, LiouvilleParams(gamma=1.0))

    def test_level_out_of_range(self, seed):
        centers = sampler.hypercube_centers(3)
        grid = sampler.hierarchical_sample(
            centers, (0.05,), RngStream(seed, 23), cell_volume=(1.0 / 3) ** 4
        )
        with pytest.raises(ParameterError):
            liouville.measure_on_grid(grid, 1, LiouvilleParams(gamma=1.0))

    def test_weights_consistent_with_total(self, seed):
        centers = sampler.hypercube_centers(3)
        grid = sampler.hierarchical_sample(
            centers, (0.05,), RngStream(seed, 24), cell_volume=(1.0 / 3) ** 4
        )
        p = LiouvilleParams(gamma=2.0, eps0=0.05)
        m = liouville.measure_on_grid(grid, 0, p)
        assert m.total_mass == pytest.approx(float(m.cell_weights.sum()), rel=1e-12)


class TestMomentIdentities:
    def test_first_and_second_moment(self, seed):
        params = LiouvilleParams(gamma=math.pi, eps0=0.06, n_levels=1)
        rep = liouville.moment_check(6, params, 2_000, RngStream(seed).substream("mom"))
        assert rep.mean_ok_3se
        assert rep.second_ok_3se

    def test_spacing_guard(self, seed):
        params = LiouvilleParams(gamma=1.0, eps0=0.3, n_levels=1)
        with pytest.raises(ParameterError):
            liouville.moment_check(6, params, 10, RngStream(seed))

    def test_gamma_symmetry(self, seed):
        # the field is centered, so matched-seed runs at +-gamma share the law
        reps = 3_000
        out = {}
        for gamma in (1.5, -1.5):
            params = LiouvilleParams(gamma=gamma, eps0=0.06, n_levels=1)
            rep = liouville.moment_check(6, params, reps, RngStream(seed).substream("sym"))
            out[gamma] = rep
        se = math.hypot(out[1.5].mass_se, out[-1.5].mass_se)
        assert abs(out[1.5].mass_mean - out[-1.5].mass_mean) < 3.0 * se


class TestConvergenceDiagnostic:
    def test_gamma_zero_differences_exactly_zero(self, seed):
        params = LiouvilleParams(gamma=0.0, eps0=0.06, n_levels=3)
        rep = liouville.convergence_diagnostic(4, params, 50, RngStream(seed, 25))
        assert rep.l2_diff_empirical == [0.0, 0.0]
        assert not rep.out_of_regime_flag

    def test_single_level_degenerates_to_mass_stats(self, seed):
        params = LiouvilleParams(gamma=1.0, eps0=0.06, n_levels=1)
        rep = liouville.convergence_diagnostic(4, params, 50, RngStream(seed, 26))
        assert rep.l2_diff_empirical == []
        assert rep.l2_diff_analytic == []
        assert len(rep.mass_means) == 1

    def test_empirical_matches_analytic_increments(self, seed):
        params = LiouvilleParams(gamma=math.pi / 2, eps0=0.06, n_levels=3)
        rep = liouville.convergence_diagnostic(4, params, 2_000, RngStream(seed, 27))
        assert rep.l2_match_ok
        # fixed-grid increments grow with the level (documented discretization floor)
        assert rep.l2_diff_analytic[1] > rep.l2_diff_analytic[0]

    def test_out_of_regime_flagged_not_fatal(self, seed):
        params = LiouvilleParams(gamma=4.5, eps0=0.06, n_levels=2)  # gamma^2 > 2 pi^2
        rep = liouville.convergence_diagnostic(4, params, 20, RngStream(seed, 28))
        assert rep.out_of_regime_flag

    def test_bump_test_fn(self, seed):
        centers = sampler.hypercube_centers(4)
        f = liouville.bump_test_fn(centers)
        assert np.all(f >= 0)
        assert f.max() > 0
        params = LiouvilleParams(gamma=1.0, eps0=0.06, n_levels=2)
        rep = liouville.convergence_diagnostic(
            4, params, 30, RngStream(seed, 29), test_fn=liouville.bump_test_fn
        )
        assert len(rep.mass_means) == 2


class TestTiltCheck:
    def test_gamma_zero_mean_zero(self, seed):
        params = LiouvilleParams(gamma=0.0)
        spec = SphereSpec((0, 0, 0, 0), liouville.tilt_eps_for(0.5))
        rep = liouville.cm_tilt_check(spec, 0.5, params, 50_000, RngStream(seed, 30))
        assert rep.target == 0.0
        assert abs(rep.estimate) < 3.0 * rep.stderr

    def test_identity_at_pi(self, seed):
        params = LiouvilleParams(gamma=math.pi)
        spec = SphereSpec((0, 0, 0, 0), liouville.tilt_eps_for(1.0))
        rep = liouville.cm_tilt_check(spec, 1.0, params, 50_000, RngStream(seed, 31))
        assert rep.passed_3se
        assert rep.target == pytest.approx(math.pi)

    def test_linearity_in_t(self, seed):
        params = LiouvilleParams(gamma=1.0)
        reps = {}
        for t in (1.0, 2.0):
            spec = SphereSpec((0, 0, 0, 0), liouville.tilt_eps_for(t))
            reps[t] = liouville.cm_tilt_check(
                spec, t, params, 50_000, RngStream(seed, 32).substream(t)
            )
        ratio = reps[2.0].estimate / reps[1.0].estimate
        se = ratio * math.hypot(
            reps[2.0].stderr / reps[2.0].estimate, reps[1.0].stderr / reps[1.0].estimate
        )
        assert abs(ratio - 2.0) < 3.0 * se

    def test_geometry_guard(self, seed):
        params = LiouvilleParams(gamma=1.0)
        spec = SphereSpec((0, 0, 0, 0), 0.5)  # G(0.5) = 0.067 << t + G(R)
        with pytest.raises(GeometryError):
            liouville.cm_tilt_check(spec, 1.0, params, 100, RngStream(seed, 33))

    def test_naive_second_moment_is_hopeless(self):
        # the note that forces importance sampling: E[w^2] = exp(gamma^2 G(eps)),
        # which at gamma^2 = pi^2, t = 2 exceeds e^19 -- vanilla MC cannot see
        # the mean through that tail
        g_eps = 2.0 + float(covariance.green_g(1.0))
        assert math.pi**2 * g_eps > 19.0
