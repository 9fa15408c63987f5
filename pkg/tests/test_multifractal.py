"""Counting scheme, perfect-thick events, energies, correlation bound."""

import math

import numpy as np
import pytest

from gff4 import covariance, multifractal as mf, sampler
from gff4.covariance import TWO_PI_SQ
from gff4.errors import DegenerateEstimateError, DomainError, ParameterError
from gff4.sampler import RadialPath, RngStream

SQRT2PI2 = math.sqrt(TWO_PI_SQ)

# mpmath, 40 digits: t_m = G(1/m!)
T_FROZEN = (
    0.03525503198030052,
    0.06736322768239225,
    0.122092184501898,
    0.1922128718273931,
    0.2737409133067353,
)
C4_3_5 = 23.66741998836726  # E|U-V|^(-3.5) on the unit 4-cube, mpmath quadrature
C4_1_0 = 1.481432636521065


class TestUpperParams:
    def test_defaults_and_derived(self):
        p = mf.UpperSchemeParams(a=0.5)
        assert p.K == 5.0
        assert p.r(2) == pytest.approx(2.0**-5)
        assert p.delta(1) == math.inf
        assert p.delta(4) < p.delta(2)
        assert p.threshold(3) == pytest.approx(1.0 - p.delta(3))

    def test_validation(self):
        with pytest.raises(ParameterError):
            mf.UpperSchemeParams(a=-1.0)
        with pytest.raises(ParameterError):
            mf.UpperSchemeParams(a=0.5, zeta=1.5)
        with pytest.raises(ParameterError):
            mf.UpperSchemeParams(a=0.5, c_delta=0.0)


class TestThicknessRatio:
    def test_zero_path(self):
        path = RadialPath((0, 0, 0, 0), np.array([1.0, 2.0]), np.zeros(2))
        assert mf.thickness_ratio(path, 1.0) == 0.0

    def test_drift_path_hits_target_exactly(self):
        # B(t) = sqrt(4 a pi^2) t gives ratio sqrt(2a) at every t
        a = 0.7
        times = np.linspace(0.5, 10.0, 20)
        path = RadialPath((0, 0, 0, 0), times, 2.0 * math.pi * math.sqrt(a) * times)
        for t in (times[0], times[-1]):
            assert mf.thickness_ratio(path, float(t)) == pytest.approx(
                math.sqrt(2.0 * a), rel=1e-14
            )

    def test_interpolation_refused(self):
        path = RadialPath((0, 0, 0, 0), np.array([1.0, 2.0]), np.zeros(2))
        with pytest.raises(DomainError, match="interpolation refused"):
            mf.thickness_ratio(path, 1.5)

    def test_brownian_ratio_shrinks(self, seed):
        t = 50.0
        vals = sampler.radial_bm_batch(
            np.array([t]), 20_000, RngStream(seed, 40).generator()
        )[:, 0]
        ratios = np.abs(vals) / (SQRT2PI2 * t)
        assert ratios.mean() < 3.0 / math.sqrt(t)

    def test_limit_thick_implies_limsup_thick(self, seed):
        a, tol, t_min = 0.3, 0.2, 1.0
        times = np.linspace(0.5, 20.0, 64)
        gen = RngStream(seed, 41).generator()
        paths = [
            RadialPath((0, 0, 0, 0), times, row)
            for row in sampler.radial_bm_batch(times, 50, gen)
        ]
        paths.append(RadialPath((0, 0, 0, 0), times, 2 * math.pi * math.sqrt(a) * times))
        for path in paths:
            if mf.is_limit_thick(path, a, tol, t_min):
                assert mf.is_limsup_thick(path, a, tol, t_min)


class TestCounting:
    def test_a_zero_counts_everything(self, seed):
        params = mf.UpperSchemeParams(a=0.0)
        values = sampler.standard_normal(RngStream(seed, 42).generator(), (10, 50))
        counts = mf.counts_from_level_values(values, params.r(2), params, 2)
        assert np.all(counts == 50)

    def test_planted_value_detected(self):
        params = mf.UpperSchemeParams(a=2.0)
        r2 = params.r(2)
        g = float(covariance.green_g(r2))
        values = np.zeros((1, 10))
        values[0, 3] = (params.threshold(2) + 0.1) * SQRT2PI2 * g
        counts = mf.counts_from_level_values(values, r2, params, 2)
        assert counts[0] == 1

    def test_count_high_centers_missing_level(self, seed):
        centers = sampler.hypercube_centers(2)
        grid = sampler.hierarchical_sample(centers, (0.2,), RngStream(seed, 43))
        with pytest.raises(ParameterError, match="no level"):
            mf.count_high_centers(grid, mf.UpperSchemeParams(a=0.5), 2)

    def test_threshold_monotone_in_a(self, seed):
        values = sampler.standard_normal(RngStream(seed, 44).generator(), (20, 200))
        r = 0.03
        lo = mf.counts_from_level_values(values, r, mf.UpperSchemeParams(a=0.25), 3)
        hi = mf.counts_from_level_values(values, r, mf.UpperSchemeParams(a=1.0), 3)
        assert np.all(lo >= hi)

    def test_tail_probability_matches_scipy(self):
        from scipy.stats import norm

        params = mf.UpperSchemeParams(a=0.5)
        for n in (2, 3):
            r = params.r(n)
            g = float(covariance.green_g(r))
            z = params.threshold(n) * SQRT2PI2 * math.sqrt(g)
            assert mf.exact_tail_probability(r, params, n) == pytest.approx(
                2.0 * norm.sf(z), rel=1e-12
            )


class TestBoxDimension:
    def test_planted_power_law(self):
        a = 1.0
        params = mf.UpperSchemeParams(a=a, eps_scheme=1.0)
        r = [params.r(n) for n in (2, 3, 4, 5)]
        counts = [round(rv ** -(4.0 - a)) for rv in r]
        rep = mf.box_dimension_estimate(counts, r, a)
        assert abs(rep.slope - 3.0) < 0.05
        assert rep.dimension_estimate == rep.slope

    def test_flat_counts_give_zero_slope(self):
        rep = mf.box_dimension_estimate([7, 7, 7, 7], [0.5, 0.25, 0.2, 0.1], 0.5)
        assert rep.slope == pytest.approx(0.0, abs=1e-12)

    def test_insufficient_levels(self):
        with pytest.raises(DegenerateEstimateError):
            mf.box_dimension_estimate([5, 0, 0, 3], [0.5, 0.25, 0.2, 0.1], 0.5)

    def test_small_pipeline_runs(self, seed):
        proto = mf.UpperSchemeParams(a=0.5, eps_scheme=1.0)
        cfg = mf.DimensionGridConfig(finest_per_side=4)
        rep = mf.dimension_pipeline([0.5], proto, cfg, 8, RngStream(seed, 45))
        assert 0.5 in rep.reports
        assert len(rep.count_rows) == 8 * 4

    def test_empty_check_small(self, seed):
        rep = mf.empty_above_four_check(5, RngStream(seed, 46), m_per_side=4, levels=(2, 3))
        assert rep.all_zero

    def test_empty_check_requires_a_above_four(self, seed):
        with pytest.raises(ParameterError):
            mf.empty_above_four_check(
                2, RngStream(seed), params=mf.UpperSchemeParams(a=1.0), m_per_side=2
            )


class TestLowerParams:
    def test_schedule(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=3)
        assert p.s_values() == pytest.approx((1.0, 0.5, 1 / 6, 1 / 24, 1 / 120, 1 / 720))
        for got, ref in zip(p.t_values(), T_FROZEN):
            assert got == pytest.approx(ref, rel=1e-12)
        t = p.t_values()
        assert all(t[i] < t[i + 1] for i in range(len(t) - 1))
        assert p.drift == pytest.approx(math.pi)

    def test_t_tracks_log_asymptotic(self):
        # t_m / (-log s_m / (2 pi^2)) decreases toward 1 along the schedule
        p = mf.LowerSchemeParams(a=0.25, n_max=3)
        s, t = p.s_values(), p.t_values()
        ratios = [t[m] / (-math.log(s[m]) / TWO_PI_SQ) for m in range(1, len(s))]
        assert all(ratios[i] > ratios[i + 1] for i in range(len(ratios) - 1))
        assert ratios[-1] < 1.25

    def test_validation(self):
        with pytest.raises(ParameterError):
            mf.LowerSchemeParams(a=0.25, n_max=4)
        with pytest.raises(ParameterError):
            mf.LowerSchemeParams(a=0.25, substeps=8)


class TestTimeGridAndEvents:
    def test_grid_structure(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        times, knots = mf.lower_time_grid(p, 2)
        t = p.t_values()
        assert times[knots[0]] == t[0]
        assert times[knots[1]] == t[1]
        assert times[knots[2]] == t[2]
        assert knots[1] - knots[0] == p.substeps
        assert times[-1] == pytest.approx(t[2] + p.t_tail)
        assert np.all(np.diff(times) > 0)

    def test_drift_path_satisfies_every_a_event(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        times, _ = mf.lower_time_grid(p, 2)
        path = RadialPath((0, 0, 0, 0), times, p.drift * times)
        trace = mf.perfect_thick_trace(path, p)
        assert trace.a_flags == (True, True)
        # the globally-linear path with slope pi > 1 violates the tail barrier
        # (|B(t) - B(t_m)| - t grows like (pi - 1) t), so it is not B-perfect;
        # only the A events are claimed for it
        assert not trace.b_flag

    def test_flat_tail_path_satisfies_b_event(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        times, _ = mf.lower_time_grid(p, 2)
        t3 = p.t_values()[2]
        values = np.where(times <= t3, p.drift * times, p.drift * t3)
        trace = mf.perfect_thick_trace(RadialPath((0, 0, 0, 0), times, values), p)
        assert trace.a_flags == (True, True)
        assert trace.b_flag
        assert trace.is_perfect

    def test_planted_jump_fails_first_interval(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        times, knots = mf.lower_time_grid(p, 2)
        t = p.t_values()
        values = p.drift * times.copy()
        mid = knots[0] + p.substeps // 2
        values[mid] += 10.0 * math.sqrt(t[1] - t[0])
        trace = mf.perfect_thick_trace(RadialPath((0, 0, 0, 0), times, values), p)
        assert not trace.a_flags[0]
        assert trace.a_flags[1]
        assert not trace.is_perfect

    def test_missing_times_rejected(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        path = RadialPath((0, 0, 0, 0), np.linspace(0.01, 1.0, 50), np.zeros(50))
        with pytest.raises(ParameterError):
            mf.perfect_thick_trace(path, p)

    def test_coarse_resolution_rejected(self):
        p = mf.LowerSchemeParams(a=0.25, n_max=1)
        t = p.t_values()
        times = np.concatenate([np.linspace(t[0], t[1], 9), [t[1] + 1.0]])
        path = RadialPath((0, 0, 0, 0), times, np.zeros(times.size))
        with pytest.raises(ParameterError, match="fewer than"):
            mf.perfect_thick_trace(path, p)

    def test_refinement_bias_direction_and_size(self, seed):
        # coarse-grid suprema miss excursions, so P(A_1) can only be larger;
        # the 32 -> 3200 substep gap measured 0.067 on the pilot, frozen <= 0.09
        def estimate(substeps, n_paths, stream_key):
            p = mf.LowerSchemeParams(a=0.25, n_max=1, substeps=substeps)
            times, _ = mf.lower_time_grid(p, 1)
            gen = RngStream(seed, stream_key).generator()
            hits = 0
            done = 0
            while done < n_paths:
                take = min(2000, n_paths - done)
                vals = sampler.radial_bm_batch(times, take, gen)
                a_flags, _ = mf.event_flags_batch(vals, times, p, 1)
                hits += int(a_flags[:, 0].sum())
                done += take
            return hits / n_paths

        p_coarse = estimate(32, 40_000, 47)
        p_fine = estimate(3200, 20_000, 48)
        se = math.sqrt(p_coarse * (1 - p_coarse) / 40_000 + p_fine * (1 - p_fine) / 20_000)
        assert p_coarse - p_fine > -3.0 * se  # bias direction: coarse >= fine
        assert p_coarse - p_fine <= 0.09  # frozen magnitude bound


class TestCorrConstant:
    def test_degenerate_schedule_gives_one(self):
        assert mf._corr_constant_from_times([0.3] * 6, 2.0 * math.pi, 3) == pytest.approx(1.0)

    def test_a_zero_gives_one(self):
        p = mf.LowerSchemeParams(a=0.0, n_max=3)
        for l in (1, 2, 3):
            assert mf.corr_constant(l, p) == pytest.approx(1.0)

    def test_direct_product_evaluation(self):
        p = mf.LowerSchemeParams(a=0.5, n_max=3)
        t = p.t_values()
        drift = p.drift
        expected = 1.0
        for j in range(1, 4):  # l = 2 -> j <= 3
            dt = t[j] - t[j - 1]
            expected /= math.exp(0.5 * drift * math.sqrt(dt) - drift**2 * dt)
        assert mf.corr_constant(2, p) == pytest.approx(expected, rel=1e-14)

    def test_schedule_length_guard(self):
        p = mf.LowerSchemeParams(a=0.5, n_max=1)
        with pytest.raises(ParameterError):
            mf.corr_constant(4, p)


class TestEnergy:
    def test_cube_pair_constant_frozen(self):
        assert mf.cube_pair_energy_constant(3.5) == pytest.approx(C4_3_5, rel=1e-8)
        assert mf.cube_pair_energy_constant(1.0) == pytest.approx(C4_1_0, rel=1e-8)

    def test_cube_pair_constant_monte_carlo_crosscheck(self, seed):
        # alpha = 1 has finite MC variance (E r^-2 < inf), so a direct MC is a
        # legitimate independent check there
        gen = RngStream(seed, 49).generator()
        u = gen.random((400_000, 4))
        v = gen.random((400_000, 4))
        est = (1.0 / np.linalg.norm(u - v, axis=1)).mean()
        assert est == pytest.approx(C4_1_0, rel=0.01)

    def test_domain(self):
        with pytest.raises(DomainError):
            mf.cube_pair_energy_constant(4.5)

    def test_two_cell_cross_energy(self):
        # two occupied cells at distance d with equal weights w: cross = 2 w^2 / d^alpha
        alpha = 3.5
        inv = mf._inverse_distance_matrix_raw(
            np.array([[0.0, 0, 0, 0], [0.6, 0, 0, 0]]), alpha
        )
        occ = np.array([1.0, 1.0])
        w = 0.25
        cross = w * w * float(occ @ inv @ occ)
        assert cross == pytest.approx(2.0 * w**2 / 0.6**alpha, rel=1e-12)

    def test_full_occupation_mass_is_volume(self):
        # if every cell qualifies and p_hat = 1, mass = n_cells * s^4 = 1
        n = 2
        s = 1.0 / math.factorial(n)
        assert math.factorial(n) ** 4 * s**4 == pytest.approx(1.0)

    def test_mass_first_moment_small_study(self, seed):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        rep = mf.mu_n_energy_study(p, 1, 3.5, RngStream(seed, 50), 200, p_paths=50_000)
        assert rep.mean_ok_3se
        assert math.isfinite(rep.energy_mean)

    def test_mass_second_moment_bounded(self, seed):
        # E[mass^2] = 1 + s^4 (1/P - 1) under independent cells; frozen bound 4
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        for n, reps in ((1, 200), (2, 100)):
            rep = mf.mu_n_energy_study(
                p, n, 3.5, RngStream(seed, 53).substream(n), reps, p_paths=50_000
            )
            assert float((rep.masses**2).mean()) <= 4.0

    def test_zero_phat_guard(self, seed):
        p = mf.LowerSchemeParams(a=0.25, n_max=1)
        with pytest.raises(DegenerateEstimateError):
            mf.mu_n_energy(p, 1, 3.5, RngStream(seed), 0.0)


class TestCorrelationInequality:
    def test_passes_and_reports_exclusions(self, seed):
        p = mf.LowerSchemeParams(a=0.25, n_max=2)
        rep = mf.correlation_inequality_check(1, 2, p, 5_000, RngStream(seed, 51))
        assert rep.c_l > 1.0
        assert rep.passed
        assert 2 in rep.included_levels  # d = s_1 keeps level 2 samplable
        assert 1 in rep.excluded_levels
        assert abs(rep.ratio - 1.0) < 5.0 * rep.ratio_se  # cross-independent events

    def test_distant_class_degenerates_to_independence(self, seed):
        p = mf.LowerSchemeParams(a=0.0, n_max=2)
        rep = mf.correlation_inequality_check(1, 2, p, 5_000, RngStream(seed, 52))
        # a = 0: C_l = 1 and the restricted events are independent
        assert rep.c_l == pytest.approx(1.0)
        assert rep.passed

    def test_schedule_guard(self, seed):
        p = mf.LowerSchemeParams(a=0.25, n_max=1)
        with pytest.raises(ParameterError):
            mf.correlation_inequality_check(9, 1, p, 100, RngStream(seed))
