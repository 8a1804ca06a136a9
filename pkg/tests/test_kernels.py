import math

import numpy as np
import pytest

from roughsio.fields import group_box
from roughsio.groups import dilate, monomials_up_to_degree, quasi_norm
from roughsio.kernels import (
    default_time_profile,
    make_annulus_kernel,
    make_lp_cutoff,
    make_sphere_function,
    project_cancellation,
    rasterize,
    scale_map,
    SphereFunction,
)
from roughsio.polar import integrate_polar


class TestProjectCancellation:
    def test_constant_projects_to_zero(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "zonal-harmonic(0)",
                                  cancellation_order=-1, unit_l1=False)
        out = project_cancellation(sf, 0)
        assert np.max(np.abs(out.node_values())) < 1e-10

    def test_odd_function_unchanged_at_order_zero(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate",
                                  cancellation_order=-1, unit_l1=False)
        out = project_cancellation(sf, 0)
        delta = out.node_values() - sf.node_values()
        l2 = math.sqrt(float(np.dot(delta**2, quad_e2.weights)))
        assert l2 < 1e-8

    def test_theta1_squared_order_one_moments_vanish(self, h1, quad_h1):
        raw = SphereFunction(
            group=h1, quad=quad_h1,
            omega=make_sphere_function(
                h1, quad_h1, "zonal-harmonic(2)", cancellation_order=-1,
                unit_l1=False,
            ).omega,
            cancellation_order=-1,
        )
        out = project_cancellation(raw, 1)
        moments = out.moments(1.0)
        scale = out.lq_norm(1)
        assert np.max(np.abs(moments)) < 1e-8 * max(scale, 1e-12)

    def test_moments_vanish_for_all_presets(self, h1, quad_h1):
        for preset in ("constant-balanced", "zonal-harmonic(2)", "rough-random(3)"):
            sf = make_sphere_function(h1, quad_h1, preset, cancellation_order=1)
            assert np.max(np.abs(sf.moments(1.0))) < 1e-8
            assert sf.lq_norm(1) == pytest.approx(1.0, rel=1e-12)
        sf = make_sphere_function(h1, quad_h1, "first-coordinate", 0)
        assert np.max(np.abs(sf.moments(0.0))) < 1e-8

    def test_polynomial_preset_vanishes_at_high_order(self, h1, quad_h1):
        with pytest.raises(ValueError, match="vanishes"):
            make_sphere_function(h1, quad_h1, "first-coordinate", cancellation_order=1)

    def test_stored_norms_match_recomputation(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "rough-random(7)", cancellation_order=0)
        vals = np.abs(sf.node_values())
        l1 = float(np.dot(vals, quad_e2.weights))
        l2 = math.sqrt(float(np.dot(vals**2, quad_e2.weights)))
        assert sf.lq_norm(1) == pytest.approx(l1, rel=1e-12)
        assert sf.lq_norm(2) == pytest.approx(l2, rel=1e-12)

    def test_rough_random_is_deterministic(self, e2, quad_e2):
        a = make_sphere_function(e2, quad_e2, "rough-random(42)", 0)
        b = make_sphere_function(e2, quad_e2, "rough-random(42)", 0)
        np.testing.assert_array_equal(a.node_values(), b.node_values())
        c = make_sphere_function(e2, quad_e2, "rough-random(43)", 0)
        assert np.max(np.abs(a.node_values() - c.node_values())) > 1e-3


class TestTimeProfile:
    def test_partition_identity_on_dense_grid(self):
        prof = default_time_profile()
        assert prof.partition_residual() < 1e-6

    def test_support(self):
        prof = default_time_profile()
        assert prof(np.array([0.49]))[0] == 0.0
        assert prof(np.array([2.01]))[0] == 0.0
        assert prof(np.array([1.0]))[0] > 0.0

    def test_total_mass_is_one(self):
        # the partition identity forces int phi = 1
        prof = default_time_profile()
        assert prof.cdf(np.array([2.5]))[0] == pytest.approx(1.0, abs=1e-6)


class TestAnnulusKernels:
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 1.2])
    @pytest.mark.parametrize("j", [-3, -1, 0, 2, 3])
    def test_sharp_tv_closed_form(self, e2, quad_e2, alpha, j):
        order = int(math.floor(alpha))
        sf = make_sphere_function(e2, quad_e2, "constant-balanced", order)
        k = make_annulus_kernel(e2, quad_e2, sf, alpha, j, "sharp_Bj")
        expected = sf.lq_norm(1) * 2.0 ** (-alpha * j) * (1 - 2.0**-alpha) / alpha
        assert k.total_variation == pytest.approx(expected, rel=1e-2)

    def test_sharp_tv_alpha_zero_log2(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        k = make_annulus_kernel(e2, quad_e2, sf, 0.0, 0, "sharp_Bj")
        assert k.total_variation == pytest.approx(sf.lq_norm(1) * math.log(2), rel=1e-2)

    def test_smooth_tv_scale_invariance(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        alpha = 0.5
        tvs = []
        for j in range(-4, 5):
            k = make_annulus_kernel(e2, quad_e2, sf, alpha, j, "smooth_Aj")
            tvs.append(k.total_variation * 2.0 ** (alpha * j))
        spread = (max(tvs) - min(tvs)) / min(tvs)
        assert spread < 0.20
        assert max(tvs) < 10.0 * sf.lq_norm(1)

    def test_smooth_sum_reconstructs_rough_kernel(self, e2, quad_e2):
        # sum_{|j|<=6} A_j and sum B_j both rebuild K_alpha on 1/4<=rho<=4
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        alpha = 0.5
        rng = np.random.default_rng(0)
        pts = dilate(
            e2,
            np.exp(rng.uniform(np.log(0.25), np.log(4.0), size=200)),
            quad_e2.nodes[rng.integers(0, len(quad_e2.nodes), size=200)],
        )
        rho = quasi_norm(e2, pts)
        target = sf.values(pts) * rho ** -(e2.homogeneous_dimension + alpha)
        total_smooth = np.zeros(len(pts))
        total_sharp = np.zeros(len(pts))
        for j in range(-7, 8):
            total_smooth += make_annulus_kernel(e2, quad_e2, sf, alpha, j, "smooth_Aj")(pts)
            total_sharp += make_annulus_kernel(e2, quad_e2, sf, alpha, j, "sharp_Bj")(pts)
        scale = np.max(np.abs(target))
        assert np.max(np.abs(total_sharp - target)) < 1e-10 * scale
        assert np.max(np.abs(total_smooth - target)) < 2e-3 * scale

    def test_cancellation_precondition_enforced(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        with pytest.raises(ValueError, match="cancellation"):
            make_annulus_kernel(e2, quad_e2, sf, 1.5, 0, "sharp_Bj")

    def test_parametrized_needs_valid_t(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        with pytest.raises(ValueError, match="t in"):
            make_annulus_kernel(e2, quad_e2, sf, 0.5, 0, "parametrized_Bjt", t=2.5)
        k = make_annulus_kernel(e2, quad_e2, sf, 0.5, 0, "parametrized_Bjt", t=1.5)
        assert k.r_lo == pytest.approx(1.5)
        assert k.r_hi == pytest.approx(2.0)

    @pytest.mark.parametrize("kind", ["sharp_Bj", "smooth_Aj", "parametrized_Bjt",
                                      "surface_shell"])
    def test_measure_axioms(self, h1, quad_h1, kind):
        # support in {rho ~ 2^j}, cancellation of order [alpha], total
        # variation <= C 2^{-alpha j} norm(Omega) -- and the same for the
        # reflection
        alpha, j = 0.5, 1
        sf = make_sphere_function(h1, quad_h1, "first-coordinate", 0)
        t = 1.3 if kind in ("parametrized_Bjt", "surface_shell") else None
        k = make_annulus_kernel(h1, quad_h1, sf, alpha, j, kind, t=t)
        assert 2.0 ** (j - 1) <= k.r_lo < k.r_hi <= 2.0 ** (j + 2)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-5, 5, size=(2000, 3))
        rho = quasi_norm(h1, pts)
        outside = (rho < k.r_lo) | (rho > k.r_hi)
        assert np.max(np.abs(k(pts)[outside]), initial=0.0) == 0.0
        # moments up to [alpha]=0 vanish (polar factorization)
        for p in monomials_up_to_degree(h1, 0.0):
            assert abs(k.moment_against(p)) < 1e-6 * k.total_variation
            assert abs(k.moment_against(p, reflected=True)) < 1e-6 * k.total_variation
        assert k.total_variation <= 10.0 * 2.0 ** (-alpha * j) * sf.lq_norm(1)

    def test_surface_shell_tv_matches_prescription(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        alpha, j, t = 0.5, 2, 1.25
        k = make_annulus_kernel(e2, quad_e2, sf, alpha, j, "surface_shell", t=t)
        expected = 2.0 ** (-alpha * j) * t ** (-1 - alpha) * sf.lq_norm(1)
        assert k.total_variation == pytest.approx(expected, rel=1e-6)


class TestLPCutoff:
    def test_unit_mass_by_polar_quadrature(self, e2, quad_e2):
        lp = make_lp_cutoff(e2, quad_e2)
        mass = integrate_polar(
            e2, quad_e2, radial=lp.profile,
            angular=np.ones(len(quad_e2.nodes)),
            r_min=1.0 / 200.0, r_max=1.0 / 100.0, per_octave=4096,
        )
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_support_bounds(self, e2, quad_e2):
        lp = make_lp_cutoff(e2, quad_e2)
        assert lp.profile(np.array([1.0 / 250.0]))[0] == 0.0
        assert lp.profile(np.array([1.0 / 90.0]))[0] == 0.0
        assert lp.profile(np.array([0.0075]))[0] > 0.0

    def test_psi_mean_zero_and_support(self, e2, quad_e2):
        lp = make_lp_cutoff(e2, quad_e2)
        j = 5
        mass = integrate_polar(
            e2, quad_e2,
            radial=lambda r: lp.profile(r / 2.0 ** (j - 1)) * 2.0 ** (-(j - 1) * 2)
            - lp.profile(r / 2.0**j) * 2.0 ** (-j * 2),
            angular=np.ones(len(quad_e2.nodes)),
            r_min=2.0**j / 500.0, r_max=2.0**j / 50.0, per_octave=4096,
        )
        assert abs(mass) < 1e-8
        # support radius <= 2^j / 100 <= (1/50) 2^j
        pts = np.array([[2.0**j / 80.0, 0.0]])
        assert lp.psi_values(pts, j)[0] == 0.0
        assert lp.psi_support_radius(j) <= 2.0**j / 50.0

    def test_delta_phi_mass_scaling(self, e2, quad_e2):
        lp = make_lp_cutoff(e2, quad_e2)
        data = lp.delta_phi_data(2.0)
        val = integrate_polar(
            e2, quad_e2, radial=lambda r: data.radial(r, raw=True),
            angular=data.omega.values(quad_e2.nodes),
            r_min=data.r_lo, r_max=data.r_hi, per_octave=2048,
        )
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_grid_rasterization_is_mass_exact(self, e2, quad_e2):
        lp = make_lp_cutoff(e2, quad_e2)
        grid = group_box(e2, 0.08, 128)
        f = lp.rasterize_delta_phi(grid, 4.0)
        assert f.integral() == pytest.approx(1.0, rel=1e-12)
        psi = lp.rasterize_psi(grid, 2)
        assert abs(psi.integral()) < 1e-12

    def test_symmetry_flag(self, e2, h1, polarized_h1, quad_e2):
        assert make_lp_cutoff(e2, quad_e2).rho_symmetric
        assert make_lp_cutoff(h1, quad_e2).rho_symmetric is True
        assert make_lp_cutoff(polarized_h1, quad_e2).rho_symmetric is False


class TestScaleMap:
    def test_identity_at_t_one(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        k = make_annulus_kernel(e2, quad_e2, sf, 0.5, 0, "sharp_Bj")
        scaled = scale_map(e2, 0.5, 1.0, k.data)
        pts = np.random.default_rng(0).uniform(-2, 2, size=(500, 2))
        np.testing.assert_allclose(scaled(e2, pts), k(pts), rtol=1e-12)

    def test_mass_preservation_alpha_zero(self, e2, quad_e2):
        lp = make_lp_cutoff(e2, quad_e2)
        data = scale_map(e2, 0.0, 2.0, lp.phi_data())
        val = integrate_polar(
            e2, quad_e2, radial=lambda r: data.radial(r, raw=True),
            angular=data.omega.values(quad_e2.nodes),
            r_min=data.r_lo, r_max=data.r_hi, per_octave=2048,
        )
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_l1_scaling_change_of_variables(self, e2, quad_e2):
        # |Delta_alpha[t] f|_1 = t^{-alpha} |f|_1 (computed both sides)
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        alpha, t = 0.7, 1.7
        k = make_annulus_kernel(e2, quad_e2, sf, alpha, 0, "sharp_Bj")
        scaled = scale_map(e2, alpha, t, k.data)
        from roughsio.polar import radial_integral

        q1 = e2.homogeneous_dimension - 1.0
        ang = float(np.dot(np.abs(scaled.omega.values(quad_e2.nodes)),
                           quad_e2.weights))
        tv = ang * radial_integral(
            lambda r: scaled.radial(r, raw=True) * r**q1,
            scaled.r_lo, scaled.r_hi, min_points=256,
        )
        assert tv == pytest.approx(t**-alpha * k.total_variation, rel=1e-6)

    def test_scale_map_rejects_bad_t(self, e2):
        with pytest.raises(ValueError):
            scale_map(e2, 0.0, -1.0, lambda pts: pts[:, 0])


class TestRasterize:
    def test_moment_repair_zeroes_discrete_moments(self, e2, quad_e2):
        sf = make_sphere_function(e2, quad_e2, "first-coordinate", 0)
        k = make_annulus_kernel(e2, quad_e2, sf, 0.5, -1, "sharp_Bj")
        grid = group_box(e2, 1.5, 96)
        raw = rasterize(e2, k, grid)
        fixed = rasterize(e2, k, grid, repair_order=0)
        assert abs(raw.integral()) > 0
        assert abs(fixed.integral()) < 1e-12 * np.abs(fixed.values).max()
        rel_change = np.abs(fixed.values - raw.values).max() / np.abs(raw.values).max()
        assert rel_change < 0.05
