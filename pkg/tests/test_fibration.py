import math

import numpy as np
import pytest

from dftomo import (
    ChartGeometry,
    OffManifoldError,
    RankDeficientError,
    SelfIntersectionError,
    canonical_point,
    conormal_fiber,
    from_defining_function,
    from_ray_family,
    induced_measure,
    random_canonical_points,
    submersion_check,
)
from dftomo.fibration import _time_of_point, b_map_eta
from dftomo.geometry import FlowField
from dftomo.rays import RayFamily, lines_perp_axis_family

from oracles import radial_shell_integral


class TestSubmersion:
    def test_radon_full_rank(self, radon_fib):
        rng = np.random.default_rng(0)
        samples = []
        for _ in range(8):
            al = rng.uniform(0.1, 2 * math.pi - 0.1)
            s = rng.uniform(-1, 1)
            z = np.array([al, s])
            x = radon_fib.point_on(z)
            samples.append((z, x))
        report = submersion_check(radon_fib, samples)
        assert report.passed

    def test_degenerate_jacobian(self):
        # defining function constant in x: level sets are not a fibration
        with pytest.raises(RankDeficientError):
            from_defining_function(lambda x, th: np.array([th[0]]),
                                   n=2, m=1, k=1, x_box=[[-1, 1]] * 2,
                                   theta_box=[[0.0, 1.0]])

    def test_line_fibration_r3(self):
        # lines {x1 = a, x2 = b} in R^3: k = 2 level sets of a linear map
        def b(x, th):
            return np.array([x[0] - th[0], x[1] - th[1]])

        fib = from_defining_function(b, n=3, m=2, k=2, x_box=[[-1, 1]] * 3,
                                     theta_box=[[-0.5, 0.5]] * 2)
        z = np.array([0.1, -0.2, 0.0, 0.0])
        x = fib.point_on(z)
        report = submersion_check(fib, [(z, x)])
        assert report.passed


class TestConormalFrame:
    def test_radon_conormal_is_normal_direction(self, radon_fib):
        al, s = 0.7, 0.4
        z = np.array([al, s])
        th = np.array([math.cos(al), math.sin(al)])
        x = s * th + 0.3 * np.array([-th[1], th[0]])
        frame = conormal_fiber(radon_fib, z, x)
        conorm = frame.conormal_basis[:, 0]
        conorm /= np.linalg.norm(conorm)
        assert min(np.linalg.norm(conorm - th), np.linalg.norm(conorm + th)) < 1e-9

    def test_pairing_vanishes(self, radon_fib):
        pts = random_canonical_points(radon_fib, np.random.default_rng(1), 5)
        for pt in pts:
            frame = conormal_fiber(radon_fib, pt.z, pt.x)
            pairing = frame.conormal_basis.T @ frame.tangent_basis
            assert np.max(np.abs(pairing)) < 1e-10

    def test_dimension_counts(self, radon_fib):
        pt = random_canonical_points(radon_fib, np.random.default_rng(2), 1)[0]
        frame = conormal_fiber(radon_fib, pt.z, pt.x)
        assert np.linalg.matrix_rank(frame.tangent_basis) == radon_fib.n_prime
        assert np.linalg.matrix_rank(frame.conormal_basis) == radon_fib.n_dprime

    def test_duality_b_after_a(self, radon_fib):
        rng = np.random.default_rng(3)
        for pt in random_canonical_points(radon_fib, rng, 6):
            eta_back = b_map_eta(radon_fib, pt.z, pt.x, pt.zeta)
            assert np.linalg.norm(eta_back - pt.eta) < 1e-8

    def test_ray_pullback_matches_graph_form(self, disk_family):
        """A evaluated from the graph chart and as the flow pullback agree."""
        from dftomo.bolker import variation_basis

        fib = from_ray_family(disk_family)
        theta = np.array([0.4, 0.3])
        traj = disk_family.trajectory(theta)
        x = traj.base_curve(0.45 * traj.tau_plus)
        frame = conormal_fiber(fib, theta, x)
        eta = frame.conormal_basis[:, 0]
        t_x = _time_of_point(traj, x)
        B = variation_basis(disk_family, theta, np.array([t_x]))[0]
        zeta_pull = -(B.T @ eta)
        assert np.linalg.norm(frame.zeta_of(eta) - zeta_pull) < 1e-6

    def test_off_manifold_rejected(self, radon_fib):
        z = np.array([0.3, 0.2])
        with pytest.raises(OffManifoldError):
            conormal_fiber(radon_fib, z, np.array([3.0, 3.0]))


class TestInducedMeasure:
    def test_segment_length(self, radon_fib):
        # chord of the box: total measure = euclidean length
        z = np.array([0.0, 1.5])    # vertical line x1 = 1.5
        nodes, w = induced_measure(radon_fib, z)
        assert abs(w.sum() - 12.0) < 1e-8
        assert np.all(w > 0)

    def test_circle_fiber_period(self):
        # rotation flow: fibers are circles; measure = minimal period
        rot = FlowField(fun=lambda s: np.array([-s[1], s[0]]), base_dim=2,
                        state_dim=2)
        chart = ChartGeometry(dim_n=2, box=[[-2, 2]] * 2)
        fam = RayFamily(chart=chart, field=rot, param_dim=1,
                        param_box=np.array([[0.5, 1.5]]),
                        embed=lambda th: np.array([th[0], 0.0]),
                        max_time=25.0)
        fib = from_ray_family(fam, skip_variation_probe=True, allow_periodic=True,
                              validation_samples=3)
        nodes, w = induced_measure(fib, np.array([0.8]))
        assert abs(w.sum() - 2 * math.pi) < 1e-6

    def test_sphere_level_surface_mass(self):
        # {|x - theta|^2 = r^2} in R^3 with the coarea weight: 4 pi r^2 / (2 r)
        def b(x, th):
            d = np.asarray(x) - np.asarray(th)
            return np.array([float(d @ d)])

        fib = from_defining_function(b, n=3, m=3, k=1, x_box=[[-2, 2]] * 3,
                                     theta_box=[[-0.1, 0.1]] * 3,
                                     quad_mode="star", star_center=np.zeros(3))
        r = 1.3
        z = np.array([0.0, 0.0, 0.0, r * r])
        nodes, w = induced_measure(fib, z, order=96)
        oracle = 4 * math.pi * r ** 2 / (2 * r)
        assert abs(w.sum() - oracle) / oracle < 1e-4
        assert np.allclose(np.linalg.norm(nodes, axis=1), r, atol=1e-9)

    def test_weights_positive(self, radon_fib):
        nodes, w = induced_measure(radon_fib, np.array([1.2, -0.3]))
        assert np.all(w > 0)


class TestFromRayFamily:
    def test_disk_lines_valid(self, disk_family):
        fib = from_ray_family(disk_family)
        assert (fib.N, fib.n, fib.n_prime, fib.n_dprime) == (2, 2, 1, 1)

    def test_restricted_lines_r3_variations_pass(self):
        chart = ChartGeometry(dim_n=3, box=[[-1.2, 1.2]] * 3,
                              boundary_fn=lambda x: float(x @ x) - 1.0,
                              boundary_grad=lambda x: 2 * x)
        fam = lines_perp_axis_family(chart, 1.0)
        fib = from_ray_family(fam, validation_samples=6)
        assert fib.N == 3 and fib.n == 3

    def test_self_intersection_detected(self):
        # clock-driven planar curve tracing a drifting figure eight
        def fun(state):
            tau = state[2]
            return np.array([2 * math.cos(2 * tau) + 0.1, math.cos(tau), 1.0])

        fld = FlowField(fun=fun, base_dim=2, state_dim=3)
        chart = ChartGeometry(dim_n=2, box=[[-4, 4]] * 2,
                              boundary_fn=lambda x: np.max(np.abs(x)) - 3.0)
        fam = RayFamily(chart=chart, field=fld, param_dim=1,
                        param_box=np.array([[-0.2, 0.2]]),
                        embed=lambda th: np.array([th[0], 0.0, 0.0]),
                        max_time=40.0)
        with pytest.raises(SelfIntersectionError):
            from_ray_family(fam, skip_variation_probe=True, validation_samples=4)


class TestCanonicalPoints:
    def test_invariants(self, radon_fib):
        rng = np.random.default_rng(7)
        for pt in random_canonical_points(radon_fib, rng, 10):
            assert radon_fib.on_fiber_residual(pt.z, pt.x) < 1e-8
            frame = conormal_fiber(radon_fib, pt.z, pt.x)
            # eta annihilates the tangent basis
            for j in range(frame.tangent_basis.shape[1]):
                v = frame.tangent_basis[:, j]
                assert abs(pt.eta @ v) < 1e-8 * np.linalg.norm(pt.eta) * np.linalg.norm(v)
            assert np.linalg.norm(frame.zeta_of(pt.eta) - pt.zeta) < 1e-8

    def test_rejects_non_conormal(self, radon_fib):
        al, s = 1.0, 0.2
        z = np.array([al, s])
        th = np.array([math.cos(al), math.sin(al)])
        x = s * th
        tangent = np.array([-th[1], th[0]])
        with pytest.raises(OffManifoldError):
            canonical_point(radon_fib, z, x, tangent)

    def test_zero_eta_rejected(self, radon_fib):
        z = np.array([1.0, 0.2])
        x = radon_fib.point_on(z)
        with pytest.raises(ValueError):
            canonical_point(radon_fib, z, x, np.zeros(2))


class TestGraphDefiningConsistency:
    def test_graph_points_satisfy_defining(self, radon_fib):
        rng = np.random.default_rng(4)
        for _ in range(5):
            al = rng.uniform(0.1, 2 * math.pi - 0.1)
            s = rng.uniform(-1, 1)
            z = np.array([al, s])
            x = radon_fib.point_on(z)
            chart = radon_fib.graph_chart(z, x)
            xp = rng.uniform(-1.0, 1.0, size=radon_fib.n_prime)
            xd = chart.phi(z, xp)
            y = chart.assemble(xp, xd)
            assert radon_fib.on_fiber_residual(z, y) < 1e-8

    def test_spheres_defining_function(self):
        # level sets |x - theta| = s away from the center
        def b(x, th):
            return np.array([np.linalg.norm(np.asarray(x) - np.asarray(th))])

        fib = from_defining_function(b, n=2, m=2, k=1, x_box=[[-3, 3]] * 2,
                                     theta_box=[[1.5, 2.5]] * 2)
        z = np.array([2.0, 2.0, 1.0])
        nodes, w = induced_measure(fib, z)
        # circle radius 1 centered (2,2), clipped to the box: arc inside
        assert np.allclose(np.linalg.norm(nodes - np.array([2.0, 2.0]), axis=1),
                           1.0, atol=1e-8)
        assert w.sum() <= 2 * math.pi + 1e-6
