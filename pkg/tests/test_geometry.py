import math

import numpy as np
import pytest

from dftomo import (
    BundlePoint,
    ChartGeometry,
    IntegratorOptions,
    Symbol,
    TangentialExitError,
    constant_direction_field,
    exit_time,
    flow_integrate,
    hamiltonian_vector_field,
    poisson_bracket,
)
from dftomo.geometry import fd_gradient


def minkowski_p():
    return Symbol(fun=lambda x, xi: -xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2,
                  grad_x=lambda x, xi: np.zeros(3),
                  grad_xi=lambda x, xi: np.array([-2 * xi[0], 2 * xi[1], 2 * xi[2]]))


class TestFlows:
    def test_constant_field_line(self):
        fld = constant_direction_field(2)
        traj = flow_integrate(fld, BundlePoint([0.0, 0.0], [1.0, 0.0]), max_time=3.0)
        for t in (0.5, 1.7, 3.0):
            assert np.allclose(traj.base_curve(t), [t, 0.0], atol=1e-10)

    def test_free_hamiltonian(self):
        p = Symbol(fun=lambda x, xi: 0.5 * float(xi @ xi),
                   grad_x=lambda x, xi: np.zeros(2), grad_xi=lambda x, xi: xi)
        fld = hamiltonian_vector_field(p, 2)
        x0, xi0 = np.array([0.3, -0.2]), np.array([0.5, 1.1])
        traj = flow_integrate(fld, BundlePoint(x0, xi0), max_time=2.0)
        st = traj.state(2.0)
        assert np.allclose(st[:2], x0 + 2.0 * xi0, atol=1e-8)
        assert np.allclose(st[2:], xi0, atol=1e-10)

    def test_great_circle_period(self, sphere_family):
        traj = sphere_family.trajectory(
            np.zeros(2), options=IntegratorOptions(rtol=1e-11, atol=1e-11),
            use_cache=False)
        err = np.linalg.norm(traj.base_curve(2 * math.pi) - np.array([1.0, 0.0]))
        assert err < 1e-7

    def test_flow_semigroup(self, sphere_family):
        traj = sphere_family.trajectory(np.array([0.05, 0.1]))
        z_t = traj.state(0.7)
        two_step = flow_integrate(sphere_family.field,
                                  BundlePoint.from_state(z_t, 2), max_time=0.9)
        assert np.allclose(two_step.state(0.9), traj.state(1.6), atol=1e-7)

    def test_hamiltonian_conservation(self, sphere_family):
        traj = sphere_family.trajectory(np.array([0.1, -0.2]))

        def p(state):
            x, xi = state[:2], state[2:]
            return (1 + float(x @ x)) ** 2 * float(xi @ xi) / 8.0

        vals = [p(traj.state(t)) for t in np.linspace(0, 4.0, 9)]
        assert np.ptp(vals) < 1e-8

    def test_time_reversal(self, sphere_family):
        traj = sphere_family.trajectory(np.array([0.0, 0.2]))
        y = traj.state(1.3)
        neg = lambda s: -sphere_family.field(s)
        from dftomo.geometry import FlowField

        back = flow_integrate(FlowField(fun=neg, base_dim=2, state_dim=4),
                              BundlePoint.from_state(y, 2), max_time=1.3)
        assert np.allclose(back.state(1.3), traj.state(0.0), atol=1e-7)


class TestExitTimes:
    @pytest.fixture()
    def disk(self):
        return ChartGeometry(dim_n=2, box=[[-2, 2]] * 2,
                             boundary_fn=lambda x: float(x @ x) - 1.0,
                             boundary_grad=lambda x: 2 * x)

    def test_diameter(self, disk):
        fld = constant_direction_field(2)
        et = exit_time(fld, BundlePoint([-1.0, 0.0], [1.0, 0.0]), disk)
        assert abs(et.tau_plus - 2.0) < 1e-9
        assert et.tau_minus == 0.0

    def test_chord(self, disk):
        h = 0.6
        fld = constant_direction_field(2)
        et = exit_time(fld, BundlePoint([0.0, h], [1.0, 0.0]), disk)
        assert abs(et.tau_plus + et.tau_minus - 2 * math.sqrt(1 - h * h)) < 1e-9

    def test_boundary_polish(self, disk):
        fld = constant_direction_field(2)
        et = exit_time(fld, BundlePoint([0.0, 0.37], [1.0, 0.0]), disk)
        x_exit = et.trajectory.base_curve(et.tau_plus)
        assert abs(float(x_exit @ x_exit) - 1.0) < 1e-10

    def test_trapped_circle_orbit(self):
        # rotation field orbit strictly inside an annulus never exits
        annulus = ChartGeometry(
            dim_n=2, box=[[-2, 2]] * 2,
            boundary_fn=lambda x: -(float(x @ x) - 0.25) * (1.0 - float(x @ x)))
        from dftomo.geometry import FlowField

        rot = FlowField(fun=lambda s: np.array([-s[1], s[0]]), base_dim=2,
                        state_dim=2)
        et = exit_time(rot, BundlePoint([0.7, 0.0], []), annulus, max_time=30.0)
        assert et.trapped_plus and et.trapped_minus

    def test_tangential_exit_raises(self, disk):
        fld = constant_direction_field(2)
        with pytest.raises(TangentialExitError):
            exit_time(fld, BundlePoint([0.0, 1.0 - 1e-13], [1.0, 0.0]), disk)

    def test_exit_time_upper_semicontinuity(self):
        # annulus chords: perturbations of a grazing line never exceed its time
        annulus = ChartGeometry(
            dim_n=2, box=[[-2, 2]] * 2,
            boundary_fn=lambda x: -(float(x @ x) - 0.25) * (1.0 - float(x @ x)))
        fld = constant_direction_field(2)
        rng = np.random.default_rng(0)
        start = BundlePoint([-math.sqrt(1 - 0.5 ** 2) + 1e-9, 0.5], [1.0, 0.0])
        tau0 = exit_time(fld, start, annulus).tau_plus
        worst = -np.inf
        for _ in range(24):
            d = rng.normal(scale=1e-4, size=2)
            z = BundlePoint(start.base + d, [1.0, 0.0])
            try:
                worst = max(worst, exit_time(fld, z, annulus).tau_plus)
            except TangentialExitError:
                continue
        assert worst <= tau0 + 1e-2


class TestSymbols:
    def test_hamilton_field_constant_matrix(self):
        G = np.array([[2.0, 0.3], [0.3, 1.0]])
        p = Symbol(fun=lambda x, xi: float(xi @ G @ xi))
        fld = hamiltonian_vector_field(p, 2)
        xi = np.array([0.4, -1.2])
        d = fld(np.concatenate([[0.1, 0.2], xi]))
        assert np.allclose(d[:2], 2 * G @ xi, atol=1e-8)
        assert np.allclose(d[2:], 0.0, atol=1e-8)

    def test_conformal_symbol_matches_fd(self):
        u = lambda x: 0.3 * x[0] - 0.1 * x[1] ** 2

        def fun(x, xi):
            return math.exp(-2 * u(x)) * float(xi @ xi)

        p = Symbol(fun=fun)
        fld = hamiltonian_vector_field(p, 2)
        state = np.array([0.2, -0.5, 1.0, 0.7])
        d = fld(state)
        gx = fd_gradient(lambda y: fun(y, state[2:]), state[:2])
        gxi = fd_gradient(lambda e: fun(state[:2], e), state[2:])
        assert np.allclose(d, np.concatenate([gxi, -gx]), atol=1e-6)

    def test_minkowski_field(self):
        fld = hamiltonian_vector_field(minkowski_p(), 3)
        d = fld(np.array([0, 0, 0, 1.0, 0.5, -0.25]))
        assert np.allclose(d, [-2.0, 1.0, -0.5, 0, 0, 0], atol=1e-12)

    def test_poisson_oracle(self):
        p = Symbol(fun=lambda x, xi: float(xi @ xi),
                   grad_x=lambda x, xi: np.zeros(2), grad_xi=lambda x, xi: 2 * xi)
        F = Symbol(fun=lambda x, xi: float(x @ x),
                   grad_x=lambda x, xi: 2 * x, grad_xi=lambda x, xi: np.zeros(2))
        pF = poisson_bracket(p, F)
        x, xi = np.array([0.3, 0.7]), np.array([-0.2, 0.5])
        assert abs(pF.value(x, xi) - 4 * float(x @ xi)) < 1e-10
        ppF = poisson_bracket(p, pF)
        assert abs(ppF.value(x, xi) - 8 * float(xi @ xi)) < 1e-7

    def test_poisson_antisymmetry(self):
        p = Symbol(fun=lambda x, xi: float(xi @ xi) + x[0] * xi[1])
        pp = poisson_bracket(p, p)
        rng = np.random.default_rng(1)
        for _ in range(5):
            x, xi = rng.normal(size=2), rng.normal(size=2)
            assert abs(pp.value(x, xi)) < 1e-8

    def test_minkowski_linear_level_sets(self):
        p = minkowski_p()
        F = Symbol(fun=lambda x, xi: x[1],
                   grad_x=lambda x, xi: np.array([0.0, 1.0, 0.0]),
                   grad_xi=lambda x, xi: np.zeros(3))
        ppF = poisson_bracket(p, poisson_bracket(p, F))
        assert abs(ppF.value(np.zeros(3), np.array([1.0, 1.0, 0.0]))) < 1e-7
