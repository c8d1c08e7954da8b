"""Parametrized families of flow curves.

A :class:`RayFamily` bundles a chart, a vector field on the total space, and
an explicit parametrization of the admissible-curve manifold.  Concrete
constructors cover the standard cases: boundary-inward geodesic families on
convex planar domains, restricted line families in R^3, a great-circle
family on the round sphere in a stereographic chart, and null ray families
of a Hamiltonian symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import (
    BundlePoint,
    ChartGeometry,
    FlowField,
    IntegratorOptions,
    Symbol,
    Trajectory,
    constant_direction_field,
    flow_integrate,
    geodesic_hamiltonian,
    hamiltonian_vector_field,
)

__all__ = [
    "RayFamily",
    "disk_geodesic_family",
    "lines_perp_axis_family",
    "sphere_equator_family",
    "null_ray_family",
    "minkowski_symbol",
]


@dataclass
class RayFamily:
    """A family of curves x_z(t) generated by a flow, indexed by parameters.

    ``embed`` maps parameter vectors in ``param_box`` to bundle states; the
    field is never tangent to the embedded parameter manifold for the
    families constructed here.
    """

    chart: ChartGeometry
    field: FlowField
    param_dim: int
    param_box: np.ndarray
    embed: Callable[[np.ndarray], np.ndarray]
    invert: Optional[Callable[[np.ndarray], np.ndarray]] = None
    options: IntegratorOptions = IntegratorOptions()
    max_time: Optional[float] = None
    #: which conjugacy criterion applies: "tangential" (variations fixing one
    #: point in the normal direction fail to span) or "pointwise" (a
    #: variation vanishing at both points; homogeneous characteristic
    #: families, where the scaling direction makes the tangential test vacuous)
    conjugacy: str = "tangential"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.param_box = np.asarray(self.param_box, dtype=float).reshape(self.param_dim, 2)

    def state_of(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(self.embed(np.asarray(theta, dtype=float)), dtype=float)

    def trajectory(self, theta: np.ndarray, options: IntegratorOptions = None,
                   use_cache: bool = True, max_time: float = None) -> Trajectory:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        cacheable = use_cache and options is None and max_time is None
        if cacheable and key in self._cache:
            return self._cache[key]
        opts = options or self.options
        traj = flow_integrate(self.field, BundlePoint.from_state(
            self.state_of(theta), self.field.base_dim),
            max_time=max_time if max_time is not None else self.max_time,
            chart=self.chart, options=opts)
        if cacheable:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = traj
        return traj

    def base_point(self, theta: np.ndarray, t: float) -> np.ndarray:
        return self.trajectory(theta).base_curve(float(t))

    def sample_params(self, rng: np.random.Generator, count: int,
                      margin: float = 0.05) -> np.ndarray:
        lo = self.param_box[:, 0]
        hi = self.param_box[:, 1]
        pad = margin * (hi - lo)
        return rng.uniform(lo + pad, hi - pad, size=(count, self.param_dim))


def _unit_covector(chart: ChartGeometry, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Covector g(x) d normalized so the Hamiltonian speed |d|_g equals one."""
    g = chart.metric_at(x)
    v = np.asarray(direction, dtype=float)
    speed = math.sqrt(float(v @ g @ v))
    return (g @ v) / speed


def _flat_cotangent_field(n: int) -> FlowField:
    """Hamilton field of |xi|^2/2: straight lines at speed |xi|."""

    def fun(state):
        d = np.zeros_like(state)
        d[:n] = state[n:]
        return d

    def jac(state):
        J = np.zeros((2 * n, 2 * n))
        J[:n, n:] = np.eye(n)
        return J

    return FlowField(fun=fun, base_dim=n, state_dim=2 * n, jac=jac)


def disk_geodesic_family(chart: ChartGeometry, radius: float,
                         options: IntegratorOptions = IntegratorOptions()) -> RayFamily:
    """Inward-pointing unit-cosphere family over a circular boundary.

    Parameters are (beta, psi): beta the boundary angle, psi in
    (-pi/2, pi/2) the entry direction measured from the inward normal.
    """
    if chart.metric is None:
        fld = _flat_cotangent_field(chart.dim_n)
    else:
        symbol = geodesic_hamiltonian(chart)
        fld = hamiltonian_vector_field(symbol, chart.dim_n)

    def embed(theta):
        beta, psi = theta
        x = radius * np.array([math.cos(beta), math.sin(beta)])
        inward = -np.array([math.cos(beta), math.sin(beta)])
        c, s = math.cos(psi), math.sin(psi)
        d = np.array([c * inward[0] - s * inward[1], s * inward[0] + c * inward[1]])
        return np.concatenate([x, _unit_covector(chart, x, d)])

    def invert(state):
        x, xi = state[:2], state[2:]
        beta = math.atan2(x[1], x[0])
        ginv = np.linalg.inv(chart.metric_at(x))
        d = ginv @ xi
        inward = -np.array([math.cos(beta), math.sin(beta)])
        psi = math.atan2(inward[0] * d[1] - inward[1] * d[0], float(inward @ d))
        return np.array([beta, psi])

    return RayFamily(chart=chart, field=fld, param_dim=2,
                     param_box=np.array([[-math.pi, math.pi],
                                         [-math.pi / 2 + 1e-3, math.pi / 2 - 1e-3]]),
                     embed=embed, invert=invert, options=options)


def lines_perp_axis_family(chart: ChartGeometry, radius: float,
                           options: IntegratorOptions = IntegratorOptions()) -> RayFamily:
    """Lines in R^3 with direction orthogonal to e3, meeting the ball |x| < R.

    Three parameters (phi, a, b): direction (cos phi, sin phi, 0), offset a
    along the horizontal perpendicular and height b.  A restricted family:
    dim G = 3 < dim Xi - 1.
    """
    fld = constant_direction_field(3)

    def embed(theta):
        phi, a, b = theta
        d = np.array([math.cos(phi), math.sin(phi), 0.0])
        w = np.array([-math.sin(phi), math.cos(phi), 0.0])
        p = a * w + b * np.array([0.0, 0.0, 1.0])
        h2 = radius ** 2 - a ** 2 - b ** 2
        if h2 <= 0:
            raise ValueError("line misses the ball")
        x0 = p - math.sqrt(h2) * d
        return np.concatenate([x0, d])

    rmax = 0.8 * radius
    return RayFamily(chart=chart, field=fld, param_dim=3,
                     param_box=np.array([[-math.pi, math.pi], [-rmax, rmax], [-rmax, rmax]]),
                     embed=embed, options=options)


def sphere_chart(box_half: float = 5.0) -> ChartGeometry:
    """Stereographic chart of the round unit sphere (no boundary)."""

    def metric(x):
        c = 4.0 / (1.0 + float(x @ x)) ** 2
        return c * np.eye(2)

    return ChartGeometry(dim_n=2, box=np.array([[-box_half, box_half]] * 2),
                         metric=metric)


def _sphere_field() -> FlowField:
    """Geodesic Hamilton field of the stereographic round-sphere metric.

    p = (1+|x|^2)^2 |xi|^2 / 8; closed-form derivatives and Jacobian.
    """

    def fun(state):
        x, xi = state[:2], state[2:]
        A = 1.0 + float(x @ x)
        return np.concatenate([0.25 * A * A * xi, -0.5 * A * float(xi @ xi) * x])

    def jac(state):
        x, xi = state[:2], state[2:]
        A = 1.0 + float(x @ x)
        s2 = float(xi @ xi)
        J = np.zeros((4, 4))
        J[:2, :2] = A * np.outer(xi, x)
        J[:2, 2:] = 0.25 * A * A * np.eye(2)
        J[2:, :2] = -0.5 * s2 * (A * np.eye(2) + 2.0 * np.outer(x, x))
        J[2:, 2:] = -A * np.outer(x, xi)
        return J

    return FlowField(fun=fun, base_dim=2, state_dim=4, jac=jac)


def sphere_equator_family(chart: ChartGeometry = None,
                          options: IntegratorOptions = IntegratorOptions()) -> RayFamily:
    """Great circles near the equator of the round sphere.

    Parameters (a, b): the base point slides along the chart's first axis
    through (1, 0) (a meridian, transversal to the equator flow) and b
    rotates the launch direction away from the equatorial one.  At
    (a, b) = (0, 0) the orbit is the equator, the unit circle of the
    stereographic chart traversed at unit speed with period 2 pi.
    """
    chart = chart or sphere_chart()
    fld = _sphere_field()

    def embed(theta):
        a, b = theta
        x = np.array([1.0 + a, 0.0])
        c, s = math.cos(b), math.sin(b)
        d = np.array([-s, c])  # b = 0: equatorial direction e2 at (1, 0)
        return np.concatenate([x, _unit_covector(chart, x, d)])

    # boundaryless chart: cap the flow window at a few revolutions
    return RayFamily(chart=chart, field=fld, param_dim=2,
                     param_box=np.array([[-0.5, 0.5], [-0.5, 0.5]]),
                     embed=embed, options=options, max_time=4.5 * math.pi)


def minkowski_symbol() -> Symbol:
    """Wave symbol p = -xi0^2 + |xi'|^2 on R^{1+2}, signature (-, +, +)."""

    def fun(x, xi):
        return -xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2

    def grad_x(x, xi):
        return np.zeros(3)

    def grad_xi(x, xi):
        return np.array([-2.0 * xi[0], 2.0 * xi[1], 2.0 * xi[2]])

    return Symbol(fun=fun, grad_x=grad_x, grad_xi=grad_xi)


def minkowski_chart(radius: float, t_half: float = 40.0) -> ChartGeometry:
    """Cylinder domain {|x_spatial| <= R} in R^{1+2} with spatial boundary."""

    def rho(x):
        return x[1] ** 2 + x[2] ** 2 - radius ** 2

    def rho_grad(x):
        return np.array([0.0, 2.0 * x[1], 2.0 * x[2]])

    return ChartGeometry(dim_n=3,
                         box=np.array([[-t_half, t_half], [-radius, radius],
                                       [-radius, radius]]),
                         boundary_fn=rho, boundary_grad=rho_grad)


def null_ray_family(chart: ChartGeometry, radius: float, symbol: Symbol = None,
                    options: IntegratorOptions = IntegratorOptions()) -> RayFamily:
    """Null bicharacteristics of the Minkowski symbol from the spatial boundary.

    Parameters (t0, alpha, psi, c): entry event (t0, R cos alpha, R sin alpha),
    spatial covector direction psi (restricted to inward-pointing), log-scale
    c for the fiber scaling direction.  dim G = dim Xi - 1.  ``symbol``
    overrides the built-in closed-form Minkowski field.
    """
    def fun(state):
        xi = state[3:]
        d = np.zeros(6)
        d[0] = -2.0 * xi[0]
        d[1] = 2.0 * xi[1]
        d[2] = 2.0 * xi[2]
        return d

    def jac(state):
        J = np.zeros((6, 6))
        J[0, 3] = -2.0
        J[1, 4] = 2.0
        J[2, 5] = 2.0
        return J

    fld = FlowField(fun=fun, base_dim=3, state_dim=6, jac=jac) \
        if symbol is None else hamiltonian_vector_field(symbol, chart.dim_n)

    # psi is measured from the inward spatial normal and rotated with alpha,
    # so the parameter window below always points inward
    def embed_inward(theta):
        t0, alpha, psi, c = theta
        x = np.array([t0, radius * math.cos(alpha), radius * math.sin(alpha)])
        ang = alpha + math.pi + psi
        xi = math.exp(c) * np.array([-1.0, math.cos(ang), math.sin(ang)])
        return np.concatenate([x, xi])

    return RayFamily(chart=chart, field=fld, param_dim=4,
                     param_box=np.array([[-10.0, 10.0], [-math.pi, math.pi],
                                         [-1.2, 1.2], [-0.5, 0.5]]),
                     embed=embed_inward, options=options, conjugacy="pointwise")
