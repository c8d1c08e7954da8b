"""Charts, scalar fields, flows on bundles, and Hamiltonian mechanics.

States of a bundle are flat vectors ``(x, fiber)`` with a known base
dimension; the projection to the base is just a slice.  Flows are integrated
with an adaptive Runge-Kutta scheme, boundary exits are located by event
detection plus bisection on the boundary function, and all cotangent
machinery (Hamilton fields, Poisson brackets) works either from analytic
gradients or central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    NonFiniteError,
    TangentialExitError,
    TrappedError,
)

__all__ = [
    "IntegratorOptions",
    "ChartGeometry",
    "ScalarField",
    "Symbol",
    "BundlePoint",
    "FlowField",
    "Trajectory",
    "ExitTimes",
    "flow_integrate",
    "exit_time",
    "hamiltonian_vector_field",
    "geodesic_hamiltonian",
    "riemannian_cosphere_symbol",
    "poisson_bracket",
    "constant_direction_field",
    "fd_gradient",
]

#: relative cosine below which a boundary exit counts as tangential
TRANSVERSALITY_TOL = 1e-4

#: target |rho| after bisection polish of a boundary exit
BOUNDARY_TOL = 1e-10


@dataclass(frozen=True)
class IntegratorOptions:
    """Adaptive Runge-Kutta settings for flow integration."""

    rtol: float = 1e-9
    atol: float = 1e-9
    method: str = "RK45"
    max_step: float = np.inf

    def tighter(self, factor: float = 1e-3) -> "IntegratorOptions":
        # high-order scheme: cheaper than RK45 at tight tolerances
        return replace(self, rtol=max(self.rtol * factor, 1e-13),
                       atol=max(self.atol * factor, 1e-13), method="DOP853")


def fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray,
                step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


@dataclass
class ChartGeometry:
    """A single coordinate chart with optional boundary, metric and symbol.

    Parameters
    ----------
    dim_n:
        Dimension of the base manifold.
    box:
        ``(dim_n, 2)`` array of per-axis closed intervals.
    boundary_fn:
        Scalar map ``rho`` with the domain given by ``rho <= 0``.  ``None``
        for boundaryless charts.
    boundary_grad:
        Optional analytic gradient of ``rho``; central differences otherwise.
    metric:
        Optional map ``x -> (n, n)`` symmetric matrix.
    metric_signature:
        ``"riemannian"`` (positive definite) or ``"pseudo"``.
    """

    dim_n: int
    box: np.ndarray
    boundary_fn: Optional[Callable[[np.ndarray], float]] = None
    boundary_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metric: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metric_signature: str = "riemannian"

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(self.dim_n, 2)
        if np.any(self.box[:, 1] <= self.box[:, 0]):
            raise ValueError("chart box must have positive volume on every axis")

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))

    def contains(self, x: np.ndarray, pad: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.box[:, 0] - pad) and np.all(x <= self.box[:, 1] + pad))

    def rho(self, x: np.ndarray) -> float:
        if self.boundary_fn is None:
            raise ValueError("chart has no boundary function")
        return float(self.boundary_fn(np.asarray(x, dtype=float)))

    def rho_grad(self, x: np.ndarray) -> np.ndarray:
        if self.boundary_grad is not None:
            return np.asarray(self.boundary_grad(x), dtype=float)
        return fd_gradient(self.boundary_fn, x)

    def metric_at(self, x: np.ndarray) -> np.ndarray:
        if self.metric is None:
            return np.eye(self.dim_n)
        return np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float)

    def validate_metric(self, samples: np.ndarray, tol: float = 1e-10) -> None:
        """Check symmetry and definiteness/nondegeneracy on sample points."""
        for x in np.atleast_2d(samples):
            g = self.metric_at(x)
            if not np.allclose(g, g.T, atol=tol * max(1.0, np.abs(g).max())):
                raise ValueError(f"metric not symmetric at {x}")
            w = np.linalg.eigvalsh(g)
            if self.metric_signature == "riemannian":
                if w.min() <= 0:
                    raise ValueError(f"metric not positive definite at {x}")
            elif np.any(np.abs(w) < 1e-12):
                raise ValueError(f"metric degenerate at {x}")

    def validate_boundary(self, samples: np.ndarray, tol: float = 1e-8) -> None:
        """Check that grad(rho) does not vanish on boundary samples."""
        for x in np.atleast_2d(samples):
            if abs(self.rho(x)) < 1e-6 and np.linalg.norm(self.rho_grad(x)) < tol:
                raise ValueError(f"boundary gradient vanishes at {x}")

    def sample_interior(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Rejection-sample interior points of the chart."""
        out = []
        while len(out) < count:
            x = rng.uniform(self.box[:, 0], self.box[:, 1])
            if self.boundary_fn is None or self.rho(x) < 0:
                out.append(x)
        return np.array(out)


@dataclass
class ScalarField:
    """A scalar function on the chart, zero outside its support box.

    ``fun`` should accept arrays of shape ``(..., n)``.  ``line_crossings``,
    when present, reports the parameter values where the line ``p + t d``
    crosses a known interface of a piecewise-defined phantom; quadratures use
    these to split integration panels so kinks and jumps do not degrade the
    convergence order.
    """

    fun: Callable[[np.ndarray], np.ndarray]
    support_box: np.ndarray
    dim: int
    line_crossings: Optional[Callable[[np.ndarray, np.ndarray], Sequence[float]]] = None

    def __post_init__(self):
        self.support_box = np.asarray(self.support_box, dtype=float).reshape(self.dim, 2)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        vals = np.asarray(self.fun(pts), dtype=float)
        lo, hi = self.support_box[:, 0], self.support_box[:, 1]
        inside = np.all((pts >= lo) & (pts <= hi), axis=-1)
        return np.where(inside, vals, 0.0)

    @classmethod
    def from_grid(cls, axes: Sequence[np.ndarray], values: np.ndarray) -> "ScalarField":
        """Bilinear interpolation of a grid sampling, zero off the grid box."""
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(tuple(axes), values, method="linear",
                                         bounds_error=False, fill_value=0.0)
        box = np.array([[a[0], a[-1]] for a in axes])
        return cls(fun=lambda pts: interp(pts), support_box=box, dim=len(axes))


@dataclass
class Symbol:
    """A scalar function on the cotangent chart, with optional gradients."""

    fun: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    grad_xi: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-6
    scale: float = 1.0

    def value(self, x: np.ndarray, xi: np.ndarray) -> float:
        return float(self.fun(np.asarray(x, float), np.asarray(xi, float)))

    def dx(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self.grad_x is not None:
            return np.asarray(self.grad_x(x, xi), dtype=float)
        return fd_gradient(lambda y: self.fun(y, xi), np.asarray(x, float),
                           self.fd_step * self.scale)

    def dxi(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self.grad_xi is not None:
            return np.asarray(self.grad_xi(x, xi), dtype=float)
        return fd_gradient(lambda e: self.fun(x, e), np.asarray(xi, float),
                           self.fd_step * self.scale)

    def hess_xi(self, x: np.ndarray, xi: np.ndarray, step: float = 1e-5) -> np.ndarray:
        """Fiber Hessian d^2 p / d xi^2 by differences of the fiber gradient."""
        xi = np.asarray(xi, dtype=float)
        n = xi.size
        H = np.empty((n, n))
        for j in range(n):
            h = step * max(1.0, abs(xi[j]))
            ep = xi.copy()
            em = xi.copy()
            ep[j] += h
            em[j] -= h
            H[:, j] = (self.dxi(x, ep) - self.dxi(x, em)) / (2.0 * h)
        return 0.5 * (H + H.T)


def poisson_bracket(a: Symbol, b: Symbol) -> Symbol:
    """Poisson bracket {a, b} = da/dxi . db/dx - da/dx . db/dxi as a Symbol."""

    def bracket(x, xi):
        return float(np.dot(a.dxi(x, xi), b.dx(x, xi)) - np.dot(a.dx(x, xi), b.dxi(x, xi)))

    return Symbol(fun=bracket, fd_step=max(a.fd_step, b.fd_step),
                  scale=max(a.scale, b.scale))


@dataclass
class BundlePoint:
    """A point of the total space: base coordinates plus fiber coordinates."""

    base: np.ndarray
    fiber: np.ndarray

    def __post_init__(self):
        self.base = np.atleast_1d(np.asarray(self.base, dtype=float))
        self.fiber = np.atleast_1d(np.asarray(self.fiber, dtype=float)) \
            if np.size(self.fiber) else np.zeros(0)

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.base, self.fiber])

    @classmethod
    def from_state(cls, state: np.ndarray, base_dim: int) -> "BundlePoint":
        state = np.asarray(state, dtype=float)
        return cls(state[:base_dim], state[base_dim:])


@dataclass
class FlowField:
    """An autonomous vector field on bundle states ``(x, fiber)``."""

    fun: Callable[[np.ndarray], np.ndarray]
    base_dim: int
    state_dim: int
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(self.fun(np.asarray(state, dtype=float)), dtype=float)

    def base_velocity(self, state: np.ndarray) -> np.ndarray:
        return self(state)[: self.base_dim]

    def jacobian(self, state: np.ndarray, step: float = 1e-6) -> np.ndarray:
        if self.jac is not None:
            return np.asarray(self.jac(state), dtype=float)
        state = np.asarray(state, dtype=float)
        d = state.size
        J = np.empty((d, d))
        for j in range(d):
            h = step * max(1.0, abs(state[j]))
            sp = state.copy()
            sm = state.copy()
            sp[j] += h
            sm[j] -= h
            J[:, j] = (self(sp) - self(sm)) / (2.0 * h)
        return J


def constant_direction_field(n: int) -> FlowField:
    """Straight-line flow: state (x, v), xdot = v, vdot = 0."""

    def fun(state):
        d = np.zeros_like(state)
        d[:n] = state[n:]
        return d

    return FlowField(fun=fun, base_dim=n, state_dim=2 * n)


def hamiltonian_vector_field(p: Symbol, n: int) -> FlowField:
    """Hamilton field H_p = (dp/dxi, -dp/dx) on cotangent states (x, xi)."""

    def fun(state):
        x, xi = state[:n], state[n:]
        return np.concatenate([p.dxi(x, xi), -p.dx(x, xi)])

    return FlowField(fun=fun, base_dim=n, state_dim=2 * n)


def geodesic_hamiltonian(chart: ChartGeometry, fd_step: float = 1e-6) -> Symbol:
    """Kinetic-energy symbol p = 0.5 xi . g^{-1}(x) xi of the chart metric.

    Its Hamilton flow restricted to the unit cosphere {p = 1/2} is the
    unit-speed geodesic flow.  The base gradient differentiates the metric,
    not the assembled symbol: dp/dx_j = -0.5 xi.g^{-1}(dg/dx_j)g^{-1} xi.
    """

    def fun(x, xi):
        ginv = np.linalg.inv(chart.metric_at(x))
        return 0.5 * float(xi @ ginv @ xi)

    def grad_xi(x, xi):
        return np.linalg.inv(chart.metric_at(x)) @ xi

    def grad_x(x, xi):
        x = np.asarray(x, dtype=float)
        v = np.linalg.inv(chart.metric_at(x)) @ xi
        g = np.empty(x.size)
        for j in range(x.size):
            h = fd_step * max(1.0, abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            dg = (chart.metric_at(xp) - chart.metric_at(xm)) / (2.0 * h)
            g[j] = -0.5 * float(v @ dg @ v)
        return g

    return Symbol(fun=fun, grad_x=grad_x, grad_xi=grad_xi, fd_step=fd_step)


def riemannian_cosphere_symbol(chart: ChartGeometry) -> Symbol:
    """Symbol vanishing on the unit cosphere whose flow is unit speed.

    The characteristic set is {|xi|_g = 1}; the factor 1/2 pins the
    bicharacteristic parametrization to arc length so level-set transforms
    agree with the geodesic transform values.
    """
    kinetic = geodesic_hamiltonian(chart)

    def fun(x, xi):
        return kinetic.fun(x, xi) - 0.5

    return Symbol(fun=fun, grad_x=kinetic.grad_x, grad_xi=kinetic.grad_xi)


@dataclass
class Trajectory:
    """A maximally extended integral curve, with dense evaluation.

    ``times``/``states`` sample the orbit; ``tau_minus``/``tau_plus`` are the
    exit times (nonnegative).  Dense evaluation interpolates the integrator
    solution to its own tolerance.
    """

    times: np.ndarray
    states: np.ndarray
    tau_minus: float
    tau_plus: float
    base_dim: int
    trapped_minus: bool = False
    trapped_plus: bool = False
    _sol_plus: object = field(default=None, repr=False)
    _sol_minus: object = field(default=None, repr=False)
    _start: np.ndarray = field(default=None, repr=False)

    def state(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        out = np.empty((tt.size, self.states.shape[1]))
        pos = tt >= 0
        if np.any(pos):
            if self._sol_plus is not None:
                out[pos] = self._sol_plus(np.clip(tt[pos], 0.0, self.tau_plus)).T
            else:
                out[pos] = self._start
        if np.any(~pos):
            if self._sol_minus is not None:
                out[~pos] = self._sol_minus(np.clip(-tt[~pos], 0.0, self.tau_minus)).T
            else:
                out[~pos] = self._start
        return out[0] if scalar else out

    def base_curve(self, t):
        s = self.state(t)
        return s[..., : self.base_dim]

    @property
    def length_window(self):
        return (-self.tau_minus, self.tau_plus)


@dataclass
class ExitTimes:
    tau_minus: float
    tau_plus: float
    trapped_minus: bool
    trapped_plus: bool
    trajectory: Trajectory


def _default_horizon(field: FlowField, start: np.ndarray,
                     chart: Optional[ChartGeometry]) -> float:
    speed = np.linalg.norm(field.base_velocity(start))
    diam = chart.diameter if chart is not None else 10.0
    return 1e3 * diam / max(speed, 1e-12)


def _integrate_one_side(field, chart, start, t_end, options):
    """Integrate forward in s over [0, t_end] with boundary event detection."""

    def rhs(_, y):
        dy = field(y)
        if not np.all(np.isfinite(dy)):
            raise NonFiniteError("vector field evaluation is not finite")
        return dy

    events = None
    if chart is not None and chart.boundary_fn is not None:

        def boundary_event(_, y):
            return chart.rho(y[: field.base_dim])

        boundary_event.terminal = True
        boundary_event.direction = 1.0
        events = [boundary_event]

    sol = solve_ivp(rhs, (0.0, t_end), np.asarray(start, dtype=float),
                    method=options.method, rtol=options.rtol, atol=options.atol,
                    max_step=options.max_step, dense_output=True, events=events)
    if not sol.success and sol.status != 1:
        raise NonFiniteError(f"flow integration failed: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        raise NonFiniteError("flow blew up (non-finite state)")

    exited = sol.status == 1 and events is not None and len(sol.t_events[0]) > 0
    if exited:
        t_exit = float(sol.t_events[0][0])
        # polish the exit to |rho| < BOUNDARY_TOL using the dense output
        rho_of_t = lambda t: chart.rho(sol.sol(t)[: field.base_dim])
        t_lo = max(0.0, t_exit - 1e-6 * max(t_exit, 1.0))
        if rho_of_t(t_lo) < -BOUNDARY_TOL and abs(rho_of_t(t_exit)) > BOUNDARY_TOL:
            t_hi = min(sol.t[-1], t_exit + 1e-6 * max(t_exit, 1.0))
            if rho_of_t(t_hi) > 0:
                t_exit = brentq(rho_of_t, t_lo, t_hi, xtol=1e-14)
        return sol, float(t_exit), False
    return sol, float(sol.t[-1]), True


def flow_integrate(field: FlowField, start: BundlePoint, max_time: float = None,
                   chart: Optional[ChartGeometry] = None,
                   options: IntegratorOptions = IntegratorOptions(),
                   two_sided: bool = True,
                   check_transversal: bool = False) -> Trajectory:
    """Integrate the maximally extended integral curve through ``start``.

    The curve is truncated at the boundary exit (located by event detection
    and bisection of ``rho``) or at ``max_time``, whichever comes first; the
    latter sets the trapped flag for that side.
    """
    y0 = start.state if isinstance(start, BundlePoint) else np.asarray(start, dtype=float)
    if max_time is None:
        max_time = _default_horizon(field, y0, chart)

    on_boundary = (chart is not None and chart.boundary_fn is not None
                   and abs(chart.rho(y0[: field.base_dim])) < 1e-9)

    sol_p, tau_plus, trapped_plus = _integrate_one_side(field, chart, y0, max_time, options)

    sol_m, tau_minus, trapped_minus = None, 0.0, False
    if two_sided and not on_boundary:
        # starting on the boundary moving inward, the backward orbit exits
        # immediately (tau_minus = 0); otherwise integrate the reversed field
        neg = FlowField(fun=lambda s: -field(s), base_dim=field.base_dim,
                        state_dim=field.state_dim)
        sol_m, tau_minus, trapped_minus = _integrate_one_side(
            neg, chart, y0, max_time, options)

    if check_transversal and chart is not None and chart.boundary_fn is not None:
        for tau, sol, trapped, sgn in ((tau_plus, sol_p, trapped_plus, 1.0),
                                       (tau_minus, sol_m, trapped_minus, -1.0)):
            if trapped or sol is None or tau == 0.0:
                continue
            y_exit = sol.sol(tau)
            v = field.base_velocity(y_exit)
            grad = chart.rho_grad(y_exit[: field.base_dim])
            den = np.linalg.norm(grad) * np.linalg.norm(v)
            if den > 0:
                cosine = abs(np.dot(grad, v)) / den
                if cosine < TRANSVERSALITY_TOL:
                    raise TangentialExitError(
                        "orbit meets the boundary tangentially", t=sgn * tau, cosine=cosine)

    n_samp = 65
    ts = np.linspace(-tau_minus, tau_plus, n_samp)
    traj = Trajectory(times=ts, states=np.empty((n_samp, y0.size)),
                      tau_minus=tau_minus, tau_plus=tau_plus,
                      base_dim=field.base_dim,
                      trapped_minus=trapped_minus, trapped_plus=trapped_plus,
                      _sol_plus=sol_p.sol if sol_p is not None else None,
                      _sol_minus=sol_m.sol if sol_m is not None else None,
                      _start=y0)
    traj.states = traj.state(ts)
    return traj


def exit_time(field: FlowField, start: BundlePoint,
              chart: ChartGeometry, max_time: float = None,
              options: IntegratorOptions = IntegratorOptions()) -> ExitTimes:
    """Exit times (tau_minus, tau_plus) of the orbit through ``start``.

    Raises ``TangentialExitError`` when the exit fails the transversality
    test; trapping (horizon exceeded) is returned as a flag, not raised.
    """
    traj = flow_integrate(field, start, max_time=max_time, chart=chart,
                          options=options, check_transversal=True)
    return ExitTimes(tau_minus=traj.tau_minus, tau_plus=traj.tau_plus,
                     trapped_minus=traj.trapped_minus, trapped_plus=traj.trapped_plus,
                     trajectory=traj)
