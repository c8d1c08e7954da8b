"""Incidence manifolds, conormal frames, and induced fiber measures.

A fibration couples the parameter manifold of curves or level sets with the
base manifold through the incidence set Z.  Two representations are
supported and interconverted: a defining-function form ``{b(x, theta) = s}``
(codimension-k level sets) and a flow form ``{(z, x_z(t))}`` (ray families).
Graph charts ``x'' = phi(z, x')`` are built on demand from either form, and
every derived object (conormal frames, the A and B maps, induced measures)
goes through these charts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import roots_legendre

from .errors import (
    ChartFailureError,
    DegenerateFrameError,
    EmptyLevelSetError,
    InsufficientVariationsError,
    NewtonDivergedError,
    OffManifoldError,
    RankDeficientError,
    SelfIntersectionError,
    SingularPointError,
    TangentialExitError,
    TangentialIntersectionError,
    TrappedError,
)
from .geometry import BundlePoint, IntegratorOptions, fd_gradient
from .rays import RayFamily

__all__ = [
    "Fibration",
    "GraphChart",
    "DefiningChart",
    "ConormalFrame",
    "CanonicalPoint",
    "SubmersionReport",
    "from_defining_function",
    "from_ray_family",
    "submersion_check",
    "conormal_fiber",
    "induced_measure",
    "canonical_point",
    "random_canonical_points",
    "gauss_panel_rule",
]

RANK_RATIO_TOL = 1e-8
ON_Z_TOL = 1e-8


def gauss_panel_rule(a: float, b: float, spacing: float,
                     panel_order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [a, b] with node spacing
    at most ``spacing``."""
    if b <= a:
        return np.zeros(0), np.zeros(0)
    xg, wg = roots_legendre(panel_order)
    n_panels = max(1, int(math.ceil((b - a) / (spacing * panel_order))))
    edges = np.linspace(a, b, n_panels + 1)
    h = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + h[:, None] * xg[None, :]).ravel()
    weights = (h[:, None] * wg[None, :]).ravel()
    return nodes, weights


def _newton_solve(fun, jac, x0, tol=1e-12, max_iter=50):
    """Damped Newton for square or least-squares systems."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        r = np.atleast_1d(fun(x))
        if np.linalg.norm(r) < tol:
            return x
        J = np.atleast_2d(jac(x))
        try:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergedError(f"linear solve failed: {exc}") from exc
        lam = 1.0
        norm0 = np.linalg.norm(r)
        for _ in range(30):
            xn = x + lam * step
            if np.linalg.norm(np.atleast_1d(fun(xn))) <= (1 - 0.25 * lam) * norm0 + tol:
                break
            lam *= 0.5
        x = x + lam * step
    if np.linalg.norm(np.atleast_1d(fun(x))) < 100 * tol:
        return x
    raise NewtonDivergedError("Newton iteration did not converge")


@dataclass
class GraphChart:
    """Local graph coordinates x'' = phi(z, x') of the incidence set."""

    free_idx: np.ndarray
    dep_idx: np.ndarray
    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_z: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_xprime: Callable[[np.ndarray, np.ndarray], np.ndarray]
    deriv_accuracy: float = 1e-10

    def assemble(self, xprime: np.ndarray, xdep: np.ndarray) -> np.ndarray:
        x = np.empty(self.free_idx.size + self.dep_idx.size)
        x[self.free_idx] = xprime
        x[self.dep_idx] = xdep
        return x

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return x[self.free_idx], x[self.dep_idx]


@dataclass
class DefiningChart:
    """Local defining coordinates z'' = b(x, z') of the incidence set.

    For level-set fibrations z = (theta, s) and b is the defining function
    itself.
    """

    m: int
    k: int
    b: Callable[[np.ndarray, np.ndarray], np.ndarray]
    b_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    b_zprime: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return z[: self.m], z[self.m:]


@dataclass
class ConormalFrame:
    """Bases of T_x G_z and N*_x G_z plus the A map at a point of Z.

    ``a_matrix`` = -phi_z^T maps the dep-block eta'' to zeta; the conormal
    basis columns are (-phi_x'^T e_j, e_j) in split order.  The orientation
    of the pairing is fixed so that the phase pipeline's gradient identity
    d_x psi = eta holds with a plus sign.
    """

    tangent_basis: np.ndarray
    conormal_basis: np.ndarray
    a_matrix: np.ndarray
    chart: GraphChart

    def eta_dd(self, eta: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        eta_dd = eta[self.chart.dep_idx]
        recon = self.conormal_basis @ eta_dd
        if np.linalg.norm(recon - eta) > tol * max(np.linalg.norm(eta), 1e-30):
            raise OffManifoldError("covector is not conormal to the fiber")
        return eta_dd

    def zeta_of(self, eta: np.ndarray) -> np.ndarray:
        return self.a_matrix @ self.eta_dd(eta)


@dataclass
class CanonicalPoint:
    """A point (z, zeta, x, eta) of the canonical relation."""

    z: np.ndarray
    zeta: np.ndarray
    x: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)


@dataclass
class SubmersionReport:
    entries: list
    rank_ratio_tol: float

    @property
    def passed(self) -> bool:
        return all(e["ok"] for e in self.entries)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e["ok"]]


@dataclass
class Fibration:
    """A validated double fibration with graph/defining charts on demand."""

    N: int
    n: int
    n_prime: int
    n_dprime: int
    kappa: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kind: str
    x_box: np.ndarray
    graph_chart: Callable[[np.ndarray, np.ndarray], GraphChart] = None
    defining_chart: Optional[DefiningChart] = None
    point_on: Callable[[np.ndarray], np.ndarray] = None
    fiber_quadrature: Callable[[np.ndarray, int], tuple] = None
    on_fiber_residual: Callable[[np.ndarray, np.ndarray], float] = None
    rays: Optional[RayFamily] = None
    b_fun: Optional[Callable] = None
    b_x_fun: Optional[Callable] = None
    b_theta_fun: Optional[Callable] = None
    theta_box: Optional[np.ndarray] = None
    quad_mode: str = "auto"
    star_center: Optional[np.ndarray] = None

    def weight(self, z: np.ndarray, xs: np.ndarray) -> np.ndarray:
        if self.kappa is None:
            return np.ones(np.shape(xs)[:-1] or ())
        return np.asarray(self.kappa(z, xs), dtype=float)


# ---------------------------------------------------------------------------
# defining-function fibrations


def _best_dep_axes(b_x_val: np.ndarray, k: int) -> tuple:
    """Dependent-axis block maximizing the smallest singular value."""
    n = b_x_val.shape[1]
    best, best_sigma = None, -1.0
    for dep in itertools.combinations(range(n), k):
        sub = b_x_val[:, list(dep)]
        sigma = np.linalg.svd(sub, compute_uv=False)[-1]
        if sigma > best_sigma:
            best, best_sigma = dep, sigma
    if best_sigma <= 0:
        raise RankDeficientError("defining Jacobian b_x is rank deficient")
    return best, best_sigma


def _fd_jacobian(fun, x, step=1e-6):
    # preserves complex arguments (real finite-difference steps)
    x = np.atleast_1d(np.asarray(x))
    if not np.iscomplexobj(x):
        x = x.astype(float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size), dtype=np.result_type(f0, x))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2.0 * h)
    return J


def from_defining_function(b: Callable, *, n: int, m: int, k: int,
                           x_box: np.ndarray,
                           theta_box: Optional[np.ndarray] = None,
                           kappa: Optional[Callable] = None,
                           b_x: Optional[Callable] = None,
                           b_theta: Optional[Callable] = None,
                           rank_samples: int = 32,
                           rng: Optional[np.random.Generator] = None,
                           quad_mode: str = "auto",
                           star_center: Optional[np.ndarray] = None) -> Fibration:
    """Build the level-set fibration G_{theta,s} = {x : b(x, theta) = s}.

    ``b`` maps (x, theta) to R^k.  The Jacobian b_x must be surjective on the
    sampled domain (SVD rank test); analytic ``b_x``/``b_theta`` are used
    when supplied, central differences otherwise.
    """
    x_box = np.asarray(x_box, dtype=float).reshape(n, 2)
    if not (1 <= k <= n - 1):
        raise ValueError("codimension must satisfy 1 <= k <= n-1")
    if m + k < n:
        raise ValueError("parameter dimension m + k must be at least n")

    bx = b_x if b_x is not None else (
        lambda x, th: _fd_jacobian(lambda y: b(y, th), x))
    bth = b_theta if b_theta is not None else (
        lambda x, th: _fd_jacobian(lambda t: b(x, t), th))

    if theta_box is not None:
        theta_box = np.asarray(theta_box, dtype=float).reshape(m, 2)
        rng = rng or np.random.default_rng(0)
        bad = []
        for _ in range(rank_samples):
            x = rng.uniform(x_box[:, 0], x_box[:, 1])
            th = rng.uniform(theta_box[:, 0], theta_box[:, 1])
            sig = np.linalg.svd(np.atleast_2d(bx(x, th)), compute_uv=False)
            ratio = sig[-1] / sig[0] if sig[0] > 0 else 0.0
            if ratio <= RANK_RATIO_TOL:
                bad.append((x, th))
        if bad:
            raise RankDeficientError(
                f"b_x rank deficient at {len(bad)} sample(s)", samples=bad)

    def point_on(z, seeds: int = 5):
        th, s = z[:m], z[m:]
        rng_loc = np.random.default_rng(1234)
        starts = [0.5 * (x_box[:, 0] + x_box[:, 1])]
        starts += [rng_loc.uniform(x_box[:, 0], x_box[:, 1]) for _ in range(seeds - 1)]
        for x0 in starts:
            try:
                x = _newton_solve(lambda x: np.atleast_1d(b(x, th)) - s,
                                  lambda x: np.atleast_2d(bx(x, th)), x0)
            except NewtonDivergedError:
                continue
            if np.all(x >= x_box[:, 0] - 1e-9) and np.all(x <= x_box[:, 1] + 1e-9):
                return x
        raise EmptyLevelSetError("level set not found inside the domain box")

    def graph_chart(z, x):
        th, s = z[:m], z[m:]
        x = np.asarray(x, dtype=float)
        bx_val = np.atleast_2d(bx(x, th))
        dep, _ = _best_dep_axes(bx_val, k)
        dep_idx = np.array(dep, dtype=int)
        free_idx = np.array([i for i in range(n) if i not in dep], dtype=int)
        x_seed = x.copy()

        def solve_dep(zz, xprime):
            tth, ss = zz[:m], zz[m:]
            xd0 = x_seed[dep_idx]

            def fun(xd):
                xx = np.empty(n, dtype=np.result_type(xd, xprime, 1.0))
                xx[free_idx] = xprime
                xx[dep_idx] = xd
                return np.atleast_1d(b(xx, tth)) - ss

            def jac(xd):
                xx = np.empty(n)
                xx[free_idx] = np.real(xprime)
                xx[dep_idx] = np.real(xd)
                return np.atleast_2d(bx(xx, tth))[:, dep_idx]

            return _newton_solve(fun, jac, xd0)

        def phi(zz, xprime):
            return solve_dep(np.asarray(zz, dtype=float), np.asarray(xprime, dtype=float))

        def phi_z(zz, xprime):
            zz = np.asarray(zz, dtype=float)
            xprime = np.asarray(xprime, dtype=float)
            xd = solve_dep(zz, xprime)
            xx = np.empty(n)
            xx[free_idx] = xprime
            xx[dep_idx] = xd
            tth = zz[:m]
            Bd = np.atleast_2d(bx(xx, tth))[:, dep_idx]
            Bth = np.atleast_2d(bth(xx, tth))
            Bd_inv = np.linalg.inv(Bd)
            return np.hstack([-Bd_inv @ Bth, Bd_inv])

        def phi_xprime(zz, xprime):
            zz = np.asarray(zz, dtype=float)
            xprime = np.asarray(xprime, dtype=float)
            xd = solve_dep(zz, xprime)
            xx = np.empty(n)
            xx[free_idx] = xprime
            xx[dep_idx] = xd
            tth = zz[:m]
            bxv = np.atleast_2d(bx(xx, tth))
            return -np.linalg.inv(bxv[:, dep_idx]) @ bxv[:, free_idx]

        acc = 1e-10 if b_x is not None else 1e-8
        return GraphChart(free_idx=free_idx, dep_idx=dep_idx, phi=phi,
                          phi_z=phi_z, phi_xprime=phi_xprime, deriv_accuracy=acc)

    defining = DefiningChart(
        m=m, k=k, b=lambda x, th: np.atleast_1d(b(x, th)),
        b_x=lambda x, th: np.atleast_2d(bx(x, th)),
        b_zprime=lambda x, th: np.atleast_2d(bth(x, th)))

    def residual(z, x):
        return float(np.linalg.norm(np.atleast_1d(b(x, z[:m])) - z[m:]))

    fib = Fibration(N=m + k, n=n, n_prime=n - k, n_dprime=k,
                    kappa=kappa, kind="defining", x_box=x_box,
                    graph_chart=graph_chart, defining_chart=defining,
                    point_on=point_on, on_fiber_residual=residual,
                    b_fun=b, b_x_fun=bx, b_theta_fun=bth, theta_box=theta_box,
                    quad_mode=quad_mode, star_center=star_center)
    fib.fiber_quadrature = lambda z, order=64: _defining_quadrature(fib, z, order)
    return fib


def _trace_level_curve(fib: Fibration, z: np.ndarray, order: int):
    """Arc-length trace of a codim-1 level curve in the plane.

    Integrates the unit tangent rot90(grad b)/|grad b| from a seed until the
    box is left (both directions) or the curve closes; quadrature nodes carry
    the coarea weight 1/|grad b|.
    """
    n = fib.n
    m = fib.defining_chart.m
    th, s = z[:m], z[m:]
    x0 = fib.point_on(z)
    box = fib.x_box
    half = 0.5 * (box[:, 1] - box[:, 0])
    center = 0.5 * (box[:, 1] + box[:, 0])
    lmax = 8.0 * float(np.sum(2 * half))

    def tangent(x):
        g = np.atleast_2d(fib.b_x_fun(x, th))[0]
        ng = np.linalg.norm(g)
        if ng < 1e-13:
            raise DegenerateFrameError("grad b vanished while tracing the fiber")
        return np.array([g[1], -g[0]]) / ng

    def out_of_box(_, x):
        return float(np.max(np.abs(x - center) - half))

    out_of_box.terminal = True
    out_of_box.direction = 1.0

    def run(sign):
        sol = solve_ivp(lambda t, x: sign * tangent(x), (0.0, lmax), x0,
                        rtol=1e-11, atol=1e-11, dense_output=True,
                        events=[out_of_box])
        t_end = sol.t_events[0][0] if len(sol.t_events[0]) else sol.t[-1]
        return sol, float(t_end), len(sol.t_events[0]) == 0

    sol_f, t_f, stayed = run(+1.0)

    closed = False
    period = None
    if stayed:
        # look for the first return to the seed: the curve is closed
        from scipy.optimize import minimize_scalar

        ts = np.linspace(0.0, t_f, 8192)[1:]
        d = np.linalg.norm(sol_f.sol(ts).T - x0, axis=1)
        scale = max(1.0, float(np.linalg.norm(half)))
        cands = np.nonzero((d[1:-1] < d[:-2]) & (d[1:-1] <= d[2:])
                           & (d[1:-1] < 0.1 * scale))[0]
        for i in cands + 1:
            res = minimize_scalar(
                lambda t: float(np.sum((sol_f.sol(float(t)) - x0) ** 2)),
                bounds=(ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]),
                method="bounded", options={"xatol": 1e-13})
            if math.sqrt(max(res.fun, 0.0)) < 1e-6 * scale:
                period = float(res.x)
                closed = True
                break
        if not closed:
            raise TrappedError("open fiber neither leaves the box nor closes")

    if closed:
        taus, ws = gauss_panel_rule(0.0, period, 1.0 / order)
        pts = sol_f.sol(taus).T
    else:
        sol_b, t_b, stayed_b = run(-1.0)
        if stayed_b:
            raise TrappedError("open fiber did not leave the domain box")
        taus, ws = gauss_panel_rule(-t_b, t_f, 1.0 / order)
        pts = np.where((taus >= 0)[:, None], sol_f.sol(np.clip(taus, 0, t_f)).T,
                       sol_b.sol(np.clip(-taus, 0, t_b)).T)

    # Newton-project nodes back onto the level set and apply coarea weights
    nodes = np.empty_like(pts)
    weights = np.empty(taus.size)
    for i, x in enumerate(pts):
        g = np.atleast_2d(fib.b_x_fun(x, th))[0]
        r = float(np.atleast_1d(fib.b_fun(x, th))[0] - s[0])
        x = x - r * g / float(g @ g)
        g = np.atleast_2d(fib.b_x_fun(x, th))[0]
        nodes[i] = x
        weights[i] = ws[i] / np.linalg.norm(g)
    return nodes, weights


def _star_surface_quadrature(fib: Fibration, z: np.ndarray, order: int):
    """Lat-long quadrature of a star-shaped codim-1 level surface in R^3."""
    m = fib.defining_chart.m
    th, s = z[:m], z[m:]
    c = fib.star_center if fib.star_center is not None else \
        0.5 * (fib.x_box[:, 0] + fib.x_box[:, 1])
    r_hi = 0.5 * float(np.max(fib.x_box[:, 1] - fib.x_box[:, 0]))

    def radius(phi, az):
        w = np.array([math.sin(phi) * math.cos(az), math.sin(phi) * math.sin(az),
                      math.cos(phi)])
        h = lambda r: float(np.atleast_1d(fib.b_fun(c + r * w, th))[0] - s[0])
        rr = np.linspace(1e-6, r_hi, 64)
        vals = np.array([h(r) for r in rr])
        sign_change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if sign_change.size == 0:
            raise EmptyLevelSetError("level surface not star-shaped about center")
        i = sign_change[0]
        return brentq(h, rr[i], rr[i + 1], xtol=1e-13), w

    n_phi = max(8, order // 4)
    n_az = 2 * n_phi
    xg, wg = roots_legendre(n_phi)
    phis = np.arccos(xg)          # Gauss in cos(phi)
    azs = 2 * np.pi * np.arange(n_az) / n_az
    w_az = 2 * np.pi / n_az
    dphi = 1e-5

    nodes, weights = [], []
    for i, phi in enumerate(phis):
        for az in azs:
            r, w = radius(phi, az)
            # FD derivatives of the radius function for the area element
            rp = radius(phi + dphi, az)[0]
            rm = radius(phi - dphi, az)[0]
            r_phi = (rp - rm) / (2 * dphi)
            ra = radius(phi, az + dphi)[0]
            rb = radius(phi, az - dphi)[0]
            r_az = (ra - rb) / (2 * dphi)
            sinphi = math.sin(phi)
            area = r ** 2 * math.sqrt(1.0 + (r_phi / r) ** 2
                                      + (r_az / (r * sinphi)) ** 2)
            x = c + r * w
            g = np.atleast_2d(fib.b_x_fun(x, th))[0]
            # Gauss weight in cos(phi) already includes sin(phi) d(phi)
            weights.append(wg[i] * w_az * area / np.linalg.norm(g))
            nodes.append(x)
    return np.array(nodes), np.array(weights)


def _graph_patch_quadrature(fib: Fibration, z: np.ndarray, order: int):
    """Tensor quadrature of a local graph patch over the free axes."""
    n, k = fib.n, fib.n_dprime
    m = fib.defining_chart.m
    th, s = z[:m], z[m:]
    x0 = fib.point_on(z)
    chart = fib.graph_chart(z, x0)
    free, dep = chart.free_idx, chart.dep_idx

    axes = []
    for i in free:
        a, b_hi = fib.x_box[i]
        nodes, ws = gauss_panel_rule(a, b_hi, (b_hi - a) / max(order, 8))
        axes.append((nodes, ws))
    mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wmesh = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    pts_free = np.stack([mm.ravel() for mm in mesh], axis=-1)
    wts = np.prod(np.stack([wm.ravel() for wm in wmesh], axis=-1), axis=-1)

    nodes, weights = [], []
    for xp, w in zip(pts_free, wts):
        try:
            xd = chart.phi(z, xp)
        except NewtonDivergedError:
            continue
        x = chart.assemble(xp, xd)
        if not (np.all(x >= fib.x_box[:, 0] - 1e-9)
                and np.all(x <= fib.x_box[:, 1] + 1e-9)):
            continue
        Bd = np.atleast_2d(fib.b_x_fun(x, th))[:, dep]
        nodes.append(x)
        weights.append(w / abs(np.linalg.det(Bd)))
    if not nodes:
        raise EmptyLevelSetError("graph patch found no level-set points in the box")
    return np.array(nodes), np.array(weights)


def _defining_quadrature(fib: Fibration, z: np.ndarray, order: int = 64):
    z = np.asarray(z, dtype=float)
    mode = fib.quad_mode
    if mode == "auto":
        if fib.n_dprime == 1 and fib.n == 2:
            mode = "trace"
        elif fib.n_dprime == 1 and fib.n == 3 and fib.star_center is not None:
            mode = "star"
        else:
            mode = "graph"
    if mode == "trace":
        return _trace_level_curve(fib, z, order)
    if mode == "star":
        return _star_surface_quadrature(fib, z, order)
    return _graph_patch_quadrature(fib, z, order)


# ---------------------------------------------------------------------------
# ray-family fibrations


def _ray_graph_chart(rays: RayFamily, z: np.ndarray, x: np.ndarray,
                     fd_step: float = 1e-5) -> GraphChart:
    traj = rays.trajectory(z)
    t_seed = _time_of_point(traj, x)
    n = rays.field.base_dim
    v = rays.field(traj.state(t_seed))[:n]
    i_free = int(np.argmax(np.abs(v)))
    free_idx = np.array([i_free], dtype=int)
    dep_idx = np.array([i for i in range(n) if i != i_free], dtype=int)

    def t_of(zz, xprime, t0):
        trj = rays.trajectory(zz)

        def fun(t):
            return trj.base_curve(float(t))[i_free] - float(xprime)

        t = float(t0)
        for _ in range(60):
            r = fun(t)
            if abs(r) < 1e-12:
                break
            vv = rays.field(trj.state(t))[:n][i_free]
            if abs(vv) < 1e-13:
                raise ChartFailureError("free-axis velocity vanished")
            t -= r / vv
        return t, trj

    def phi(zz, xprime):
        xprime = np.atleast_1d(np.asarray(xprime, dtype=float))
        t, trj = t_of(np.asarray(zz, dtype=float), xprime[0], t_seed)
        return trj.base_curve(t)[dep_idx]

    def phi_z(zz, xprime):
        zz = np.asarray(zz, dtype=float)
        cols = []
        for j in range(zz.size):
            h = fd_step * max(1.0, abs(zz[j]))
            zp = zz.copy()
            zm = zz.copy()
            zp[j] += h
            zm[j] -= h
            cols.append((phi(zp, xprime) - phi(zm, xprime)) / (2 * h))
        return np.stack(cols, axis=-1)

    def phi_xprime(zz, xprime):
        xprime = np.atleast_1d(np.asarray(xprime, dtype=float))
        t, trj = t_of(np.asarray(zz, dtype=float), xprime[0], t_seed)
        vel = rays.field(trj.state(t))[:n]
        return (vel[dep_idx] / vel[i_free])[:, None]

    return GraphChart(free_idx=free_idx, dep_idx=dep_idx, phi=phi,
                      phi_z=phi_z, phi_xprime=phi_xprime, deriv_accuracy=1e-6)


def _time_of_point(traj, x, grid: int = 512) -> float:
    from scipy.optimize import minimize_scalar

    x = np.asarray(x, dtype=float)
    ts = np.linspace(-traj.tau_minus, traj.tau_plus, grid)
    d = np.linalg.norm(traj.base_curve(ts) - x, axis=1)
    i = int(np.argmin(d))
    lo = ts[max(i - 1, 0)]
    hi = ts[min(i + 1, grid - 1)]
    res = minimize_scalar(lambda t: float(np.sum((traj.base_curve(float(t)) - x) ** 2)),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    if math.sqrt(max(res.fun, 0.0)) > 1e-5 * max(1.0, np.linalg.norm(x)):
        raise OffManifoldError("point does not lie on the ray to tolerance")
    return float(res.x)


def _orbit_period(traj, tol: float = 1e-6):
    """Minimal period of a closed orbit: first return of the full state."""
    from scipy.optimize import minimize_scalar

    y0 = traj.state(0.0)
    scale = max(np.linalg.norm(y0), 1.0)
    ts = np.linspace(0.0, traj.tau_plus, 4096)[1:]
    d = np.linalg.norm(traj.state(ts) - y0, axis=1)
    # first local minimum that comes back to the start
    candidates = np.nonzero((d[1:-1] < d[:-2]) & (d[1:-1] < d[2:])
                            & (d[1:-1] < 0.05 * scale))[0]
    if candidates.size == 0:
        return None
    i = candidates[0] + 1
    res = minimize_scalar(lambda t: float(np.sum((traj.state(float(t)) - y0) ** 2)),
                          bounds=(ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]),
                          method="bounded", options={"xatol": 1e-13})
    if math.sqrt(max(res.fun, 0.0)) > tol * scale:
        return None
    return float(res.x)


def _check_self_intersection(traj, z, diam, n_samples: int = 512):
    """Spacing-aware probe: coarse close-approach candidates are refined to
    the true pairwise minimum before the rejection threshold applies."""
    ts = np.linspace(-traj.tau_minus, traj.tau_plus, n_samples)
    pts = traj.base_curve(ts)
    spacing = (ts[-1] - ts[0]) / (n_samples - 1)
    speed = np.max(np.linalg.norm(np.diff(pts, axis=0), axis=1)) / spacing
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    dt = np.abs(ts[:, None] - ts[None, :])
    cand = (d2 < (2.0 * spacing * max(speed, 1e-12)) ** 2) & (dt > 10 * spacing)
    idx = np.argwhere(cand & (ts[:, None] < ts[None, :]))
    checked = []
    for i, j in idx[np.argsort(d2[cand & (ts[:, None] < ts[None, :])])][:8]:
        t1, t2 = float(ts[i]), float(ts[j])
        if any(abs(t1 - a) < 5 * spacing and abs(t2 - b) < 5 * spacing
               for a, b in checked):
            continue
        checked.append((t1, t2))
        span = spacing
        for _ in range(10):
            tt1 = np.linspace(t1 - span, t1 + span, 9)
            tt2 = np.linspace(t2 - span, t2 + span, 9)
            P1 = traj.base_curve(tt1)
            P2 = traj.base_curve(tt2)
            dd = np.sum((P1[:, None, :] - P2[None, :, :]) ** 2, axis=-1)
            a, b = np.unravel_index(np.argmin(dd), dd.shape)
            t1, t2 = float(tt1[a]), float(tt2[b])
            span *= 0.3
        if abs(t1 - t2) > 10 * spacing and \
                np.linalg.norm(traj.base_curve(t1) - traj.base_curve(t2)) < 1e-6 * diam:
            raise SelfIntersectionError("base curve self-intersects",
                                        z=z, t1=t1, t2=t2)


def from_ray_family(rays: RayFamily, *, kappa: Optional[Callable] = None,
                    validation_samples: int = 12,
                    rng: Optional[np.random.Generator] = None,
                    skip_variation_probe: bool = False,
                    allow_periodic: bool = False) -> Fibration:
    """Validate a ray family and wrap it as a fibration.

    The probes check, on a parameter sample: interior curves with transversal
    boundary exits, no self-intersections, nonvanishing velocity, finite exit
    times, and (for families of dimension at most dim(Xi) - 2) that variation
    fields plus the flow direction span the base tangent space.  With
    ``allow_periodic`` a curve may close instead of exiting; its measure is
    one minimal period.
    """
    rng = rng or np.random.default_rng(0)
    n = rays.field.base_dim
    fiber_dim = rays.field.state_dim - n
    diam = rays.chart.diameter

    samples = rays.sample_params(rng, validation_samples)
    for theta in samples:
        try:
            traj = rays.trajectory(theta)
        except TangentialExitError as exc:
            raise TangentialIntersectionError(
                f"curve exits tangentially (no-tangential-intersections probe): {exc}")
        if traj.trapped_plus or traj.trapped_minus:
            if allow_periodic and _orbit_period(traj) is not None:
                continue
            raise TrappedError("curve failed the nontrapping probe", z=theta)
        _check_self_intersection(traj, theta, diam)
        ts = np.linspace(-traj.tau_minus, traj.tau_plus, 33)
        for t in ts:
            v = rays.field(traj.state(float(t)))[:n]
            if np.linalg.norm(v) < 1e-10:
                raise SingularPointError(f"vanishing velocity on curve {theta}")

    if rays.param_dim <= n + fiber_dim - 2 and not skip_variation_probe:
        from .bolker import variation_basis   # local import to avoid a cycle

        for theta in samples[: max(4, validation_samples // 3)]:
            traj = rays.trajectory(theta)
            ts = np.linspace(-traj.tau_minus, traj.tau_plus, 9)[1:-1]
            Js = variation_basis(rays, theta, ts)
            for it, t in enumerate(ts):
                v = rays.field(traj.state(float(t)))[:n]
                M = np.column_stack([Js[it], v / np.linalg.norm(v)])
                sig = np.linalg.svd(M, compute_uv=False)
                if sig[min(n, M.shape[1]) - 1] / sig[0] <= RANK_RATIO_TOL or \
                        np.linalg.matrix_rank(M, tol=1e-8 * sig[0]) < n:
                    raise InsufficientVariationsError(
                        "variation fields do not span the tangent space",
                        z=theta, t=float(t))

    def point_on(z):
        traj = rays.trajectory(np.asarray(z, dtype=float))
        t_mid = 0.5 * (traj.tau_plus - traj.tau_minus)
        return traj.base_curve(t_mid)

    def residual(z, x):
        from scipy.optimize import minimize_scalar

        traj = rays.trajectory(np.asarray(z, dtype=float))
        ts = np.linspace(-traj.tau_minus, traj.tau_plus, 512)
        d = np.linalg.norm(traj.base_curve(ts) - x, axis=1)
        i = int(np.argmin(d))
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
        res = minimize_scalar(
            lambda t: float(np.sum((traj.base_curve(float(t)) - x) ** 2)),
            bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-13})
        return math.sqrt(max(res.fun, 0.0))

    def fiber_quadrature(z, order: int = 64):
        traj = rays.trajectory(np.asarray(z, dtype=float))
        if traj.trapped_plus:
            period = _orbit_period(traj)
            if period is None:
                raise TrappedError("fiber curve neither exits nor closes", z=z)
            ts, ws = gauss_panel_rule(0.0, period, 1.0 / order)
            return traj.base_curve(ts), ws
        ts, ws = gauss_panel_rule(-traj.tau_minus, traj.tau_plus, 1.0 / order)
        return traj.base_curve(ts), ws

    return Fibration(N=rays.param_dim, n=n, n_prime=1, n_dprime=n - 1,
                     kappa=kappa, kind="ray", x_box=rays.chart.box,
                     graph_chart=lambda z, x: _ray_graph_chart(rays, z, x),
                     defining_chart=None, point_on=point_on,
                     fiber_quadrature=fiber_quadrature,
                     on_fiber_residual=residual, rays=rays)


# ---------------------------------------------------------------------------
# shared operations


def submersion_check(fib: Fibration, samples: Sequence[tuple],
                     raise_on_fail: bool = True) -> SubmersionReport:
    """Rank test of phi_z on sample points of Z (right-projection submersion)."""
    entries = []
    for z, x in samples:
        chart = fib.graph_chart(np.asarray(z, float), np.asarray(x, float))
        xp, _ = chart.split(x)
        Pz = np.atleast_2d(chart.phi_z(z, xp))
        sig = np.linalg.svd(Pz, compute_uv=False)
        ratio = sig[-1] / sig[0] if sig[0] > 0 else 0.0
        entries.append({"z": np.asarray(z), "x": np.asarray(x),
                        "sigma_min": float(sig[-1]), "sigma_max": float(sig[0]),
                        "ratio": float(ratio),
                        "ok": bool(ratio > RANK_RATIO_TOL and sig.size == fib.n_dprime)})
    report = SubmersionReport(entries=entries, rank_ratio_tol=RANK_RATIO_TOL)
    if raise_on_fail and not report.passed:
        raise RankDeficientError("phi_z rank deficient",
                                 samples=[e for e in report.failures])
    return report


def conormal_fiber(fib: Fibration, z: np.ndarray, x: np.ndarray,
                   tol: float = ON_Z_TOL) -> ConormalFrame:
    """Bases of T_x G_z and N*_x G_z and the matrix of A(z, x).

    The tangent basis columns are (e_j, phi_x' e_j), the conormal basis
    columns (-phi_x'^T e_j, e_j) (in split order), and A maps the dep-block
    eta'' to zeta = phi_z^T eta''.
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if fib.on_fiber_residual(z, x) > 10 * tol * max(1.0, np.linalg.norm(x)):
        raise OffManifoldError("(z, x) is not on the incidence set to tolerance")
    chart = fib.graph_chart(z, x)
    xp, _ = chart.split(x)
    P_xp = np.atleast_2d(chart.phi_xprime(z, xp))
    P_z = np.atleast_2d(chart.phi_z(z, xp))

    n, npr, ndp = fib.n, fib.n_prime, fib.n_dprime
    tangent = np.zeros((n, npr))
    tangent[chart.free_idx, :] = np.eye(npr)
    tangent[chart.dep_idx, :] = P_xp
    conormal = np.zeros((n, ndp))
    conormal[chart.free_idx, :] = -P_xp.T
    conormal[chart.dep_idx, :] = np.eye(ndp)

    pair = conormal.T @ tangent
    if np.max(np.abs(pair)) > 1e-10 * max(1.0, np.abs(P_xp).max()) * 10:
        raise DegenerateFrameError("conormal/tangent pairing failed to vanish")

    return ConormalFrame(tangent_basis=tangent, conormal_basis=conormal,
                         a_matrix=-P_z.T, chart=chart)


def b_map_eta(fib: Fibration, z: np.ndarray, x: np.ndarray,
              zeta: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """The B map: eta = -b_x^T zeta'' with consistency check on zeta'."""
    if fib.defining_chart is None:
        raise ChartFailureError("B map requires a defining-form fibration")
    ch = fib.defining_chart
    th, _ = ch.split(z)
    zeta = np.asarray(zeta, dtype=float)
    zp, zdd = zeta[: ch.m], zeta[ch.m:]
    expected = -ch.b_zprime(x, th).T @ zdd
    if np.linalg.norm(zp - expected) > tol * max(np.linalg.norm(zeta), 1e-30):
        raise OffManifoldError("zeta is not conormal to H_x")
    return -(ch.b_x(x, th).T @ zdd)


def induced_measure(fib: Fibration, z: np.ndarray, order: int = 64):
    """Quadrature nodes and positive weights for integration over G_z."""
    nodes, weights = fib.fiber_quadrature(np.asarray(z, dtype=float), order)
    if nodes.size and np.any(weights <= 0):
        raise DegenerateFrameError("induced measure produced nonpositive weights")
    return nodes, weights


def canonical_point(fib: Fibration, z: np.ndarray, x: np.ndarray,
                    eta: np.ndarray, tol: float = ON_Z_TOL) -> CanonicalPoint:
    """Assemble and validate a canonical-relation point from (z, x, eta)."""
    frame = conormal_fiber(fib, z, x, tol=tol)
    eta = np.asarray(eta, dtype=float)
    if np.linalg.norm(eta) == 0:
        raise ValueError("eta must be nonzero")
    zeta = frame.zeta_of(eta)
    return CanonicalPoint(z=z, zeta=zeta, x=x, eta=eta)


def random_canonical_points(fib: Fibration, rng: np.random.Generator,
                            count: int, z_sampler: Callable = None) -> list:
    """Sample validated canonical points (defining-form fibrations)."""
    if z_sampler is None:
        if fib.theta_box is None:
            raise ValueError("need theta_box or a z sampler")

        def z_sampler():
            th = rng.uniform(fib.theta_box[:, 0], fib.theta_box[:, 1])
            x = rng.uniform(0.25 * fib.x_box[:, 0], 0.25 * fib.x_box[:, 1])
            s = np.atleast_1d(fib.b_fun(x, th))
            return np.concatenate([th, s])

    points = []
    while len(points) < count:
        z = z_sampler()
        try:
            nodes, _ = induced_measure(fib, z, order=8)
            x = nodes[rng.integers(len(nodes))]
            frame = conormal_fiber(fib, z, x)
            coeff = rng.normal(size=fib.n_dprime)
            eta = frame.conormal_basis @ coeff
            eta /= np.linalg.norm(eta)
            points.append(canonical_point(fib, z, x, eta))
        except (EmptyLevelSetError, OffManifoldError, NewtonDivergedError):
            continue
    return points
