"""Checks for recoverability of singularities: variation fields, conjugate
pairs, immersivity and injectivity of the left projection, potentially
visible directions, and strict pseudoconvexity.

The global half of the condition is probed through variation fields (does
some admissible variation move a point in the direction a covector sees?),
the local half through Jacobian rank tests in either the graph or the
defining representation of the incidence set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .errors import SearchFailedError
from .fibration import CanonicalPoint, Fibration
from .geometry import IntegratorOptions, Symbol, poisson_bracket
from .rays import RayFamily

__all__ = [
    "VariationField",
    "ConjugateScan",
    "InjectivityResult",
    "ImmersionResult",
    "BolkerReport",
    "PVSResult",
    "PseudoconvexityReport",
    "variation_field",
    "variation_basis",
    "conjugate_scan",
    "injectivity_check",
    "immersion_check",
    "fiber_immersion_check",
    "pvs_membership",
    "pseudoconvexity_check",
    "bolker_report",
]

PASS_MARGIN = 1e-8
FAIL_MARGIN = 1e-10
ANNIHILATION_TOL = 1e-6


@dataclass
class VariationField:
    """Samples of the variation field J_w along one curve of the family."""

    theta: np.ndarray
    w: np.ndarray
    times: np.ndarray
    values: np.ndarray          # (T, n)
    velocities: np.ndarray      # (T, n)
    base_points: np.ndarray     # (T, n)

    def norms(self, metric: Optional[Callable] = None) -> np.ndarray:
        if metric is None:
            return np.linalg.norm(self.values, axis=1)
        out = np.empty(len(self.times))
        for i, J in enumerate(self.values):
            g = np.asarray(metric(self.base_points[i]))
            out[i] = math.sqrt(float(J @ g @ J))
        return out


def _embed_jacobian(rays: RayFamily, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        h = step * max(1.0, abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        cols.append((rays.state_of(tp) - rays.state_of(tm)) / (2 * h))
    return np.stack(cols, axis=-1)


def variation_basis(rays: RayFamily, theta: np.ndarray, t_grid: np.ndarray,
                    method: str = "ode",
                    options: Optional[IntegratorOptions] = None) -> np.ndarray:
    """J_{w_j}(t) for the parameter-basis directions, shape (T, n, N).

    ``method="ode"`` integrates the linearized flow along the orbit (one
    augmented solve); ``method="fd"`` uses central differences of flows.
    """
    theta = np.asarray(theta, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    n = rays.field.base_dim
    N = theta.size
    if method == "fd":
        cols = []
        for j in range(N):
            w = np.zeros(N)
            w[j] = 1.0
            vf = variation_field(rays, theta, w, t_grid, method="fd", options=options)
            cols.append(vf.values)
        return np.stack(cols, axis=-1)

    d = rays.field.state_dim
    D0 = _embed_jacobian(rays, theta)          # (d, N)
    y0 = np.concatenate([rays.state_of(theta), D0.ravel()])

    def rhs(_, y):
        state = y[:d]
        delta = y[d:].reshape(d, N)
        A = rays.field.jacobian(state)
        return np.concatenate([rays.field(state), (A @ delta).ravel()])

    opts = options or rays.options
    out = np.empty((t_grid.size, n, N))
    for sign in (+1.0, -1.0):
        mask = (t_grid > 0) if sign > 0 else (t_grid < 0)
        if not np.any(mask):
            continue
        t_end = float(t_grid[mask].max() if sign > 0 else t_grid[mask].min())
        sol = solve_ivp(rhs, (0.0, t_end), y0, method=opts.method, rtol=opts.rtol,
                        atol=opts.atol, dense_output=True)
        Y = sol.sol(t_grid[mask])
        out[mask] = Y[d:, :].T.reshape(int(mask.sum()), d, N)[:, :n, :]
    out[t_grid == 0.0] = D0[None, :n, :]
    return out


def variation_field(rays: RayFamily, theta: np.ndarray, w: np.ndarray,
                    t_grid: np.ndarray, method: str = "fd",
                    fd_step: float = 1e-5,
                    options: Optional[IntegratorOptions] = None) -> VariationField:
    """The variation field J_w(t) of the curve family at ``theta``.

    Central differences of flows (step ``fd_step`` scaled by 1/|w|, tight
    integrator tolerance) or the linearized-flow route.
    """
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    n = rays.field.base_dim
    traj = rays.trajectory(theta)
    base = traj.base_curve(t_grid)
    vel = np.stack([rays.field(traj.state(float(t)))[:n] for t in t_grid])

    if np.linalg.norm(w) == 0:
        return VariationField(theta=theta, w=w, times=t_grid,
                              values=np.zeros((t_grid.size, n)),
                              velocities=vel, base_points=base)

    if method == "ode":
        basis = variation_basis(rays, theta, t_grid, method="ode", options=options)
        vals = basis @ w
    else:
        h = fd_step / np.linalg.norm(w)
        opts = (options or rays.options).tighter()
        window = 1.05 * float(np.abs(t_grid).max()) + 1e-6
        tr_p = rays.trajectory(theta + h * w, options=opts, use_cache=False,
                               max_time=window)
        tr_m = rays.trajectory(theta - h * w, options=opts, use_cache=False,
                               max_time=window)
        vals = (tr_p.base_curve(t_grid) - tr_m.base_curve(t_grid)) / (2 * h)
    return VariationField(theta=theta, w=w, times=t_grid, values=vals,
                          velocities=vel, base_points=base)


def _tangency_kernel(J: np.ndarray, tau_hat: np.ndarray,
                     rel_tol: float = 1e-6) -> np.ndarray:
    """Directions w with J_w parallel to the velocity: kernel of the
    normal-projected variation matrix.

    The projected matrix maps into the (n-1)-dimensional normal complement,
    so its rank is capped at n-1; this keeps integrator noise from emptying
    the kernel.
    """
    P = J - np.outer(tau_hat, tau_hat @ J)
    _, sig, Vt = np.linalg.svd(P)
    rank = int(np.sum(sig > rel_tol * max(sig[0], 1e-300)))
    rank = min(rank, J.shape[0] - 1)
    return Vt[rank:].T


@dataclass
class ConjugateScan:
    """Rank margins of the pair scan and the flagged conjugate pairs."""

    times: np.ndarray
    margins: np.ndarray                 # (T, T), NaN near the diagonal
    pairs: list                         # [(t, s, margin), ...]
    threshold: float
    refined: list = dc_field(default_factory=list)

    @property
    def empty(self) -> bool:
        return len(self.pairs) == 0

    @property
    def best_pair(self):
        if not self.pairs:
            return None
        best = self.refined if self.refined else self.pairs
        return min(best, key=lambda p: p[2])


def _pair_margin(rays, theta, t, s, conjugacy, window, options=None):
    """Rank margin of a single (t, s) pair (used for sub-grid refinement).

    The window bounds supply reference samples so variations are rescaled
    by their peak size, exactly as in the full scan.
    """
    samples = np.unique(np.concatenate([np.linspace(window[0], window[1], 9),
                                        [s, t]]))
    basis = variation_basis(rays, theta, samples, options=options)
    i_t = int(np.argmin(np.abs(samples - t)))
    i_s = int(np.argmin(np.abs(samples - s)))
    n = rays.field.base_dim
    if conjugacy == "pointwise":
        S = np.vstack([basis[i_t], basis[i_s]])
        norms = np.linalg.norm(S, axis=0)
        norms = np.where(norms < 1e-14, 1.0, norms)
        sig = np.linalg.svd(S / norms[None, :], compute_uv=False)
        return float(sig[S.shape[1] - 1] / sig[0])
    traj = rays.trajectory(theta)
    vel_s = rays.field(traj.state(float(s)))[:n]
    vel_t = rays.field(traj.state(float(t)))[:n]
    tau_s = vel_s / np.linalg.norm(vel_s)
    tau_t = vel_t / np.linalg.norm(vel_t)
    K = _tangency_kernel(basis[i_s], tau_s)
    if K.shape[1] == 0:
        return 0.0
    V_all = np.einsum("tnk,kj->tnj", basis, K)
    ref = np.max(np.linalg.norm(V_all, axis=1), axis=0)
    ref = np.where(ref < 1e-12, 1.0, ref)
    V = V_all[i_t]
    M = np.column_stack([tau_t] + [V[:, j] / ref[j] for j in range(K.shape[1])])
    if M.shape[1] < n:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[n - 1])


def conjugate_scan(rays: RayFamily, theta: np.ndarray, t_grid: np.ndarray,
                   threshold: Optional[float] = None, band: Optional[float] = None,
                   refine: bool = True,
                   options: Optional[IntegratorOptions] = None) -> ConjugateScan:
    """Scan pairs (t, s) for directions of variation that degenerate.

    For each s the admissible directions are those whose variation is
    tangential at s.  Each such variation, rescaled by its own peak size
    over the window, is stacked with the unit velocity at t; the margin is
    the n-th singular value, which decays to zero exactly when the
    variations fixing s all become tangential at t.  Pairs closer than
    ``band`` (short segments carry no conjugate pairs) are excluded.
    Flagged pairs are refined on a sub-grid around the margin minimum.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    T = t_grid.size
    n = rays.field.base_dim
    window = float(t_grid.max() - t_grid.min())
    if threshold is None:
        threshold = 0.03 if rays.conjugacy == "tangential" else 0.01
    if band is None:
        band = max(4.0 * window / max(T - 1, 1), 0.08 * window)
    basis = variation_basis(rays, theta, t_grid, method="ode", options=options)
    traj = rays.trajectory(theta)
    vel = np.stack([rays.field(traj.state(float(t)))[:n] for t in t_grid])
    tau = vel / np.linalg.norm(vel, axis=1, keepdims=True)

    margins = np.full((T, T), np.nan)
    pairs = []
    if rays.conjugacy == "pointwise":
        # a nontrivial variation vanishing at both points: rank drop of the
        # stacked variation matrix; unit column scaling per pair preserves
        # the kernel while keeping the margin conditioned
        N = basis.shape[2]
        for i_s in range(T):
            for i_t in range(T):
                if abs(t_grid[i_t] - t_grid[i_s]) < band:
                    continue
                S = np.vstack([basis[i_t], basis[i_s]])
                norms = np.linalg.norm(S, axis=0)
                norms = np.where(norms < 1e-14, 1.0, norms)
                sig = np.linalg.svd(S / norms[None, :], compute_uv=False)
                m = float(sig[N - 1] / sig[0]) if sig[0] > 0 else 0.0
                margins[i_t, i_s] = m
                if m < threshold:
                    pairs.append((float(t_grid[i_t]), float(t_grid[i_s]), m))
        return ConjugateScan(times=t_grid, margins=margins, pairs=pairs,
                             threshold=threshold)

    for i_s in range(T):                        # tangential criterion
        K = _tangency_kernel(basis[i_s], tau[i_s])
        if K.shape[1] == 0:
            margins[:, i_s] = 0.0
            continue
        V_all = np.einsum("tnk,kj->tnj", basis, K)
        ref = np.max(np.linalg.norm(V_all, axis=1), axis=0)
        ref = np.where(ref < 1e-12, 1.0, ref)
        for i_t in range(T):
            if abs(t_grid[i_t] - t_grid[i_s]) < band:
                continue
            M = np.column_stack([tau[i_t]] +
                                [V_all[i_t, :, j] / ref[j] for j in range(K.shape[1])])
            if M.shape[1] < n:
                m = 0.0
            else:
                m = float(np.linalg.svd(M, compute_uv=False)[n - 1])
            margins[i_t, i_s] = m
            if m < threshold:
                pairs.append((float(t_grid[i_t]), float(t_grid[i_s]), m))

    refined = []
    if refine and pairs:
        t0, s0, m0 = min(pairs, key=lambda p: p[2])
        bounds = (float(t_grid.min()), float(t_grid.max()))
        m0 = _pair_margin(rays, theta, t0, s0, rays.conjugacy, bounds, options)
        span = window / max(T - 1, 1)
        for _ in range(3):
            best = (t0, s0, m0)
            for dt in np.linspace(-span, span, 5):
                for ds in np.linspace(-span, span, 5):
                    if dt == 0.0 and ds == 0.0:
                        continue
                    m = _pair_margin(rays, theta, t0 + dt, s0 + ds,
                                     rays.conjugacy, bounds, options)
                    if m < best[2]:
                        best = (t0 + dt, s0 + ds, m)
            t0, s0, m0 = best
            span *= 0.35
        refined.append((t0, s0, m0))
    return ConjugateScan(times=t_grid, margins=margins, pairs=pairs,
                         threshold=threshold, refined=refined)


@dataclass
class InjectivityResult:
    passed: bool
    witnesses: list
    min_margin: float
    samples: int


def injectivity_check(fib: Fibration, point: CanonicalPoint,
                      n_samples: int = 24,
                      tol: float = ANNIHILATION_TOL) -> InjectivityResult:
    """Does some admissible variation that fixes y move x in the eta
    direction, for every sampled y on the fiber other than x?"""
    z, x, eta = point.z, point.x, point.eta
    if fib.kind == "ray":
        return _injectivity_ray(fib, z, x, eta, n_samples, tol)
    return _injectivity_defining(fib, z, x, eta, n_samples, tol)


def _injectivity_defining(fib, z, x, eta, n_samples, tol):
    chart_x = fib.graph_chart(z, x)
    xp_x, _ = chart_x.split(x)
    Px = np.atleast_2d(chart_x.phi_z(z, xp_x))
    eta_dd = eta[chart_x.dep_idx]
    nodes, _ = fib.fiber_quadrature(z, order=8)
    step = max(1, len(nodes) // n_samples)
    ys = [y for y in nodes[::step] if np.linalg.norm(y - x) > 1e-3]

    witnesses, min_margin = [], np.inf
    for y in ys:
        chart_y = fib.graph_chart(z, y)
        yp, _ = chart_y.split(y)
        Py = np.atleast_2d(chart_y.phi_z(z, yp))
        _, sig, Vt = np.linalg.svd(Py)
        rank = min(int(np.sum(sig > 1e-8 * max(sig[0], 1e-300))), Py.shape[0])
        K = Vt[rank:].T
        best = 0.0
        for j in range(K.shape[1]):
            v = Px @ K[:, j]
            nv = np.linalg.norm(v)
            if nv > 1e-12:
                best = max(best, abs(eta_dd @ v) / (np.linalg.norm(eta_dd) * nv))
        min_margin = min(min_margin, best)
        if best <= tol:
            witnesses.append(np.asarray(y))
    return InjectivityResult(passed=not witnesses, witnesses=witnesses,
                             min_margin=float(min_margin), samples=len(ys))


def _injectivity_ray(fib, z, x, eta, n_samples, tol):
    rays = fib.rays
    traj = rays.trajectory(z)
    from .fibration import _time_of_point

    t_x = _time_of_point(traj, x)
    t_grid = np.linspace(-traj.tau_minus, traj.tau_plus, n_samples + 2)[1:-1]
    all_t = np.unique(np.concatenate([t_grid, [t_x]]))
    basis = variation_basis(rays, z, all_t)
    i_x = int(np.argmin(np.abs(all_t - t_x)))
    n = rays.field.base_dim
    vel = np.stack([rays.field(traj.state(float(t)))[:n] for t in all_t])
    tau = vel / np.linalg.norm(vel, axis=1, keepdims=True)

    witnesses, min_margin = [], np.inf
    span = traj.tau_plus + traj.tau_minus
    for i_s, s in enumerate(all_t):
        if abs(s - t_x) < 0.05 * span:
            continue
        K = _tangency_kernel(basis[i_s], tau[i_s])
        best = 0.0
        for j in range(K.shape[1]):
            J = basis[i_x] @ K[:, j]
            nJ = np.linalg.norm(J)
            if nJ > 1e-12:
                best = max(best, abs(eta @ J) / (np.linalg.norm(eta) * nJ))
        min_margin = min(min_margin, best)
        if best <= tol:
            witnesses.append(traj.base_curve(float(s)))
    return InjectivityResult(passed=not witnesses, witnesses=witnesses,
                             min_margin=float(min_margin),
                             samples=len(all_t) - 1)


@dataclass
class ImmersionResult:
    verdict: str          # "pass" | "fail" | "inconclusive"
    margin: float
    form: str

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _verdict(margin: float) -> str:
    if margin > PASS_MARGIN:
        return "pass"
    if margin < FAIL_MARGIN:
        return "fail"
    return "inconclusive"


def immersion_check(fib: Fibration, point: CanonicalPoint,
                    form: str = "auto", fd_step: float = 1e-6) -> ImmersionResult:
    """Rank test for immersivity of the left projection at a canonical point.

    ``form="graph"`` assembles the N x n matrix (phi_z^T, d_x'(phi_z^T
    eta'')); ``form="defining"`` the n x N matrix (b_x^T, d_z'(b_x^T
    zeta'')).  Margins are sigma_min/sigma_max with an inconclusive band
    between the fail and pass thresholds.
    """
    if form == "auto":
        form = "defining" if fib.defining_chart is not None else "graph"
    z, x = point.z, point.x

    if form == "graph":
        chart = fib.graph_chart(z, x)
        xp, _ = chart.split(x)
        eta_dd = point.eta[chart.dep_idx]
        Pz = np.atleast_2d(chart.phi_z(z, xp))        # (n'', N)
        cols = [Pz.T]
        dcols = np.empty((fib.N, fib.n_prime))
        for j in range(fib.n_prime):
            h = fd_step * max(1.0, abs(xp[j]))
            xpp = xp.copy()
            xpm = xp.copy()
            xpp[j] += h
            xpm[j] -= h
            dcols[:, j] = (np.atleast_2d(chart.phi_z(z, xpp)).T @ eta_dd
                           - np.atleast_2d(chart.phi_z(z, xpm)).T @ eta_dd) / (2 * h)
        M = np.hstack([Pz.T, dcols])                  # N x n, needs full column rank
        sig = np.linalg.svd(M, compute_uv=False)
        margin = float(sig[fib.n - 1] / sig[0]) if sig[0] > 0 else 0.0
        return ImmersionResult(verdict=_verdict(margin), margin=margin, form="graph")

    ch = fib.defining_chart
    th, _ = ch.split(z)
    zeta_dd = point.zeta[ch.m:]
    Bx = ch.b_x(x, th)                               # (k, n)
    dcols = np.empty((fib.n, ch.m))
    for j in range(ch.m):
        h = fd_step * max(1.0, abs(th[j]))
        tp = th.copy()
        tm = th.copy()
        tp[j] += h
        tm[j] -= h
        dcols[:, j] = (ch.b_x(x, tp).T @ zeta_dd - ch.b_x(x, tm).T @ zeta_dd) / (2 * h)
    M = np.hstack([Bx.T, dcols])                      # n x N, needs full row rank
    sig = np.linalg.svd(M, compute_uv=False)
    margin = float(sig[fib.n - 1] / sig[0]) if sig[0] > 0 else 0.0
    return ImmersionResult(verdict=_verdict(margin), margin=margin, form="defining")


def fiber_immersion_check(symbol: Symbol, x: np.ndarray, xi: np.ndarray,
                          eta: np.ndarray) -> ImmersionResult:
    """Immersivity test for flow families of full boundary dimension.

    Tests whether eta annihilates the image of the fiber tangent space under
    the derivative of the horizontal velocity (the fiber Hessian of the
    symbol); for homogeneous nondegenerate symbols this fails exactly when
    eta is parallel to xi.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    grad = symbol.dxi(x, xi)
    # basis of the fiber tangent space: orthogonal complement of grad
    Q, _ = np.linalg.qr(np.eye(xi.size) - np.outer(grad, grad) / float(grad @ grad))
    basis = []
    for j in range(xi.size):
        v = Q[:, j]
        v = v - (v @ grad) * grad / float(grad @ grad)
        if np.linalg.norm(v) > 1e-8:
            basis.append(v / np.linalg.norm(v))
        if len(basis) == xi.size - 1:
            break
    H = symbol.hess_xi(x, xi)
    margin = 0.0
    for v in basis:
        u = H @ v
        nu = np.linalg.norm(u)
        if nu > 1e-12:
            margin = max(margin, abs(eta @ u) / (np.linalg.norm(eta) * nu))
    return ImmersionResult(verdict="pass" if margin > ANNIHILATION_TOL else "fail",
                           margin=float(margin), form="fiber")


@dataclass
class PVSResult:
    visible: bool
    xi: Optional[np.ndarray]
    residual: float
    parallel_angle: float


def _is_homogeneous(symbol: Symbol, x: np.ndarray, dim: int) -> bool:
    """Probe p(x, 2 xi) = 2^m p(x, xi) for an integer degree m."""
    rng = np.random.default_rng(7)
    for _ in range(3):
        xi = rng.normal(size=dim)
        a, b = symbol.value(x, xi), symbol.value(x, 2 * xi)
        if abs(a) > 1e-10:
            if a * b <= 0:
                return False
            m = math.log2(b / a)
            if abs(m - round(m)) > 1e-8:
                return False
    return True


def pvs_membership(symbol: Symbol, x: np.ndarray, eta: np.ndarray,
                   dim: Optional[int] = None, n_starts: int = 32,
                   seed: int = 0, residual_tol: float = 1e-8,
                   angle_tol: float = 1e-4) -> PVSResult:
    """Is there a characteristic covector xi with horizontal velocity
    orthogonal to eta and eta not parallel to xi?

    Multi-start constrained minimization of the normalized pairing
    |eta(dp/dxi)| on {p = 0} (with |xi| fixed for homogeneous symbols).
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dim = dim if dim is not None else eta.size
    rng = np.random.default_rng(seed)
    homogeneous = _is_homogeneous(symbol, x, dim)

    def objective(xi):
        g = symbol.dxi(x, xi)
        den = np.linalg.norm(eta) * np.linalg.norm(g)
        if den < 1e-300:
            return 1.0
        return (float(eta @ g) / den) ** 2

    cons = [{"type": "eq", "fun": lambda xi: symbol.value(x, xi)}]
    if homogeneous:
        cons.append({"type": "eq", "fun": lambda xi: float(xi @ xi) - 1.0})

    best = None
    feasible_found = False
    for _ in range(n_starts):
        xi0 = rng.normal(size=dim)
        xi0 /= np.linalg.norm(xi0)
        res = minimize(objective, xi0, method="SLSQP", constraints=cons,
                       options={"maxiter": 200, "ftol": 1e-16})
        xi = res.x
        cviol = abs(symbol.value(x, xi))
        if homogeneous:
            cviol = max(cviol, abs(float(xi @ xi) - 1.0))
        if cviol > 1e-9 or np.linalg.norm(xi) < 1e-6:
            continue
        feasible_found = True
        g = symbol.dxi(x, xi)
        resid = abs(float(eta @ g)) / (np.linalg.norm(eta) * np.linalg.norm(g))
        cosang = abs(float(eta @ xi)) / (np.linalg.norm(eta) * np.linalg.norm(xi))
        angle = math.acos(min(1.0, cosang))
        if resid < residual_tol and angle > angle_tol:
            return PVSResult(visible=True, xi=xi, residual=resid,
                             parallel_angle=angle)
        if best is None or resid < best[0]:
            best = (resid, xi, angle)
    if not feasible_found:
        raise SearchFailedError("no characteristic covector found at x")
    resid, xi, angle = best
    return PVSResult(visible=False, xi=xi, residual=resid, parallel_angle=angle)


@dataclass
class PseudoconvexityReport:
    passed: bool
    min_bracket: float
    n_constraint_points: int
    empty_constraint_set: bool
    points: list = dc_field(default_factory=list)


def pseudoconvexity_check(p: Symbol, F: Symbol, x_box: np.ndarray,
                          n_samples: int = 64, seed: int = 0,
                          xi_radius: tuple = (0.7, 1.5),
                          dim: Optional[int] = None) -> PseudoconvexityReport:
    """Minimum of {p, {p, F}} over the sampled constraint set.

    Seeds are Newton-projected onto {p = 0, {p, F} = 0}; when the symbol has
    no characteristic points over the region (elliptic case), only the
    tangency constraint {p, F} = 0 is imposed at the seed's fiber radius.
    """
    x_box = np.asarray(x_box, dtype=float)
    dim = dim if dim is not None else x_box.shape[0]
    rng = np.random.default_rng(seed)
    pF = poisson_bracket(p, F)
    ppF = poisson_bracket(p, pF)

    # is the characteristic set reachable over the region?
    char_nonempty = False
    for _ in range(16):
        x = rng.uniform(x_box[:, 0], x_box[:, 1])
        xi = rng.normal(size=dim)
        xi /= np.linalg.norm(xi)
        val = lambda t: p.value(x, t * xi)
        tt = np.linspace(0.1, 3.0, 30)
        vv = np.array([val(t) for t in tt])
        if np.any(np.abs(vv) < 1e-12) or np.any(vv[:-1] * vv[1:] < 0):
            char_nonempty = True
            break

    def project(x, xi):
        y = np.concatenate([x, xi])
        r0 = float(np.linalg.norm(xi))

        def cons(yv):
            xv, xiv = yv[:dim], yv[dim:]
            c = [pF.value(xv, xiv)]
            if char_nonempty:
                c.insert(0, p.value(xv, xiv))
            else:
                c.append(float(xiv @ xiv) - r0 ** 2)
            return np.array(c)

        for _ in range(60):
            c = cons(y)
            if np.linalg.norm(c) < 1e-10:
                return y[:dim], y[dim:]
            J = np.empty((c.size, y.size))
            for j in range(y.size):
                h = 1e-6 * max(1.0, abs(y[j]))
                yp = y.copy()
                ym = y.copy()
                yp[j] += h
                ym[j] -= h
                J[:, j] = (cons(yp) - cons(ym)) / (2 * h)
            step, *_ = np.linalg.lstsq(J, -c, rcond=None)
            y = y + step
        return None

    vals, pts = [], []
    for _ in range(n_samples):
        x = rng.uniform(x_box[:, 0], x_box[:, 1])
        xi = rng.normal(size=dim)
        xi *= rng.uniform(*xi_radius) / np.linalg.norm(xi)
        proj = project(x, xi)
        if proj is None:
            continue
        xs, xis = proj
        if not (np.all(xs >= x_box[:, 0] - 1e-9) and np.all(xs <= x_box[:, 1] + 1e-9)):
            continue
        if np.linalg.norm(xis) < 1e-8:
            continue
        v = ppF.value(xs, xis)
        vals.append(v)
        pts.append((xs, xis, v))

    if not vals:
        return PseudoconvexityReport(passed=False, min_bracket=np.nan,
                                     n_constraint_points=0,
                                     empty_constraint_set=True)
    mn = float(np.min(vals))
    return PseudoconvexityReport(passed=mn > 0, min_bracket=mn,
                                 n_constraint_points=len(vals),
                                 empty_constraint_set=False, points=pts)


@dataclass
class BolkerReport:
    """Combined verdict at one canonical point, JSON-serializable."""

    point: CanonicalPoint
    immersion: ImmersionResult
    injectivity: InjectivityResult
    pvs: Optional[PVSResult] = None
    pseudoconvexity: Optional[PseudoconvexityReport] = None

    @property
    def passed(self) -> bool:
        return self.immersion.passed and self.injectivity.passed

    def to_json(self) -> str:
        obj = {
            "point": {
                "z": self.point.z.tolist(),
                "zeta": self.point.zeta.tolist(),
                "x": self.point.x.tolist(),
                "eta": self.point.eta.tolist(),
            },
            "immersion": {"pass": self.immersion.passed,
                          "verdict": self.immersion.verdict,
                          "margin": self.immersion.margin,
                          "form": self.immersion.form},
            "injectivity": {"pass": self.injectivity.passed,
                            "witnesses": [w.tolist() for w in self.injectivity.witnesses],
                            "min_margin": self.injectivity.min_margin},
            "pvs": None if self.pvs is None else
                {"visible": self.pvs.visible, "residual": self.pvs.residual,
                 "parallel_angle": self.pvs.parallel_angle},
            "pseudoconvexity": None if self.pseudoconvexity is None else
                {"pass": self.pseudoconvexity.passed,
                 "min_bracket": self.pseudoconvexity.min_bracket,
                 "empty": self.pseudoconvexity.empty_constraint_set},
        }
        return json.dumps(obj, indent=2)


def bolker_report(fib: Fibration, point: CanonicalPoint,
                  form: str = "auto") -> BolkerReport:
    return BolkerReport(point=point,
                        immersion=immersion_check(fib, point, form=form),
                        injectivity=injectivity_check(fib, point))
