"""Gaussian wave packets, finite-scale singularity detection, wavefront
propagation through the canonical relation, and the stationary-phase kernel
pipeline.

The detector pairs a field against wave packets over a geometric ladder of
scales and fits the exponential decay rate of the magnitudes; exponential
decay is evidence of phase-space regularity at the packet's center, flat or
polynomial decay of a singularity.  The kernel pipeline restricts the packet
pairing of the transform to the incidence slice through a base point,
producing an oscillatory integral whose complex critical points control
where transform data can see field singularities.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import roots_legendre

from .errors import (
    BelowFloorWarning,
    ChartFailureError,
    GridTooCoarseWarning,
    HessianDegenerateError,
    NewtonDivergedError,
    NoIncidenceError,
    NotInImageError,
)
from .fibration import Fibration, gauss_panel_rule
from .geometry import ScalarField

__all__ = [
    "WavePacketFamily",
    "DecayEstimate",
    "WavefrontReport",
    "PhaseDiagnostics",
    "fbi_transform",
    "fbi_inverse",
    "decay_rate_estimate",
    "wavefront_scan",
    "propagate_wavefront",
    "chi_map",
    "chi_right_inverse",
    "kernel_K_lambda",
    "critical_point_solve",
    "phase_value",
    "DEFAULT_LAMBDAS",
]

DEFAULT_LAMBDAS = tuple(float(8 * 2 ** k) for k in range(8))  # 8 ... 1024
VALUE_FLOOR = 1e-300


@lru_cache(maxsize=256)
def _gl(n: int):
    return roots_legendre(n)


def _gl_nodes(a: float, b: float, n: int):
    x, w = _gl(min(max(n, 6), 4000))
    h = 0.5 * (b - a)
    return a + h * (x + 1.0), h * w


@dataclass(frozen=True)
class WavePacketFamily:
    """Gaussian wave packets at scale lam on R^dim.

    packet(u)(y) = lam^{3 dim/4} e^{i lam y.u2} c e^{-lam |y-u1|^2/2} with
    c = 2^{-dim/2} pi^{-3 dim/4}.
    """

    dim: int
    lam: float

    @property
    def normalization(self) -> float:
        return 2.0 ** (-self.dim / 2.0) * math.pi ** (-0.75 * self.dim)

    @property
    def sigma(self) -> float:
        return 1.0 / math.sqrt(self.lam)

    def evaluate(self, u1: np.ndarray, u2: np.ndarray, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d2 = np.sum((y - u1) ** 2, axis=-1)
        phase = self.lam * (y @ np.asarray(u2, dtype=float))
        amp = self.lam ** (0.75 * self.dim) * self.normalization
        return amp * np.exp(1j * phase - 0.5 * self.lam * d2)

    def l2_mass(self) -> float:
        """Closed form of the squared L2 norm: (lam / 2 pi)^dim."""
        return (self.lam / (2.0 * math.pi)) ** self.dim


def _axis_plan(f: ScalarField, u1: np.ndarray, u2: np.ndarray, lam: float,
               pad: float = 8.0):
    """Per-axis windows and node counts for the packet pairing.

    Windows cover the packet core and extend toward the nearest support
    point, so tails that carry the leading contribution are captured.
    """
    sigma = 1.0 / math.sqrt(lam)
    box = f.support_box
    proj = np.clip(u1, box[:, 0], box[:, 1])
    lo = np.minimum(u1, proj) - pad * sigma
    hi = np.maximum(u1, proj) + pad * sigma
    counts = []
    for i in range(u1.size):
        width = hi[i] - lo[i]
        cycles = lam * abs(u2[i]) * width / (2.0 * math.pi)
        counts.append(int(3.5 * cycles + 3.0 * width / sigma + 30))
    return lo, hi, counts


def fbi_transform(f: ScalarField, u: tuple, lam: float, pad: float = 8.0) -> complex:
    """Pairing of f against the conjugate wave packet centered at u = (u1, u2).

    Tensor Gauss-Legendre over a window adapted to the scale and the
    oscillation, with panels split at known interfaces of ``f`` along the
    first axis.
    """
    u1 = np.atleast_1d(np.asarray(u[0], dtype=float))
    u2 = np.atleast_1d(np.asarray(u[1], dtype=float))
    n = f.dim
    fam = WavePacketFamily(dim=n, lam=lam)
    lo, hi, counts = _axis_plan(f, u1, u2, lam, pad)
    amp = lam ** (0.75 * n) * fam.normalization

    def axis_factor(y, i):
        return np.exp(-1j * lam * y * u2[i] - 0.5 * lam * (y - u1[i]) ** 2)

    if n == 1:
        segs = [lo[0], hi[0]]
        if f.line_crossings is not None:
            segs += [t for t in f.line_crossings(np.array([0.0]), np.array([1.0]))
                     if lo[0] < t < hi[0]]
        segs = sorted(segs)
        total = 0.0 + 0.0j
        for a, b in zip(segs[:-1], segs[1:]):
            m = max(16, int(counts[0] * (b - a) / (hi[0] - lo[0])) + 12)
            y, w = _gl_nodes(a, b, m)
            vals = f(y[:, None])
            total += np.sum(w * vals * axis_factor(y, 0))
        return complex(amp * total)

    # outer tensor over axes 1..n-1, inner split panels along axis 0
    outer_axes = []
    for i in range(1, n):
        y, w = _gl_nodes(lo[i], hi[i], counts[i])
        outer_axes.append((y, w * axis_factor(y, i)))
    if f.line_crossings is None:
        # fully tensorized path
        y0, w0 = _gl_nodes(lo[0], hi[0], counts[0])
        axes_y = [y0] + [a[0] for a in outer_axes]
        mesh = np.meshgrid(*axes_y, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = f(pts).reshape(mesh[0].shape).astype(complex)
        vals *= np.multiply.outer(w0 * axis_factor(y0, 0),
                                  np.ones([len(a[0]) for a in outer_axes]))
        for k, (y, wf) in enumerate(outer_axes):
            shape = [1] * n
            shape[k + 1] = y.size
            vals *= wf.reshape(shape)
        return complex(amp * vals.sum())

    mesh_tail = np.meshgrid(*[a[0] for a in outer_axes], indexing="ij")
    wf_tail = np.ones(mesh_tail[0].shape, dtype=complex)
    for k, (y, wf) in enumerate(outer_axes):
        shape = [1] * (n - 1)
        shape[k] = y.size
        wf_tail = wf_tail * wf.reshape(shape)
    tails = np.stack([m.ravel() for m in mesh_tail], axis=-1)
    wf_flat = wf_tail.ravel()

    e0 = np.zeros(n)
    e0[0] = 1.0
    total = 0.0 + 0.0j
    for tail, wt in zip(tails, wf_flat):
        p = np.concatenate([[0.0], tail])
        segs = [lo[0], hi[0]]
        segs += [t for t in f.line_crossings(p, e0) if lo[0] < t < hi[0]]
        segs = sorted(segs)
        row = 0.0 + 0.0j
        for a, b in zip(segs[:-1], segs[1:]):
            m = max(12, int(counts[0] * (b - a) / (hi[0] - lo[0])) + 10)
            y, w = _gl_nodes(a, b, m)
            pts = np.empty((y.size, n))
            pts[:, 0] = y
            pts[:, 1:] = tail
            row += np.sum(w * f(pts) * axis_factor(y, 0))
        total += wt * row
    return complex(amp * total)


def fbi_inverse(u1_axes: Sequence[np.ndarray], u2_axes: Sequence[np.ndarray],
                coeffs: np.ndarray, lam: float, y_pts: np.ndarray) -> np.ndarray:
    """Phase-space synthesis: sum of coeff(u) * packet_u(y) over the grid.

    The coefficient grid must resolve the packets: spacing above half the
    packet scale on any axis triggers a warning.
    """
    n = len(u1_axes)
    sigma = 1.0 / math.sqrt(lam)
    cell = 1.0
    for ax in list(u1_axes) + list(u2_axes):
        d = float(ax[1] - ax[0])
        if d > 0.5 * sigma:
            warnings.warn("phase-space grid spacing exceeds half the packet scale",
                          GridTooCoarseWarning, stacklevel=2)
        cell *= d
    fam = WavePacketFamily(dim=n, lam=lam)
    amp = lam ** (0.75 * n) * fam.normalization
    y_pts = np.atleast_2d(np.asarray(y_pts, dtype=float))

    mesh = np.meshgrid(*u1_axes, *u2_axes, indexing="ij")
    U1 = np.stack([m.ravel() for m in mesh[:n]], axis=-1)
    U2 = np.stack([m.ravel() for m in mesh[n:]], axis=-1)
    c = np.asarray(coeffs).ravel()

    out = np.zeros(y_pts.shape[0], dtype=complex)
    chunk = max(1, int(2e6 // max(y_pts.shape[0], 1)))
    for k0 in range(0, c.size, chunk):
        sl = slice(k0, min(k0 + chunk, c.size))
        d2 = np.sum((y_pts[None, :, :] - U1[sl, None, :]) ** 2, axis=-1)
        phase = lam * np.einsum("ki,pi->kp", U2[sl], y_pts)
        out += np.einsum("k,kp->p", c[sl],
                         amp * np.exp(1j * phase - 0.5 * lam * d2))
    return out * cell


@dataclass
class DecayEstimate:
    eps_hat: float
    residual: float
    classification: str       # "regular" | "singular" | "inconclusive"
    lams: np.ndarray
    values: np.ndarray
    used: np.ndarray
    below_floor: bool = False


def _trim_noise_tail(lams: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Mask for fit points: drop trailing values that are both tiny and no
    longer decaying (quadrature noise saturation)."""
    keep = vals > VALUE_FLOOR
    vmax = vals[keep].max() if np.any(keep) else 0.0
    for k in range(vals.size - 1, 0, -1):
        if not keep[k]:
            continue
        if vals[k] < 1e-8 * vmax and vals[k] > 0.5 * vals[k - 1]:
            keep[k] = False
        else:
            break
    return keep


def decay_rate_estimate(f: ScalarField, u: tuple, lam_list=DEFAULT_LAMBDAS,
                        eps_singular: float = 0.01, eps_regular: float = 0.05,
                        residual_max: float = 0.5) -> DecayEstimate:
    """Fitted exponential decay rate of the packet pairing over a scale ladder.

    Least-squares slope of log magnitude against the scale; singular when the
    slope is below ``eps_singular``, regular above ``eps_regular`` with an
    acceptable fit, inconclusive otherwise.  All-floor magnitudes classify
    regular with the below-floor flag.
    """
    lams = np.asarray(lam_list, dtype=float)
    vals = np.array([abs(fbi_transform(f, u, lam)) for lam in lams])
    usable = _trim_noise_tail(lams, vals)
    if usable.sum() < 2:
        warnings.warn("all packet magnitudes below floor", BelowFloorWarning,
                      stacklevel=2)
        return DecayEstimate(eps_hat=np.inf, residual=0.0, classification="regular",
                             lams=lams, values=vals, used=usable, below_floor=True)

    def fit(mask):
        x = lams[mask]
        y = np.log(vals[mask])
        A = np.stack([np.ones_like(x), -x], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return float(coef[1]), float(np.sqrt(np.mean((A @ coef - y) ** 2)))

    # a saturated tail (values stuck at the quadrature floor) wrecks the
    # slope of a genuinely decaying sequence; shrink from the top scale
    # while the fit is poor
    eps_hat, resid = fit(usable)
    while resid > residual_max and usable.sum() > 4:
        usable[np.nonzero(usable)[0][-1]] = False
        eps_hat, resid = fit(usable)
    if eps_hat < eps_singular:
        cls = "singular"
    elif eps_hat > eps_regular and resid < residual_max:
        cls = "regular"
    else:
        cls = "inconclusive"
    return DecayEstimate(eps_hat=eps_hat, residual=resid, classification=cls,
                         lams=lams, values=vals, used=usable)


@dataclass
class WavefrontReport:
    """Per-node decay estimates over a phase-space grid."""

    points: list                  # [(u1, u2), ...] in scan order
    eps_hat: np.ndarray
    residual: np.ndarray
    classification: list
    thresholds: dict

    def singular_points(self):
        return [p for p, c in zip(self.points, self.classification)
                if c == "singular"]

    def to_csv(self, path) -> None:
        n = len(self.points[0][0])
        cols = [f"u1_{i}" for i in range(n)] + [f"u2_{i}" for i in range(n)]
        with open(path, "w") as fh:
            fh.write("# thresholds: " + repr(self.thresholds) + "\n")
            fh.write(",".join(cols + ["epsilon_hat", "residual", "class"]) + "\n")
            for (u1, u2), e, r, c in zip(self.points, self.eps_hat,
                                         self.residual, self.classification):
                vals = list(u1) + list(u2) + [e, r]
                fh.write(",".join(f"{v:.17g}" for v in vals) + f",{c}\n")


def wavefront_scan(f: ScalarField, phase_points: Sequence[tuple],
                   lam_list=DEFAULT_LAMBDAS, **kwargs) -> WavefrontReport:
    """Map the decay estimator over phase-space points (deterministic order)."""
    eps, res, cls = [], [], []
    for u in phase_points:
        est = decay_rate_estimate(f, u, lam_list, **kwargs)
        eps.append(est.eps_hat)
        res.append(est.residual)
        cls.append(est.classification)
    thresholds = {"eps_singular": kwargs.get("eps_singular", 0.01),
                  "eps_regular": kwargs.get("eps_regular", 0.05),
                  "residual_max": kwargs.get("residual_max", 0.5)}
    return WavefrontReport(points=list(phase_points), eps_hat=np.array(eps),
                           residual=np.array(res), classification=cls,
                           thresholds=thresholds)


# ---------------------------------------------------------------------------
# wavefront propagation through the canonical relation


def propagate_wavefront(fib: Fibration, source: Sequence[tuple],
                        theta_grid: int = 720) -> list:
    """Push (x, eta) pairs through the canonical relation: all (z, zeta) with
    x on the fiber of z and eta conormal to it there."""
    out = []
    for (x, eta) in source:
        x = np.asarray(x, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if np.linalg.norm(eta) == 0:
            raise ValueError("eta must be nonzero")
        if fib.kind == "defining":
            hits = _propagate_defining(fib, x, eta, theta_grid)
        else:
            hits = _propagate_ray(fib, x, eta, theta_grid)
        if not hits:
            raise NoIncidenceError(f"no fiber through {x} conormal to {eta}")
        out.extend(hits)
    return out


def _propagate_defining(fib, x, eta, theta_grid):
    ch = fib.defining_chart
    if ch.m != 1 or ch.k != 1:
        return _propagate_defining_general(fib, x, eta)
    lo, hi = fib.theta_box[0]

    def cross(th):
        g = ch.b_x(x, np.array([th]))[0]
        return eta[0] * g[1] - eta[1] * g[0]

    ths = np.linspace(lo, hi, theta_grid, endpoint=False)
    vals = np.array([cross(t) for t in ths])
    hits = []
    for i in range(theta_grid):
        a, b = ths[i], ths[(i + 1) % theta_grid] + (hi - lo if i + 1 == theta_grid else 0.0)
        va, vb = vals[i], vals[(i + 1) % theta_grid]
        if va == 0.0 or va * vb < 0:
            root = a if va == 0.0 else brentq(cross, a, b, xtol=1e-13)
            th = np.array([root])
            g = ch.b_x(x, th)[0]
            zdd = np.array([-float(g @ eta) / float(g @ g)])
            if abs(zdd[0]) < 1e-12:
                continue
            resid = np.linalg.norm(ch.b_x(x, th).T @ zdd + eta)
            if resid > 1e-8 * np.linalg.norm(eta):
                continue
            z = np.concatenate([th, np.atleast_1d(ch.b(x, th))])
            zeta = np.concatenate([-(ch.b_zprime(x, th).T @ zdd), zdd])
            hits.append((z, zeta))
    return hits


def _propagate_defining_general(fib, x, eta, n_starts: int = 16):
    ch = fib.defining_chart
    rng = np.random.default_rng(11)
    lo, hi = fib.theta_box[:, 0], fib.theta_box[:, 1]
    hits = []

    def resid(th):
        B = ch.b_x(x, th)                # (k, n)
        zdd, *_ = np.linalg.lstsq(B.T, -eta, rcond=None)
        return B.T @ zdd + eta, zdd

    for _ in range(n_starts):
        th = rng.uniform(lo, hi)
        for _ in range(60):
            r, zdd = resid(th)
            if np.linalg.norm(r) < 1e-10:
                break
            J = np.empty((r.size, th.size))
            for j in range(th.size):
                h = 1e-6 * max(1.0, abs(th[j]))
                tp = th.copy()
                tm = th.copy()
                tp[j] += h
                tm[j] -= h
                J[:, j] = (resid(tp)[0] - resid(tm)[0]) / (2 * h)
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            th = th + step
        r, zdd = resid(th)
        if np.linalg.norm(r) < 1e-8 * np.linalg.norm(eta) and \
                np.linalg.norm(zdd) > 1e-10:
            z = np.concatenate([th, np.atleast_1d(ch.b(x, th))])
            zeta = np.concatenate([-(ch.b_zprime(x, th).T @ zdd), zdd])
            if not any(np.linalg.norm(z - z0) < 1e-6 for z0, _ in hits):
                hits.append((z, zeta))
    return hits


def _propagate_ray(fib, x, eta, psi_grid):
    """Shoot fiber directions at x with velocity orthogonal to eta, flow back
    to the parameter manifold."""
    rays = fib.rays
    if rays.invert is None:
        raise ChartFailureError("ray propagation needs an invertible parametrization")
    from .bolker import variation_basis
    from .fibration import _time_of_point
    from .geometry import BundlePoint, flow_integrate

    n = rays.field.base_dim
    fiber_dim = rays.field.state_dim - n
    if fiber_dim != n or n != 2:
        raise ChartFailureError(
            "ray propagation implemented for planar cotangent fibers")

    def pairing(psi):
        xi = np.array([math.cos(psi), math.sin(psi)])
        state = np.concatenate([x, xi])
        v = rays.field(state)[:n]
        return float(eta @ v)

    psis = np.linspace(0.0, 2 * math.pi, psi_grid, endpoint=False)
    vals = np.array([pairing(p) for p in psis])
    hits = []
    for i in range(psi_grid):
        a = psis[i]
        b = psis[(i + 1) % psi_grid] + (2 * math.pi if i + 1 == psi_grid else 0.0)
        va, vb = vals[i], vals[(i + 1) % psi_grid]
        if va * vb < 0 or va == 0.0:
            root = a if va == 0.0 else brentq(pairing, a, b, xtol=1e-13)
            xi = np.array([math.cos(root), math.sin(root)])
            traj = flow_integrate(rays.field, BundlePoint(base=x, fiber=xi),
                                  chart=rays.chart, options=rays.options)
            if traj.trapped_minus:
                continue
            z_state = traj.state(-traj.tau_minus)
            theta = rays.invert(z_state)
            t_x = traj.tau_minus
            basis = variation_basis(rays, theta, np.array([t_x]))[0]   # (n, N)
            zeta = -(basis.T @ eta)
            hits.append((theta, zeta))
    return hits


# ---------------------------------------------------------------------------
# slice charts, the chi map, and the kernel pipeline (defining form)


def _require_defining(fib: Fibration):
    if fib.defining_chart is None:
        raise ChartFailureError(
            "the kernel pipeline requires a defining-form fibration")
    return fib.defining_chart


def _slice_z(fib: Fibration, theta, x):
    """Point of the incidence slice through x: z = (theta, b(x, theta)).

    Holomorphic in (theta, x) whenever the defining function is.
    """
    ch = fib.defining_chart
    return np.concatenate([np.atleast_1d(theta), np.atleast_1d(ch.b(x, theta))])


def phase_value(fib: Fibration, theta, x, v1, v2):
    """Oscillatory phase of the slice integral: -z.v2 + i (z - v1)^2 / 2."""
    z = _slice_z(fib, theta, x)
    dz = z - np.asarray(v1)
    return -(z @ np.asarray(v2)) + 0.5j * np.sum(dz * dz)


def chi_map(fib: Fibration, v: tuple, seeds: int = 8,
            tol: float = 1e-10) -> tuple:
    """The canonical-relation graph map: (x, eta) paired with (v1, v2).

    Solves the characterization system (x on the fiber of v1, eta conormal
    there, pullback matching v2) by multi-start Gauss-Newton; raises
    NotInImage if no start converges.
    """
    ch = _require_defining(fib)
    v1 = np.asarray(v[0], dtype=float)
    v2 = np.asarray(v[1], dtype=float)
    th, s = v1[: ch.m], v1[ch.m:]

    # eta'' = zeta'' is pinned by v2's dep block; solve for x on the fiber
    # with -b_theta^T zeta'' matching v2's parameter block
    zdd = v2[ch.m:]
    if np.linalg.norm(zdd) < 1e-14:
        raise NotInImageError("v2 has no level-component")

    nodes, _ = fib.fiber_quadrature(v1, order=8)
    if nodes.shape[0] == 0:
        raise NotInImageError("empty fiber")
    idx = np.linspace(0, nodes.shape[0] - 1, min(seeds, nodes.shape[0])).astype(int)

    def system(x):
        r1 = np.atleast_1d(ch.b(x, th)) - s
        r2 = -(ch.b_zprime(x, th).T @ zdd) - v2[: ch.m]
        return np.concatenate([r1, r2])

    best = None
    for i in idx:
        x = nodes[i].copy()
        for _ in range(80):
            r = system(x)
            if np.linalg.norm(r) < tol:
                break
            J = np.empty((r.size, x.size))
            for j in range(x.size):
                h = 1e-6 * max(1.0, abs(x[j]))
                xp = x.copy()
                xm = x.copy()
                xp[j] += h
                xm[j] -= h
                J[:, j] = (system(xp) - system(xm)) / (2 * h)
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            if np.linalg.norm(step) > 1.0:
                step *= 1.0 / np.linalg.norm(step)
            x = x + step
        r = np.linalg.norm(system(x))
        if best is None or r < best[0]:
            best = (r, x)
    resid, x = best
    if resid > 1e-8:
        raise NotInImageError(f"phase-space point off the image (residual {resid:.2e})")
    eta = -(ch.b_x(x, th).T @ zdd)
    return x, eta


def chi_right_inverse(fib: Fibration, x: np.ndarray, eta: np.ndarray,
                      theta_ref: Optional[np.ndarray] = None,
                      tol: float = 1e-11) -> tuple:
    """A right inverse of the graph map: (v1, v2) with chi(v) = (x, eta).

    Solves the conormality condition for the fiber parameters (nearest
    solution to ``theta_ref``), then reads off v2.
    """
    ch = _require_defining(fib)
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if theta_ref is None:
        theta_ref = 0.5 * (fib.theta_box[:, 0] + fib.theta_box[:, 1])
    th = np.asarray(theta_ref, dtype=float).copy()

    def resid(th):
        B = ch.b_x(x, th)
        zdd, *_ = np.linalg.lstsq(B.T, -eta, rcond=None)
        return B.T @ zdd + eta, zdd

    for _ in range(80):
        r, zdd = resid(th)
        if np.linalg.norm(r) < tol * max(1.0, np.linalg.norm(eta)):
            break
        J = np.empty((r.size, th.size))
        for j in range(th.size):
            h = 1e-7 * max(1.0, abs(th[j]))
            tp = th.copy()
            tm = th.copy()
            tp[j] += h
            tm[j] -= h
            J[:, j] = (resid(tp)[0] - resid(tm)[0]) / (2 * h)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        th = th + step
    r, zdd = resid(th)
    if np.linalg.norm(r) > 1e-9 * max(1.0, np.linalg.norm(eta)):
        raise NotInImageError("no fiber through x conormal to eta near the reference")
    v1 = np.concatenate([th, np.atleast_1d(ch.b(x, th))])
    v2 = np.concatenate([-(ch.b_zprime(x, th).T @ zdd), zdd])
    return v1, v2


def kernel_K_lambda(fib: Fibration, x: np.ndarray, v: tuple, lam: float,
                    pad: float = 11.0, order_boost: float = 1.0) -> complex:
    """Packet-pair kernel restricted to the incidence slice through x.

    Gauss-Legendre quadrature of lam^{3N/4} c_N integral of
    kappa e^{i lam Psi} over the slice parameters, with the window set by
    the Gaussian localization around v1.
    """
    ch = _require_defining(fib)
    if ch.m != 1:
        raise ChartFailureError("slice quadrature implemented for 1d parameter slices")
    x = np.asarray(x, dtype=float)
    v1 = np.asarray(v[0], dtype=float)
    v2 = np.asarray(v[1], dtype=float)
    N = fib.N
    c_N = 2.0 ** (-N / 2.0) * math.pi ** (-0.75 * N)

    # seed: slice parameter nearest to v1
    lo, hi = fib.theta_box[0]
    ths = np.linspace(lo, hi, 512)
    d = np.array([np.linalg.norm(_slice_z(fib, np.array([t]), x) - v1) for t in ths])
    t0 = ths[int(np.argmin(d))]
    # local slope of the slice through parameter space
    h = 1e-5
    slope = np.linalg.norm(_slice_z(fib, np.array([t0 + h]), x)
                           - _slice_z(fib, np.array([t0 - h]), x)) / (2 * h)
    width = pad / math.sqrt(lam) / max(slope, 1e-6)
    a, b = t0 - width, t0 + width
    cycles = lam * np.linalg.norm(v2) * slope * 2 * width / (2 * math.pi)
    m = int((3.5 * cycles + 3.0 * 2 * width * slope * math.sqrt(lam) + 40) * order_boost)
    t_nodes, w_nodes = _gl_nodes(a, b, m)

    total = 0.0 + 0.0j
    for t, w in zip(t_nodes, w_nodes):
        th = np.array([t])
        z = _slice_z(fib, th, x)
        dz = z - v1
        phase = -(z @ v2) + 0.5j * float(dz @ dz)
        if fib.kappa is None:
            kap = 1.0
        else:
            kap = float(np.asarray(fib.kappa(z, x[None, :]), dtype=float).ravel()[0])
        total += w * kap * cmath.exp(1j * lam * phase)
    return complex(lam ** (0.75 * N) * c_N * total)


@dataclass
class PhaseDiagnostics:
    """Critical-point data of the slice phase at one (x, v)."""

    x: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    zeta_c: np.ndarray            # complex critical slice parameters
    psi: complex
    hessian_det: complex
    newton_residual: float
    slice_point: np.ndarray       # complex z(zeta_c, x)
    x_anchor: np.ndarray          # pi(chi(v))
    eta_anchor: np.ndarray
    residual_anchor_phase: float = np.nan     # |psi + v1.v2| at x = anchor
    residual_gradient: float = np.nan         # |d_x psi - eta| at x = anchor
    im_psi: float = np.nan

    def to_json_dict(self) -> dict:
        return {
            "x": np.asarray(self.x).tolist(),
            "v1": self.v1.tolist(), "v2": self.v2.tolist(),
            "zeta_c": [[c.real, c.imag] for c in np.atleast_1d(self.zeta_c)],
            "psi": [self.psi.real, self.psi.imag],
            "hessian_det": [self.hessian_det.real, self.hessian_det.imag],
            "newton_residual": self.newton_residual,
            "residual_anchor_phase": self.residual_anchor_phase,
            "residual_gradient": self.residual_gradient,
            "im_psi": self.im_psi,
        }


def _slice_jacobian(fib, zeta, x):
    """d z(zeta, x) / d zeta = (I; b_theta), complex-capable."""
    ch = fib.defining_chart
    Bth = np.atleast_2d(ch.b_zprime(x, zeta))
    J = np.zeros((ch.m + ch.k, ch.m), dtype=np.result_type(Bth, 1.0))
    J[: ch.m, :] = np.eye(ch.m)
    J[ch.m:, :] = Bth
    return J


def _phase_and_derivs(fib, zeta, x, v1, v2, h: float = 1e-6):
    """Phase value, analytic complex gradient, and Hessian by differencing
    the gradient (valid for holomorphic defining functions)."""
    m = zeta.size

    def val_grad(zz):
        z = _slice_z(fib, zz, x)
        dz = z - v1
        f = -(z @ v2) + 0.5j * np.sum(dz * dz)
        J = _slice_jacobian(fib, zz, x)
        return f, J.T @ (-np.asarray(v2, dtype=complex) + 1j * dz)

    f0, g = val_grad(zeta)
    H = np.empty((m, m), dtype=complex)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        _, gp = val_grad(zeta + e)
        _, gm = val_grad(zeta - e)
        H[:, j] = (gp - gm) / (2 * h)
    return f0, g, 0.5 * (H + H.T)


def _newton_phase(fib, zeta0, x, v1, v2, tol: float = 1e-12,
                  max_iter: int = 60):
    zeta = np.atleast_1d(np.asarray(zeta0, dtype=complex))
    for _ in range(max_iter):
        f0, g, H = _phase_and_derivs(fib, zeta, x, v1, v2)
        if np.linalg.norm(g) < tol:
            return zeta, f0, H, float(np.linalg.norm(g))
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError as exc:
            raise HessianDegenerateError(str(exc)) from exc
        zeta = zeta + step
    f0, g, H = _phase_and_derivs(fib, zeta, x, v1, v2)
    r = float(np.linalg.norm(g))
    if r > 1e-9:
        raise NewtonDivergedError(f"phase Newton stalled (|grad| = {r:.2e})")
    return zeta, f0, H, r


def critical_point_solve(fib: Fibration, x: np.ndarray, v: tuple,
                         homotopy_steps: int = 8,
                         check_uniqueness: bool = False,
                         uniqueness_starts: int = 16,
                         seed: int = 0) -> PhaseDiagnostics:
    """Complex critical point of the slice phase and its diagnostics.

    Newton from the real critical point at the anchor x = pi(chi(v)), with
    continuation in x; records the phase value, Hessian determinant, the
    anchor identities (phase offset and gradient matching the conormal), and
    the imaginary part at the requested x.
    """
    ch = _require_defining(fib)
    v1 = np.asarray(v[0], dtype=float)
    v2 = np.asarray(v[1], dtype=float)
    x = np.asarray(x, dtype=float)
    x0, eta0 = chi_map(fib, v)
    zeta = v1[: ch.m].astype(complex)       # real critical point at the anchor

    # anchor diagnostics
    zeta_a, psi_a, H_a, r_a = _newton_phase(fib, zeta, x0, v1, v2)
    anchor_phase = abs(psi_a + float(v1 @ v2))

    def solve_at(xx, z0):
        return _newton_phase(fib, z0, xx, v1, v2)

    # gradient identity at the anchor by central differences in x
    hx = 1e-6
    grad = np.empty(x0.size, dtype=complex)
    for j in range(x0.size):
        e = np.zeros(x0.size)
        e[j] = hx
        _, pp, _, _ = solve_at(x0 + e, zeta_a)
        _, pm, _, _ = solve_at(x0 - e, zeta_a)
        grad[j] = (pp - pm) / (2 * hx)
    residual_gradient = float(np.linalg.norm(grad - eta0))

    # continuation to the requested x
    zc, psi, H, r = zeta_a, psi_a, H_a, r_a
    if np.linalg.norm(x - x0) > 0:
        for k in range(1, homotopy_steps + 1):
            xx = x0 + (k / homotopy_steps) * (x - x0)
            zc, psi, H, r = solve_at(xx, zc)

    hdet = complex(np.linalg.det(np.atleast_2d(H)))
    if abs(hdet) < 1e-12:
        raise HessianDegenerateError(f"|det| = {abs(hdet):.2e}")

    if check_uniqueness:
        rng = np.random.default_rng(seed)
        roots = [zc]
        for _ in range(uniqueness_starts):
            z0 = zc + 0.3 * (rng.normal(size=ch.m) + 1j * rng.normal(size=ch.m))
            try:
                zz, *_ = _newton_phase(fib, z0, x, v1, v2)
            except (NewtonDivergedError, HessianDegenerateError):
                continue
            if all(np.linalg.norm(zz - rr) > 1e-8 for rr in roots):
                roots.append(zz)
        if len(roots) > 1:
            warnings.warn(f"multiple phase critical points found: {len(roots)}",
                          stacklevel=2)

    return PhaseDiagnostics(
        x=x, v1=v1, v2=v2, zeta_c=zc, psi=psi, hessian_det=hdet,
        newton_residual=r,
        slice_point=np.asarray(_slice_z(fib, zc, x + 0j)),
        x_anchor=x0, eta_anchor=eta0,
        residual_anchor_phase=anchor_phase,
        residual_gradient=residual_gradient,
        im_psi=float(psi.imag))
