"""Layer stripping over a foliation by level sets.

Given transform data and a foliation whose levels are strictly pseudoconvex
with visible conormals, the stripper walks levels from the outside in.  At
each level it finds curves tangent to the level set, runs the wave-packet
detector on the data restricted to nearby curve parameters in the conormal
direction, and marks the shell vanished when every probe is regular and the
outer region is already clear.  The first singular or inconclusive verdict
stops the descent; the certified region is the union of cleared shells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .bolker import pseudoconvexity_check, pvs_membership
from .errors import SearchFailedError
from .fibration import Fibration
from .geometry import ScalarField, Symbol, fd_gradient, poisson_bracket
from .microlocal import DEFAULT_LAMBDAS, decay_rate_estimate

__all__ = [
    "Foliation",
    "FoliationReport",
    "LevelVerdict",
    "RecoveryReport",
    "foliation_validate",
    "tangent_ray_at",
    "layer_strip",
]


@dataclass
class Foliation:
    """Level sets Gamma_s = {F = s} of a scalar function over (s_min, s_max].

    ``center`` seeds the radial level sampler; levels must be closed and
    star-shaped about it (concentric circles and their perturbations).
    """

    F: Callable[[np.ndarray], float]
    s_min: float
    s_max: float
    dim: int
    center: np.ndarray = None
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    r_max: float = 10.0

    def __post_init__(self):
        self.center = np.zeros(self.dim) if self.center is None \
            else np.asarray(self.center, dtype=float)

    def dF(self, x: np.ndarray) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        return fd_gradient(self.F, x)

    def level_points(self, s: float, count: int = 32) -> np.ndarray:
        """Radially sampled points on Gamma_s (2d charts)."""
        if self.dim != 2:
            raise NotImplementedError("level sampling implemented for 2d charts")
        pts = []
        for ang in np.linspace(0.0, 2 * math.pi, count, endpoint=False):
            w = np.array([math.cos(ang), math.sin(ang)])

            def h(r):
                return self.F(self.center + r * w) - s

            rr = np.linspace(1e-6, self.r_max, 128)
            vals = np.array([h(r) for r in rr])
            sign = np.nonzero(vals[:-1] * vals[1:] < 0)[0]
            if sign.size == 0:
                continue
            i = sign[0]
            r = brentq(h, rr[i], rr[i + 1], xtol=1e-13)
            pts.append(self.center + r * w)
        return np.array(pts)

    def validate_nesting(self, levels: Sequence[float], count: int = 8) -> bool:
        """Monotonicity probe: radial distance along sampled directions grows
        with the level."""
        radii = []
        for s in levels:
            pts = self.level_points(s, count)
            if pts.shape[0] < count:
                return False
            radii.append(np.linalg.norm(pts - self.center, axis=1))
        radii = np.array(radii)
        return bool(np.all(np.diff(radii, axis=0) > 0) or
                    np.all(np.diff(radii, axis=0) < 0))


@dataclass
class FoliationReport:
    passed: bool
    levels: list
    failures: list


def foliation_validate(fol: Foliation, symbol: Symbol,
                       levels: Optional[Sequence[float]] = None,
                       points_per_level: int = 12,
                       x_box: Optional[np.ndarray] = None) -> FoliationReport:
    """Visibility and pseudoconvexity of the foliation's conormals.

    Per sampled level point: the conormal dF must be a visible direction of
    the symbol, and the iterated bracket at the tangency covector must be
    positive.
    """
    if levels is None:
        levels = np.linspace(fol.s_max, fol.s_min + 0.1 * (fol.s_max - fol.s_min), 4)
    Fsym = Symbol(fun=lambda x, xi: fol.F(x))
    pF = poisson_bracket(symbol, Fsym)
    ppF = poisson_bracket(symbol, pF)

    entries, failures = [], []
    for s in levels:
        pts = fol.level_points(s, points_per_level)
        for x in pts:
            nu = fol.dF(x)
            try:
                res = pvs_membership(symbol, x, nu)
                visible = res.visible
                xi = res.xi
            except SearchFailedError:
                visible, xi = False, None
            bracket = ppF.value(x, xi) if (visible and xi is not None) else np.nan
            ok = visible and bracket > 0
            entries.append({"s": float(s), "x": x, "visible": visible,
                            "bracket": bracket, "ok": ok})
            if not ok:
                failures.append(entries[-1])
    return FoliationReport(passed=not failures, levels=entries, failures=failures)


@dataclass
class TangentRay:
    x: np.ndarray
    xi: np.ndarray
    tangency: float            # |dF(velocity)| at x, normalized
    window: float              # parameter half-window inside {F <= s + delta}


def tangent_ray_at(fol: Foliation, s: float, x: np.ndarray, symbol: Symbol,
                   delta_f: float = 1e-3) -> TangentRay:
    """A characteristic covector at x whose curve is tangent to Gamma_s.

    The covector comes from the visibility search (velocity orthogonal to
    dF); the returned window is the time span the curve can spend inside
    {F <= s + delta_f}, estimated from the iterated bracket.
    """
    x = np.asarray(x, dtype=float)
    nu = fol.dF(x)
    res = pvs_membership(symbol, x, nu)
    if not res.visible:
        raise SearchFailedError("conormal is not a visible direction at x")
    xi = res.xi
    v = symbol.dxi(x, xi)
    tangency = abs(float(nu @ v)) / (np.linalg.norm(nu) * np.linalg.norm(v))
    Fsym = Symbol(fun=lambda y, e: fol.F(y))
    bracket = poisson_bracket(symbol, poisson_bracket(symbol, Fsym)).value(x, xi)
    window = math.sqrt(2.0 * delta_f / bracket) if bracket > 0 else 0.0
    return TangentRay(x=x, xi=xi, tangency=tangency, window=window)


@dataclass
class LevelVerdict:
    s: float
    verdicts: list
    min_eps: float
    all_regular: bool


@dataclass
class RecoveryReport:
    levels: list
    certified_interval: tuple       # (s_stop, s_max]
    stopped_at: Optional[float]

    def to_json(self) -> str:
        return json.dumps({
            "levels": [{"s": lv.s, "verdicts": lv.verdicts, "min_eps": lv.min_eps,
                        "all_regular": lv.all_regular} for lv in self.levels],
            "certified_interval": list(self.certified_interval),
            "stopped_at": self.stopped_at,
        }, indent=2)


def layer_strip(fol: Foliation, fib: Fibration, data_oracle: Callable,
                symbol: Symbol, lam_list=DEFAULT_LAMBDAS,
                points_per_level: int = 32, level_step: float = 0.05,
                min_step: Optional[float] = None,
                data_box_pad: float = 1.5, **detector_kwargs) -> RecoveryReport:
    """Certify vanishing shells of the data's source, outside in.

    ``data_oracle`` maps parameter points z to transform values; the scan
    descends levels from s_max, probing each level's tangency points in the
    +-conormal directions with the wave-packet detector.  A shell is marked
    vanished only when every probe is regular and everything outside is
    already vanished; the first singular or inconclusive verdict stops the
    descent (adaptive halving of the level step on inconclusive, floored).
    """
    if min_step is None:
        min_step = 1e-3 * (fol.s_max - fol.s_min)

    data_field = ScalarField(
        fun=lambda zs: np.asarray(data_oracle(zs), dtype=float),
        support_box=np.stack([fib.theta_box[:, 0].tolist() + [-data_box_pad * fol.s_max],
                              fib.theta_box[:, 1].tolist() + [data_box_pad * fol.s_max]],
                             axis=-1),
        dim=fib.N)

    levels: list = []
    s = fol.s_max
    step = level_step
    stopped_at = None
    cleared_down_to = fol.s_max
    while s > fol.s_min + 1e-12:
        pts = fol.level_points(s, points_per_level)
        verdicts = []
        min_eps = np.inf
        all_regular = True
        for x in pts:
            ray = tangent_ray_at(fol, s, x, symbol)
            hits = _tangency_probes(fib, x, fol.dF(x))
            for (z0, zeta0) in hits:
                for sign in (+1.0, -1.0):
                    u = (z0, sign * zeta0 / np.linalg.norm(zeta0))
                    est = decay_rate_estimate(data_field, u, lam_list,
                                              **detector_kwargs)
                    verdicts.append({"x": x.tolist(), "class": est.classification,
                                     "eps": est.eps_hat, "window": ray.window,
                                     "below_floor": est.below_floor})
                    min_eps = min(min_eps, est.eps_hat)
                    if est.classification != "regular":
                        all_regular = False
        levels.append(LevelVerdict(s=float(s), verdicts=verdicts,
                                   min_eps=float(min_eps), all_regular=all_regular))
        if not all_regular:
            inconclusive = any(v["class"] == "inconclusive" for v in verdicts) \
                and not any(v["class"] == "singular" for v in verdicts)
            if inconclusive and step > min_step:
                step = max(0.5 * step, min_step)
                s = min(cleared_down_to - step, fol.s_max)
                levels.pop()
                continue
            stopped_at = float(s)
            break
        cleared_down_to = s
        s -= step
    return RecoveryReport(levels=levels,
                          certified_interval=(stopped_at if stopped_at is not None
                                              else fol.s_min, fol.s_max),
                          stopped_at=stopped_at)


def _tangency_probes(fib: Fibration, x: np.ndarray, nu: np.ndarray) -> list:
    """Parameter-space phase points of curves tangent to the level at x."""
    from .microlocal import propagate_wavefront

    return propagate_wavefront(fib, [(x, nu)])
