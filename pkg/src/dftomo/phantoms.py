"""Standard test fields: smooth bumps and indicator phantoms.

Indicator phantoms know their own interfaces: ``line_crossings(p, d)``
returns the parameters t where the line p + t d crosses a jump or kink,
which quadratures use to split panels.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .geometry import ScalarField

__all__ = [
    "gaussian_bump",
    "disk_indicator",
    "annulus_indicator",
    "half_plane_edge",
]


def gaussian_bump(dim: int = 2, center=None, width: float = 1.0,
                  amplitude: float = 1.0, box_half: float = 6.0) -> ScalarField:
    """amplitude * exp(-|x - center|^2 / (2 width^2)), effectively compact."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def fun(pts):
        d2 = np.sum((np.asarray(pts, dtype=float) - c) ** 2, axis=-1)
        return amplitude * np.exp(-0.5 * d2 / width ** 2)

    box = np.stack([c - box_half, c + box_half], axis=-1)
    return ScalarField(fun=fun, support_box=box, dim=dim)


def _circle_crossings(p, d, center, radius) -> Sequence[float]:
    p = np.asarray(p, dtype=float) - np.asarray(center, dtype=float)
    d = np.asarray(d, dtype=float)
    a = float(d @ d)
    b = 2.0 * float(p @ d)
    c = float(p @ p) - radius ** 2
    disc = b * b - 4 * a * c
    if disc <= 0 or a == 0:
        return []
    r = math.sqrt(disc)
    return [(-b - r) / (2 * a), (-b + r) / (2 * a)]


def disk_indicator(radius: float, center=None, dim: int = 2,
                   amplitude: float = 1.0) -> ScalarField:
    """Indicator of the closed disk |x - center| <= radius."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def fun(pts):
        d2 = np.sum((np.asarray(pts, dtype=float) - c) ** 2, axis=-1)
        return amplitude * (d2 <= radius ** 2).astype(float)

    box = np.stack([c - 1.5 * radius - 0.5, c + 1.5 * radius + 0.5], axis=-1)
    return ScalarField(fun=fun, support_box=box, dim=dim,
                       line_crossings=lambda p, d: _circle_crossings(p, d, c, radius))


def annulus_indicator(r_inner: float, r_outer: float, center=None,
                      dim: int = 2, amplitude: float = 1.0) -> ScalarField:
    """Indicator of the annulus r_inner <= |x - center| <= r_outer."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def fun(pts):
        d2 = np.sum((np.asarray(pts, dtype=float) - c) ** 2, axis=-1)
        return amplitude * ((d2 >= r_inner ** 2) & (d2 <= r_outer ** 2)).astype(float)

    def crossings(p, d):
        return list(_circle_crossings(p, d, c, r_inner)) + \
            list(_circle_crossings(p, d, c, r_outer))

    box = np.stack([c - 1.5 * r_outer - 0.5, c + 1.5 * r_outer + 0.5], axis=-1)
    return ScalarField(fun=fun, support_box=box, dim=dim, line_crossings=crossings)


def half_plane_edge(dim: int = 2, width: float = 1.0,
                    box_half: float = 6.0) -> ScalarField:
    """Smooth bump restricted to the half-space {x_1 < 0}.

    The only non-analytic set is the hyperplane x_1 = 0 with conormal e_1.
    """

    def fun(pts):
        pts = np.asarray(pts, dtype=float)
        d2 = np.sum(pts ** 2, axis=-1)
        return np.exp(-0.5 * d2 / width ** 2) * (pts[..., 0] < 0.0)

    def crossings(p, d):
        if abs(d[0]) < 1e-14:
            return []
        return [-p[0] / d[0]]

    box = np.stack([-box_half * np.ones(dim), box_half * np.ones(dim)], axis=-1)
    return ScalarField(fun=fun, support_box=box, dim=dim, line_crossings=crossings)
