import math

import numpy as np
import pytest

from dftomo import ChartGeometry, from_defining_function
from dftomo.rays import (
    disk_geodesic_family,
    minkowski_chart,
    minkowski_symbol,
    null_ray_family,
    sphere_equator_family,
)


def radon_b(x, th):
    al = th[0]
    return np.array([x[0] * np.cos(al) + x[1] * np.sin(al)])


def radon_b_x(x, th):
    al = th[0]
    return np.array([[np.cos(al), np.sin(al)]])


def radon_b_theta(x, th):
    al = th[0]
    return np.array([[-x[0] * np.sin(al) + x[1] * np.cos(al)]])


@pytest.fixture(scope="session")
def radon_fib():
    """Planar line fibration b(x, alpha) = x . (cos a, sin a), box [-6, 6]^2."""
    return from_defining_function(
        radon_b, n=2, m=1, k=1, x_box=[[-6.0, 6.0], [-6.0, 6.0]],
        theta_box=[[0.0, 2.0 * math.pi]], b_x=radon_b_x, b_theta=radon_b_theta)


@pytest.fixture(scope="session")
def unit_disk_chart():
    return ChartGeometry(dim_n=2, box=[[-1.2, 1.2]] * 2,
                         boundary_fn=lambda x: float(x @ x) - 1.0,
                         boundary_grad=lambda x: 2.0 * x)


@pytest.fixture(scope="session")
def disk_family(unit_disk_chart):
    return disk_geodesic_family(unit_disk_chart, 1.0)


@pytest.fixture(scope="session")
def big_disk_chart():
    R = 6.5
    return ChartGeometry(dim_n=2, box=[[-7.0, 7.0]] * 2,
                         boundary_fn=lambda x: float(x @ x) - R * R,
                         boundary_grad=lambda x: 2.0 * x)


@pytest.fixture(scope="session")
def big_disk_family(big_disk_chart):
    return disk_geodesic_family(big_disk_chart, 6.5)


@pytest.fixture(scope="session")
def sphere_family():
    return sphere_equator_family()


@pytest.fixture(scope="session")
def mink():
    chart = minkowski_chart(2.0)
    return {"chart": chart, "symbol": minkowski_symbol(),
            "family": null_ray_family(chart, 2.0)}


def line_entry_params(theta: float, s: float, radius: float) -> np.ndarray:
    """Boundary-family parameters (beta, psi) of the line {x.n(theta) = s}."""
    normal = np.array([math.cos(theta), math.sin(theta)])
    tangent = np.array([-normal[1], normal[0]])
    x0 = s * normal - math.sqrt(radius ** 2 - s ** 2) * tangent
    beta = math.atan2(x0[1], x0[0])
    inward = -x0 / radius
    psi = math.atan2(inward[0] * tangent[1] - inward[1] * tangent[0],
                     float(inward @ tangent))
    return np.array([beta, psi])
