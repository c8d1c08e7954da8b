"""Independent reference computations the tests freeze expected values from.

Everything here is closed form or brute force, deliberately avoiding the
code paths under test.
"""

import cmath
import math

import numpy as np
from scipy.special import roots_legendre, wofz


def gaussian_line_integral(s: float) -> float:
    """Integral of e^{-|x|^2/2} over a line at distance s from the origin."""
    return math.sqrt(2.0 * math.pi) * math.exp(-0.5 * s * s)


def disk_chord(radius: float, s: float) -> float:
    """Length of the chord at offset s of a disk."""
    if abs(s) >= radius:
        return 0.0
    return 2.0 * math.sqrt(radius ** 2 - s ** 2)


def annulus_chord(r_inner: float, r_outer: float, s: float) -> float:
    return disk_chord(r_outer, s) - disk_chord(r_inner, s)


def gaussian_packet_overlap_1d(u1: float, u2: float, lam: float,
                               width: float = 1.0) -> complex:
    """<e^{-y^2/(2 w^2)}, m_u^lam> in one dimension by completing the square."""
    c1 = 2.0 ** -0.5 * math.pi ** -0.75
    a = 0.5 / width ** 2 + 0.5 * lam
    bq = lam * u1 - 1j * lam * u2
    cq = 0.5 * lam * u1 ** 2
    return (lam ** 0.75 * c1 * cmath.sqrt(math.pi / a)
            * cmath.exp(bq * bq / (4.0 * a) - cq))


def half_line_packet_overlap_1d(u1: float, u2: float, lam: float) -> complex:
    """<1_{y<0} e^{-y^2/2}, m_u^lam>: a Fresnel-type one-sided integral.

    Uses the Faddeeva function: int_{-inf}^{0} e^{-a y^2 + b y} dy
    = sqrt(pi/a)/2 * erfc(b / (2 sqrt(a))) with complex b.
    """
    from scipy.special import erfc

    c1 = 2.0 ** -0.5 * math.pi ** -0.75
    a = 0.5 + 0.5 * lam
    b = lam * u1 - 1j * lam * u2
    cq = 0.5 * lam * u1 ** 2
    # erfc for complex argument via wofz: erfc(z) = e^{-z^2} wofz(i z)
    zz = b / (2.0 * cmath.sqrt(a))
    erfc_c = cmath.exp(-zz * zz) * wofz(1j * zz)
    return (lam ** 0.75 * c1 * 0.5 * cmath.sqrt(math.pi / a)
            * cmath.exp(b * b / (4 * a) - cq) * erfc_c)


def flat_jacobi_norm(t: np.ndarray) -> np.ndarray:
    """|J(t)| of the flat Jacobi equation J'' = 0 with J(0)=0, J'(0)=1."""
    return np.abs(np.asarray(t))


def sphere_jacobi_norm(t: np.ndarray) -> np.ndarray:
    """|J(t)| on the unit sphere with J(0)=0, J'(0)=1 (curvature +1)."""
    return np.abs(np.sin(np.asarray(t)))


def radial_shell_integral(fun, r_lo: float = 0.0, r_hi: float = 10.0,
                          center_dist: float = 0.0, radius: float = 1.0,
                          n: int = 2000) -> float:
    """Integral of a radial function over a circle of given radius whose
    center is center_dist from the origin (planar spherical mean x length)."""
    phis = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    pts_r = np.sqrt(center_dist ** 2 + radius ** 2
                    + 2.0 * center_dist * radius * np.cos(phis))
    vals = fun(pts_r)
    return float(np.mean(vals) * 2.0 * math.pi * radius)


def kernel_direct(fib_b_unused, x, v, lam, bs=(6.0, 10.0, 16.0),
                  pad: float = 10.0) -> complex:
    """Regularized packet-pair double integral for the planar line transform.

    The u-integrals of the defining double integral are evaluated in closed
    form against a Gaussian damp e^{-|u2|^2/(2B^2)}; the damped pairing is a
    Gaussian mollifier, whose line transform and level-offset integral are
    again closed-form Gaussians; the remaining angle integral is quadrature.
    Richardson extrapolation removes the damp (quadratic fit in 1/a_B).
    """
    n = N = 2
    c2 = 2.0 ** (-1) * math.pi ** (-1.5)
    v1 = np.asarray(v[0], dtype=float)
    v2 = np.asarray(v[1], dtype=float)
    x = np.asarray(x, dtype=float)

    def K_B(B):
        aB = lam / 4.0 + lam ** 2 * B ** 2 / 2.0
        CB = lam ** 3 * c2 ** 2 * (math.pi / lam) * (2.0 * math.pi) * B ** 2
        A = lam / 2.0
        S = A + aB
        k = lam * v2[1]
        w = pad / math.sqrt(lam)
        a0, b0 = v1[0] - w, v1[0] + w
        cycles = lam * (abs(v2[0]) + 2.0 * abs(v2[1])) * 2 * w / (2 * math.pi)
        m = int(3.5 * cycles + 3.0 * 2 * w * math.sqrt(lam) + 60)
        xg, wg = roots_legendre(m)
        alphas = a0 + (xg + 1.0) * (b0 - a0) / 2.0
        wq = wg * (b0 - a0) / 2.0
        total = 0.0 + 0.0j
        for aa, ww in zip(alphas, wq):
            c_line = x[0] * math.cos(aa) + x[1] * math.sin(aa)
            c1 = v1[1]
            s_int = (math.sqrt(math.pi / S)
                     * cmath.exp(-(A * aB / S) * (c1 - c_line) ** 2
                                 - 1j * k * (A * c1 + aB * c_line) / S
                                 - k * k / (4.0 * S)))
            total += ww * cmath.exp(-1j * lam * aa * v2[0]
                                    - lam * (aa - v1[0]) ** 2 / 2.0) * s_int
        return (lam ** (0.75 * N) * c2 * CB * math.sqrt(math.pi / aB) * total)

    us = np.array([1.0 / (lam / 4.0 + lam ** 2 * B ** 2 / 2.0) for B in bs])
    ks = np.array([K_B(B) for B in bs])
    coef = np.linalg.solve(np.vander(us, 3, increasing=True), ks)
    return complex(coef[0])
