"""Independent evaluation of the log-interaction constant.

Route: Gauss-Legendre everywhere, no FFTs, no midpoint rule, no Richardson.

1. Radial profile of the self-correlation:   C(s) = int phi(y + s e1) phi(y) dy
   by tensor GL over the support, splined in s.
2. Radial profile of the second correlation: Psi(r) = int C(|x|) C(|x - r e1|) dx
   by tensor GL.
3. J = 2 pi * int_0^R Psi(r) r log r dr on geometric panels toward zero.

Both correlations are smooth with compact support, so GL converges
spectrally; the only singular object is the 1D weight r log r, handled by
panel refinement toward the origin.

Run as a script to print reference values; the test suite freezes them.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline


def phi_normalized(r_phi=1.0, quad_order=160):
    """Normalized bump profile on radii, with GL normalization constant."""

    def raw(rad):
        rad = np.asarray(rad, dtype=float)
        u = rad / r_phi
        out = np.zeros_like(u)
        m = u < 1
        out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
        return out

    x, w = leggauss(quad_order)
    nodes = 0.5 * (x + 1) * r_phi * 2 - r_phi  # [-r, r]
    wts = w * r_phi
    gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
    ww = np.outer(wts, wts)
    mass = float(np.sum(raw(np.hypot(gx, gy)) * ww))
    return raw, mass


def correlation_spline(raw, mass, r_phi=1.0, quad_order=140, n_radii=320):
    """Spline of C(s) for s in [0, 2 r_phi]."""
    x, w = leggauss(quad_order)
    nodes = x * r_phi
    wts = w * r_phi
    gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
    ww = np.outer(wts, wts)
    base = raw(np.hypot(gx, gy))
    radii = 0.5 * (1 - np.cos(np.linspace(0, np.pi, n_radii))) * 2 * r_phi
    vals = np.empty(n_radii)
    for i, s in enumerate(radii):
        shifted = raw(np.hypot(gx + s, gy))
        vals[i] = float(np.sum(base * shifted * ww))
    vals /= mass**2
    return CubicSpline(radii, vals, extrapolate=False), 2 * r_phi


def psi_radial(corr, support, r, quad_order=200):
    """Psi(r) = int C(|x|) C(|x - r e1|) dx by tensor GL."""
    x, w = leggauss(quad_order)
    nodes = x * support
    wts = w * support
    gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
    ww = np.outer(wts, wts)
    a = np.nan_to_num(corr(np.hypot(gx, gy)))
    out = np.empty(np.shape(r))
    for i, rr in enumerate(np.atleast_1d(r)):
        b = np.nan_to_num(corr(np.hypot(gx - rr, gy)))
        out[i] = float(np.sum(a * b * ww))
    return out


def j_constant(r_phi=1.0, panels=40, panel_order=24):
    raw, mass = phi_normalized(r_phi)
    corr, support = correlation_spline(raw, mass, r_phi)
    R = 2 * support  # Psi support radius
    x, w = leggauss(panel_order)
    edges = [R * 0.5**k for k in range(panels)] + [0.0]
    edges = edges[::-1]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        rr = mid + half * x
        vals = psi_radial(corr, support, rr)
        total += float(np.sum(vals * rr * np.log(rr) * w)) * half
    return 2 * np.pi * total


if __name__ == "__main__":
    for order in (20, 24):
        val = j_constant(panel_order=order)
        print(f"panel_order={order}: J = {val:.12f}")
