"""Moment kernels of the critical two-dimensional delta-Bose gas.

Three layers live here.  The scalar weight j_theta(t) (an integral against
1/Gamma) is evaluated by adaptive panel quadrature, with a substitution
route kept as an internal cross-check and a log-log spline table for bulk
evaluation.  The operator kernels (incoming, adjoint, swapping, and the
j-weighted merge kernel) are products of 2D heat kernels between named
coordinate blocks and are represented exactly as Gaussian forms.  On top
of both sits the diagram series for the moment inner products
<g_1 x ... x g_n, S(t) g'_1 x ... x g'_n>: space is integrated exactly
(Gaussian calculus, batched over quadrature nodes), time runs over a
simplex of 2m+1 legs handled by substitution rules that flatten the
integrable endpoint singularities.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline
from scipy.stats import qmc

from .diagrams import Diagram, enumerate_dgm, enumerate_dgm_star, enumerate_pairs
from . import gaussian_forms as gf

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi

# Taylor coefficients of 1/Gamma(u) = sum_k a_k u^k; the first three have
# closed forms in gamma, pi, zeta(3), the rest are frozen from a contour
# average of 1/Gamma on the unit circle (tests re-derive them)
_A2 = 0.5772156649015329
_A3 = _A2 * _A2 / 2.0 - math.pi**2 / 12.0
_A4 = _A2**3 / 6.0 - _A2 * math.pi**2 / 12.0 + special.zeta(3.0) / 3.0
_A5 = 0.16653861138229159
_A6 = -0.042197734555544597
_A7 = -0.0096219715278771378


class JToleranceError(ValueError):
    """j-function quadrature failed to certify the requested tolerance."""


class GridTruncationError(RuntimeError):
    """Norm probe detected that domain truncation dominates the estimate."""


# ---------------------------------------------------------------------------
# the scalar weight j_theta(t)
# ---------------------------------------------------------------------------

def _peak(theta: float, log_t: float) -> float:
    """Location of the integrand exponent maximum: digamma(u) = theta + log t."""
    target = theta + log_t
    if target > -0.5:
        u = math.exp(target) + 0.5
    elif target < -1.0:
        u = -1.0 / (target + _A2)
    else:
        u = 0.5
    for _ in range(60):
        step = (special.digamma(u) - target) / special.polygamma(1, u)
        nxt = u - step
        if nxt <= 0:
            nxt = u / 2.0
        if abs(nxt - u) <= 1e-13 * u:
            u = nxt
            break
        u = nxt
    return u


def _log_sum_quadrature(nodes: np.ndarray, weights: np.ndarray, exponent) -> float:
    f = exponent(nodes)
    m = float(np.max(f))
    return m + math.log(float(np.sum(weights * np.exp(f - m))))


def _j_log_panels(theta: float, t: float, panel_nodes: int, max_panels: int,
                  drop: float) -> float:
    """Log of the defining integral by composite Gauss-Legendre panels.

    Panels are sized by the local width 1/sqrt(psi'(u*)) around the peak
    u* and extended until the exponent has dropped ``drop`` below its
    maximum, where 1/Gamma makes the tail super-exponentially small.
    """
    log_t = math.log(t)

    def expo(u):
        return (u - 1.0) * log_t + theta * u - special.gammaln(u)

    ustar = _peak(theta, log_t)
    width = 1.0 / math.sqrt(special.polygamma(1, ustar))
    fmax = expo(np.array([ustar]))[0]
    hi = ustar + 10.0 * width
    while expo(np.array([hi]))[0] > fmax - drop:
        hi *= 1.5
    panels = min(max_panels, max(8, int(math.ceil(hi / width))))
    edges = np.linspace(0.0, hi, panels + 1)
    x, w = np.polynomial.legendre.leggauss(panel_nodes)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    nodes = (mid + half * x[None, :]).ravel()
    weights = (half * w[None, :]).ravel()
    return _log_sum_quadrature(nodes, weights, expo)


def j_eval(theta: float, t: float, tol: float = 1e-10) -> float:
    """j_theta(t) = int_0^infty du t^(u-1) e^(theta u) / Gamma(u).

    Certified by node doubling: the panel rule is run at q and 2q nodes
    per panel and must agree to ``tol`` relative.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    coarse = _j_log_panels(theta, t, 12, 96, 45.0)
    fine = _j_log_panels(theta, t, 24, 96, 45.0)
    if abs(fine - coarse) > tol:
        raise JToleranceError(
            f"node doubling moved log j by {abs(fine - coarse):.2e} > tol {tol:.1e}"
        )
    return math.exp(fine)


def j_eval_substituted(theta: float, t: float) -> float:
    """Independent route via u = e^v; used for dual-quadrature agreement."""
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    log_t = math.log(t)

    def expo(v):
        u = np.exp(v)
        return (u - 1.0) * log_t + theta * u - special.gammaln(u) + v

    vstar = math.log(_peak(theta, log_t))
    hmax = expo(np.array([vstar]))[0]
    lo = vstar - 2.0
    while expo(np.array([lo]))[0] > hmax - 50.0 and lo > vstar - 400.0:
        lo -= 2.0
    hi = vstar + 2.0
    while expo(np.array([hi]))[0] > hmax - 50.0 and hi < vstar + 400.0:
        hi += 2.0
    panels = max(12, int(math.ceil((hi - lo) / 0.5)))
    edges = np.linspace(lo, hi, panels + 1)
    x, w = np.polynomial.legendre.leggauss(12)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    nodes = (mid + half * x[None, :]).ravel()
    weights = (half * w[None, :]).ravel()
    return math.exp(_log_sum_quadrature(nodes, weights, expo))


def _j_log_asymptotic(theta: float, log_tau: np.ndarray) -> np.ndarray:
    """log j for very small times from the 1/Gamma Taylor series.

    Watson's lemma on the u-integral: with lam = |log tau| - theta,
    tau * j(tau) = sum_k a_k k! / lam^(k+1).  Terms through k = 7 keep
    the relative error near 2e-8 at lam ~ 28, the handoff point from
    the spline table.
    """
    lam = -log_tau - theta
    inv = 1.0 / lam
    series = inv**2 * (1.0 + 2.0 * _A2 * inv + 6.0 * _A3 * inv**2
                       + 24.0 * _A4 * inv**3 + 120.0 * _A5 * inv**4
                       + 720.0 * _A6 * inv**5 + 5040.0 * _A7 * inv**6)
    return -log_tau + np.log(series)


@dataclass(frozen=True)
class JQuadSchedule:
    """Panel schedule for the u-integral."""

    panel_nodes: int = 12
    max_panels: int = 96
    drop: float = 45.0


_TABLE_CACHE: dict = {}


@dataclass(frozen=True)
class JFunction:
    """Evaluator for j_theta with a cached log-log table for bulk calls."""

    theta: float
    tolerance: float = 1e-10
    quadrature: JQuadSchedule = field(default_factory=JQuadSchedule)

    def __call__(self, t: float) -> float:
        return j_eval(self.theta, t, self.tolerance)

    def table(self, t_max: float, knots: int = 1000) -> "_JTable":
        key = (float(self.theta), float(t_max), int(knots), self.quadrature)
        if key not in _TABLE_CACHE:
            _TABLE_CACHE[key] = _JTable(self.theta, t_max, knots,
                                        self.quadrature)
        return _TABLE_CACHE[key]


class _JTable:
    """Cubic spline of log j over log t in [1e-12 t_max, t_max].

    Below the table floor (reachable only through the simplex substitution
    tails) the matched small-time series takes over; the two agree at the
    floor to the series' remainder, a few parts in 1e8 at the default
    range.
    """

    def __init__(self, theta, t_max, knots, sched: JQuadSchedule):
        self.theta = float(theta)
        self.log_floor = math.log(1e-12 * t_max)
        grid = np.linspace(self.log_floor, math.log(t_max), knots)
        vals = np.array([
            _j_log_panels(theta, math.exp(x), 2 * sched.panel_nodes,
                          sched.max_panels, sched.drop)
            for x in grid
        ])
        self._spline = CubicSpline(grid, vals, bc_type="natural")

    def log_eval(self, log_tau: np.ndarray) -> np.ndarray:
        log_tau = np.asarray(log_tau, dtype=float)
        out = np.empty_like(log_tau)
        small = log_tau < self.log_floor
        if np.any(small):
            out[small] = _j_log_asymptotic(self.theta, log_tau[small])
        out[~small] = self._spline(log_tau[~small])
        return out


# ---------------------------------------------------------------------------
# kernel forms
# ---------------------------------------------------------------------------

def _y_name(alpha, i, prefix: str) -> str:
    return f"{prefix}c" if i in alpha else f"{prefix}{i}"


def incoming_form(omega, alpha, t, y_prefix="y", x_prefix="x") -> gf.GaussianForm:
    """Kernel of the merge operator: prod_i g(t, (S_alpha y)_i - x_i).

    Both indices of alpha read the shared center block, so the form's
    quadratic couples that block to two x blocks.  The adjoint has the
    same kernel with the roles of y and x read in the other order.
    """
    form = None
    for i in omega:
        f = gf.heat_form(t, _y_name(alpha, i, y_prefix), f"{x_prefix}{i}")
        form = f if form is None else gf.multiply(form, f)
    return form


def swapping_form(omega, alpha, alphap, t, y_prefix="y", yp_prefix="z"):
    """Kernel prod_i g(t, (S_alpha y)_i - (S_alphap y')_i)."""
    if tuple(sorted(alpha)) == tuple(sorted(alphap)):
        raise ValueError("swapping kernel requires two distinct pairs")
    form = None
    for i in omega:
        f = gf.heat_form(t, _y_name(alpha, i, y_prefix),
                         _y_name(alphap, i, yp_prefix))
        form = f if form is None else gf.multiply(form, f)
    return form


def jop_form(omega, alpha, t, y_prefix="y", yp_prefix="z"):
    """Spatial part of the J operator: g(t/2, c - c') prod g(t, y_i - y'_i).

    The scalar 4 pi j_theta(t) is deliberately not folded in; the time
    quadrature applies it separately so one spatial form serves any theta.
    """
    form = gf.heat_form(0.5 * t, f"{y_prefix}c", f"{yp_prefix}c")
    for i in omega:
        if i in alpha:
            continue
        form = gf.multiply(form, gf.heat_form(t, f"{y_prefix}{i}",
                                              f"{yp_prefix}{i}"))
    return form


def kernel_forms(kind, omega, t, alpha, alphap=None, theta=None):
    """(GaussianForm, scalar factor) for one operator kernel.

    kind is one of "incoming", "adjoint", "swapping", "jop".  The scalar
    is 1 except for "jop" where it is 4 pi j_theta(t) (theta required).
    """
    omega = tuple(sorted(set(omega)))
    alpha = tuple(sorted(alpha))
    if alpha not in enumerate_pairs(omega):
        raise ValueError(f"alpha {alpha} is not a pair of {omega}")
    if kind in ("incoming", "adjoint"):
        return incoming_form(omega, alpha, t), 1.0
    if kind == "swapping":
        alphap = tuple(sorted(alphap))
        if alphap not in enumerate_pairs(omega):
            raise ValueError(f"alpha' {alphap} is not a pair of {omega}")
        return swapping_form(omega, alpha, alphap, t), 1.0
    if kind == "jop":
        if theta is None:
            raise ValueError("jop needs theta for its scalar factor")
        return jop_form(omega, alpha, t), FOUR_PI * j_eval(theta, t)
    raise ValueError(f"unknown kernel kind {kind!r}")


# ---------------------------------------------------------------------------
# Gaussian test functions and the diagram term plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianTest:
    """Bump amplitude * exp(-|x - center|^2 / (2 sigma^2)) on R^2.

    amplitude None means mass one: 1 / (2 pi sigma^2).
    """

    center: tuple[float, float] = (0.0, 0.0)
    sigma: float = 1.0
    amplitude: float | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "center",
                           (float(self.center[0]), float(self.center[1])))

    @property
    def amp(self) -> float:
        if self.amplitude is None:
            return 1.0 / (2.0 * math.pi * self.sigma**2)
        return float(self.amplitude)

    def __call__(self, points):
        """Pointwise values; points has shape (..., 2)."""
        pts = np.asarray(points, dtype=float)
        d2 = ((pts[..., 0] - self.center[0]) ** 2
              + (pts[..., 1] - self.center[1]) ** 2)
        return self.amp * np.exp(-d2 / (2.0 * self.sigma**2))

    def form(self, block: str) -> gf.GaussianForm:
        return gf.gaussian_test_form(block, np.array(self.center), self.sigma,
                                     self.amp)


class _TermPlan:
    """Block and edge layout of one diagram's spatial integrand.

    Blocks are the particle endpoints plus, per series step, the merged
    center and the spectators on each side of the J kernel.  Every edge
    is a 2D heat kernel between two blocks at one of the 2m+1 leg times;
    the J center edge runs at half its leg time.
    """

    def __init__(self, omega, pairs):
        omega = tuple(sorted(omega))
        m = len(pairs)
        self.omega = omega
        self.pairs = pairs
        self.m = m
        self.legs = 2 * m + 1
        ids: dict = {}
        for i in omega:
            ids[("in", i)] = len(ids)
        for k in range(1, m + 1):
            for side in ("L", "R"):
                ids[(side, k, "c")] = len(ids)
                for i in omega:
                    if i not in pairs[k - 1]:
                        ids[(side, k, i)] = len(ids)
        for i in omega:
            ids[("out", i)] = len(ids)
        self.ids = ids
        self.nblocks = len(ids)

        def ybid(side, k, i):
            key = (side, k, "c") if i in pairs[k - 1] else (side, k, i)
            return ids[key]

        edges = []  # (block_a, block_b, leg index, uses half the leg time)
        for i in omega:
            edges.append((ids[("in", i)], ybid("L", 1, i), 0, False))
        for k in range(1, m + 1):
            leg = 2 * k - 1
            edges.append((ids[("L", k, "c")], ids[("R", k, "c")], leg, True))
            for i in omega:
                if i not in pairs[k - 1]:
                    edges.append((ids[("L", k, i)], ids[("R", k, i)], leg,
                                  False))
            if k < m:
                for i in omega:
                    edges.append((ybid("R", k, i), ybid("L", k + 1, i),
                                  2 * k, False))
        for i in omega:
            edges.append((ybid("R", m, i), ids[("out", i)], 2 * m, False))
        self.edges = edges
        self.in_blocks = {i: ids[("in", i)] for i in omega}
        self.out_blocks = {i: ids[("out", i)] for i in omega}
        self.j_legs = [2 * k - 1 for k in range(1, m + 1)]


def _term_log_integrand(plan: _TermPlan, log_taus: np.ndarray,
                        tests_in, tests_out, jtable: _JTable,
                        floor_log: float, _tries: int = 3) -> np.ndarray:
    """Batched log of the spatial integral times the j factors.

    ``log_taus`` is (K, legs) in log scale; heat edges clamp their time
    at ``floor_log`` (the j factors use the true times).  The clamp keeps
    the precision matrices within a workable dynamic range; see the
    module tests for the certified end-to-end accuracy.
    """
    K, legs = log_taus.shape
    B = plan.nblocks
    lt = np.maximum(log_taus, floor_log)
    tau = np.exp(lt)
    A = np.zeros((K, B, B))
    lin = np.zeros((K, B, 2))
    scalar = np.zeros(K)
    log_2pi = math.log(2.0 * math.pi)
    for a, b, leg, half in plan.edges:
        t_edge = 0.5 * tau[:, leg] if half else tau[:, leg]
        w = 1.0 / t_edge
        A[:, a, a] += w
        A[:, b, b] += w
        A[:, a, b] -= w
        A[:, b, a] -= w
        scalar -= np.log(t_edge) + log_2pi
    for i, test in zip(plan.omega, tests_in):
        bid = plan.in_blocks[i]
        c = np.array(test.center)
        A[:, bid, bid] += 1.0 / test.sigma**2
        lin[:, bid, :] += c / test.sigma**2
        scalar += math.log(test.amp) - float(c @ c) / (2.0 * test.sigma**2)
    for i, test in zip(plan.omega, tests_out):
        bid = plan.out_blocks[i]
        c = np.array(test.center)
        A[:, bid, bid] += 1.0 / test.sigma**2
        lin[:, bid, :] += c / test.sigma**2
        scalar += math.log(test.amp) - float(c @ c) / (2.0 * test.sigma**2)
    for leg in plan.j_legs:
        scalar += math.log(FOUR_PI) + jtable.log_eval(log_taus[:, leg])

    try:
        chol = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        # a starved corner node can lose definiteness to rounding; lift
        # the clamp for this batch (the affected nodes carry tiny weight)
        if _tries <= 0:
            raise
        return _term_log_integrand(plan, log_taus, tests_in, tests_out,
                                   jtable, floor_log + math.log(10.0),
                                   _tries - 1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    z = np.linalg.solve(A, lin)
    quad = 0.5 * np.einsum("kbd,kbd->k", lin, z)
    return scalar + B * log_2pi - logdet + quad


def reference_term_log_integrand(plan: _TermPlan, taus, tests_in, tests_out,
                                 theta: float) -> float:
    """Slow single-node evaluation through the named Gaussian calculus.

    Used by tests to pin the batched assembly; exercises the exact same
    kernel conventions via heat_form and log_integral.
    """
    names = {bid: f"b{bid}" for bid in range(plan.nblocks)}
    form = None
    for a, b, leg, half in plan.edges:
        t_edge = 0.5 * taus[leg] if half else taus[leg]
        f = gf.heat_form(t_edge, names[a], names[b])
        form = f if form is None else gf.multiply(form, f)
    for i, test in zip(plan.omega, tests_in):
        form = gf.multiply(form, test.form(names[plan.in_blocks[i]]))
    for i, test in zip(plan.omega, tests_out):
        form = gf.multiply(form, test.form(names[plan.out_blocks[i]]))
    total = gf.log_integral(form)
    for leg in plan.j_legs:
        total += math.log(FOUR_PI * j_eval(theta, taus[leg]))
    return total


# ---------------------------------------------------------------------------
# simplex quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadSpec:
    """Knobs of the time-simplex quadrature.

    Tensor rules (per-leg substituted Gauss-Legendre) run while the free
    dimension stays at or under ``tensor_dim_cap``; beyond that a
    scrambled Sobol rule with ``replicates`` independent scramblings
    supplies the value and a standard error.  ``tau_floor_rel`` is the
    heat-edge clamp relative to the total time.
    """

    level: float = 1.0
    tensor_dim_cap: int = 4
    sobol_power: int = 13
    replicates: int = 4
    seed: int = 0
    tau_floor_rel: float = 1e-7
    chunk: int = 8192


def _piece_square(vmax: float):
    """Lower-endpoint grading v = vmax * xi^2 for smooth-at-zero legs."""
    def fn(xi):
        v = vmax * xi * xi
        return (math.log(vmax) + 2.0 * np.log(xi), np.log1p(-v),
                np.log(2.0 * vmax * xi))
    return fn


def _piece_linear(a: float, b: float):
    def fn(xi):
        v = a + (b - a) * xi
        return (np.log(v), np.log1p(-v),
                np.full_like(xi, math.log(b - a)))
    return fn


def _piece_log_low():
    """v = exp(-1/xi): flattens the 1/(v log^2 v) weight of a j leg.

    Node times underflow long before their contribution does, so log v
    is returned exactly and v itself never materializes.
    """
    def fn(xi):
        return (-1.0 / xi, np.log1p(-np.exp(-1.0 / xi)),
                -1.0 / xi - 2.0 * np.log(xi))
    return fn


def _piece_log_high(vlo: float):
    """Mirror of the log map at the upper endpoint: 1 - v = exp(-1/w).

    Needed whenever a j leg sits downstream in the stick-breaking order;
    its time then vanishes like (1 - v) and drags the same inverse-log
    weight to this endpoint.
    """
    w0 = 1.0 / math.log(1.0 / (1.0 - vlo))

    def fn(xi):
        w = w0 * xi
        return (np.log1p(-np.exp(-1.0 / w)), -1.0 / w,
                math.log(w0) - 1.0 / w - 2.0 * np.log(w))
    return fn


_E1 = math.exp(-1.0)


def _leg_pieces(kind: str, graded_top: bool, level: float):
    """Piece list (cube fraction, node count, map) for one coordinate."""
    def q(base, floor=4):
        return max(floor, round(base * level))

    if kind == "half":
        if graded_top:
            return [(0.45, q(8, 5), _piece_square(0.5)),
                    (0.20, q(6), _piece_linear(0.5, 0.9)),
                    (0.35, q(8, 5), _piece_log_high(0.9))]
        return [(0.45, q(8, 5), _piece_square(0.5)),
                (0.55, q(8, 5), _piece_linear(0.5, 1.0))]
    if kind == "j":
        if graded_top:
            return [(0.50, q(14, 7), _piece_log_low()),
                    (0.20, q(7), _piece_linear(_E1, 0.85)),
                    (0.30, q(8, 5), _piece_log_high(0.85))]
        return [(0.50, q(14, 7), _piece_log_low()),
                (0.25, q(7), _piece_linear(_E1, 0.85)),
                (0.15, q(5, 3), _piece_linear(0.85, 0.97)),
                (0.10, q(4, 3), _piece_linear(0.97, 1.0))]
    raise ValueError(f"unknown leg kind {kind!r}")


def _free_leg_layout(legs: int):
    """(kind, graded_top) per free coordinate in stick-breaking order.

    Odd legs carry the j weight.  The last j leg is the coordinate at
    index legs - 2; everything before it has that leg downstream and
    needs the upper-endpoint grading.
    """
    out = []
    for i in range(legs - 1):
        kind = "j" if i % 2 == 1 else "half"
        out.append((kind, i < legs - 2))
    return out


def _tensor_leg_rule(kind: str, graded_top: bool, level: float):
    logvs, log1ms, logws = [], [], []
    for _frac, cnt, fn in _leg_pieces(kind, graded_top, level):
        x, w = np.polynomial.legendre.leggauss(cnt)
        xi = 0.5 * (x + 1.0)
        lv, l1m, lj = fn(xi)
        logvs.append(lv)
        log1ms.append(l1m)
        logws.append(np.log(0.5 * w) + lj)
    return (np.concatenate(logvs), np.concatenate(log1ms),
            np.concatenate(logws))


def _sobol_leg_map(kind: str, graded_top: bool, u: np.ndarray):
    pieces = _leg_pieces(kind, graded_top, 1.0)
    fracs = np.array([p[0] for p in pieces])
    edges = np.concatenate(([0.0], np.cumsum(fracs)))
    edges[-1] = 1.0
    logv = np.empty_like(u)
    log1m = np.empty_like(u)
    logw = np.empty_like(u)
    for (frac, _cnt, fn), lo, hi in zip(pieces, edges[:-1], edges[1:]):
        mask = (u >= lo) & (u < hi)
        if not np.any(mask):
            continue
        xi = np.clip((u[mask] - lo) / (hi - lo), 1e-15, 1.0 - 1e-15)
        lv, l1m, lj = fn(xi)
        logv[mask] = lv
        log1m[mask] = l1m
        logw[mask] = lj - math.log(hi - lo)
    return logv, log1m, logw


def _stick_break(logv, log1mv, t: float):
    """Map unit-cube fractions to simplex leg times, in log scale.

    Legs 0..D-2 take the cube coordinates in order; the last leg keeps
    the remaining time.  Returns (K, D) log times and the (K,) log
    Jacobian of the map.
    """
    K, free = logv.shape
    log_taus = np.empty((K, free + 1))
    log_rest = np.zeros(K)
    log_jac = np.full(K, free * math.log(t))
    for j in range(free):
        log_taus[:, j] = math.log(t) + logv[:, j] + log_rest
        log_jac += (free - 1 - j) * log1mv[:, j]
        log_rest = log_rest + log1mv[:, j]
    log_taus[:, free] = math.log(t) + log_rest
    return log_taus, log_jac


class _ScaledSum:
    """Running sum of w * exp(logf) kept under a floating scale."""

    def __init__(self):
        self.scale = -math.inf
        self.total = 0.0

    def add(self, log_vals, weights):
        if log_vals.size == 0:
            return
        m = float(np.max(log_vals))
        if m == -math.inf:
            return
        part = float(np.sum(weights * np.exp(log_vals - m)))
        if m > self.scale:
            self.total = self.total * math.exp(self.scale - m) + part
            self.scale = m
        else:
            self.total += part * math.exp(m - self.scale)

    def value(self) -> float:
        if self.scale == -math.inf:
            return 0.0
        return self.total * math.exp(self.scale)


def _integrate_tensor(plan, t, tests_in, tests_out, jtable, quad, level):
    rules = [_tensor_leg_rule(kind, graded, level)
             for kind, graded in _free_leg_layout(plan.legs)]
    grids_lv = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    grids_l1m = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    grids_lw = np.meshgrid(*[r[2] for r in rules], indexing="ij")
    logv = np.stack([g.ravel() for g in grids_lv], axis=1)
    log1mv = np.stack([g.ravel() for g in grids_l1m], axis=1)
    logw = np.sum([g.ravel() for g in grids_lw], axis=0)
    log_taus, log_jac = _stick_break(logv, log1mv, t)
    floor_log = math.log(quad.tau_floor_rel * t)
    acc = _ScaledSum()
    for s in range(0, logv.shape[0], quad.chunk):
        sl = slice(s, s + quad.chunk)
        logf = _term_log_integrand(plan, log_taus[sl], tests_in, tests_out,
                                   jtable, floor_log)
        acc.add(logf + log_jac[sl] + logw[sl], np.ones(logf.shape[0]))
    return acc.value()


def _integrate_sobol(plan, t, tests_in, tests_out, jtable, quad, seed_tuple):
    layout = _free_leg_layout(plan.legs)
    free = len(layout)
    floor_log = math.log(quad.tau_floor_rel * t)
    estimates = []
    for rep in range(quad.replicates):
        ss = np.random.SeedSequence((*seed_tuple, rep))
        sob = qmc.Sobol(d=free, scramble=True,
                        seed=np.random.default_rng(ss))
        u = sob.random(2**quad.sobol_power)
        u = np.clip(u, 1e-15, 1.0 - 1e-15)
        logv = np.empty_like(u)
        log1mv = np.empty_like(u)
        logw = np.zeros(u.shape[0])
        for j, (kind, graded) in enumerate(layout):
            lv, l1m, lw = _sobol_leg_map(kind, graded, u[:, j])
            logv[:, j] = lv
            log1mv[:, j] = l1m
            logw += lw
        log_taus, log_jac = _stick_break(logv, log1mv, t)
        acc = _ScaledSum()
        for s in range(0, u.shape[0], quad.chunk):
            sl = slice(s, s + quad.chunk)
            logf = _term_log_integrand(plan, log_taus[sl], tests_in,
                                       tests_out, jtable, floor_log)
            acc.add(logf + log_jac[sl] + logw[sl],
                    np.ones(logf.shape[0]))
        estimates.append(acc.value() / 2**quad.sobol_power)
    estimates = np.array(estimates)
    err = float(estimates.std(ddof=1) / math.sqrt(len(estimates)))
    return float(estimates.mean()), err


def integrate_diagram(diagram: Diagram, theta: float, t: float, tests_in,
                      tests_out, quad: QuadSpec = QuadSpec(),
                      jfun: JFunction | None = None,
                      seed_index: int = 0):
    """One series term: the 2m+1-leg simplex integral for ``diagram``.

    Returns (value, error estimate).  Tensor rules report the difference
    against a coarsened level; Sobol reports the scramble standard error.
    """
    plan = _TermPlan(diagram.omega, diagram.pairs)
    jfun = jfun if jfun is not None else JFunction(theta)
    jtable = jfun.table(t)
    if plan.legs - 1 <= quad.tensor_dim_cap:
        val = _integrate_tensor(plan, t, tests_in, tests_out, jtable, quad,
                                quad.level)
        low = _integrate_tensor(plan, t, tests_in, tests_out, jtable, quad,
                                0.7 * quad.level)
        return val, abs(val - low)
    return _integrate_sobol(plan, t, tests_in, tests_out, jtable, quad,
                            (quad.seed, seed_index))


# ---------------------------------------------------------------------------
# moment inner products
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentResult:
    """Value of a moment inner product with its error budget.

    ``trunc_proxy`` is the last diagram-length shell's share of the
    total; ``quad_err`` adds the per-term quadrature estimates.
    """

    n: int
    theta: float
    t: float
    m_max: int
    value: float
    heat_term: float
    shells: tuple[float, ...]
    trunc_proxy: float
    quad_err: float
    n_terms: int

    def __float__(self):
        return self.value


def _pure_heat_term(omega, t, tests_in, tests_out) -> float:
    total = 0.0
    for i, gin, gout in zip(omega, tests_in, tests_out):
        form = gf.heat_form(t, f"a{i}", f"b{i}")
        form = gf.multiply(form, gin.form(f"a{i}"))
        form = gf.multiply(form, gout.form(f"b{i}"))
        total += gf.log_integral(form)
    return math.exp(total)


def _normalize_tests(n, tests):
    if len(tests) != n:
        raise ValueError(f"need {n} test pairs, got {len(tests)}")
    tin, tout = [], []
    for pair in tests:
        gin, gout = pair
        if not isinstance(gin, GaussianTest) or not isinstance(gout,
                                                               GaussianTest):
            raise TypeError("tests must be pairs of GaussianTest")
        tin.append(gin)
        tout.append(gout)
    return tin, tout


def _tests_symmetric(tin, tout) -> bool:
    return all(g == tin[0] for g in tin) and all(g == tout[0] for g in tout)


def _orbit_classes(diagrams, omega):
    """Group diagrams by relabeling equivalence; returns (rep, count)."""
    omega = tuple(sorted(omega))
    perms = list(itertools.permutations(omega))
    classes: dict = {}
    for d in diagrams:
        best = None
        for perm in perms:
            relabel = dict(zip(omega, perm))
            key = tuple(tuple(sorted((relabel[a], relabel[b])))
                        for a, b in d.pairs)
            if best is None or key < best:
                best = key
        if best in classes:
            classes[best][1] += 1
        else:
            classes[best] = [d, 1]
    return [(d, cnt) for d, cnt in classes.values()]


def _series_sum(omega, theta, t, tin, tout, m_max, quad, enumerate_shell,
                symmetric):
    jfun = JFunction(theta)
    shells = []
    quad_err = 0.0
    n_terms = 0
    seed_index = 0
    running = 0.0
    for m in range(1, m_max + 1):
        diagrams = list(enumerate_shell(omega, m))
        if not diagrams:
            shells.append(0.0)
            continue
        if symmetric:
            groups = _orbit_classes(diagrams, omega)
        else:
            groups = [(d, 1) for d in diagrams]
        shell = 0.0
        for d, cnt in groups:
            val, err = integrate_diagram(d, theta, t, tin, tout, quad, jfun,
                                         seed_index)
            shell += cnt * val
            quad_err += cnt * err
            n_terms += cnt
            seed_index += 1
        shells.append(shell)
        running += shell
    return shells, running, quad_err, n_terms


def moment_inner(n: int, theta: float, t: float, tests, m_max: int = 4,
                 quad: QuadSpec = QuadSpec()) -> MomentResult:
    """<g_1 x...x g_n, S(t) g'_1 x...x g'_n>: heat term plus the series.

    For n = 1 the series is empty and the heat pairing is exact; for
    n = 2 there is a single pair so every diagram has length one and the
    result is truncation-free.
    """
    if not 1 <= n <= 4:
        raise ValueError("n must be between 1 and 4 (desk-scale policy)")
    if t <= 0:
        raise ValueError("t must be positive")
    omega = tuple(range(1, n + 1))
    tin, tout = _normalize_tests(n, tests)
    heat = _pure_heat_term(omega, t, tin, tout)
    shells, series, quad_err, n_terms = _series_sum(
        omega, theta, t, tin, tout, m_max, quad, enumerate_dgm,
        _tests_symmetric(tin, tout))
    total = heat + series
    last = abs(shells[-1]) if shells else 0.0
    proxy = last / abs(total) if total != 0 else 0.0
    return MomentResult(n=n, theta=theta, t=t, m_max=m_max, value=total,
                        heat_term=heat, shells=tuple(shells),
                        trunc_proxy=proxy, quad_err=quad_err,
                        n_terms=n_terms)


def central_moment_inner(n: int, theta: float, t: float, tests,
                         m_max: int = 4,
                         quad: QuadSpec = QuadSpec()) -> MomentResult:
    """Covering-diagram part: the moment kernel of Z minus its mean.

    Only n in {2, 4} is meaningful downstream (odd orders vanish by
    symmetry of the defining series' role); n = 2 reduces to a single
    length-one diagram.
    """
    if n not in (2, 4):
        raise ValueError("central moments are provided for n in {2, 4}")
    if t <= 0:
        raise ValueError("t must be positive")
    omega = tuple(range(1, n + 1))
    tin, tout = _normalize_tests(n, tests)
    shells, series, quad_err, n_terms = _series_sum(
        omega, theta, t, tin, tout, m_max, quad, enumerate_dgm_star,
        _tests_symmetric(tin, tout))
    last = abs(shells[-1]) if shells else 0.0
    proxy = last / abs(series) if series != 0 else 0.0
    return MomentResult(n=n, theta=theta, t=t, m_max=m_max, value=series,
                        heat_term=0.0, shells=tuple(shells),
                        trunc_proxy=proxy, quad_err=quad_err,
                        n_terms=n_terms)


# ---------------------------------------------------------------------------
# operator norm probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormProbeResult:
    """Fitted scaling of a discretized operator norm.

    ``log_adjusted_slope`` is filled for the j-weighted kernel only: the
    residual slope after dividing out the t^-1 |log(t and 1/2)|^-2 model,
    which should be flat.  At desk-scale times the raw slope sits well
    above -1 because the squared-log correction is order one there.
    """

    op_kind: str
    p: float
    ts: tuple[float, ...]
    values: tuple[float, ...]
    slope: float
    intercept: float
    log_adjusted_slope: float | None = None


def _heat_matrix_1d(xs, t, h):
    d = xs[:, None] - xs[None, :]
    return h * np.exp(-d * d / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def _boyd_norm(apply_fn, apply_adj, shape, p, h_in, h_out, iters, tol,
               d_in, d_out):
    """Power-type iteration for the p -> p norm of a positive operator."""
    q = p / (p - 1.0)
    u = np.ones(shape)
    est = 0.0
    for _ in range(iters):
        tu = apply_fn(u)
        nin = (h_in**d_in * np.sum(u**p)) ** (1.0 / p)
        nout = (h_out**d_out * np.sum(tu**p)) ** (1.0 / p)
        new = nout / nin
        back = apply_adj(tu ** (p - 1.0))
        u = back ** (q - 1.0)
        u /= u.max()
        if est > 0 and abs(new - est) <= tol * est:
            est = new
            break
        est = new
    return est


def _weighted_heat_1d(xs, t, h, a, weight_expo=1.0):
    G = _heat_matrix_1d(xs, t, h)
    if a > 0:
        wx = np.exp(weight_expo * a * np.abs(xs))
        return wx[:, None] * G / wx[None, :]
    return G


def _heat_axis_norm(t, xs, h, p, a, iters, tol):
    Gw = _weighted_heat_1d(xs, t, h, a)
    return _boyd_norm(lambda u: Gw @ u, lambda v: Gw.T @ v, xs.shape,
                      p, h, h, iters, tol, 1, 1)


def _merge_axis_norm(t, xs, h, p, a, iters, tol):
    """One axis of the two-to-center merge kernel g(t,c-x1) g(t,c-x2).

    With exponential weights the center picks up the doubled exponent by
    itself, the kernel reads the center block in both heat factors.
    """
    Gw = _weighted_heat_1d(xs, t, h, a)

    def fwd(u):
        return np.einsum("ya,yb,ab->y", Gw, Gw, u, optimize=True)

    def adj(v):
        return np.einsum("y,ya,yb->ab", v, Gw, Gw, optimize=True)

    return _boyd_norm(fwd, adj, (len(xs), len(xs)), p, h, h, iters, tol,
                      2, 1)


def _overlap_swap_axis_norm(t, xs, h, p, a, iters, tol):
    """One axis of the swapping kernel for pairs sharing one index:
    g(t,c-c') g(t,c-y') g(t,y-c')."""
    Gw = _weighted_heat_1d(xs, t, h, a)

    def fwd(u):
        V = u @ Gw.T  # V[c', c], summing the y2' leg
        return np.einsum("cp,yp,pc->cy", Gw, Gw, V, optimize=True)

    def adj(v):
        W = np.einsum("yp,cy->cp", Gw, v, optimize=True)
        return np.einsum("cp,cy,cp->py", Gw, Gw, W, optimize=True)

    return _boyd_norm(fwd, adj, (len(xs), len(xs)), p, h, h, iters, tol,
                      2, 2)


def _probe_axis_norm(op_kind, t, xs, h, p, a, iters, tol, n_spect=0,
                     disjoint=False):
    if op_kind == "jop":
        Gw = _weighted_heat_1d(xs, 0.5 * t, h, a, weight_expo=2.0)
        core = _boyd_norm(lambda u: Gw @ u, lambda v: Gw.T @ v, xs.shape,
                          p, h, h, iters, tol, 1, 1)
    elif op_kind == "incoming":
        core = _merge_axis_norm(t, xs, h, p, a, iters, tol)
    elif op_kind == "swapping":
        if disjoint:
            q = p / (p - 1.0)
            core = (_merge_axis_norm(t, xs, h, p, a, iters, tol)
                    * _merge_axis_norm(t, xs, h, q, a, iters, tol))
        else:
            core = _overlap_swap_axis_norm(t, xs, h, p, a, iters, tol)
    else:
        raise ValueError(f"unknown probe kind {op_kind!r}")
    if n_spect:
        core *= _heat_axis_norm(t, xs, h, p, a, iters, tol) ** n_spect
    return core


def norm_scaling_probe(op_kind: str, omega=None, alpha=None, alphap=None,
                       t_grid=None, p: float = 2.0, theta: float = 0.0,
                       grid_points: int | None = None,
                       box: float | None = None, a: float = 0.0,
                       iters: int = 80, tol: float = 1e-10,
                       truncation_check: bool = False) -> NormProbeResult:
    """Fitted log-log scaling exponent of a kernel operator norm.

    The kernels factor across coordinate axes, so the discretized norm
    is the square of a 1D-factor norm (times 4 pi j(t) for the merge
    kernel), computed on a truncated non-periodic grid by power
    iteration; spectator indices contribute 1D heat-norm factors.
    Expected slopes: -1/p for incoming, -1 for swapping, -1 modulo the
    squared log correction for the j-weighted kernel.
    """
    if not 1.0 < p < math.inf:
        raise ValueError("p must lie in (1, infinity)")
    if omega is None:
        omega = (1, 2, 3) if op_kind == "swapping" else (1, 2)
    omega = tuple(sorted(set(omega)))
    alpha = tuple(sorted(alpha)) if alpha is not None else omega[:2]
    if alpha not in enumerate_pairs(omega):
        raise ValueError(f"alpha {alpha} is not a pair of {omega}")
    disjoint = False
    if op_kind == "swapping":
        alphap = (tuple(sorted(alphap)) if alphap is not None
                  else (omega[0], omega[2]))
        if alphap not in enumerate_pairs(omega) or alphap == alpha:
            raise ValueError("swapping needs a distinct second pair")
        merged = len(set(alpha) | set(alphap))
        disjoint = merged == 4
        n_spect = len(omega) - merged
    else:
        n_spect = len(omega) - 2
    if op_kind == "jop":
        t_grid = np.geomspace(1e-3, 1e-1, 7) if t_grid is None else np.asarray(
            t_grid, dtype=float)
        grid_points = 1024 if grid_points is None else grid_points
        box = 2.0 if box is None else box
    else:
        t_grid = np.geomspace(0.02, 0.5, 6) if t_grid is None else np.asarray(
            t_grid, dtype=float)
        grid_points = 192 if grid_points is None else grid_points
        box = 3.0 if box is None else box
    h = 2.0 * box / grid_points
    xs = -box + (np.arange(grid_points) + 0.5) * h

    def full_norm(points):
        axis = _probe_axis_norm(op_kind, float(t), points, h, p, a, iters,
                                tol, n_spect, disjoint)
        val = axis**2
        if op_kind == "jop":
            val *= FOUR_PI * j_eval(theta, float(t))
        return val

    values = []
    for t in t_grid:
        val = full_norm(xs)
        if truncation_check:
            wide = int(grid_points * 1.5)
            xs2 = -1.5 * box + (np.arange(wide) + 0.5) * h
            val2 = full_norm(xs2)
            if abs(val2 - val) > 0.05 * abs(val):
                raise GridTruncationError(
                    f"domain widening moved the norm at t={t:g} by "
                    f"{abs(val2 - val) / abs(val):.1%}")
        values.append(val)
    slope, intercept = np.polyfit(np.log(t_grid), np.log(values), 1)
    adjusted = None
    if op_kind == "jop":
        model = t_grid * np.log(np.minimum(t_grid, 0.5)) ** 2
        adjusted = float(np.polyfit(np.log(t_grid),
                                    np.log(np.array(values) * model), 1)[0])
    return NormProbeResult(op_kind=op_kind, p=p, ts=tuple(float(x)
                                                          for x in t_grid),
                           values=tuple(float(v) for v in values),
                           slope=float(slope), intercept=float(intercept),
                           log_adjusted_slope=adjusted)


# ---------------------------------------------------------------------------
# semigroup resolution probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemigroupTrendResult:
    """Chained-versus-direct pairing defects over a refining frame."""

    theta: float
    t_half: float
    box: float
    sizes: tuple[int, ...]
    chained: tuple[float, ...]
    exact: float
    defects: tuple[float, ...]


def semigroup_defect_trend(theta: float = 0.0, t_half: float = 0.15,
                           box: float = 1.8, sizes=(2, 3, 4),
                           test: GaussianTest | None = None,
                           level: float = 0.7) -> SemigroupTrendResult:
    """Probe the two-particle semigroup property through a Gaussian frame.

    A grid of mass-one Gaussians with sigma = h / sqrt(2) resolves the
    identity up to a heat blur of order h^2, so chaining two half-time
    pairings through the frame approaches the one-shot value at the
    doubled time as the grid refines.  The defect closes slowly (the
    blur only shrinks like the cell area) but it must close
    monotonically; that trend is what callers assert.
    """
    if test is None:
        test = GaussianTest((0.0, 0.0), 0.5)
    quad = QuadSpec(level=level)
    exact = moment_inner(2, theta, 2.0 * t_half, [(test, test)] * 2,
                         m_max=1).value
    chained = []
    for nz in sizes:
        h = 2.0 * box / nz
        cells = -box + (np.arange(nz) + 0.5) * h
        delta = h / math.sqrt(2.0)
        frame = [GaussianTest((float(a), float(b)), delta)
                 for a in cells for b in cells]
        K = len(frame)
        M = np.zeros((K, K))
        for i in range(K):
            for j in range(i, K):
                v = moment_inner(2, theta, t_half,
                                 [(test, frame[i]), (test, frame[j])],
                                 m_max=1, quad=quad).value
                M[i, j] = M[j, i] = v
        chained.append(float(h**4 * np.sum(M * M)))
    defects = tuple(abs(c - exact) / abs(exact) for c in chained)
    return SemigroupTrendResult(theta=theta, t_half=t_half, box=box,
                                sizes=tuple(int(s) for s in sizes),
                                chained=tuple(chained), exact=exact,
                                defects=defects)


# ---------------------------------------------------------------------------
# table export
# ---------------------------------------------------------------------------

def write_moment_table(path, results) -> None:
    """CSV rows (n, theta, t, m_max, value, trunc_proxy, quad_err)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "theta", "t", "m_max", "value", "trunc_proxy",
                         "quad_err"])
        for r in results:
            writer.writerow([r.n, repr(r.theta), repr(r.t), r.m_max,
                             repr(r.value), repr(r.trunc_proxy),
                             repr(r.quad_err)])


def write_j_table(path, theta: float, ts, tol: float = 1e-10) -> None:
    """CSV rows (theta, t, value, tol)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "t", "value", "tol"])
        for t in ts:
            writer.writerow([repr(theta), repr(float(t)),
                             repr(j_eval(theta, float(t), tol)), repr(tol)])
