"""Discrete measures on R^4 with the pairing, metric, and product toolkit.

The objects here are finitely supported positive measures on pairs of
planar points, the countable test family behind the vague metric, and
the mollified products that link two-time measures across an interface.
Everything is exact finite arithmetic; the only approximations are the
deliberate truncations (metric term counts, mollifier scales), each of
which reports its own bound.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "DiscreteMeasure4",
    "TestFamily",
    "BumpMember",
    "MollifierBump",
    "GridDeltaLink",
    "MetricResult",
    "ProcessMetricResult",
    "vague_metric",
    "process_metric",
    "mollified_product",
    "chain_pairing",
    "chain_product",
    "marginalize_atoms",
    "ck_residual",
    "bspline",
    "write_measure_csv",
    "read_measure_csv",
    "metric_report_json",
]


class ProductSizeError(RuntimeError):
    """A product would materialize more atoms than the caller allowed."""


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteMeasure4:
    """Finitely supported positive measure on R^2 x R^2.

    ``support`` holds rows (x1a, x1b, x2a, x2b): the source point then
    the target point.  ``meta`` carries provenance (times, epsilon, grid
    shape, seed) when the measure came from a solved field; products and
    generic constructions leave it None.
    """

    support: np.ndarray
    weights: np.ndarray
    meta: dict | None = None

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.support, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if sup.shape != (w.shape[0], 4):
            raise ValueError(f"support {sup.shape} does not match "
                             f"{w.shape[0]} weights")
        if w.size and w.min() < 0:
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "support", np.ascontiguousarray(sup))
        object.__setattr__(self, "weights", np.ascontiguousarray(w))

    @property
    def n_atoms(self) -> int:
        return self.weights.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def pair(self, fn) -> float:
        """Integral of fn(source, target) against the measure."""
        vals = fn(self.support[:, :2], self.support[:, 2:])
        return float(np.dot(self.weights, np.asarray(vals, dtype=float)))

    def pair_tensor(self, g, gp) -> float:
        """Integral of g(source) * gp(target)."""
        return self.pair(lambda xp, x: np.asarray(g(xp)) * np.asarray(gp(x)))

    def scaled(self, c: float) -> "DiscreteMeasure4":
        if c < 0:
            raise ValueError("scale must be nonnegative")
        return DiscreteMeasure4(self.support, c * self.weights, self.meta)


def _coalesce(rows: np.ndarray, weights: np.ndarray):
    """Merge duplicate coordinate rows, summing their weights."""
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    w = np.zeros(uniq.shape[0])
    np.add.at(w, inv, weights)
    return uniq, w


# ---------------------------------------------------------------------------
# the countable test family
# ---------------------------------------------------------------------------

def bspline(u):
    """Centered cubic B-spline: C^2, supported on [-2, 2], unit mass."""
    a = np.abs(np.asarray(u, dtype=float))
    inner = (4.0 - 6.0 * a**2 + 3.0 * a**3) / 6.0
    outer = (2.0 - a) ** 3 / 6.0
    return np.where(a <= 1.0, inner, np.where(a <= 2.0, outer, 0.0))


@lru_cache(maxsize=4096)
def _triple(index: int) -> tuple[int, int, int]:
    """Enumerate Z^3 by sup-norm shells, lexicographic inside each shell.

    Triple (m, a, b): scale exponent and center indices.  Shell k holds
    the triples with max(|m|, |a|, |b|) = k, so every dyadic scale and
    center is reached at a finite index.
    """
    if index < 0:
        raise ValueError("index must be nonnegative")
    k, seen = 0, 0
    while True:
        size = (2 * k + 1) ** 3 - ((2 * k - 1) ** 3 if k else 0)
        if index < seen + size:
            break
        seen += size
        k += 1
    for m in range(-k, k + 1):
        for a in range(-k, k + 1):
            for b in range(-k, k + 1):
                if max(abs(m), abs(a), abs(b)) != k:
                    continue
                if seen == index:
                    return (m, a, b)
                seen += 1
    raise AssertionError("shell enumeration out of bounds")


@dataclass(frozen=True)
class BumpMember:
    """Tensor B-spline bump at a dyadic center and scale.

    scale = 2^level; the support is the square of half-width 2 * scale
    around the center, and the bump is strictly positive inside it.
    """

    level: int
    center: tuple[float, float]

    @property
    def scale(self) -> float:
        return 2.0 ** self.level

    @property
    def half_width(self) -> float:
        return 2.0 * self.scale

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = (x[..., 0] - self.center[0]) / self.scale
        v = (x[..., 1] - self.center[1]) / self.scale
        return bspline(u) * bspline(v)


class TestFamily:
    """Ordered countable family of C^2 bumps with dyadic centers/scales.

    member(i) decodes index i to a scale 2^m and a center on the lattice
    (a, b) * 2^m.  The family is dense enough for the vague metric: the
    quasi-interpolant at scale s reproduces C^2 functions to O(s^2)
    (partition of unity plus symmetry), and for every ball there is a
    member bounded below on it.
    """

    def member(self, i: int) -> BumpMember:
        m, a, b = _triple(i)
        s = 2.0 ** m
        return BumpMember(level=m, center=(a * s, b * s))

    def members(self, count: int) -> list[BumpMember]:
        return [self.member(i) for i in range(count)]

    def positive_member_for_ball(self, radius: float,
                                 search: int = 2000):
        """First member with a positive infimum on the centered ball.

        Returns (index, member, infimum).  The infimum is evaluated on
        the worst corner of the ball's bounding square, which is exact
        for the tensor bump since it decreases along each axis.
        """
        for i in range(search):
            g = self.member(i)
            cx, cy = g.center
            far_x = abs(cx) + radius
            far_y = abs(cy) + radius
            if far_x >= g.half_width or far_y >= g.half_width:
                continue
            worst = float(bspline(far_x / g.scale)
                          * bspline(far_y / g.scale))
            if worst > 0:
                return i, g, worst
        raise ValueError(f"no member covers the ball of radius {radius} "
                         f"within the first {search} indices")


# ---------------------------------------------------------------------------
# vague and process metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricResult:
    value: float
    truncation_bound: float
    k_terms: int

    def __float__(self):
        return self.value


def vague_metric(mu: DiscreteMeasure4, nu: DiscreteMeasure4,
                 k_terms: int = 12,
                 family: TestFamily | None = None) -> MetricResult:
    """Truncated tensor-family metric between two measures on R^4.

    Sum over i, j of min(2^-(i+1)-(j+1), |(mu - nu) g_i x g_j|) for the
    first k_terms members per axis.  The dropped tail is at most
    1 - (1 - 2^-k)^2 regardless of the measures, which is the reported
    truncation bound.
    """
    if k_terms < 1:
        raise ValueError("k_terms must be at least 1")
    fam = family or TestFamily()
    gs = fam.members(k_terms)
    mu_src = np.stack([g(mu.support[:, :2]) for g in gs])
    mu_tgt = np.stack([g(mu.support[:, 2:]) for g in gs])
    nu_src = np.stack([g(nu.support[:, :2]) for g in gs])
    nu_tgt = np.stack([g(nu.support[:, 2:]) for g in gs])
    pair_mu = np.einsum("im,jm,m->ij", mu_src, mu_tgt, mu.weights)
    pair_nu = np.einsum("im,jm,m->ij", nu_src, nu_tgt, nu.weights)
    caps = np.power(2.0, -(np.arange(1, k_terms + 1)))
    cap_ij = caps[:, None] * caps[None, :]
    value = float(np.minimum(cap_ij, np.abs(pair_mu - pair_nu)).sum())
    tail = 1.0 - (1.0 - 2.0 ** -k_terms) ** 2
    return MetricResult(value=value, truncation_bound=tail, k_terms=k_terms)


@dataclass(frozen=True)
class ProcessMetricResult:
    value: float
    ell_max: int
    per_ell: tuple[float, ...]
    grid: tuple

    def __float__(self):
        return self.value


def process_metric(proc_a: dict, proc_b: dict, ell_max: int = 6,
                   k_terms: int = 12) -> ProcessMetricResult:
    """Uniform-on-compact metric between two-time measure processes.

    Both processes are dicts keyed by (s, t); the key sets must agree
    (same sampling grid).  Each level ell contributes
    min(2^-ell, sup of the vague metric over keys inside [-ell, ell]).
    """
    keys_a, keys_b = set(proc_a), set(proc_b)
    if keys_a != keys_b:
        raise ValueError("mismatched time grids between the processes")
    grid = tuple(sorted(keys_a))
    dists = {key: vague_metric(proc_a[key], proc_b[key], k_terms).value
             for key in grid}
    per_ell = []
    for ell in range(1, ell_max + 1):
        inside = [d for (s, t), d in dists.items()
                  if max(abs(s), abs(t)) <= ell]
        sup = max(inside) if inside else 0.0
        per_ell.append(min(2.0 ** -ell, sup))
    return ProcessMetricResult(value=float(sum(per_ell)), ell_max=ell_max,
                               per_ell=tuple(per_ell), grid=grid)


# ---------------------------------------------------------------------------
# mollifier links
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MollifierBump:
    """Rescaled unit-mass tensor B-spline link u_l(x) = l^2 u(l x).

    The convolution operators of this family converge strongly to the
    identity as rate grows, which is the defining property the products
    rely on.
    """

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    @property
    def support_radius(self) -> float:
        """Axis half-width of the support square."""
        return 2.0 / self.rate

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        return (self.rate ** 2 * bspline(self.rate * d[..., 0])
                * bspline(self.rate * d[..., 1]))


@dataclass(frozen=True)
class GridDeltaLink:
    """Exact grid-product link: mass one concentrated in a single cell.

    Treats displacements inside half a cell as coincident and weighs
    them 1/h^2, so chaining two grid fields through this link is the
    matrix product with the h^2 quadrature, exactly.
    """

    h: float

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")

    @property
    def support_radius(self) -> float:
        return 0.49 * self.h

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        hit = (np.abs(d[..., 0]) < 0.5 * self.h) \
            & (np.abs(d[..., 1]) < 0.5 * self.h)
        return np.where(hit, self.h ** -2, 0.0)


def _local_pairs(left_pts: np.ndarray, right_pts: np.ndarray, radius: float,
                 max_pairs: int):
    """Index pairs (i, j) with |left_i - right_j|_inf <= radius.

    Counts candidates before materializing them so an oversized product
    fails fast instead of exhausting memory.
    """
    if left_pts.shape[0] == 0 or right_pts.shape[0] == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    tree = cKDTree(right_pts)
    counts = tree.query_ball_point(left_pts, r=radius, p=np.inf,
                                   return_length=True)
    total = int(np.sum(counts))
    if total > max_pairs:
        raise ProductSizeError(f"{total} candidate atom pairs exceed "
                               f"the cap {max_pairs}")
    hits = tree.query_ball_point(left_pts, r=radius, p=np.inf)
    li = np.repeat(np.arange(left_pts.shape[0]), counts)
    rj = np.fromiter((j for js in hits for j in js), dtype=int, count=total)
    return li, rj


def _collapse(points: np.ndarray, values: np.ndarray):
    """Sum values over coincident points; returns (unique, sums, inverse)."""
    uniq, inv = np.unique(points, axis=0, return_inverse=True)
    acc = np.zeros(uniq.shape[0])
    np.add.at(acc, inv, values)
    return uniq, acc, inv


def mollified_product(mu: DiscreteMeasure4, u, nu: DiscreteMeasure4,
                      max_atoms: int = 2_000_000) -> DiscreteMeasure4:
    """The interface product: weights w_mu * u(x2 - x3) * w_nu.

    The result lives on (source of mu, target of nu); interface points
    are contracted.  ``u`` must expose ``support_radius`` so the pair
    search stays local.  Raises ProductSizeError when the candidate atom
    count exceeds ``max_atoms`` before coalescing.
    """
    li, rj = _local_pairs(mu.support[:, 2:], nu.support[:, :2],
                          u.support_radius, max_atoms)
    link = u(mu.support[li, 2:] - nu.support[rj, :2])
    w = mu.weights[li] * link * nu.weights[rj]
    keep = w > 0
    rows = np.concatenate([mu.support[li[keep], :2],
                           nu.support[rj[keep], 2:]], axis=1)
    rows, w = _coalesce(rows, w[keep])
    return DiscreteMeasure4(rows, w)


def chain_pairing(measures, mollifiers, fs,
                  max_pairs: int = 20_000_000) -> float:
    """Pair the K-fold product against a tensor function without
    materializing it.

    ``fs`` has K+1 entries for the coordinates x_0 .. x_K; None means
    the constant one (equivalently: that coordinate is marginalized).
    The running state is collapsed onto distinct interface points before
    each link, so chaining grid fields costs O(cells^2) per link rather
    than O(atoms^2).
    """
    K = len(measures)
    if K < 1 or len(mollifiers) != K - 1 or len(fs) != K + 1:
        raise ValueError("need K measures, K-1 links, K+1 functions")
    first = measures[0]
    state = first.weights.copy()
    if fs[0] is not None:
        state = state * np.asarray(fs[0](first.support[:, :2]), dtype=float)
    if fs[1] is not None:
        state = state * np.asarray(fs[1](first.support[:, 2:]), dtype=float)
    tails = first.support[:, 2:]
    for k in range(1, K):
        nxt, u = measures[k], mollifiers[k - 1]
        t_uniq, s_uniq, _ = _collapse(tails, state)
        a_uniq, _, a_inv = _collapse(nxt.support[:, :2],
                                     np.zeros(nxt.n_atoms))
        li, rj = _local_pairs(t_uniq, a_uniq, u.support_radius, max_pairs)
        link = u(t_uniq[li] - a_uniq[rj])
        carried = np.zeros(a_uniq.shape[0])
        np.add.at(carried, rj, s_uniq[li] * link)
        state = carried[a_inv] * nxt.weights
        if fs[k + 1] is not None:
            state = state * np.asarray(fs[k + 1](nxt.support[:, 2:]),
                                       dtype=float)
        tails = nxt.support[:, 2:]
    return float(state.sum())


def chain_product(measures, mollifiers, marginalize=frozenset(),
                  max_atoms: int = 2_000_000):
    """Materialized K-fold product on the kept coordinates.

    Coordinates are x_0 .. x_K (x_0 the first source, x_k the k-th
    target); ``marginalize`` names internal indices in 1..K-1 to drop.
    Returns (coords array with 2 columns per kept coordinate, weights,
    kept index tuple).  Atoms are coalesced after every link.
    """
    K = len(measures)
    if K < 2 or len(mollifiers) != K - 1:
        raise ValueError("need at least two measures and K-1 links")
    dropped = set(marginalize)
    if not dropped <= set(range(1, K)):
        raise ValueError("marginalize must name internal coordinates")
    first = measures[0]
    rows = first.support.copy()
    w = first.weights.copy()
    for k in range(1, K):
        nxt, u = measures[k], mollifiers[k - 1]
        tails = rows[:, -2:]
        li, rj = _local_pairs(tails, nxt.support[:, :2], u.support_radius,
                              max_atoms)
        link = u(tails[li] - nxt.support[rj, :2])
        neww = w[li] * link * nxt.weights[rj]
        keep = neww > 0
        base = rows[li[keep]]
        if k in dropped:
            base = base[:, :-2]
        rows = np.concatenate([base, nxt.support[rj[keep], 2:]], axis=1)
        rows, w = _coalesce(rows, neww[keep])
    kept = tuple(i for i in range(K + 1) if i not in dropped)
    return rows, w, kept


def marginalize_atoms(rows: np.ndarray, weights: np.ndarray, keep_cols):
    """Project atoms onto a column subset, merging coincident images."""
    return _coalesce(np.ascontiguousarray(rows[:, list(keep_cols)]), weights)


# ---------------------------------------------------------------------------
# Chapman-Kolmogorov residuals
# ---------------------------------------------------------------------------

def _grids_compatible(*measures) -> None:
    seen = None
    for m in measures:
        if m.meta is None:
            continue
        key = (m.meta.get("grid_N"), m.meta.get("grid_L"))
        if key == (None, None):
            continue
        if seen is None:
            seen = key
        elif key != seen:
            raise ValueError(f"incompatible grids {seen} vs {key}")


def ck_residual(z_st: DiscreteMeasure4, z_tu: DiscreteMeasure4,
                z_su: DiscreteMeasure4, mollifiers, g, gp) -> np.ndarray:
    """|(Z_st x_u Z_tu - Z_su) g x gp| per mollifier scale.

    For seed-matched grid fields with the exact grid link the residual
    is zero to rounding; for a refining mollifier family it should trend
    down to the discretization floor.
    """
    _grids_compatible(z_st, z_tu, z_su)
    direct = z_su.pair_tensor(g, gp)
    out = []
    for u in mollifiers:
        chained = chain_pairing([z_st, z_tu], [u], [g, None, gp])
        out.append(abs(chained - direct))
    return np.array(out)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_measure_csv(path, measure: DiscreteMeasure4) -> None:
    """CSV rows (x1a, x1b, x2a, x2b, weight)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1a", "x1b", "x2a", "x2b", "weight"])
        for row, w in zip(measure.support, measure.weights):
            writer.writerow([repr(float(v)) for v in row]
                            + [repr(float(w))])


def read_measure_csv(path) -> DiscreteMeasure4:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    sup = np.array([[float(r["x1a"]), float(r["x1b"]),
                     float(r["x2a"]), float(r["x2b"])] for r in rows])
    w = np.array([float(r["weight"]) for r in rows])
    return DiscreteMeasure4(sup, w)


def metric_report_json(result: MetricResult | ProcessMetricResult) -> str:
    if isinstance(result, MetricResult):
        payload = {"kind": "vague", "value": result.value,
                   "truncation_bound": result.truncation_bound,
                   "k_terms": result.k_terms}
    else:
        payload = {"kind": "process", "value": result.value,
                   "ell_max": result.ell_max,
                   "per_ell": list(result.per_ell),
                   "grid": [list(k) for k in result.grid]}
    return json.dumps(payload, sort_keys=True)
