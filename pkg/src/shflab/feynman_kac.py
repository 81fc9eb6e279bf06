"""Moments from pinned Brownian paths with pairwise mollified attraction.

The n-th moment of the smoothed multiplicative-noise field has an exact
representation as an expectation over n independent Brownian bridges,
weighted by the exponential of the time-integrated pair interaction
beta * Phi_eps.  Sampling the bridges exactly and integrating the
interaction by the trapezoid rule gives an estimator whose only bias is
the time discretization of the collision integral; it serves as an
independent oracle for the field solver at matched parameters.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mollifier import CriticalCoupling, MollifierSpec, beta_epsilon, build_mollifier
from .rng import stream

__all__ = [
    "BridgeEnsemble",
    "MomentEstimate",
    "WeightOverflowError",
    "sample_bridges",
    "interaction_weight",
    "fk_moment",
    "fk_sweep",
    "endpoint_normalization",
    "default_mollifier",
    "tree_sum",
    "write_moment_csv",
    "read_moment_csv",
]

# exp() saturates just above 709; leave headroom for the prefactor
_MAX_EXPONENT = 690.0

_ESS_FLOOR = 50.0


class WeightOverflowError(FloatingPointError):
    """The interaction exponent left the representable range.

    Carries the closest pair approach of the offending sample; a tiny
    value relative to epsilon means the time step under-resolves a
    near-collision.
    """

    def __init__(self, exponent: float, closest: float):
        self.exponent = exponent
        self.closest = closest
        super().__init__(
            f"interaction exponent {exponent:.3g} overflows "
            f"(closest pair approach {closest:.3e})")


@lru_cache(maxsize=4)
def default_mollifier(profile: str = "bump") -> MollifierSpec:
    return build_mollifier(profile=profile)


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo moment with its sampling error and weight health."""

    value: float
    stderr: float
    n_samples: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __float__(self):
        return self.value

    @property
    def ess(self) -> float:
        return self.diagnostics.get("ess", float(self.n_samples))


@dataclass(frozen=True, eq=False)
class BridgeEnsemble:
    """One joint realization of n bridges pinned at the endpoint pairs.

    paths has shape (n, steps + 1, 2) with paths[i, 0] == start_i and
    paths[i, -1] == end_i exactly.
    """

    n: int
    t: float
    dt_path: float
    endpoints: np.ndarray
    paths: np.ndarray

    @property
    def steps(self) -> int:
        return self.paths.shape[1] - 1


def _check_step(t: float, dt_path: float) -> int:
    if t <= 0:
        raise ValueError("horizon t must be positive")
    if dt_path <= 0:
        raise ValueError("dt_path must be positive")
    steps = int(round(t / dt_path))
    if steps < 1 or abs(steps * dt_path - t) > 1e-9 * t:
        raise ValueError(f"dt_path {dt_path} does not divide t {t}")
    return steps


def _as_endpoints(endpoints, n: int) -> np.ndarray:
    pts = np.asarray(endpoints, dtype=float)
    if pts.shape != (n, 2, 2):
        raise ValueError(f"endpoints must have shape ({n}, 2, 2): "
                         "one (start, end) planar pair per particle")
    return pts


def sample_bridges(n: int, t: float, endpoints, dt_path: float,
                   seed: int, sample_index: int = 0) -> BridgeEnsemble:
    """Exact joint draw of n independent planar Brownian bridges.

    The grid-time law is exact: a free Brownian path W is drawn from its
    increments and pinned by X(u) = start + (u/t)(end - start) + W(u)
    - (u/t) W(t).  Streams are keyed by (seed, sample_index, particle),
    so any sample of a Monte Carlo run can be reproduced in isolation.
    """
    steps = _check_step(t, dt_path)
    pts = _as_endpoints(endpoints, n)
    frac = np.linspace(0.0, 1.0, steps + 1)[:, None]
    paths = np.empty((n, steps + 1, 2))
    for i in range(n):
        rng = stream(seed, "bridge", sample_index, i)
        incr = rng.normal(scale=math.sqrt(dt_path), size=(steps, 2))
        w = np.vstack([np.zeros(2), np.cumsum(incr, axis=0)])
        paths[i] = pts[i, 0] + frac * (pts[i, 1] - pts[i, 0]) \
            + w - frac * w[-1]
        # the pins are exact by contract, not up to rounding
        paths[i, 0] = pts[i, 0]
        paths[i, -1] = pts[i, 1]
    return BridgeEnsemble(n=n, t=float(t), dt_path=float(dt_path),
                          endpoints=pts, paths=paths)


def _pair_exponent(paths: np.ndarray, dt_path: float, epsilon: float,
                   beta: float, mol: MollifierSpec):
    """Trapezoid integral of the summed pair interaction along one path
    realization; returns (exponent, closest pair approach)."""
    n = paths.shape[0]
    total = 0.0
    closest = math.inf
    for i, j in itertools.combinations(range(n), 2):
        dist = np.hypot(paths[i, :, 0] - paths[j, :, 0],
                        paths[i, :, 1] - paths[j, :, 1])
        closest = min(closest, float(dist.min()))
        phi = mol.corr(dist / epsilon)
        total += float(np.trapezoid(phi, dx=dt_path))
    return beta * total / epsilon**2, closest


def interaction_weight(ensemble: BridgeEnsemble, epsilon: float,
                       coupling: CriticalCoupling,
                       mol: MollifierSpec | None = None) -> float:
    """exp of the time-integrated pair attraction along the realization.

    Always 1 for a single particle.  Raises WeightOverflowError rather
    than returning inf when the exponent leaves the double range.
    """
    if ensemble.n < 1:
        raise ValueError("ensemble must hold at least one particle")
    if ensemble.n == 1:
        return 1.0
    mol = mol or default_mollifier()
    exponent, closest = _pair_exponent(ensemble.paths, ensemble.dt_path,
                                       epsilon, coupling.beta, mol)
    if exponent > _MAX_EXPONENT:
        raise WeightOverflowError(exponent, closest)
    return math.exp(exponent)


def tree_sum(values: np.ndarray) -> float:
    """Fixed-order pairwise reduction; the result is independent of how
    samples were batched across workers."""
    vals = np.asarray(values, dtype=float)
    n = vals.shape[0]
    if n == 0:
        return 0.0
    while n > 1:
        half = n // 2
        vals = np.concatenate([vals[:half] + vals[half:2 * half],
                               vals[2 * half:n]])
        n = vals.shape[0]
    return float(vals[0])


def _heat_density(t: float, disp: np.ndarray) -> float:
    d2 = float(np.dot(disp, disp))
    return math.exp(-d2 / (2.0 * t)) / (2.0 * math.pi * t)


def endpoint_normalization(test_pair, t: float) -> float:
    """Exact integral of g(x) k_t(x' - x) g'(x') over both arguments.

    Both tests are isotropic Gaussians, so the integral collapses to the
    total masses times a normal density of the combined variance at the
    center separation.
    """
    g, gp = test_pair
    mass = g.amp * 2.0 * math.pi * g.sigma**2
    massp = gp.amp * 2.0 * math.pi * gp.sigma**2
    var = g.sigma**2 + t + gp.sigma**2
    sep = np.asarray(gp.center, dtype=float) - np.asarray(g.center, dtype=float)
    return mass * massp * math.exp(-float(sep @ sep) / (2.0 * var)) \
        / (2.0 * math.pi * var)


def _endpoint_sampler(test_pair, t: float):
    """Mean vector and Cholesky factor for one particle's (start, end)
    joint draw under the tilted Gaussian density, per coordinate axis."""
    g, gp = test_pair
    prec = np.array([[1.0 / g.sigma**2 + 1.0 / t, -1.0 / t],
                     [-1.0 / t, 1.0 / gp.sigma**2 + 1.0 / t]])
    cov = np.linalg.inv(prec)
    chol = np.linalg.cholesky(cov)
    rhs = np.array([np.asarray(g.center, dtype=float) / g.sigma**2,
                    np.asarray(gp.center, dtype=float) / gp.sigma**2])
    mean = cov @ rhs
    return mean, chol


def _draw_endpoints(test_pairs, t: float, n_paths: int, seed: int) -> np.ndarray:
    """(n_paths, n, 2, 2) endpoint draws, importance-sampled per pair."""
    n = len(test_pairs)
    out = np.empty((n_paths, n, 2, 2))
    for i, pair in enumerate(test_pairs):
        mean, chol = _endpoint_sampler(pair, t)
        rng = stream(seed, "endpoints", i)
        z = rng.normal(size=(n_paths, 2, 2))
        out[:, i] = mean[None] + np.einsum("ab,sbc->sac", chol, z)
    return out


def _summarize(weights: np.ndarray, prefactor: float,
               dt_path: float) -> MomentEstimate:
    n = weights.shape[0]
    total = tree_sum(weights)
    mean = total / n
    var = tree_sum((weights - mean) ** 2) / (n - 1) if n > 1 else 0.0
    sq = tree_sum(weights**2)
    ess = total**2 / sq if sq > 0 else float(n)
    diag = {"ess": ess, "low_ess": bool(ess < _ESS_FLOOR),
            "dt_path": dt_path, "weight_mean": mean,
            "weight_max": float(weights.max()) if n else 1.0}
    return MomentEstimate(value=prefactor * mean,
                          stderr=prefactor * math.sqrt(var / n),
                          n_samples=n, diagnostics=diag)


def _resolve_dt(t: float, epsilon: float, dt_path: float | None) -> float:
    """Default path step eps^2 / 4, rounded down so it divides t."""
    if dt_path is not None:
        return float(dt_path)
    target = epsilon**2 / 4.0
    return t / math.ceil(t / target)


def _validate_moment_args(n: int, n_paths: int, endpoints, test_pairs):
    if not 1 <= n <= 4:
        raise ValueError("particle count must lie in 1..4")
    if n_paths < 1000:
        raise ValueError("n_paths below 1000 cannot give a usable error bar")
    if (endpoints is None) == (test_pairs is None):
        raise ValueError("supply exactly one of endpoints or test_pairs")


def fk_moment(n: int, t: float, coupling: CriticalCoupling,
              endpoints=None, test_pairs=None, n_paths: int = 2000,
              dt_path: float | None = None, seed: int = 0,
              mol: MollifierSpec | None = None) -> MomentEstimate:
    """Monte Carlo n-th moment at smoothing scale coupling.epsilon.

    With fixed endpoints the estimate is the product of free heat-kernel
    densities times the mean interaction weight.  With test pairs the
    endpoints are importance-sampled from the exact Gaussian tilt, whose
    normalization is analytic, so the Gaussian part of the variance
    cancels and only the interaction weight fluctuates.  For n = 1 the
    weight is identically one and the estimate is exact with zero
    stderr.
    """
    _validate_moment_args(n, n_paths, endpoints, test_pairs)
    epsilon = coupling.epsilon
    mol = mol or default_mollifier()
    dt = _resolve_dt(t, epsilon, dt_path)
    _check_step(t, dt)

    if endpoints is not None:
        pts = _as_endpoints(endpoints, n)
        prefactor = 1.0
        for i in range(n):
            prefactor *= _heat_density(t, pts[i, 1] - pts[i, 0])
        if n == 1:
            return MomentEstimate(value=prefactor, stderr=0.0,
                                  n_samples=n_paths,
                                  diagnostics={"ess": float(n_paths),
                                               "low_ess": False,
                                               "dt_path": dt, "exact": True})
        draws = np.broadcast_to(pts, (n_paths, n, 2, 2))
    else:
        if len(test_pairs) != n:
            raise ValueError(f"need {n} test pairs, got {len(test_pairs)}")
        prefactor = 1.0
        for pair in test_pairs:
            prefactor *= endpoint_normalization(pair, t)
        if n == 1:
            return MomentEstimate(value=prefactor, stderr=0.0,
                                  n_samples=n_paths,
                                  diagnostics={"ess": float(n_paths),
                                               "low_ess": False,
                                               "dt_path": dt, "exact": True})
        draws = _draw_endpoints(test_pairs, t, n_paths, seed)

    weights = np.empty(n_paths)
    for s in range(n_paths):
        ens = sample_bridges(n, t, draws[s], dt, seed, sample_index=s)
        weights[s] = interaction_weight(ens, epsilon, coupling, mol)
    return _summarize(weights, prefactor, dt)


def fk_sweep(n: int, t: float, epsilons, theta: float,
             endpoints=None, test_pairs=None, n_paths: int = 2000,
             dt_path: float | None = None, seed: int = 0,
             mol: MollifierSpec | None = None) -> list[MomentEstimate]:
    """Moments across a smoothing-scale sweep on shared bridge noise.

    All scales see the same endpoint draws and the same bridges, so the
    sweep differences carry far less Monte Carlo noise than independent
    runs would; the path step is sized for the smallest scale.
    """
    _validate_moment_args(n, n_paths, endpoints, test_pairs)
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ValueError("need at least one smoothing scale")
    mol = mol or default_mollifier()
    from .mollifier import log_interaction_constant
    J = log_interaction_constant(mol)
    couplings = [beta_epsilon(theta, e, mol, interaction=J) for e in epsilons]
    dt = _resolve_dt(t, min(epsilons), dt_path)
    _check_step(t, dt)

    if endpoints is not None:
        pts = _as_endpoints(endpoints, n)
        prefactor = 1.0
        for i in range(n):
            prefactor *= _heat_density(t, pts[i, 1] - pts[i, 0])
        draws = np.broadcast_to(pts, (n_paths, n, 2, 2))
    else:
        if len(test_pairs) != n:
            raise ValueError(f"need {n} test pairs, got {len(test_pairs)}")
        prefactor = 1.0
        for pair in test_pairs:
            prefactor *= endpoint_normalization(pair, t)
        draws = _draw_endpoints(test_pairs, t, n_paths, seed)

    if n == 1:
        est = MomentEstimate(value=prefactor, stderr=0.0, n_samples=n_paths,
                             diagnostics={"ess": float(n_paths),
                                          "low_ess": False, "dt_path": dt,
                                          "exact": True})
        return [est for _ in epsilons]

    weights = np.empty((len(epsilons), n_paths))
    pair_idx = list(itertools.combinations(range(n), 2))
    for s in range(n_paths):
        ens = sample_bridges(n, t, draws[s], dt, seed, sample_index=s)
        dists = [np.hypot(ens.paths[i, :, 0] - ens.paths[j, :, 0],
                          ens.paths[i, :, 1] - ens.paths[j, :, 1])
                 for i, j in pair_idx]
        for k, (eps, cpl) in enumerate(zip(epsilons, couplings)):
            total = sum(float(np.trapezoid(mol.corr(d / eps), dx=dt))
                        for d in dists)
            exponent = cpl.beta * total / eps**2
            if exponent > _MAX_EXPONENT:
                raise WeightOverflowError(exponent,
                                          min(float(d.min()) for d in dists))
            weights[k, s] = math.exp(exponent)
    return [_summarize(weights[k], prefactor, dt)
            for k in range(len(epsilons))]


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

_MOMENT_COLUMNS = ["n", "s", "t", "eps", "theta", "value", "stderr",
                   "n_samples", "seed", "method"]


def write_moment_csv(path, rows) -> None:
    """Moment results, one row per estimate.

    Each row is a mapping with keys n, s, t, eps, theta, value, stderr,
    n_samples, seed, and method ("fk" or "spde").  Floats are written
    via repr for lossless round-trips.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MOMENT_COLUMNS)
        for row in rows:
            out = []
            for col in _MOMENT_COLUMNS:
                v = row[col]
                out.append(repr(float(v)) if isinstance(v, (float, np.floating))
                           else v)
            writer.writerow(out)


def read_moment_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for col in ("s", "t", "eps", "theta", "value", "stderr"):
            row[col] = float(row[col])
        for col in ("n", "n_samples", "seed"):
            row[col] = int(row[col])
    return rows
