"""Splitting solver for the smoothed multiplicative-noise heat equation.

One step of size dt is the Strang composition

    exp((dt/4) Lap) . exp(sqrt(beta) W - beta sigma2 dt / 2) . exp((dt/4) Lap)

where W is the mollified space-time noise increment for the step and
sigma2 is the grid-realized value of the noise covariance at zero
displacement, so the exponential factor has mean one and the field mean
solves the plain heat equation.  Both factors preserve nonnegativity;
the only rounding leak is FFT dust at machine-epsilon relative size,
which the output projection removes.

Noise streams are keyed by (master seed, sample, absolute step index),
which makes solving [s, u] in one call bit-compatible with solving
[s, t] then [t, u]: the second leg consumes exactly the increments the
long run would have.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .feynman_kac import MomentEstimate, tree_sum, write_moment_csv
from .grids import GridSpec, fft_workers, heat_kernel_grid, heat_multiplier
from .measures import DiscreteMeasure4
from .mollifier import CriticalCoupling, MollifierSpec, NoiseKernel, build_noise_kernel
from .rng import stream

__all__ = [
    "SolverSpec",
    "FundamentalSolutionField",
    "FieldBlowupError",
    "step",
    "solve_fundamental",
    "solve_batch",
    "solve_propagator",
    "fundamental_mean_mc",
    "estimate_moment_mc",
    "sample_test_on_grid",
    "as_measure",
    "save_field",
    "load_field",
    "time_regularity_probe",
    "write_moment_csv",
]

log = logging.getLogger(__name__)

_FIELD_MAGIC = "shflab-field v1"


class FieldBlowupError(FloatingPointError):
    """The field left the finite range; carries the failing step index."""

    def __init__(self, step_index: int, peak: float):
        self.step_index = step_index
        self.peak = peak
        super().__init__(f"field became non-finite at step {step_index} "
                         f"(last finite peak {peak:.3e})")


@dataclass(frozen=True)
class SolverSpec:
    """Grid plus time step for the splitting scheme.

    dt <= h^2/4 is advisory (the spectral heat factor is exact in time;
    the bound keeps the noise exponent well resolved per cell), so
    violating it only logs a warning.
    """

    grid: GridSpec
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > self.grid.h**2 / 4.0 * (1 + 1e-12):
            log.warning("dt=%g exceeds the advisory bound h^2/4=%g",
                        self.dt, self.grid.h**2 / 4.0)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def L(self) -> float:
        return self.grid.L

    @property
    def h(self) -> float:
        return self.grid.h


@dataclass(frozen=True, eq=False)
class FundamentalSolutionField:
    """Density field of the solution started from a cell delta at time s.

    values is an (N, N) array of nonnegative densities: the measure of a
    cell is h^2 * value.  At t == s the field is the Kronecker delta
    scaled by h^-2.
    """

    values: np.ndarray
    s: float
    t: float
    source: tuple[int, int]
    epsilon: float
    theta: float
    master_seed: int
    sample_index: int
    solver: SolverSpec
    step_indices: tuple[int, ...] = ()

    @property
    def mass(self) -> float:
        return float(self.values.sum()) * self.solver.h**2


def _rfft2(x: np.ndarray) -> np.ndarray:
    return sfft.rfft2(x, workers=fft_workers())


def _irfft2(x: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfft2(x, s=(n, n), workers=fft_workers())


def _noise_increments(kernel: NoiseKernel, dt: float, master_seed: int,
                      sample_ids, step_index: int,
                      shift: tuple[int, int] | None = None) -> np.ndarray:
    """Batch of mollified noise increments, one per sample id.

    Each sample's white sheet comes from its own addressable stream, so
    any (sample, step) draw is reproducible in isolation.
    """
    n = kernel.grid.N
    scale = math.sqrt(dt) / kernel.grid.h
    whites = np.empty((len(sample_ids), n, n))
    for b, sid in enumerate(sample_ids):
        rng = stream(master_seed, "noise", int(sid), step_index)
        whites[b] = rng.normal(size=(n, n))
    out = _irfft2(_rfft2(whites) * kernel.khat, n) * kernel.grid.h**2 * scale
    if shift is not None:
        out = np.roll(out, shift, axis=(-2, -1))
    return out


def _plan_steps(solver: SolverSpec, s: float, t: float):
    """Absolute first step index and per-step durations covering [s, t].

    s must sit on the dt grid (that is what makes seed schedules
    composable); the final step may be shorter when t does not.
    """
    if t < s:
        raise ValueError("t must be at least s")
    dt = solver.dt
    k0 = int(round(s / dt))
    if abs(k0 * dt - s) > 1e-9 * max(dt, abs(s)):
        raise ValueError(f"start time {s} is not aligned to dt {dt}")
    span = t - s
    n_steps = int(math.ceil(span / dt - 1e-12))
    durations = np.full(n_steps, dt)
    if n_steps:
        last = span - dt * (n_steps - 1)
        durations[-1] = last
    return k0, durations


def _evolve(solver: SolverSpec, kernel: NoiseKernel,
            coupling: CriticalCoupling, s: float, t: float,
            init: np.ndarray, master_seed: int, sample_ids,
            noise_shift: tuple[int, int] | None = None,
            noise_time_shift: int = 0):
    """Shared engine: evolve a (B, N, N) batch over [s, t].

    Interior half-heat factors of consecutive steps are merged into one
    spectral multiply; the per-step physics is still the symmetric
    splitting.  Returns (final batch, absolute step indices used).
    """
    grid = solver.grid
    k0, durations = _plan_steps(solver, s, t)
    if durations.shape[0] == 0:
        return init.copy(), ()
    beta = coupling.beta
    sq = math.sqrt(beta) if beta > 0 else 0.0
    drift = 0.5 * beta * kernel.sigma2
    half = {d: heat_multiplier(grid, d / 4.0) for d in set(durations.tolist())}
    v = init
    spectral = _rfft2(v) * half[durations[0]]
    n_steps = durations.shape[0]
    for k in range(n_steps):
        d = durations[k]
        v = _irfft2(spectral, grid.N)
        w = _noise_increments(kernel, d, master_seed, sample_ids,
                              k0 + k - noise_time_shift, shift=noise_shift)
        v = v * np.exp(sq * w - drift * d)
        peak = float(v.max())
        if not math.isfinite(peak):
            raise FieldBlowupError(k0 + k, float(np.nanmax(init)))
        if k + 1 < n_steps:
            mult = half[d] * half[durations[k + 1]]
        else:
            mult = half[d]
        spectral = _rfft2(v) * mult
    v = _irfft2(spectral, grid.N)
    np.maximum(v, 0.0, out=v)
    return v, tuple(range(k0, k0 + n_steps))


def step(solver: SolverSpec, kernel: NoiseKernel, coupling: CriticalCoupling,
         values: np.ndarray, time: float, master_seed: int,
         sample_index: int = 0) -> np.ndarray:
    """One Strang step of size solver.dt starting at the aligned time."""
    out, _ = _evolve(solver, kernel, coupling, time, time + solver.dt,
                     values[None], master_seed, [sample_index])
    return out[0]


def solve_fundamental(solver: SolverSpec, mol: MollifierSpec,
                      coupling: CriticalCoupling, s: float, t: float,
                      source: tuple[int, int], master_seed: int,
                      sample_index: int = 0) -> FundamentalSolutionField:
    """Fundamental solution over [s, t] from a cell delta at ``source``."""
    kernel = build_noise_kernel(mol, solver.grid, coupling.epsilon)
    init = np.zeros((solver.N, solver.N))
    init[source] = 1.0 / solver.h**2
    if t == s:
        return FundamentalSolutionField(
            values=init, s=s, t=t, source=tuple(source),
            epsilon=coupling.epsilon, theta=coupling.theta,
            master_seed=master_seed, sample_index=sample_index,
            solver=solver, step_indices=())
    out, steps = _evolve(solver, kernel, coupling, s, t, init[None],
                         master_seed, [sample_index])
    return FundamentalSolutionField(
        values=out[0], s=s, t=t, source=tuple(source),
        epsilon=coupling.epsilon, theta=coupling.theta,
        master_seed=master_seed, sample_index=sample_index,
        solver=solver, step_indices=steps)


def solve_batch(solver: SolverSpec, kernel: NoiseKernel,
                coupling: CriticalCoupling, s: float, t: float,
                init: np.ndarray, master_seed: int, sample_ids,
                noise_shift: tuple[int, int] | None = None,
                noise_time_shift: int = 0) -> np.ndarray:
    """Evolve a stack of initial fields, one independent noise per id.

    noise_shift relocates each noise sheet on the torus; noise_time_shift
    re-keys the stream by that many steps.  Both exist so shift covariance
    of the dynamics can be checked pathwise instead of only in law.
    """
    out, _ = _evolve(solver, kernel, coupling, s, t, init, master_seed,
                     sample_ids, noise_shift=noise_shift,
                     noise_time_shift=noise_time_shift)
    return out


def solve_propagator(solver: SolverSpec, mol: MollifierSpec,
                     coupling: CriticalCoupling, s: float, t: float,
                     master_seed: int, sample_index: int = 0) -> np.ndarray:
    """Full (N^2, N^2) propagator matrix under one noise realization.

    Row a holds the density field grown from a delta in cell a; the
    composition over [s, u] = [s, t] + [t, u] is then the h^2-weighted
    matrix product.  Meant for small N.
    """
    n = solver.N
    if n > 64:
        raise ValueError("propagator matrices are for N <= 64")
    kernel = build_noise_kernel(mol, solver.grid, coupling.epsilon)
    init = np.eye(n * n).reshape(n * n, n, n) / solver.h**2
    # a single sample id broadcasts one noise realization over all rows
    out, _ = _evolve(solver, kernel, coupling, s, t, init, master_seed,
                     [sample_index])
    return out.reshape(n * n, n * n)


def fundamental_mean_mc(solver: SolverSpec, mol: MollifierSpec,
                        coupling: CriticalCoupling, s: float, t: float,
                        source: tuple[int, int], n_samples: int,
                        master_seed: int, batch: int = 100):
    """Per-cell mean and standard error of the fundamental solution.

    The field mean solves the heat equation exactly in expectation, so
    this is the direct first-moment check at full spatial resolution.
    """
    if n_samples < 8:
        raise ValueError("need at least 8 samples for a standard error")
    kernel = build_noise_kernel(mol, solver.grid, coupling.epsilon)
    n = solver.N
    init = np.zeros((1, n, n))
    init[0, source[0], source[1]] = 1.0 / solver.h**2
    acc = np.zeros((n, n))
    acc2 = np.zeros((n, n))
    done = 0
    while done < n_samples:
        ids = list(range(done, min(done + batch, n_samples)))
        block = np.broadcast_to(init, (len(ids), n, n))
        out, _ = _evolve(solver, kernel, coupling, s, t, block,
                         master_seed, ids)
        acc += out.sum(axis=0)
        acc2 += (out * out).sum(axis=0)
        done += len(ids)
    mean = acc / n_samples
    var = np.maximum(acc2 / n_samples - mean**2, 0.0)
    stderr = np.sqrt(var / n_samples)
    return mean, stderr


def sample_test_on_grid(grid: GridSpec, test, images: int = 1) -> np.ndarray:
    """Evaluate a planar test function on the torus grid.

    Sums over (2 images + 1)^2 periodic copies so that pairing a torus
    field against the result reproduces the plane pairing up to the
    wrap-around of the field itself.
    """
    x = grid.coords[:, None]
    y = grid.coords[None, :]
    out = np.zeros((grid.N, grid.N))
    for mx in range(-images, images + 1):
        for my in range(-images, images + 1):
            pts = np.stack(np.broadcast_arrays(x + mx * grid.L,
                                               y + my * grid.L), axis=-1)
            out += test(pts)
    return out


def estimate_moment_mc(solver: SolverSpec, mol: MollifierSpec,
                       coupling: CriticalCoupling, n: int, s: float,
                       t: float, test_pairs, n_samples: int,
                       master_seed: int, batch: int = 50) -> MomentEstimate:
    """Monte Carlo n-th moment of the field paired against test pairs.

    Each sample evolves the incoming tests as initial data under one
    shared noise realization and multiplies the h^2 pairings with the
    outgoing tests; the mean over samples estimates the mixed moment
    E prod_i <g_i, Z g'_i>.  Duplicate incoming tests are evolved once
    per sample.
    """
    if not 1 <= n <= 4:
        raise ValueError("moment order must lie in 1..4")
    if n_samples < 8:
        raise ValueError("need at least 8 samples for a standard error")
    if len(test_pairs) != n:
        raise ValueError(f"need {n} test pairs, got {len(test_pairs)}")
    kernel = build_noise_kernel(mol, solver.grid, coupling.epsilon)
    grid = solver.grid
    ins = [pair[0] for pair in test_pairs]
    unique: list = []
    slot = []
    for g in ins:
        if g in unique:
            slot.append(unique.index(g))
        else:
            slot.append(len(unique))
            unique.append(g)
    init_unique = np.stack([sample_test_on_grid(grid, g) for g in unique])
    outs = np.stack([sample_test_on_grid(grid, pair[1])
                     for pair in test_pairs])
    u = len(unique)
    products = np.empty(n_samples)
    done = 0
    while done < n_samples:
        ids = list(range(done, min(done + batch, n_samples)))
        b = len(ids)
        block = np.broadcast_to(init_unique, (b, u, grid.N, grid.N))
        block = block.reshape(b * u, grid.N, grid.N)
        rep_ids = np.repeat(ids, u)
        out, _ = _evolve(solver, kernel, coupling, s, t, block,
                         master_seed, rep_ids)
        out = out.reshape(b, u, grid.N, grid.N)
        per_test = grid.h**2 * np.einsum("buxy,ixy->bui", out, outs)
        # per_test[b, u, i]: pairing of evolved unique test u with out i;
        # pick the matching evolved copy for each pair index
        picked = per_test[:, slot, np.arange(n)]
        products[done:done + b] = picked.prod(axis=1)
        done += b
    total = tree_sum(products)
    mean = total / n_samples
    var = tree_sum((products - mean) ** 2) / max(n_samples - 1, 1)
    stderr = math.sqrt(var / n_samples)
    diag = {"ess": (total**2 / tree_sum(products**2))
            if np.any(products) else float(n_samples),
            "unique_tests": u, "batch": batch}
    return MomentEstimate(value=mean, stderr=stderr, n_samples=n_samples,
                          diagnostics=diag)


def as_measure(fld: FundamentalSolutionField,
               prune_zero: bool = True) -> DiscreteMeasure4:
    """Atomic measure on (source point, cell point) pairs.

    Each cell contributes weight h^4 * density: h^2 for the measure of
    the target cell and h^2 for the source delta having been placed
    with density h^-2.  At t == s this reduces to a single atom of
    weight h^2 at the diagonal.
    """
    grid = fld.solver.grid
    h = grid.h
    src = np.array([fld.source[0] * h, fld.source[1] * h])
    xx, yy = np.meshgrid(grid.coords, grid.coords, indexing="ij")
    weights = (h**4 * fld.values).ravel()
    support = np.column_stack([
        np.full(weights.shape[0], src[0]),
        np.full(weights.shape[0], src[1]),
        xx.ravel(), yy.ravel()])
    if prune_zero:
        keep = weights > 0
        support, weights = support[keep], weights[keep]
    meta = {"s": fld.s, "t": fld.t, "epsilon": fld.epsilon,
            "theta": fld.theta, "seed": fld.master_seed,
            "grid_N": grid.N, "grid_L": grid.L}
    return DiscreteMeasure4(support, weights, meta)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_field(path, fld: FundamentalSolutionField) -> None:
    """Single-file snapshot: one ASCII header line, then raw float64.

    The payload is the values array in C order, little-endian.
    """
    header = (f"{_FIELD_MAGIC} N={fld.solver.N} L={fld.solver.L!r} "
              f"dt={fld.solver.dt!r} s={fld.s!r} t={fld.t!r} "
              f"eps={fld.epsilon!r} theta={fld.theta!r} "
              f"seed={fld.master_seed} sample={fld.sample_index} "
              f"src0={fld.source[0]} src1={fld.source[1]}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())


def load_field(path) -> FundamentalSolutionField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    if not header.startswith(_FIELD_MAGIC):
        raise ValueError(f"not a field snapshot: {header[:40]!r}")
    kv = dict(tok.split("=", 1)
              for tok in header[len(_FIELD_MAGIC):].split())
    n = int(kv["N"])
    values = np.frombuffer(payload, dtype="<f8").reshape(n, n).copy()
    solver = SolverSpec(grid=GridSpec(N=n, L=float(kv["L"])),
                        dt=float(kv["dt"]))
    return FundamentalSolutionField(
        values=values, s=float(kv["s"]), t=float(kv["t"]),
        source=(int(kv["src0"]), int(kv["src1"])),
        epsilon=float(kv["eps"]), theta=float(kv["theta"]),
        master_seed=int(kv["seed"]), sample_index=int(kv["sample"]),
        solver=solver)


def time_regularity_probe(solver: SolverSpec, mol: MollifierSpec,
                          coupling: CriticalCoupling, t0: float,
                          deltas, test, n_samples: int,
                          master_seed: int) -> float:
    """Slope of log mean |pairing increment| against log time lag.

    A positive slope is the qualitative continuity check: pairings of
    the evolving field against a fixed smooth test move less over
    shorter lags.
    """
    kernel = build_noise_kernel(mol, solver.grid, coupling.epsilon)
    grid = solver.grid
    g = sample_test_on_grid(grid, test)
    n = grid.N
    src = (n // 2, n // 2)
    init = np.zeros((1, n, n))
    init[0, src[0], src[1]] = 1.0 / grid.h**2
    ids = list(range(n_samples))
    base = np.broadcast_to(init, (n_samples, n, n))
    at_t0, _ = _evolve(solver, kernel, coupling, 0.0, t0, base,
                       master_seed, ids)
    p0 = grid.h**2 * np.einsum("bxy,xy->b", at_t0, g)
    moves = []
    for d in deltas:
        later, _ = _evolve(solver, kernel, coupling, t0, t0 + d, at_t0,
                           master_seed, ids)
        p1 = grid.h**2 * np.einsum("bxy,xy->b", later, g)
        moves.append(np.mean(np.abs(p1 - p0)))
    slope = np.polyfit(np.log(np.asarray(deltas, dtype=float)),
                       np.log(np.asarray(moves)), 1)[0]
    return float(slope)
