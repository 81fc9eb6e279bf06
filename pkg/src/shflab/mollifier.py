"""Mollifier profiles, the critical coupling constant, and mollified noise.

The smoothing kernel phi is a fixed smooth bump; the noise covariance sees
only its self-correlation Phi(y) = int phi(y + y') phi(y') dy'.  The
critical coupling at smoothing scale eps is

    beta(eps) = 2 pi / |log eps|
              + (pi / |log eps|^2) (theta - 2 log 2 + 2 gamma + 2 J)

with gamma the Euler constant and J = double integral of
Phi(x) log|x - x'| Phi(x') over both arguments.  Everything downstream
(solver, bridge weights, exact kernels) consumes the same MollifierSpec
and CriticalCoupling objects, so the three moment routes share one
definition of the interaction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .grids import GridSpec, fft_workers
from .rng import stream

import scipy.fft as sfft

__all__ = [
    "MollifierSpec",
    "CriticalCoupling",
    "build_mollifier",
    "log_interaction_constant",
    "beta_epsilon",
    "NoiseKernel",
    "build_noise_kernel",
    "sample_noise_increment",
    "GridTooCoarseError",
    "MollifierUnresolvedError",
    "EULER_GAMMA",
]

log = logging.getLogger(__name__)

# Euler-Mascheroni constant, 20 significant digits.
EULER_GAMMA = 0.57721566490153286061

PROFILES = ("bump", "truncated_gaussian")


class GridTooCoarseError(ValueError):
    pass


class MollifierUnresolvedError(ValueError):
    pass


def _profile_fn(profile: str, r: float):
    if profile == "bump":
        # the standard compactly supported C-infinity bump
        def raw(rad):
            rad = np.asarray(rad, dtype=float)
            u = rad / r
            out = np.zeros_like(u)
            inside = u < 1.0
            ui = u[inside]
            out[inside] = np.exp(-1.0 / (1.0 - ui**2))
            return out

        return raw
    if profile == "truncated_gaussian":
        # Gaussian of width r/3 cut at radius r (convenience profile)
        sig = r / 3.0

        def raw(rad):
            rad = np.asarray(rad, dtype=float)
            out = np.exp(-0.5 * (rad / sig) ** 2)
            out[rad >= r] = 0.0
            return out

        return raw
    raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")


@dataclass(frozen=True, eq=False)
class MollifierSpec:
    """A sampled, normalized mollifier and its self-correlation.

    Attributes
    ----------
    profile : str
        Catalog name of the radial profile.
    r_phi : float
        Support radius of phi; Phi is supported in the ball of radius
        2 r_phi.
    n : int
        Samples per axis for phi over [-r_phi, r_phi]^2.
    h : float
        Grid spacing 2 r_phi / n.  phi is sampled at cell centers, so the
        grid quadrature of the stored phi values is exactly one.
    phi_grid : (n, n) ndarray
    phi_corr_grid : (2n-1, 2n-1) ndarray
        Phi sampled at displacements k h, k in [-(n-1), n-1]^2.
    phi_corr_radial : (n,) ndarray
        Radial table Phi(k h), k = 0..n-1 (the catalog profiles are
        radial, so the correlation is too).
    norm : float
        Normalization constant dividing the raw profile.
    """

    profile: str
    r_phi: float
    n: int
    h: float
    phi_grid: np.ndarray
    phi_corr_grid: np.ndarray
    phi_corr_radial: np.ndarray
    norm: float
    _raw: object = field(repr=False, compare=False, default=None)

    @property
    def corr_zero(self) -> float:
        """Phi(0) = int phi^2."""
        c = self.n - 1
        return float(self.phi_corr_grid[c, c])

    def phi(self, radius):
        """Normalized profile as a function of |x|."""
        return self._raw(radius) / self.norm

    def corr(self, radius):
        """Phi as a function of displacement length, by linear interpolation.

        The table spacing is h; beyond the support the value is zero.
        Linear interpolation error is O(h^2) relative to Phi(0).
        """
        r = np.abs(np.asarray(radius, dtype=float))
        grid_r = np.arange(self.n) * self.h
        return np.interp(r, grid_r, self.phi_corr_radial, right=0.0)


def build_mollifier(
    profile: str = "bump", r_phi: float = 1.0, grid_resolution: int = 256
) -> MollifierSpec:
    """Sample and normalize a catalog profile; precompute its correlation.

    Parameters
    ----------
    profile : str
        "bump" (default) or "truncated_gaussian".
    r_phi : float
        Support radius.
    grid_resolution : int
        Samples per axis (>= 32); sampling is at cell centers, and the
        stored values are divided by their own grid quadrature so that
        h^2 * sum(phi_grid) == 1 exactly.

    The correlation grid is the discrete autocorrelation of phi_grid times
    h^2, which converges to Phi spectrally fast in the resolution (the
    profiles are smooth with compact support).
    """
    if grid_resolution < 32:
        raise GridTooCoarseError("grid_resolution must be at least 32")
    if r_phi <= 0:
        raise ValueError("r_phi must be positive")
    n = int(grid_resolution)
    h = 2.0 * r_phi / n
    centers = -r_phi + (np.arange(n) + 0.5) * h
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    raw = _profile_fn(profile, r_phi)
    vals = raw(np.hypot(gx, gy))
    norm = float(vals.sum()) * h * h
    if norm <= 0:
        raise ValueError("profile vanished on the grid")
    phi_grid = vals / norm
    corr = signal.fftconvolve(phi_grid, phi_grid[::-1, ::-1], mode="full") * h * h
    # the correlation is exactly nonnegative with support in the 2 r_phi
    # ball; remove the FFT rounding dust outside both facts
    offs = (np.arange(2 * n - 1) - (n - 1)) * h
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    corr[np.hypot(ox, oy) >= 2.0 * r_phi] = 0.0
    np.maximum(corr, 0.0, out=corr)
    c = n - 1
    radial = corr[c, c:].copy()
    return MollifierSpec(
        profile=profile,
        r_phi=float(r_phi),
        n=n,
        h=h,
        phi_grid=phi_grid,
        phi_corr_grid=corr,
        phi_corr_radial=radial,
        norm=norm,
        _raw=raw,
    )


# ---------------------------------------------------------------------------
# log-interaction constant
# ---------------------------------------------------------------------------

def _log_cell_integral(a: float) -> float:
    """Exact integral of log|w| over the centered square [-a, a]^2.

    Obtained in polar coordinates: split the square into eight congruent
    triangles, integrate r log r radially to rho(theta) = a / cos(theta)
    in closed form, then the angular integral.  The result is

        2 a^2 (2 log a + log 2 - 3 + pi/2).
    """
    return 2.0 * a * a * (2.0 * math.log(a) + math.log(2.0) - 3.0 + 0.5 * math.pi)


def _interaction_quadrature(mol: MollifierSpec, n: int) -> float:
    """Midpoint quadrature of int Psi(w) log|w| dw at internal resolution n.

    Psi is the autocorrelation of Phi (unit mass), so the double integral
    of Phi log Phi collapses to a single 2D integral.  The singular cell
    at w = 0 uses the exact closed-form cell integral of log|w| times
    Psi(0).  The remaining midpoint error has a clean h^2 component
    (curvature of log near the excluded cell), removed by Richardson
    extrapolation in the caller.
    """
    h = 2.0 * mol.r_phi / n
    centers = -mol.r_phi + (np.arange(n) + 0.5) * h
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    vals = mol._raw(np.hypot(gx, gy))
    phi = vals / (float(vals.sum()) * h * h)
    corr = signal.fftconvolve(phi, phi[::-1, ::-1], mode="full") * h * h
    psi = signal.fftconvolve(corr, corr[::-1, ::-1], mode="full") * h * h
    m = psi.shape[0]
    c = m // 2
    offs = (np.arange(m) - c) * h
    wx, wy = np.meshgrid(offs, offs, indexing="ij")
    rad = np.hypot(wx, wy)
    rad[c, c] = 1.0  # placeholder; the center cell is replaced below
    logs = np.log(rad)
    logs[c, c] = 0.0
    total = float(np.sum(psi * logs)) * h * h
    total += psi[c, c] * _log_cell_integral(0.5 * h)
    return total


_J_CACHE: dict[tuple, float] = {}


def log_interaction_constant(mol: MollifierSpec, tol: float = 1e-6) -> float:
    """The double integral J of Phi(x) log|x-x'| Phi(x') over R^2 x R^2.

    Evaluated as int Psi(w) log|w| dw with Psi the autocorrelation of Phi,
    by midpoint quadrature with an exact singular-cell integral, at the
    spec's resolution and at twice that, Richardson-extrapolated.  The
    residual is O(h^4 log h).  Under phi -> rescaled phi at scale lambda
    the value shifts by +log(lambda).

    Raises
    ------
    GridTooCoarseError
        If the two-resolution difference exceeds ``tol`` even after
        extrapolation margins (grid too coarse for the log singularity).
    """
    n = mol.n
    key = (mol.profile, mol.r_phi, n, tol)
    if key in _J_CACHE:
        return _J_CACHE[key]
    lo = max(16, n // 2)
    j_lo = _interaction_quadrature(mol, lo)
    j_h = _interaction_quadrature(mol, n)
    j_h2 = _interaction_quadrature(mol, 2 * n)
    coarse = (4.0 * j_h - j_lo) / 3.0
    extrapolated = (4.0 * j_h2 - j_h) / 3.0
    # drift between successive extrapolants bounds the coarser one's error;
    # the returned finer extrapolant is strictly better
    err_est = abs(extrapolated - coarse)
    if err_est > tol:
        raise GridTooCoarseError(
            f"log-interaction quadrature error estimate {err_est:.3e} "
            f"exceeds tol {tol:.1e} at resolution {n}"
        )
    _J_CACHE[key] = extrapolated
    return extrapolated


# ---------------------------------------------------------------------------
# critical coupling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalCoupling:
    """Coupling strength at smoothing scale epsilon.

    ``log_interaction`` stores 2 J (the factor two is part of the constant
    entering beta).  ``audit`` is a flat name -> float map recording every
    constant in the formula for the run manifest.
    """

    theta: float
    epsilon: float
    beta: float
    log_interaction: float
    audit: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def positivity_threshold(self) -> float:
        """Largest epsilon below which beta stays positive (at most 1)."""
        return self.audit.get("positivity_threshold", 1.0)


def beta_epsilon(
    theta: float,
    epsilon: float,
    mol: MollifierSpec,
    interaction: float | None = None,
) -> CriticalCoupling:
    """Critical coupling constant for the given mollifier and theta.

    beta = 2 pi / |log eps| + (pi / |log eps|^2) (theta - 2 log 2
           + 2 gamma + 2 J).

    ``interaction`` may supply a precomputed J to avoid re-quadrature.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    J = log_interaction_constant(mol) if interaction is None else float(interaction)
    L = abs(math.log(epsilon))
    const = theta - 2.0 * math.log(2.0) + 2.0 * EULER_GAMMA + 2.0 * J
    leading = 2.0 * math.pi / L
    correction = math.pi * const / L**2
    beta = leading + correction
    threshold = min(1.0, math.exp(const / 2.0)) if const < 0 else 1.0
    audit = {
        "theta": theta,
        "epsilon": epsilon,
        "abs_log_eps": L,
        "euler_gamma": EULER_GAMMA,
        "two_log_two": 2.0 * math.log(2.0),
        "interaction_J": J,
        "log_interaction": 2.0 * J,
        "leading_term": leading,
        "correction_term": correction,
        "beta": beta,
        "positivity_threshold": threshold,
    }
    if beta <= 0:
        log.warning("beta is nonpositive at eps=%g (threshold %g)", epsilon, threshold)
    return CriticalCoupling(
        theta=theta,
        epsilon=epsilon,
        beta=beta,
        log_interaction=2.0 * J,
        audit=audit,
    )


# ---------------------------------------------------------------------------
# mollified noise increments
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseKernel:
    """Torus-sampled smoothing kernel eps^-2 phi(./eps), spectrally stored.

    ``khat`` is the rfft2 of the sampled kernel; ``sigma2`` the realized
    per-cell variance coefficient h^2 sum k^2 (the grid value of
    eps^-2 Phi(0)); ``mass`` the grid quadrature of the kernel before the
    unit-mass renormalization that the stored values already include.
    """

    grid: GridSpec
    epsilon: float
    khat: np.ndarray
    sigma2: float
    mass: float


def build_noise_kernel(mol: MollifierSpec, grid: GridSpec, epsilon: float) -> NoiseKernel:
    """Sample the mollifier on the torus and prepare its transform.

    Raises
    ------
    MollifierUnresolvedError
        If eps is under two grid cells.
    ValueError
        If the support does not fit in half the torus.
    """
    if epsilon < 2.0 * grid.h:
        raise MollifierUnresolvedError(
            f"epsilon {epsilon} under two grid cells (h = {grid.h})"
        )
    if mol.r_phi * epsilon > 0.5 * grid.L:
        raise ValueError("mollifier support does not fit in half the torus")
    k = grid.sample_radial(lambda r: mol.phi(r / epsilon)) / epsilon**2
    mass = float(k.sum()) * grid.h**2
    k = k / mass  # exact unit grid mass
    sigma2 = float(np.sum(k * k)) * grid.h**2
    khat = sfft.rfft2(k, workers=fft_workers())
    return NoiseKernel(grid=grid, epsilon=epsilon, khat=khat, sigma2=sigma2, mass=mass)


def _convolve_white(kernel: NoiseKernel, white: np.ndarray) -> np.ndarray:
    """Discrete convolution h^2 sum k(x-z) white(z) via the torus FFT."""
    g = kernel.grid
    w = fft_workers()
    wh = sfft.rfft2(white, workers=w)
    out = sfft.irfft2(wh * kernel.khat, s=(g.N, g.N), workers=w)
    return out * g.h**2


def sample_noise_increment(
    kernel: NoiseKernel, dt: float, master_seed: int, step_index: int
) -> np.ndarray:
    """One mollified space-time white noise increment over a step of dt.

    Cell-level white noise with variance dt / h^2 is convolved with the
    sampled kernel, giving a field whose covariance approximates
    dt eps^-2 Phi((x - y)/eps) on the torus; the realized zero-lag
    variance is exactly dt * kernel.sigma2.  Deterministic for a given
    (master_seed, step_index): the stream is keyed on both, so increments
    at different steps are independent and reproducible in any order.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = kernel.grid
    rng = stream(master_seed, "noise", step_index)
    white = rng.standard_normal((g.N, g.N)) * (math.sqrt(dt) / g.h)
    return _convolve_white(kernel, white)
