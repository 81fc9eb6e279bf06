"""Closed-form calculus for products of 2D Gaussian kernels.

A form represents

    f(x) = exp( -1/2 sum_ij A_ij <x_i, x_j> + sum_i <b_i, x_i> + c )

over named blocks x_i in R^2.  The quadratic coupling between any two blocks
is scalar (every kernel in this package is a product of isotropic heat
kernels composed with scalar-coefficient affine maps), so the full matrix
over flattened coordinates is A kron I_2 and we store the block-level ``A``
only.  That keeps marginalization exact and cheap: Schur complements act on
the small matrix and determinants enter squared.

All operations are exact Gaussian algebra; the only floating point loss is
in the linear solves.  Marginalization refuses ill-conditioned eliminations
rather than silently degrading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaussianForm",
    "heat_form",
    "gaussian_test_form",
    "multiply",
    "marginalize",
    "affine_pullback",
    "integral",
    "log_integral",
    "EliminationError",
]

TWO_PI = 2.0 * math.pi

# Relative tolerance for the positive-semidefiniteness check at construction.
_PSD_RTOL = 1e-10
# Condition-number guard for marginalization.
_COND_LIMIT = 1e12


class EliminationError(ValueError):
    """Raised when a block set cannot be integrated out."""


@dataclass(frozen=True)
class GaussianForm:
    """Gaussian form over named R^2 blocks.

    Attributes
    ----------
    names : tuple of str
        Block names, in storage order.
    quad : (B, B) ndarray
        Symmetric block-level quadratic coefficient matrix; the matrix over
        flattened coordinates is ``quad`` kron ``I_2``.  Must be positive
        semidefinite up to roundoff.
    lin : (B, 2) ndarray
        Linear coefficient vector of each block.
    logscale : float
        Additive constant c, i.e. log of the prefactor.
    """

    names: tuple[str, ...]
    quad: np.ndarray
    lin: np.ndarray
    logscale: float = 0.0
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        B = len(self.names)
        quad = np.asarray(self.quad, dtype=float)
        lin = np.asarray(self.lin, dtype=float)
        if quad.shape != (B, B):
            raise ValueError(f"quad must be ({B},{B}), got {quad.shape}")
        if lin.shape != (B, 2):
            raise ValueError(f"lin must be ({B},2), got {lin.shape}")
        if len(set(self.names)) != B:
            raise ValueError("duplicate block names")
        object.__setattr__(self, "quad", quad)
        object.__setattr__(self, "lin", lin)
        if self.validate and B > 0:
            asym = np.max(np.abs(quad - quad.T))
            scale = max(1.0, float(np.max(np.abs(quad))))
            if asym > _PSD_RTOL * scale:
                raise ValueError(f"quad not symmetric (max asymmetry {asym:.3e})")
            w = np.linalg.eigvalsh(0.5 * (quad + quad.T))
            if w[0] < -_PSD_RTOL * scale:
                raise ValueError(
                    f"quad not positive semidefinite (min eigenvalue {w[0]:.3e})"
                )

    @property
    def nblocks(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no block named {name!r}") from None

    def __call__(self, points: dict[str, np.ndarray]) -> float:
        return math.exp(self.log_value(points))

    def log_value(self, points: dict[str, np.ndarray]) -> float:
        """Log of the form at the given block values."""
        if set(points) != set(self.names):
            raise KeyError("points must cover exactly the form's blocks")
        x = np.array([points[n] for n in self.names], dtype=float)  # (B, 2)
        q = -0.5 * float(np.einsum("ij,ik,jk->", self.quad, x, x))
        l = float(np.sum(self.lin * x))
        return q + l + self.logscale


def heat_form(t: float, out_block: str, in_block: str) -> GaussianForm:
    """Heat kernel g(t, x_out - x_in) = exp(-|x_out - x_in|^2 / 2t) / (2 pi t).

    Normalization is carried in ``logscale`` as -log(2 pi t); evaluating at
    coincident points gives 1/(2 pi t), and g(t/2, 0) = 1/(pi t).
    """
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    a = 1.0 / t
    quad = np.array([[a, -a], [-a, a]])
    return GaussianForm(
        names=(out_block, in_block),
        quad=quad,
        lin=np.zeros((2, 2)),
        logscale=-math.log(TWO_PI * t),
    )


def gaussian_test_form(
    block: str, center, sigma: float, amplitude: float = 1.0
) -> GaussianForm:
    """Unnormalized Gaussian bump amplitude * exp(-|x - center|^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    c = np.asarray(center, dtype=float).reshape(2)
    a = 1.0 / sigma**2
    return GaussianForm(
        names=(block,),
        quad=np.array([[a]]),
        lin=(a * c).reshape(1, 2),
        logscale=math.log(amplitude) - 0.5 * a * float(c @ c),
    )


def multiply(f: GaussianForm, g: GaussianForm) -> GaussianForm:
    """Pointwise product; blocks are matched by name, union taken."""
    names = list(f.names) + [n for n in g.names if n not in f.names]
    B = len(names)
    quad = np.zeros((B, B))
    lin = np.zeros((B, 2))
    fi = [names.index(n) for n in f.names]
    gi = [names.index(n) for n in g.names]
    quad[np.ix_(fi, fi)] += f.quad
    quad[np.ix_(gi, gi)] += g.quad
    lin[fi] += f.lin
    lin[gi] += g.lin
    return GaussianForm(tuple(names), quad, lin, f.logscale + g.logscale)


def _split(form: GaussianForm, elim: list[str]):
    eidx = [form.index(n) for n in elim]
    ridx = [i for i in range(form.nblocks) if i not in eidx]
    A_EE = form.quad[np.ix_(eidx, eidx)]
    A_RE = form.quad[np.ix_(ridx, eidx)]
    A_RR = form.quad[np.ix_(ridx, ridx)]
    return eidx, ridx, A_EE, A_RE, A_RR


def marginalize(form: GaussianForm, blocks) -> GaussianForm:
    """Integrate out the named blocks over R^2 each.

    Uses the Schur complement on the block-level matrix.  Eliminating k
    blocks (2k real dimensions) contributes k log(2 pi) - log det(A_EE) to
    the log scale because det(A kron I_2) = det(A)^2.

    Raises
    ------
    EliminationError
        If the eliminated sub-block is not positive definite (the integral
        diverges) or its condition number exceeds 1e12.
    """
    elim = [blocks] if isinstance(blocks, str) else list(blocks)
    if not elim:
        return form
    eidx, ridx, A_EE, A_RE, A_RR = _split(form, elim)
    k = len(eidx)

    w = np.linalg.eigvalsh(0.5 * (A_EE + A_EE.T))
    if w[0] <= 0:
        raise EliminationError(
            f"blocks {elim} not integrable (min eigenvalue {w[0]:.3e})"
        )
    cond = w[-1] / w[0]
    if cond > _COND_LIMIT:
        raise EliminationError(
            f"refusing to eliminate blocks {elim}: condition number {cond:.3e}"
        )

    b_E = form.lin[eidx]
    b_R = form.lin[ridx]
    solve = np.linalg.solve
    X = solve(A_EE, np.concatenate([A_RE.T, b_E], axis=1))  # (k, r + 2)
    AinvArt = X[:, : len(ridx)]
    Ainvb = X[:, len(ridx) :]

    S = A_RR - A_RE @ AinvArt
    S = 0.5 * (S + S.T)
    new_lin = b_R - A_RE @ Ainvb
    sign, logdet = np.linalg.slogdet(A_EE)
    if sign <= 0:
        raise EliminationError(f"blocks {elim} not integrable (det sign {sign})")
    new_log = (
        form.logscale
        + k * math.log(TWO_PI)
        - logdet
        + 0.5 * float(np.sum(b_E * Ainvb))
    )
    names = tuple(form.names[i] for i in ridx)
    return GaussianForm(names, S, new_lin, new_log)


def log_integral(form: GaussianForm) -> float:
    """Log of the full integral of the form over all blocks."""
    if form.nblocks == 0:
        return form.logscale
    out = marginalize(form, list(form.names))
    return out.logscale


def integral(form: GaussianForm) -> float:
    return math.exp(log_integral(form))


def affine_pullback(
    form: GaussianForm, block: str, coeffs: dict[str, float], offset=(0.0, 0.0)
) -> GaussianForm:
    """Substitute x_block = sum_j coeffs[j] * x_j + offset.

    ``coeffs`` maps block names (new or already present) to scalar
    coefficients; the substituted block disappears from the form.  Scalar
    coefficients keep the coupling isotropic, which is the only kind of
    affine map used in this package (index substitutions, center-of-mass
    maps, dilations, translations).
    """
    i0 = form.index(block)
    old_names = form.names
    new_names = [n for n in old_names if n != block]
    for n in coeffs:
        if n not in new_names:
            new_names.append(n)
    Bo, Bn = len(old_names), len(new_names)

    # x_old = T x_new + o
    T = np.zeros((Bo, Bn))
    o = np.zeros((Bo, 2))
    o[i0] = np.asarray(offset, dtype=float).reshape(2)
    for i, n in enumerate(old_names):
        if n == block:
            for m, cf in coeffs.items():
                T[i, new_names.index(m)] += float(cf)
        else:
            T[i, new_names.index(n)] = 1.0

    Qo = form.quad @ o
    quad = T.T @ form.quad @ T
    quad = 0.5 * (quad + quad.T)
    lin = T.T @ (form.lin - Qo)
    logscale = (
        form.logscale
        + float(np.sum(form.lin * o))
        - 0.5 * float(np.einsum("ij,ik,jk->", form.quad, o, o))
    )
    return GaussianForm(tuple(new_names), quad, lin, logscale)


def moments(form: GaussianForm):
    """Mean, block covariance, and log-mass of the normalized density.

    Returns ``(mean, cov, log_mass)`` where ``mean`` is (B, 2), ``cov`` is
    the block-level covariance (full covariance is ``cov`` kron ``I_2``),
    and ``log_mass`` the log of the total integral.  Requires ``quad``
    positive definite.
    """
    w = np.linalg.eigvalsh(0.5 * (form.quad + form.quad.T))
    if form.nblocks == 0 or w[0] <= 0:
        raise EliminationError("form is not a finite Gaussian density")
    cov = np.linalg.inv(form.quad)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ form.lin
    return mean, cov, log_integral(form)
