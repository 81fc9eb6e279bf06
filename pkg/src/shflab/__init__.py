"""Numerical laboratory for the critical 2D stochastic heat flow.

Three independent routes to the same moment quantities, at desk scale:

* a mollified stochastic heat equation solver on a periodic grid,
* a Feynman-Kac bridge-ensemble estimator of the same moments,
* exact evaluation of the delta-Bose moment kernels (heat term plus
  diagram series) for Gaussian test functions.

Shared infrastructure: mollifier profiles and the critical coupling
constant, a closed-form Gaussian calculus, diagram combinatorics,
measure pairings and mollified products, and a batch CLI.
"""

__version__ = "0.1.0"

# One released version for the whole package; manifests record it per module
# so future per-module bumps stay representable.
MODULE_VERSIONS = {
    "mollifier": __version__,
    "she": __version__,
    "feynman_kac": __version__,
    "gaussian_forms": __version__,
    "delta_bose": __version__,
    "diagrams": __version__,
    "measures": __version__,
    "cli": __version__,
}
