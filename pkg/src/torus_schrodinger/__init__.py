"""Entropic optimal transport on the flat torus.

Log-domain Sinkhorn iterations between two absolutely continuous marginals
whose reference process is a reversible diffusion on [0, L)^d, plus the
machinery needed to *verify* the advertised exponential convergence: exact
semigroup kernels, a stochastic-control reading of the iteration, a
contraction-rate calculus for weakly semiconvex drifts, and a
coupling-by-reflection Monte-Carlo check of the underlying contraction.
"""

from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
