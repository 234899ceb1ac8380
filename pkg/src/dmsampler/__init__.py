"""Manifold-constrained generative sampling.

Diffusion Maps find intrinsic coordinates, Latent Harmonics lift latent
points back to ambient space, and three samplers (Monte-Carlo score pairs with
a supervised generator, a score-matching network, and PLoM) generate new
latent points that a nearest-neighbour filter keeps on the manifold.
"""

from .errors import (
    ConfigurationError,
    DegenerateDataError,
    DegenerateKernelError,
    DivergenceError,
    EigensolverError,
    NumericError,
    OutOfSupportError,
    ParameterError,
    UserError,
)

__version__ = "0.1.0"
