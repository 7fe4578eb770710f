"""Shallow generative density estimation with a one-dimensional latent variable.

The package covers the implicit density ``p_{g,sigma}(x) = int phi_sigma(x - g(z)) dz``
for shallow ReLU generators on ``[0, 1]``, the constructive route from a discrete
mixing measure to such a generator, training by Monte-Carlo likelihood and AEVB,
a kernel density baseline, quadrature-based distances and rate calculators.
"""

from .measures import DiscreteMeasure, GridSpec
from .networks import PiecewiseLinearForm, ShallowGenerator, StepGenerator
from .gen_density import GenerativeDensity, SieveSpec

__all__ = [
    "DiscreteMeasure",
    "GridSpec",
    "PiecewiseLinearForm",
    "ShallowGenerator",
    "StepGenerator",
    "GenerativeDensity",
    "SieveSpec",
]

__version__ = "0.1.0"
