"""glimmlab: a Glimm-scheme laboratory with exact wave bookkeeping.

The package is layered bottom-up:

``envelope``     convex/concave envelopes and secant speeds
``flux_model``   systems, eigen-structure and the built-in catalog
``riemann``      elementary curves and the Riemann solver
``interaction``  merge operators and interaction amounts at one node
``glimm``        the random-choice driver and the classical functionals
``lagrangian``   wave packages and the strength coordinate of every wave
``potential``    the non-local pair functional and its decay checks
``cli``          the command line front end
"""
from .envelope import (SampledFunction, EnvelopeResult, convex_envelope,
                       concave_envelope, sigma_rh, envelope_distance_checks)
from .flux_model import (FluxModel, EigenFrame, GeneralizedField, builtin_models,
                         default_generalized_field, get_model)
from .errors import GlimmLabError

__version__ = "0.1.0"

__all__ = [
    "SampledFunction", "EnvelopeResult", "convex_envelope", "concave_envelope",
    "sigma_rh", "envelope_distance_checks", "FluxModel", "EigenFrame",
    "GeneralizedField", "builtin_models", "default_generalized_field", "get_model",
    "GlimmLabError", "__version__",
]
