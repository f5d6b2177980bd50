"""Absorbed-particle counts for supercritical branching Brownian motion with drift."""

__version__ = "0.1.0"

from .errors import ModelDomainError, NumericalError
from .offspring import (
    ExplicitLaw,
    GeometricTailLaw,
    ModelConfig,
    Numerics,
    PolylogTailLaw,
    constants,
    law_from_json,
)
from .wave import f_eval, solve_profile
from .generator import integrate_a, mu_c_locate, radius
from .coeffs import picard_coefficients
from .sim import SimConfig, estimate

__all__ = [
    "ExplicitLaw", "GeometricTailLaw", "PolylogTailLaw", "ModelConfig", "Numerics",
    "ModelDomainError", "NumericalError", "SimConfig", "constants", "estimate", "f_eval",
    "integrate_a", "law_from_json", "mu_c_locate", "picard_coefficients", "radius",
    "solve_profile",
]
