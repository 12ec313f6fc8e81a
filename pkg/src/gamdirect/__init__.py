"""Direct smoothness selection for generalized additive models."""
from .families import Family, Link, make_family
from .smooths import AssembledModel, TermSpec, assemble
from .pirls import PirlsConfig, PirlsState, pirls_fit
from .derivs import DerivativeBundle, derivative_iteration

__all__ = [
    "Family", "Link", "make_family", "AssembledModel", "TermSpec", "assemble",
    "PirlsConfig", "PirlsState", "pirls_fit", "DerivativeBundle", "derivative_iteration",
]
