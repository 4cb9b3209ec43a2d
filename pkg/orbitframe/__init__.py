"""
orbitframe: frames generated by orbits of commuting operator pairs, their basic-tuple
models, and similarity decisions at finite truncation.
"""

__version__ = "0.1.0"

from .errors import ErrorCategory, NotAFrameError, OrbitFrameError, exit_code_for
from .genlab import (
    class_census,
    commutant_basis,
    counterexample_multigen,
    membership_V,
    sample_invertible_commutant,
)
from .lattice import CoefField, Mode, Universe, make_universe
from .model import BasicTuple, build_basic_tuple, similarity, verify_intertwining
from .settings import Tolerances, load_settings
from .tuples import Iteration, OrbitTuple, Variant, frame_bounds, synthesis, validate_tuple

__all__ = [
    "__version__",
    "BasicTuple",
    "CoefField",
    "ErrorCategory",
    "Iteration",
    "Mode",
    "NotAFrameError",
    "OrbitFrameError",
    "OrbitTuple",
    "Tolerances",
    "Universe",
    "Variant",
    "build_basic_tuple",
    "class_census",
    "commutant_basis",
    "counterexample_multigen",
    "exit_code_for",
    "frame_bounds",
    "load_settings",
    "make_universe",
    "membership_V",
    "sample_invertible_commutant",
    "similarity",
    "synthesis",
    "validate_tuple",
    "verify_intertwining",
]
