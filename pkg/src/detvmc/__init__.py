"""Variational Monte Carlo with determinant stacks, sign-equivariant readouts,
and Jastrow factors."""

__version__ = "0.1.0"

from .jets import Jet, SignedLog, seed_constant, seed_coordinates
from .system import Molecule, make_preset

__all__ = [
    "Jet",
    "SignedLog",
    "seed_constant",
    "seed_coordinates",
    "Molecule",
    "make_preset",
    "__version__",
]
