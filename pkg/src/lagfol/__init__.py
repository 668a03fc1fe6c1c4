"""Numerical checks for Lagrangian foliations of Poisson-commuting symbols and
their Toeplitz quantization on weighted Bergman spaces of the disk."""

__version__ = "0.1.0"

from .dsl import Symbol, SymbolFamily, compose, differentiate, parse_symbol  # noqa: E402
from .symplectic import SymplecticChart, hamiltonian_field, poisson_bracket  # noqa: E402
