"""Riemannian flow matching for periodic crystals, at desk scale."""

__version__ = "0.1.0"

from .state import ATOM_BITS, ATOM_CLASSES, FlowState, Mode, TangentState

__all__ = [
    "ATOM_BITS",
    "ATOM_CLASSES",
    "FlowState",
    "Mode",
    "TangentState",
    "__version__",
]
