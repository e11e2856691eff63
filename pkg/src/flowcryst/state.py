"""Joint flow state and tangent containers shared by all modules.

The flow evolves a triple ``(a, f, l)``: analog atom bits (DNG only),
fractional coordinates on the torus, and a 6-vector of three raw lengths
followed by three angles in unconstrained (logit) space. Arrays may carry
leading batch dimensions; the atom axis is always second to last.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import NumericError, ShapeError


class Mode(str, enum.Enum):
    CSP = "csp"
    DNG = "dng"


ATOM_CLASSES = 100
ATOM_BITS = 7  # ceil(log2(100))


@dataclass
class FlowState:
    """A point on the joint manifold.

    a: ``(..., n, 7)`` analog bits, or None in CSP mode.
    f: ``(..., n, 3)`` fractional coordinates in [0, 1).
    l: ``(..., 6)`` raw lengths + unconstrained angles.
    """

    f: np.ndarray
    l: np.ndarray
    a: Optional[np.ndarray] = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        if self.a is not None:
            self.a = np.asarray(self.a, dtype=float)
        if self.l.shape[-1] != 6:
            raise ShapeError(f"lattice state must have 6 entries, got {self.l.shape}")
        if self.f.ndim < 2 or self.f.shape[-1] != 3:
            raise ShapeError(f"coordinates must be (..., n, 3), got {self.f.shape}")

    @property
    def n_atoms(self) -> int:
        return self.f.shape[-2]

    def copy(self) -> "FlowState":
        return FlowState(
            f=self.f.copy(),
            l=self.l.copy(),
            a=None if self.a is None else self.a.copy(),
        )

    def check_finite(self):
        for name, arr in (("a", self.a), ("f", self.f), ("l", self.l)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in state component {name}")


@dataclass
class TangentState:
    """Tangent vector / velocity with the same layout as :class:`FlowState`."""

    df: np.ndarray
    dl: np.ndarray
    da: Optional[np.ndarray] = None

    def __post_init__(self):
        # torch tensors pass through untouched so gradients can flow
        def coerce(x):
            if x is None or type(x).__module__.partition(".")[0] == "torch":
                return x
            return np.asarray(x, dtype=float)

        self.df = coerce(self.df)
        self.dl = coerce(self.dl)
        self.da = coerce(self.da)

    def permuted(self, perm) -> "TangentState":
        perm = np.asarray(perm)
        return TangentState(
            df=self.df[..., perm, :],
            dl=self.dl,
            da=None if self.da is None else self.da[..., perm, :],
        )

    def check_finite(self):
        for name, arr in (("da", self.da), ("df", self.df), ("dl", self.dl)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in tangent component {name}")


def zero_tangent_like(state: FlowState) -> TangentState:
    return TangentState(
        df=np.zeros_like(state.f),
        dl=np.zeros_like(state.l),
        da=None if state.a is None else np.zeros_like(state.a),
    )


__all__ = [
    "ATOM_BITS",
    "ATOM_CLASSES",
    "FlowState",
    "Mode",
    "TangentState",
    "zero_tangent_like",
    "replace",
]
