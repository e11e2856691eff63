"""Crystal data model: lattice parameter maps, angle transform, analog-bit
atom typing, and symmetry group actions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .errors import (
    DegenerateCellError,
    DomainError,
    NiggliViolationError,
    ShapeError,
)
from .state import ATOM_BITS, ATOM_CLASSES

ANGLE_LO = 60.0
ANGLE_HI = 120.0
ANGLE_CLAMP = 1e-6  # degrees pulled inward from the boundary before logit


@dataclass(frozen=True)
class LatticeParams:
    """Rotation-invariant 6-tuple: lengths in Angstrom, angles in degrees."""

    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise DegenerateCellError(f"non-positive cell length in {self}")
        # snap float round-off at the reduced-cell boundary before validating
        for name in ("alpha", "beta", "gamma"):
            ang = getattr(self, name)
            for bound in (ANGLE_LO, ANGLE_HI):
                if ang != bound and abs(ang - bound) < 1e-8:
                    object.__setattr__(self, name, bound)
            ang = getattr(self, name)
            if not ANGLE_LO <= ang <= ANGLE_HI:
                raise NiggliViolationError(
                    f"angle {ang} outside [{ANGLE_LO}, {ANGLE_HI}]"
                )
        # triggers DegenerateCellError when the angles imply zero volume
        matrix_from_params(self)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


def matrix_from_params(l: LatticeParams) -> np.ndarray:
    """Canonical 3x3 matrix of lattice column vectors for given parameters.

    The representative of the rotation class has the first vector along x,
    the second in the xy-plane, and the third with positive z.
    """
    alpha, beta, gamma = np.radians([l.alpha, l.beta, l.gamma])
    ca, cb, cg = np.cos([alpha, beta, gamma])
    sg = np.sin(gamma)
    cx = l.c * cb
    cy = l.c * (ca - cb * cg) / sg
    cz_sq = l.c**2 - cx**2 - cy**2
    if cz_sq <= 0:
        raise DegenerateCellError(f"parameters {l} imply non-positive volume")
    cols = np.array(
        [
            [l.a, l.b * cg, cx],
            [0.0, l.b * sg, cy],
            [0.0, 0.0, math.sqrt(cz_sq)],
        ]
    )
    return cols


def params_from_matrix(L) -> LatticeParams:
    """Lengths and angles of a lattice matrix (columns are lattice vectors)."""
    L = np.asarray(L, dtype=float)
    if L.shape != (3, 3):
        raise ShapeError(f"lattice matrix must be 3x3, got {L.shape}")
    if abs(np.linalg.det(L)) <= 1e-12:
        raise DegenerateCellError("singular lattice matrix")
    a, b, c = np.linalg.norm(L, axis=0)

    def angle(i, j):
        cos = np.dot(L[:, i], L[:, j]) / (np.linalg.norm(L[:, i]) * np.linalg.norm(L[:, j]))
        return math.degrees(math.acos(np.clip(cos, -1.0, 1.0)))

    alpha, beta, gamma = angle(1, 2), angle(0, 2), angle(0, 1)
    return LatticeParams(a, b, c, alpha, beta, gamma)


def cell_volume(l: LatticeParams) -> float:
    """Unit cell volume in cubic Angstrom."""
    return abs(float(np.linalg.det(matrix_from_params(l))))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def angles_to_unconstrained(angle):
    """Map angles in (60, 120) degrees to the real line.

    Boundary values within ``ANGLE_CLAMP`` of 60 or 120 are pulled inward
    first; anything outside [60, 120] is rejected.
    """
    angle = np.asarray(angle, dtype=float)
    if np.any(angle < ANGLE_LO) or np.any(angle > ANGLE_HI):
        raise DomainError("angle outside [60, 120] degrees")
    clamped = np.clip(angle, ANGLE_LO + ANGLE_CLAMP, ANGLE_HI - ANGLE_CLAMP)
    return _logit((clamped - ANGLE_LO) / (ANGLE_HI - ANGLE_LO))


def angles_from_unconstrained(y):
    """Inverse of :func:`angles_to_unconstrained`; lands strictly in (60, 120)."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite unconstrained angle")
    span = ANGLE_HI - ANGLE_LO
    out = span / (1.0 + np.exp(-y)) + ANGLE_LO
    return np.clip(out, np.nextafter(ANGLE_LO, ANGLE_HI), np.nextafter(ANGLE_HI, ANGLE_LO))


def encode_atoms(kinds) -> np.ndarray:
    """Encode class indices in [0, 100) as ``(n, 7)`` analog bits.

    Least-significant bit first; bit value 1 maps to +1 and 0 to -1.
    """
    kinds = np.asarray(kinds, dtype=int)
    if kinds.ndim != 1:
        raise ShapeError("kinds must be a 1-d sequence")
    if np.any(kinds < 0) or np.any(kinds >= ATOM_CLASSES):
        raise DomainError(f"atom kind outside [0, {ATOM_CLASSES})")
    shifts = np.arange(ATOM_BITS)
    bits = (kinds[:, None] >> shifts[None, :]) & 1
    return (2 * bits - 1).astype(float)


def decode_atoms(values):
    """Decode a real ``(n, 7)`` matrix to class indices by sign.

    sign(0) counts as +1. Returns ``(kinds, unused)`` where ``unused`` flags
    rows whose decoded index is >= 100 (a bit pattern no element uses).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != ATOM_BITS:
        raise ShapeError(f"expected (n, {ATOM_BITS}) matrix, got {values.shape}")
    bits = (values >= 0).astype(int)
    kinds = bits @ (1 << np.arange(ATOM_BITS))
    unused = kinds >= ATOM_CLASSES
    return kinds, unused


@dataclass
class AtomTypes:
    """Atomic classes with an optional analog-bit representation."""

    kinds: np.ndarray
    bits: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kinds = np.asarray(self.kinds, dtype=int)
        if self.kinds.ndim != 1 or self.kinds.size < 1:
            raise ShapeError("kinds must be a nonempty 1-d sequence")
        if np.any(self.kinds < 0) or np.any(self.kinds >= ATOM_CLASSES):
            raise DomainError(f"atom kind outside [0, {ATOM_CLASSES})")
        if self.bits is not None:
            self.bits = np.asarray(self.bits, dtype=float)
            decoded, _ = decode_atoms(self.bits)
            if not np.array_equal(decoded, self.kinds):
                raise DomainError("bits do not decode to the stated kinds")

    @classmethod
    def from_kinds(cls, kinds, with_bits: bool = False) -> "AtomTypes":
        kinds = np.asarray(kinds, dtype=int)
        return cls(kinds=kinds, bits=encode_atoms(kinds) if with_bits else None)

    @property
    def n(self) -> int:
        return self.kinds.size


@dataclass
class Crystal:
    """Joint crystal state: atom types, fractional coordinates, lattice."""

    atoms: AtomTypes
    frac: np.ndarray
    lattice: LatticeParams

    def __post_init__(self):
        self.frac = geometry.wrap(np.asarray(self.frac, dtype=float))
        if self.frac.ndim != 2 or self.frac.shape[1] != 3:
            raise ShapeError(f"frac must be (n, 3), got {self.frac.shape}")
        if self.frac.shape[0] != self.atoms.n:
            raise ShapeError(
                f"{self.atoms.n} atom types but {self.frac.shape[0]} coordinate rows"
            )

    @property
    def n_atoms(self) -> int:
        return self.atoms.n


@dataclass(frozen=True)
class SymmetryOp:
    """One of: index permutation, torus translation, or lattice rotation."""

    kind: str
    perm: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None

    @classmethod
    def permutation(cls, perm) -> "SymmetryOp":
        perm = np.asarray(perm, dtype=int)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise DomainError("permutation must be a bijection of indices")
        return cls(kind="permutation", perm=perm)

    @classmethod
    def translation(cls, tau) -> "SymmetryOp":
        tau = np.asarray(tau, dtype=float).reshape(3)
        return cls(kind="translation", tau=tau)

    @classmethod
    def rotation(cls, Q) -> "SymmetryOp":
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (3, 3):
            raise ShapeError("rotation must be 3x3")
        if not np.allclose(Q.T @ Q, np.eye(3), atol=1e-10):
            raise DomainError("rotation matrix is not orthogonal")
        if not math.isclose(np.linalg.det(Q), 1.0, abs_tol=1e-10):
            raise DomainError("rotation matrix must have determinant +1")
        return cls(kind="rotation", Q=Q)


def apply_symmetry(c: Crystal, g: SymmetryOp) -> Crystal:
    """Group action on the rotation-invariant crystal representation.

    Rotations act trivially: the lattice is stored as parameters only.
    """
    if g.kind == "permutation":
        if g.perm.size != c.n_atoms:
            raise ShapeError("permutation length does not match atom count")
        atoms = AtomTypes(
            kinds=c.atoms.kinds[g.perm],
            bits=None if c.atoms.bits is None else c.atoms.bits[g.perm],
        )
        return Crystal(atoms=atoms, frac=c.frac[g.perm], lattice=c.lattice)
    if g.kind == "translation":
        return Crystal(atoms=c.atoms, frac=geometry.wrap(c.frac + g.tau), lattice=c.lattice)
    if g.kind == "rotation":
        return Crystal(atoms=c.atoms, frac=c.frac.copy(), lattice=c.lattice)
    raise DomainError(f"unknown symmetry kind {g.kind!r}")
