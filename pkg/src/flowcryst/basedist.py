"""Base distribution p(a) p(f) p(l) and the empirical atom-count table."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .crystal import ANGLE_HI, ANGLE_LO, angles_to_unconstrained
from .errors import DataError, DomainError, InsufficientDataError
from .state import ATOM_BITS, FlowState, Mode

SCALE_FLOOR = 1e-6


@dataclass(frozen=True)
class LengthPrior:
    """Per-dimension log-normal parameters for the three cell lengths."""

    loc: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "loc", np.asarray(self.loc, dtype=float).reshape(3))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float).reshape(3))
        if np.any(self.scale < SCALE_FLOOR):
            raise DomainError(f"scale below floor {SCALE_FLOOR}")


def fit_length_prior(lengths) -> LengthPrior:
    """Maximum-likelihood log-normal fit of (a, b, c) samples.

    Uses the population standard deviation of the logs, which is the exact
    MLE; degenerate scales are floored at ``SCALE_FLOOR``.
    """
    lengths = np.asarray(lengths, dtype=float)
    if lengths.ndim != 2 or lengths.shape[1] != 3:
        raise DataError(f"expected (m, 3) length samples, got {lengths.shape}")
    if lengths.shape[0] < 2:
        raise InsufficientDataError("need at least 2 length samples")
    if np.any(lengths <= 0):
        raise DataError("non-positive cell length in data")
    logs = np.log(lengths)
    loc = logs.mean(axis=0)
    scale = np.maximum(logs.std(axis=0), SCALE_FLOOR)
    return LengthPrior(loc=loc, scale=scale)


@dataclass
class AtomCountTable:
    """Empirical distribution over the number of atoms per unit cell."""

    counts: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if any(v < 0 for v in self.counts.values()):
            raise DataError("negative frequency in atom-count table")
        if self.counts and sum(self.counts.values()) <= 0:
            raise DataError("atom-count table frequencies sum to zero")

    @classmethod
    def from_sizes(cls, sizes) -> "AtomCountTable":
        counts: Dict[int, float] = {}
        for n in sizes:
            counts[int(n)] = counts.get(int(n), 0.0) + 1.0
        return cls(counts=counts)

    def probabilities(self):
        if not self.counts:
            raise InsufficientDataError("empty atom-count table")
        ns = sorted(self.counts)
        freqs = np.array([self.counts[n] for n in ns], dtype=float)
        return np.array(ns), freqs / freqs.sum()


def sample_num_atoms(table: AtomCountTable, rng: np.random.Generator) -> int:
    """Draw an atom count proportional to the table frequencies."""
    ns, probs = table.probabilities()
    return int(rng.choice(ns, p=probs))


def sample_base(
    n: int, mode: Mode, prior: LengthPrior, rng: np.random.Generator
) -> FlowState:
    """Draw one base sample: uniform torus coordinates, log-normal lengths,
    uniform angles (stored in unconstrained space), and standard-normal atom
    bits in DNG mode."""
    if n < 1:
        raise DomainError(f"atom count must be >= 1, got {n}")
    f0 = rng.uniform(0.0, 1.0, size=(n, 3))
    lengths = np.exp(prior.loc + prior.scale * rng.standard_normal(3))
    angles = rng.uniform(ANGLE_LO, ANGLE_HI, size=3)
    l0 = np.concatenate([lengths, angles_to_unconstrained(angles)])
    a0 = rng.standard_normal((n, ATOM_BITS)) if mode == Mode.DNG else None
    return FlowState(f=f0, l=l0, a=a0)


def _log_sigmoid(y):
    return -np.logaddexp(0.0, -y)


def base_log_density(state: FlowState, mode: Mode, prior: LengthPrior) -> float:
    """Log-density of a flow state under the base distribution.

    Angles live in unconstrained space, so their uniform density picks up the
    log-Jacobian of the sigmoid decode. The uniform torus factor contributes
    zero per coordinate.
    """
    state.check_finite()
    if np.any(state.f < 0) or np.any(state.f >= 1):
        raise DomainError("fractional coordinates outside [0, 1)")
    lengths = state.l[..., :3]
    if np.any(lengths <= 0):
        raise DomainError("non-positive length in state")
    log_l = np.log(lengths)
    length_term = float(
        np.sum(
            -log_l
            - np.log(prior.scale)
            - 0.5 * math.log(2 * math.pi)
            - 0.5 * ((log_l - prior.loc) / prior.scale) ** 2
        )
    )
    # angle density: Uniform(60, 120) in degrees times d(angle)/dy = span * s(y)(1-s(y))
    y = state.l[..., 3:]
    span = ANGLE_HI - ANGLE_LO
    angle_term = float(
        np.sum(-math.log(span) + math.log(span) + _log_sigmoid(y) + _log_sigmoid(-y))
    )
    total = length_term + angle_term
    if mode == Mode.DNG:
        if state.a is None:
            raise DomainError("DNG state is missing atom bits")
        total += float(
            np.sum(-0.5 * math.log(2 * math.pi) - 0.5 * state.a**2)
        )
    return total
