"""Synthetic crystal families for desk-scale experiments and acceptance.

Two families:

* a perovskite-style CSP family — five atoms on fixed fractional sites, a
  cubic cell whose edge length is a deterministic function of the composition
  times log-normal noise;
* a two-atom toy family on a fixed cubic cell whose coordinates are drawn
  from a two-mode wrapped Gaussian mixture, used for density checks of the
  learned flow.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from . import geometry
from .crystal import AtomTypes, Crystal, LatticeParams

PEROV_SITES = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.5, 0.5, 0.5],
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 0.5, 0.5],
    ]
)
PEROV_A_KINDS = (10, 11, 12, 13, 14)
PEROV_B_KINDS = (20, 21, 22, 23, 24)
PEROV_SITE_KINDS = (8, 16, 34)

TOY_LATTICE = LatticeParams(4.0, 4.0, 4.0, 90.0, 90.0, 90.0)
TOY_KIND = 6
TOY_MODES = (
    (np.array([0.15, 0.30, 0.50]), np.array([0.40, 0.55, 0.65])),
    (np.array([0.70, 0.80, 0.10]), np.array([0.35, 0.20, 0.45])),
)
TOY_SIGMA = 0.05


def perov_cell_length(a_kind: int, b_kind: int) -> float:
    """Deterministic cubic edge length for a composition, in Angstrom."""
    return 3.9 + 0.12 * (a_kind - 12) + 0.06 * (b_kind - 22)


def make_perov_family(
    count: int, rng: np.random.Generator, length_noise: float = 0.01
) -> List[Crystal]:
    """Fixed-site crystals (five distinct species) with composition-determined cells."""
    out = []
    for _ in range(count):
        a_kind = int(rng.choice(PEROV_A_KINDS))
        b_kind = int(rng.choice(PEROV_B_KINDS))
        kinds = [a_kind, b_kind, *PEROV_SITE_KINDS]
        edge = perov_cell_length(a_kind, b_kind) * float(
            np.exp(length_noise * rng.standard_normal())
        )
        lat = LatticeParams(edge, edge, edge, 90.0, 90.0, 90.0)
        out.append(Crystal(AtomTypes.from_kinds(kinds), PEROV_SITES.copy(), lat))
    return out


def make_toy_torus_family(count: int, rng: np.random.Generator) -> List[Crystal]:
    """Two same-species atoms around one of two mode pairs, wrapped at σ=0.05."""
    out = []
    for _ in range(count):
        c1, c2 = TOY_MODES[int(rng.integers(len(TOY_MODES)))]
        f = np.stack(
            [
                geometry.wrap(c1 + TOY_SIGMA * rng.standard_normal(3)),
                geometry.wrap(c2 + TOY_SIGMA * rng.standard_normal(3)),
            ]
        )
        out.append(Crystal(AtomTypes.from_kinds([TOY_KIND, TOY_KIND]), f, TOY_LATTICE))
    return out


def toy_displacement_histogram(
    crystals, bins: int = 20
) -> np.ndarray:
    """Normalized 2-D histogram of the unordered relative displacement.

    Uses the first two axes of δ = f2 - f1 mod 1; both orientations (δ, -δ)
    enter because the two atoms share a species and carry no intrinsic order.
    """
    deltas = []
    for c in crystals:
        d = geometry.wrap(c.frac[1] - c.frac[0])
        deltas.append(d[:2])
        deltas.append(geometry.wrap(-d)[:2])
    deltas = np.asarray(deltas)
    hist, _, _ = np.histogram2d(
        deltas[:, 0], deltas[:, 1], bins=bins, range=[[0, 1], [0, 1]]
    )
    return hist / hist.sum()


def histogram_tv(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two normalized histograms."""
    return 0.5 * float(np.abs(p - q).sum())


def make_dng_family(count: int, rng: np.random.Generator) -> List[Crystal]:
    """Small random family for de novo generation smoke experiments."""
    out = []
    for _ in range(count):
        n = int(rng.integers(2, 5))
        edge = float(np.exp(rng.normal(np.log(4.5), 0.08)))
        lat = LatticeParams(edge, edge, edge, 90.0, 90.0, 90.0)
        kinds = rng.choice([6, 8, 14, 26], size=n)
        out.append(Crystal(AtomTypes.from_kinds(kinds), rng.random((n, 3)), lat))
    return out
