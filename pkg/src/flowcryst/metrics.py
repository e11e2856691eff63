"""Proxy evaluation metrics: periodic structure matching, validity checks,
1-D Wasserstein distances, and cost/rate arithmetic."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import wasserstein_distance

from .crystal import Crystal, cell_volume, matrix_from_params
from .errors import ConfigError, DataError, DomainError, PairingError

_IMAGE_SHIFTS = np.array(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
    dtype=float,
)  # (27, 3)


@dataclass(frozen=True)
class MatchTolerances:
    """Structure-matcher tolerances (site, angle in degrees, length ratio)."""

    stol: float = 0.5
    angle_tol: float = 10.0
    ltol: float = 0.3

    def __post_init__(self):
        if min(self.stol, self.angle_tol, self.ltol) <= 0:
            raise ConfigError("matcher tolerances must be positive")


def _min_image_sq(frac_diff: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Squared Cartesian minimal-image distances over the 27-cell scan.

    ``frac_diff`` has shape (..., 3); the scan covers shifts in {-1,0,1}^3.
    """
    shifted = frac_diff[..., None, :] + _IMAGE_SHIFTS  # (..., 27, 3)
    cart = shifted @ M.T
    return np.min(np.sum(cart**2, axis=-1), axis=-1)


def match_structures(
    x: Crystal, y: Crystal, tol: MatchTolerances = MatchTolerances()
) -> Optional[float]:
    """Normalized RMSD if the two crystals match under the tolerances.

    Fail-fast screens: composition multiset, per-axis length ratio, angle
    differences. Then anchor translations (aligning each same-type atom of one
    structure onto the first atom of the other, tried in both directions) are
    combined with an optimal type-respecting assignment on minimal-image
    distances; a match requires the max site displacement to stay within
    ``stol * (V/N)^{1/3}``. Geometry is evaluated in the averaged lattice so
    the relation is symmetric in its arguments. Returns None on no match.
    """
    kx, ky = x.atoms.kinds, y.atoms.kinds
    if sorted(kx.tolist()) != sorted(ky.tolist()):
        return None
    lx, ly = x.lattice.lengths, y.lattice.lengths
    ratio = np.maximum(lx, ly) / np.minimum(lx, ly)
    if np.any(ratio - 1.0 > tol.ltol):
        return None
    if np.any(np.abs(x.lattice.angles - y.lattice.angles) > tol.angle_tol):
        return None

    n = x.n_atoms
    M = 0.5 * (matrix_from_params(x.lattice) + matrix_from_params(y.lattice))
    vol = 0.5 * (cell_volume(x.lattice) + cell_volume(y.lattice))
    scale = (vol / n) ** (1.0 / 3.0)

    same = kx[:, None] == ky[None, :]
    # candidate translations of y, from both anchoring directions
    taus = []
    for j in range(n):
        if same[0, j]:
            taus.append(x.frac[0] - y.frac[j])
    for i in range(n):
        if same[i, 0]:
            taus.append(x.frac[i] - y.frac[0])
    best: Optional[float] = None
    big = 1e12
    for tau in taus:
        diff = x.frac[:, None, :] - (y.frac[None, :, :] + tau)
        d_sq = _min_image_sq(diff, M)
        cost = np.where(same, d_sq, big)
        rows, cols = linear_sum_assignment(cost)
        d_match = d_sq[rows, cols]
        if np.any(~same[rows, cols]):
            continue
        if math.sqrt(float(d_match.max())) > tol.stol * scale:
            continue
        rmsd = math.sqrt(float(d_match.mean())) / scale
        if best is None or rmsd < best:
            best = rmsd
    return best


def match_rate(
    generated: Sequence[Optional[Crystal]],
    references: Sequence[Crystal],
    tol: MatchTolerances = MatchTolerances(),
) -> Tuple[float, Optional[float]]:
    """Fraction of paired structures that match, and mean RMSD over matches.

    ``generated`` entries may be None (failed generations); those count as
    misses. Returns ``(rate, mean_rmsd)`` with mean_rmsd None if nothing
    matched.
    """
    if len(generated) != len(references):
        raise PairingError(
            f"{len(generated)} generated vs {len(references)} references"
        )
    if not references:
        raise DataError("empty corpus")
    rmsds = []
    for g, r in zip(generated, references):
        if g is None:
            continue
        rmsd = match_structures(g, r, tol)
        if rmsd is not None:
            rmsds.append(rmsd)
    rate = len(rmsds) / len(references)
    return rate, (float(np.mean(rmsds)) if rmsds else None)


def structural_validity(c: Crystal, min_dist: float = 0.5) -> bool:
    """True iff every pairwise minimal-image distance exceeds ``min_dist`` Å.

    Each atom is also checked against its own periodic images (the zero-image
    self pair is excluded); the scan covers the 27 neighbor cells.
    """
    M = matrix_from_params(c.lattice)
    n = c.n_atoms
    diff = c.frac[:, None, :] - c.frac[None, :, :]  # (n, n, 3)
    shifted = diff[..., None, :] + _IMAGE_SHIFTS  # (n, n, 27, 3)
    cart = shifted @ M.T
    d_sq = np.sum(cart**2, axis=-1)
    # mask the zero-shift diagonal (atom against itself, same cell)
    zero_idx = int(np.flatnonzero((_IMAGE_SHIFTS == 0).all(axis=1))[0])
    d_sq[np.arange(n), np.arange(n), zero_idx] = np.inf
    return bool(np.min(d_sq) > min_dist**2)


def wasserstein_1d(xs, ys) -> float:
    """Exact 1-D earth mover's distance between empirical samples."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size == 0 or ys.size == 0:
        raise DataError("wasserstein_1d requires nonempty samples")
    return float(wasserstein_distance(xs, ys))


def density_and_nary(c: Crystal) -> Tuple[float, int]:
    """Atoms per cubic Angstrom and the count of distinct atom classes."""
    rho = c.n_atoms / cell_volume(c.lattice)
    return rho, int(np.unique(c.atoms.kinds).size)


def rate_cost(n_hit: int, n_gen: int, steps: int) -> Tuple[float, float]:
    """Hit rate and integration cost (steps per hit); rate 0 gives cost inf."""
    if n_gen <= 0:
        raise DomainError("n_gen must be positive")
    if steps <= 0:
        raise DomainError("steps must be positive")
    rate = n_hit / n_gen
    return rate, (steps / rate if rate > 0 else math.inf)


@dataclass
class MetricReport:
    """Aggregate metrics over a generated corpus against references."""

    match_rate: Optional[float] = None
    mean_rmse: Optional[float] = None
    structural_validity_rate: float = 0.0
    wdist_rho: float = 0.0
    wdist_nel: float = 0.0
    nary_histogram: Dict[int, int] = field(default_factory=dict)
    stability_rate_inputs: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("match_rate", "structural_validity_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} outside [0, 1]: {v}")
        for name in ("mean_rmse", "wdist_rho", "wdist_nel"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise DomainError(f"{name} negative: {v}")

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["nary_histogram"] = {str(k): v for k, v in self.nary_histogram.items()}
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        d["nary_histogram"] = {int(k): v for k, v in d["nary_histogram"].items()}
        return cls(**d)

    def histogram_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "count"])
            for k in sorted(self.nary_histogram):
                writer.writerow([k, self.nary_histogram[k]])


def compute_report(
    generated: Sequence[Crystal],
    references: Sequence[Crystal],
    tol: MatchTolerances = MatchTolerances(),
    paired: Optional[bool] = None,
) -> MetricReport:
    """Full report. Match statistics are computed only for paired corpora
    (equal lengths, or ``paired=True``); distribution distances always are."""
    if not generated or not references:
        raise DataError("empty corpus")
    if paired is None:
        paired = len(generated) == len(references)
    rate = rmse = None
    n_hit = 0
    if paired:
        rate, rmse = match_rate(generated, references, tol)
        n_hit = round(rate * len(references))
    gen_stats = [density_and_nary(c) for c in generated]
    ref_stats = [density_and_nary(c) for c in references]
    hist: Dict[int, int] = {}
    for _, nel in gen_stats:
        hist[nel] = hist.get(nel, 0) + 1
    return MetricReport(
        match_rate=rate,
        mean_rmse=rmse,
        structural_validity_rate=float(
            np.mean([structural_validity(c) for c in generated])
        ),
        wdist_rho=wasserstein_1d([s[0] for s in gen_stats], [s[0] for s in ref_stats]),
        wdist_nel=wasserstein_1d([s[1] for s in gen_stats], [s[1] for s in ref_stats]),
        nary_histogram=hist,
        stability_rate_inputs={"n_hit": n_hit, "n_gen": len(generated)},
    )
