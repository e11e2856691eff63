"""Dataset ingestion and artifact serialization (JSON-lines crystals,
length-prior files, deterministic config hashing)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .basedist import AtomCountTable, LengthPrior, fit_length_prior
from .crystal import AtomTypes, Crystal, LatticeParams, params_from_matrix
from .errors import DataError, InsufficientDataError, ShapeError

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
MALFORMED_LIMIT = 0.01


def _fmt(x) -> str:
    """Serialize a double at 17 significant digits (lossless round trip)."""
    return format(float(x), ".17g")


def _dumps(obj) -> str:
    """Compact JSON with our float formatting; sufficient for record trees."""
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(k)}: {_dumps(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(obj)


def config_hash(d: dict) -> str:
    """Stable short hash of a flat configuration mapping."""
    text = "\n".join(f"{k}={d[k]}" for k in sorted(d))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class CrystalRecord:
    """One dataset row; the lattice may be six parameters or a 3x3 matrix."""

    id: str
    atomic_numbers: List[int]
    frac_coords: list
    lattice: Union[dict, list]
    split: Optional[str] = None

    def to_crystal(self) -> Crystal:
        if isinstance(self.lattice, dict):
            lat = LatticeParams(**{k: float(v) for k, v in self.lattice.items()})
        else:
            lat = params_from_matrix(np.asarray(self.lattice, dtype=float))
        return Crystal(
            atoms=AtomTypes.from_kinds(self.atomic_numbers),
            frac=np.asarray(self.frac_coords, dtype=float),
            lattice=lat,
        )

    @classmethod
    def from_crystal(cls, c: Crystal, id: str, split: Optional[str] = None):
        lat = c.lattice
        return cls(
            id=id,
            atomic_numbers=[int(k) for k in c.atoms.kinds],
            frac_coords=c.frac.tolist(),
            lattice={"a": lat.a, "b": lat.b, "c": lat.c,
                     "alpha": lat.alpha, "beta": lat.beta, "gamma": lat.gamma},
            split=split,
        )

    def to_line(self) -> str:
        d = {
            "id": self.id,
            "atomic_numbers": self.atomic_numbers,
            "frac_coords": self.frac_coords,
            "lattice": self.lattice,
        }
        if self.split is not None:
            d["split"] = self.split
        return _dumps(d)

    @classmethod
    def from_line(cls, line: str) -> "CrystalRecord":
        d = json.loads(line)
        extra = set(d) - {"id", "atomic_numbers", "frac_coords", "lattice", "split"}
        if extra:
            raise DataError(f"unknown record fields {sorted(extra)}")
        return cls(**d)


@dataclass
class DatasetManifest:
    path: str
    record_count: int
    split_counts: Dict[str, int]
    rejected: List[Tuple[int, str]] = field(default_factory=list)


def save_crystals(path, crystals: Sequence[Crystal], ids=None, splits=None):
    with open(path, "w") as fh:
        for i, c in enumerate(crystals):
            rid = ids[i] if ids is not None else f"c{i:06d}"
            split = splits[i] if splits is not None else None
            fh.write(CrystalRecord.from_crystal(c, rid, split).to_line() + "\n")


def save_generated(path, crystals: Sequence[Crystal], header: dict, ids=None):
    """Generation corpus: one JSON header line, then one record per crystal."""
    with open(path, "w") as fh:
        fh.write(_dumps({"header": header}) + "\n")
        for i, c in enumerate(crystals):
            rid = ids[i] if ids is not None else f"g{i:06d}"
            fh.write(CrystalRecord.from_crystal(c, rid).to_line() + "\n")


def load_crystals(path):
    """Ordered corpus loader for metrics; returns ``(crystals, header)``.

    Unlike :func:`load_dataset` this preserves file order, ignores splits, and
    treats any malformed record as fatal.
    """
    crystals: List[Crystal] = []
    header: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            doc = json.loads(line)
            if isinstance(doc, dict) and "header" in doc:
                header = doc["header"]
                continue
            try:
                crystals.append(CrystalRecord.from_line(line).to_crystal())
            except Exception as exc:
                raise DataError(f"{path} line {lineno}: {exc}")
    if not crystals:
        raise InsufficientDataError(f"{path} holds no records")
    return crystals, header


def assign_splits(count: int) -> List[str]:
    """Deterministic 60/20/20 assignment by record order."""
    n_train = round(count * SPLIT_FRACTIONS[0])
    n_val = round(count * SPLIT_FRACTIONS[1])
    out = ["train"] * n_train + ["val"] * n_val
    out += ["test"] * (count - len(out))
    return out


def load_dataset(path):
    """Parse a JSON-lines corpus into crystals grouped by split.

    Returns ``(splits, table, manifest)`` where splits maps train/val/test to
    crystal lists and the atom-count table is fitted on the training split.
    Malformed or invalid rows are collected; more than 1% of them aborts.
    """
    with open(path) as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise InsufficientDataError(f"{path} holds no records")
    parsed: List[Optional[Tuple[Crystal, Optional[str]]]] = []
    rejected: List[Tuple[int, str]] = []
    for lineno, line in enumerate(lines, start=1):
        try:
            doc = json.loads(line)
            if isinstance(doc, dict) and "header" in doc:
                parsed.append(None)
                continue
            rec = CrystalRecord.from_line(line)
            if rec.split is not None and rec.split not in SPLITS:
                raise DataError(f"unknown split {rec.split!r}")
            parsed.append((rec.to_crystal(), rec.split))
        except Exception as exc:  # per-record rejection with reason
            rejected.append((lineno, f"{type(exc).__name__}: {exc}"))
            parsed.append(None)
    if len(rejected) / len(lines) > MALFORMED_LIMIT:
        raise DataError(
            f"{len(rejected)}/{len(lines)} malformed records in {path}; "
            f"first: line {rejected[0][0]}: {rejected[0][1]}"
        )
    good = [p for p in parsed if p is not None]
    default = assign_splits(len(good))
    splits: Dict[str, List[Crystal]] = {name: [] for name in SPLITS}
    for i, (crystal, split) in enumerate(good):
        splits[split or default[i]].append(crystal)
    if not splits["train"]:
        raise InsufficientDataError("training split is empty")
    table = AtomCountTable.from_sizes([c.n_atoms for c in splits["train"]])
    manifest = DatasetManifest(
        path=str(path),
        record_count=len(good),
        split_counts={k: len(v) for k, v in splits.items()},
        rejected=rejected,
    )
    return splits, table, manifest


def save_prior(path, prior: LengthPrior, table: AtomCountTable, meta: dict):
    doc = {
        "loc": prior.loc.tolist(),
        "scale": prior.scale.tolist(),
        "counts": {str(k): int(v) for k, v in sorted(table.counts.items())},
        "meta": meta,
    }
    with open(path, "w") as fh:
        fh.write(_dumps(doc) + "\n")


def load_prior(path) -> Tuple[LengthPrior, AtomCountTable, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        prior = LengthPrior(
            loc=np.asarray(doc["loc"], dtype=float),
            scale=np.asarray(doc["scale"], dtype=float),
        )
        table = AtomCountTable({int(k): int(v) for k, v in doc["counts"].items()})
    except KeyError as exc:
        raise DataError(f"prior file {path} lacks field {exc}")
    return prior, table, doc.get("meta", {})


def fit_prior_from_split(train: Sequence[Crystal]) -> LengthPrior:
    lengths = np.stack([c.lattice.lengths for c in train])
    return fit_length_prior(lengths)
