"""Closed-form Riemannian operations on flat tori and Euclidean factors.

Point clouds on the torus are plain ``(n, 3)`` float arrays with entries in
``[0, 1)``; tangent vectors are unconstrained float arrays of the same shape.
All functions are pure and accept arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MetricWeights:
    """Positive weights of the product-manifold inner product."""

    lambda_a: float = 1.0
    lambda_f: float = 1.0
    lambda_l: float = 1.0

    def __post_init__(self):
        if min(self.lambda_a, self.lambda_f, self.lambda_l) <= 0:
            raise DomainError("metric weights must be strictly positive")


def wrap(f):
    """Canonicalize coordinates to [0, 1) by floor subtraction.

    Values that round up to an integer (e.g. ``1 - 1e-17``) come back as 0.
    """
    f = np.asarray(f, dtype=float)
    out = f - np.floor(f)
    # floor subtraction can still return 1.0 when f is a tiny negative number
    return np.where(out >= 1.0, 0.0, out)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def torus_exp(f, v):
    """Exponential map on the flat torus: move from ``f`` along tangent ``v``."""
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_same_shape(f, v)
    return wrap(f + v)


def torus_log(f0, f1):
    """Minimal signed displacement from ``f0`` to ``f1`` on the torus.

    Entrywise ``atan2(sin w, cos w) / 2pi`` with ``w = 2pi (f1 - f0)``. Every
    output entry lies in ``(-1/2, 1/2]``; a displacement of exactly one half
    cell resolves to ``+1/2``.
    """
    f0 = np.asarray(f0, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    _check_same_shape(f0, f1)
    w = TWO_PI * (f1 - f0)
    d = np.arctan2(np.sin(w), np.cos(w)) / TWO_PI
    # atan2 can land on the -1/2 side of the cut locus; fold it to +1/2
    return np.where(d <= -0.5, d + 1.0, d)


def geodesic_point(m0, m1, t, manifold="euclidean"):
    """Point at fraction ``t`` along the geodesic from ``m0`` to ``m1``."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    _check_same_shape(m0, m1)
    if manifold == "torus":
        return torus_exp(m0, t * torus_log(m0, m1))
    if manifold == "euclidean":
        return (1.0 - t) * m0 + t * m1
    raise DomainError(f"unknown manifold tag {manifold!r}")


def product_inner(u, v, weights: MetricWeights) -> float:
    """Weighted inner product on the product tangent space.

    ``u`` and ``v`` expose optional ``da`` and mandatory ``df``, ``dl``
    components (see :class:`flowcryst.state.TangentState`).
    """

    def flat_dot(x, y):
        if x is None and y is None:
            return 0.0
        if x is None or y is None:
            raise ShapeError("one operand is missing a component the other has")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_same_shape(x, y)
        return float(np.sum(x * y))

    return (
        weights.lambda_a * flat_dot(u.da, v.da)
        + weights.lambda_f * flat_dot(u.df, v.df)
        + weights.lambda_l * flat_dot(u.dl, v.dl)
    )
