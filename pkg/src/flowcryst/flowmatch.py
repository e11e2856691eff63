"""Conditional vector-field targets, path sampling, and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import geometry
from .errors import ConfigError, DomainError, NumericError, ShapeError
from .state import ATOM_BITS, FlowState, Mode, TangentState

T_GUARD = 1e-5  # keep 1/(1-t) finite when sampling training times


@dataclass(frozen=True)
class LossWeights:
    """Unnormalized weights of the affine loss combination."""

    lambda_a: float = 0.0
    lambda_f: float = 1.0
    lambda_l: float = 1.0
    lambda_sce: float = 0.0

    def __post_init__(self):
        vals = (self.lambda_a, self.lambda_f, self.lambda_l, self.lambda_sce)
        if any(v < 0 for v in vals):
            raise ConfigError("loss weights must be nonnegative")
        if sum(vals) <= 0:
            raise ConfigError("loss weights must not all be zero")

    def normalized(self, mode: Mode):
        """Weights rescaled to sum to one over the terms active in ``mode``."""
        if mode == Mode.CSP:
            if self.lambda_a > 0 or self.lambda_sce > 0:
                raise ConfigError("CSP has no atom field; lambda_a and lambda_sce must be 0")
            total = self.lambda_f + self.lambda_l
            return 0.0, self.lambda_f / total, self.lambda_l / total, 0.0
        total = self.lambda_a + self.lambda_f + self.lambda_l + self.lambda_sce
        return (
            self.lambda_a / total,
            self.lambda_f / total,
            self.lambda_l / total,
            self.lambda_sce / total,
        )

    @classmethod
    def csp_default(cls) -> "LossWeights":
        return cls(lambda_a=0.0, lambda_f=300.0, lambda_l=1.0, lambda_sce=0.0)

    @classmethod
    def dng_default(cls) -> "LossWeights":
        return cls(lambda_a=300.0, lambda_f=600.0, lambda_l=1.0, lambda_sce=20.0)


@dataclass
class PathSample:
    """A training pair: interpolated state at time t and its velocity target."""

    t: float
    state: FlowState
    target: TangentState


def cond_vf_euclidean(m, m1, t: float):
    """Conditional velocity on a Euclidean factor under the linear scheduler."""
    if not 0.0 <= t < 1.0:
        raise DomainError(f"t must lie in [0, 1), got {t}")
    m = np.asarray(m, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    if m.shape != m1.shape:
        raise ShapeError(f"shape mismatch: {m.shape} vs {m1.shape}")
    return (m1 - m) / (1.0 - t)


def cond_vf_torus_meanfree(f0, f1):
    """Mean-free torus velocity: the per-atom log map with the average
    tangent translation removed. Under the linear scheduler this constant
    vector is the supervision target at every time along the path."""
    v = geometry.torus_log(f0, f1)
    return v - v.mean(axis=-2, keepdims=True)


def sample_conditional_path(
    c0: FlowState, c1: FlowState, t: float, mode: Mode
) -> PathSample:
    """Interpolate the joint geodesic at time t and attach the velocity target.

    ``c1`` comes from data with angles already in unconstrained space (and
    atoms as bits for DNG). Targets are constant in t for the linear
    scheduler; the interpolated state is not.
    """
    if not 0.0 <= t < 1.0:
        raise DomainError(f"t must lie in [0, 1), got {t}")
    if c0.f.shape != c1.f.shape:
        raise ShapeError(f"coordinate shape mismatch: {c0.f.shape} vs {c1.f.shape}")
    f_t = geometry.geodesic_point(c0.f, c1.f, t, manifold="torus")
    l_t = geometry.geodesic_point(c0.l, c1.l, t, manifold="euclidean")
    target = TangentState(
        df=cond_vf_torus_meanfree(c0.f, c1.f),
        dl=c1.l - c0.l,
    )
    a_t = None
    if mode == Mode.DNG:
        if c0.a is None or c1.a is None:
            raise ConfigError("DNG path sampling requires atom bits on both ends")
        a_t = geometry.geodesic_point(c0.a, c1.a, t, manifold="euclidean")
        target.da = c1.a - c0.a
    state = FlowState(f=f_t, l=l_t, a=a_t)
    target.check_finite()
    return PathSample(t=t, state=state, target=target)


def _as_tensor(x):
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=torch.float64)


def fm_loss(
    pred: TangentState, target: TangentState, weights: LossWeights, n: int, mode: Mode
) -> torch.Tensor:
    """Dimension-normalized squared tangent error, affinely weighted.

    Returns a scalar tensor so gradients can flow through ``pred``.
    """
    wa, wf, wl, _ = weights.normalized(mode)
    pf, tf = _as_tensor(pred.df), _as_tensor(target.df)
    pl, tl = _as_tensor(pred.dl), _as_tensor(target.dl)
    loss = wf / (3.0 * n) * torch.sum((pf - tf) ** 2) + wl / 6.0 * torch.sum(
        (pl - tl) ** 2
    )
    if mode == Mode.DNG:
        if pred.da is None or target.da is None:
            raise ConfigError("DNG loss requires atom components")
        pa, ta = _as_tensor(pred.da), _as_tensor(target.da)
        loss = loss + wa / (ATOM_BITS * n) * torch.sum((pa - ta) ** 2)
    if not torch.isfinite(loss):
        raise NumericError("non-finite flow-matching loss")
    return loss


def sce_loss(a1_bits, pred_da, a_t, t: float) -> torch.Tensor:
    """Sigmoid cross entropy on the one-step extrapolated bits.

    ``a1_hat = (1 - t) * pred_da + a_t`` estimates the endpoint; the loss is
    ``-log sigmoid(a1 . a1_hat)`` summed over atoms, evaluated log-sum-exp
    safely via softplus.
    """
    if not 0.0 <= t < 1.0:
        raise DomainError(f"t must lie in [0, 1), got {t}")
    a1 = _as_tensor(a1_bits)
    da = _as_tensor(pred_da)
    at = _as_tensor(a_t)
    a1_hat = (1.0 - t) * da + at
    dots = torch.sum(a1 * a1_hat, dim=-1)
    return torch.sum(torch.nn.functional.softplus(-dots))
