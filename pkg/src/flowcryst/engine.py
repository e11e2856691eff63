"""Training loop, anti-annealed Euler integration, and end-to-end sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import geometry
from .basedist import AtomCountTable, LengthPrior, sample_base, sample_num_atoms
from .crystal import (
    AtomTypes,
    Crystal,
    LatticeParams,
    angles_from_unconstrained,
    angles_to_unconstrained,
    decode_atoms,
    encode_atoms,
)
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    IntegrationError,
    NumericError,
)
from .flowmatch import (
    LossWeights,
    PathSample,
    T_GUARD,
    sample_conditional_path,
)
from .net import (
    NetConfig,
    TrainExample,
    VectorFieldNet,
    ZScoreStats,
    flat_params,
    set_flat_params,
)
from .state import ATOM_BITS, FlowState, Mode, TangentState

VelocityFn = Callable[[FlowState, float], TangentState]


@dataclass
class RunConfig:
    """Everything a training or sampling run needs beyond the dataset."""

    mode: Mode = Mode.CSP
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # final-epoch learning-rate fraction (cosine schedule)
    weight_decay: float = 0.0
    grad_clip: float = 0.5
    epochs: int = 20
    batch_size: int = 64
    weights: LossWeights = field(default_factory=LossWeights.csp_default)
    steps: int = 50
    anneal_slope: float = 0.0
    anneal_a: bool = False
    anneal_f: bool = False
    anneal_l: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode(self.mode)
        if self.steps < 1:
            raise ConfigError("integration steps must be >= 1")
        if self.anneal_slope < 0:
            raise ConfigError("anti-anneal slope must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.mode == Mode.CSP and self.anneal_a:
            raise ConfigError("CSP has no atom variable group to anneal")

    @classmethod
    def csp_default(cls, **overrides) -> "RunConfig":
        params = dict(mode=Mode.CSP, weights=LossWeights.csp_default(),
                      anneal_slope=10.0, anneal_f=True)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def dng_default(cls, **overrides) -> "RunConfig":
        params = dict(mode=Mode.DNG, learning_rate=5e-4, weight_decay=0.005,
                      weights=LossWeights.dng_default(), anneal_slope=5.0,
                      anneal_f=True, anneal_l=True)
        params.update(overrides)
        return cls(**params)


@dataclass
class Trajectory:
    """Euler trajectory on the uniform grid t_k = k / N."""

    times: List[float]
    states: List[FlowState]

    @property
    def final(self) -> FlowState:
        return self.states[-1]


def crystal_to_flow(c: Crystal, mode: Mode) -> FlowState:
    """Data-side flow state: raw lengths, unconstrained angles, bits for DNG."""
    l = np.concatenate(
        [c.lattice.lengths, angles_to_unconstrained(c.lattice.angles)]
    )
    a = None
    if mode == Mode.DNG:
        a = c.atoms.bits if c.atoms.bits is not None else encode_atoms(c.atoms.kinds)
    return FlowState(f=c.frac.copy(), l=l, a=a)


@dataclass
class GenerationResult:
    """Decoded sample plus validity flags."""

    crystal: Optional[Crystal]
    valid: bool
    reason: str = ""
    state: Optional[FlowState] = None


def decode_state(state: FlowState, mode: Mode, kinds=None) -> GenerationResult:
    """Materialize a crystal from a final flow state.

    Non-positive lengths and unused-bit atom decodes are reported as invalid
    samples rather than clamped.
    """
    lengths = state.l[:3]
    if not np.all(np.isfinite(state.l)) or not np.all(np.isfinite(state.f)):
        return GenerationResult(None, False, "non-finite state", state)
    if np.any(lengths <= 0):
        return GenerationResult(None, False, "non-positive length", state)
    angles = angles_from_unconstrained(state.l[3:])
    lattice = LatticeParams(*lengths, *angles)
    if mode == Mode.DNG:
        if state.a is None:
            raise ConfigError("DNG state has no atom bits to decode")
        decoded, unused = decode_atoms(state.a)
        if np.any(unused):
            return GenerationResult(None, False, "unused-bit atom class", state)
        atoms = AtomTypes(kinds=decoded, bits=encode_atoms(decoded))
    else:
        if kinds is None:
            raise ConfigError("CSP decode requires the conditioning composition")
        atoms = AtomTypes.from_kinds(kinds)
    crystal = Crystal(atoms=atoms, frac=geometry.wrap(state.f), lattice=lattice)
    return GenerationResult(crystal, True, "", state)


# -- integration --------------------------------------------------------


def integrate(
    velocity_fn: VelocityFn,
    c0: FlowState,
    config: RunConfig,
    record: bool = True,
) -> Trajectory:
    """Explicit Euler from t=0 to t=1 with left-endpoint velocity scaling.

    The anti-annealing factor s(t) = 1 + s' t multiplies only the flagged
    variable groups; everything else is advanced with a factor of exactly 1.
    """
    N = config.steps
    h = 1.0 / N
    state = c0.copy()
    times = [0.0]
    states = [state.copy()] if record else []
    for k in range(N):
        t_k = k / N
        v = velocity_fn(state, t_k)
        s = 1.0 + config.anneal_slope * t_k

        def factor(flag: bool) -> float:
            return s if flag else 1.0

        new_f = geometry.torus_exp(state.f, (h * factor(config.anneal_f)) * v.df)
        new_l = state.l + (h * factor(config.anneal_l)) * v.dl
        new_a = state.a
        if state.a is not None:
            if v.da is None:
                raise ConfigError("velocity lacks atom component for a DNG state")
            new_a = state.a + (h * factor(config.anneal_a)) * v.da
        state = FlowState(f=new_f, l=new_l, a=new_a)
        if not (
            np.all(np.isfinite(state.f))
            and np.all(np.isfinite(state.l))
            and (state.a is None or np.all(np.isfinite(state.a)))
        ):
            raise IntegrationError(k + 1)
        if record:
            times.append((k + 1) / N)
            states.append(state.copy())
    if not record:
        times = [0.0, 1.0]
        states = [c0.copy(), state]
    return Trajectory(times=times, states=states)


def model_velocity(model: VectorFieldNet, kinds=None) -> VelocityFn:
    """Wrap a network as a velocity field over (possibly batched) states."""

    def fn(state: FlowState, t: float) -> TangentState:
        return model.velocity(state, t, kinds=kinds)

    return fn


def conditional_velocity(c0: FlowState, c1: FlowState, mode: Mode) -> VelocityFn:
    """The analytic constant-velocity target field for a conditioning pair."""
    target = sample_conditional_path(c0, c1, 0.0, mode).target

    def fn(state: FlowState, t: float) -> TangentState:
        return target

    return fn


# -- z-score fitting ----------------------------------------------------


def fit_zscore(
    dataset: Sequence[Crystal],
    mode: Mode,
    prior: LengthPrior,
    rng: np.random.Generator,
    draws: int = 256,
) -> ZScoreStats:
    """Standardization statistics from sampled path states and targets.

    The lattice input statistics are fitted on interpolated states rather
    than the data alone: a dataset with (say) constant angles would otherwise
    produce a degenerate input scale that blows up mid-flow states.
    """
    dfs, dls, das, lts = [], [], [], []
    for _ in range(draws):
        c = dataset[int(rng.integers(len(dataset)))]
        c1 = crystal_to_flow(c, mode)
        c0 = sample_base(c.n_atoms, mode, prior, rng)
        t = float(rng.uniform(0.0, 1.0))
        path = sample_conditional_path(c0, c1, min(t, 1.0 - T_GUARD), mode)
        lts.append(path.state.l)
        target = path.target
        dfs.append(target.df.ravel())
        dls.append(target.dl)
        if mode == Mode.DNG:
            das.append(target.da.ravel())
    l_vecs = np.stack(lts)
    lat_mean = l_vecs.mean(axis=0)
    lat_std = np.maximum(l_vecs.std(axis=0), 1e-8)
    df_all = np.concatenate(dfs).reshape(-1, 3)
    dl_all = np.stack(dls)
    stats = ZScoreStats(
        lattice_mean=lat_mean,
        lattice_std=lat_std,
        df_mean=df_all.mean(axis=0),
        df_std=np.maximum(df_all.std(axis=0), 1e-8),
        dl_mean=dl_all.mean(axis=0),
        dl_std=np.maximum(dl_all.std(axis=0), 1e-8),
    )
    if mode == Mode.DNG:
        da_all = np.concatenate(das).reshape(-1, ATOM_BITS)
        stats.da_mean = da_all.mean(axis=0)
        stats.da_std = np.maximum(da_all.std(axis=0), 1e-8)
    return stats


# -- training -----------------------------------------------------------


def _batched_loss(
    model: VectorFieldNet,
    examples: List[TrainExample],
    weights: LossWeights,
) -> Tuple[torch.Tensor, dict]:
    """Vectorized equivalent of ``net.training_loss`` for equal atom counts."""
    mode = model.config.mode
    wa, wf, wl, w_sce = weights.normalized(mode)
    n = examples[0].path.state.n_atoms
    B = len(examples)
    f = np.stack([ex.path.state.f for ex in examples])
    l = np.stack([ex.path.state.l for ex in examples])
    t = np.array([ex.path.t for ex in examples])
    if mode == Mode.DNG:
        a_in = torch.as_tensor(
            np.stack([ex.path.state.a for ex in examples]), dtype=torch.float64
        )
    else:
        a_in = torch.as_tensor(
            np.eye(100)[np.stack([ex.kinds for ex in examples])], dtype=torch.float64
        )
    df, dl, da = model.forward(a_in, f, l, t)
    tf = torch.as_tensor(np.stack([ex.path.target.df for ex in examples]))
    tl = torch.as_tensor(np.stack([ex.path.target.dl for ex in examples]))
    loss = wf / (3.0 * n) * torch.sum((df - tf) ** 2) / B
    loss = loss + wl / 6.0 * torch.sum((dl - tl) ** 2) / B
    comps = {"fm": 0.0, "sce": 0.0}
    if mode == Mode.DNG:
        ta = torch.as_tensor(np.stack([ex.path.target.da for ex in examples]))
        loss = loss + wa / (ATOM_BITS * n) * torch.sum((da - ta) ** 2) / B
        comps["fm"] = float(loss.detach())
        if w_sce > 0:
            a1 = torch.as_tensor(np.stack([ex.a1_bits for ex in examples]))
            at = torch.as_tensor(np.stack([ex.path.state.a for ex in examples]))
            tt = torch.as_tensor(t)[:, None, None]
            a1_hat = (1.0 - tt) * da + at
            dots = torch.sum(a1 * a1_hat, dim=-1)
            sce = torch.sum(torch.nn.functional.softplus(-dots)) / B
            comps["sce"] = float(sce.detach())
            loss = loss + w_sce * sce
    else:
        comps["fm"] = float(loss.detach())
    return loss, comps


def make_train_example(
    c: Crystal, mode: Mode, prior: LengthPrior, rng: np.random.Generator
) -> TrainExample:
    c1 = crystal_to_flow(c, mode)
    c0 = sample_base(c.n_atoms, mode, prior, rng)
    t = float(rng.uniform(0.0, 1.0 - T_GUARD))
    path = sample_conditional_path(c0, c1, t, mode)
    return TrainExample(
        path=path,
        kinds=c.atoms.kinds if mode == Mode.CSP else None,
        a1_bits=c1.a if mode == Mode.DNG else None,
    )


def train(
    config: RunConfig,
    dataset: Sequence[Crystal],
    prior: LengthPrior,
    net_config: Optional[NetConfig] = None,
    callback=None,
):
    """Fit the vector field on a dataset of crystals.

    Returns ``(model, log)`` where the log holds one dict per epoch. On a
    non-finite loss, parameters are rolled back to the last completed epoch
    and a NumericError carrying the model is raised.
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    net_config = net_config or NetConfig.desk(config.mode)
    if net_config.mode != config.mode:
        raise ConfigError("network and run configs disagree on mode")
    zscore = fit_zscore(dataset, config.mode, prior, rng)
    model = VectorFieldNet(net_config, zscore)
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    log: List[dict] = []
    last_good = flat_params(model)
    for epoch in range(config.epochs):
        if config.lr_decay < 1.0 and config.epochs > 1:
            # cosine decay from learning_rate down to learning_rate * lr_decay
            frac = 0.5 * (1.0 + math.cos(math.pi * epoch / (config.epochs - 1)))
            lr = config.learning_rate * (config.lr_decay + (1.0 - config.lr_decay) * frac)
            for group in opt.param_groups:
                group["lr"] = lr
        order = rng.permutation(len(dataset))
        epoch_stats = {"loss": 0.0, "fm": 0.0, "sce": 0.0, "grad_norm": 0.0,
                       "clipped_norm": 0.0}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            examples = [
                make_train_example(dataset[i], config.mode, prior, rng) for i in idx
            ]
            by_n: dict = {}
            for ex in examples:
                by_n.setdefault(ex.path.state.n_atoms, []).append(ex)
            opt.zero_grad(set_to_none=True)
            total = torch.zeros((), dtype=torch.float64)
            comps = {"fm": 0.0, "sce": 0.0}
            for group in by_n.values():
                loss_g, comps_g = _batched_loss(model, group, config.weights)
                frac = len(group) / len(examples)
                total = total + frac * loss_g
                for key in comps:
                    comps[key] += frac * comps_g[key]
            if not torch.isfinite(total):
                set_flat_params(model, last_good)
                err = NumericError(
                    f"non-finite loss at epoch {epoch}; rolled back to last-good"
                )
                err.model = model
                err.log = log
                raise err
            total.backward()
            pre_norm = float(
                torch.linalg.norm(
                    torch.cat([p.grad.reshape(-1) for p in model.parameters()])
                )
            )
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            post_norm = float(
                torch.linalg.norm(
                    torch.cat([p.grad.reshape(-1) for p in model.parameters()])
                )
            )
            opt.step()
            epoch_stats["loss"] += float(total.detach())
            epoch_stats["fm"] += comps["fm"]
            epoch_stats["sce"] += comps["sce"]
            epoch_stats["grad_norm"] += pre_norm
            epoch_stats["clipped_norm"] = max(epoch_stats["clipped_norm"], post_norm)
            n_batches += 1
        entry = {
            "epoch": epoch,
            "loss": epoch_stats["loss"] / n_batches,
            "fm": epoch_stats["fm"] / n_batches,
            "sce": epoch_stats["sce"] / n_batches,
            "grad_norm": epoch_stats["grad_norm"] / n_batches,
            "max_clipped_norm": epoch_stats["clipped_norm"],
        }
        log.append(entry)
        last_good = flat_params(model)
        if callback is not None:
            callback(epoch, entry, model)
    return model, log


# -- end-to-end sampling ------------------------------------------------


def reconstruct_csp_many(
    model: VectorFieldNet,
    compositions: Sequence[np.ndarray],
    prior: LengthPrior,
    config: RunConfig,
    rng: np.random.Generator,
) -> List[GenerationResult]:
    """Reconstruct structures for compositions sharing one atom count."""
    if config.mode != Mode.CSP or model.config.mode != Mode.CSP:
        raise ConfigError("reconstruction requires CSP mode")
    kinds = np.stack([np.asarray(k, dtype=int) for k in compositions])
    B, n = kinds.shape
    if n > model.config.max_atoms:
        raise CapacityError(f"{n} atoms exceeds cap {model.config.max_atoms}")
    f0 = np.stack([sample_base(n, Mode.CSP, prior, rng).f for _ in range(B)])
    l0 = np.stack([sample_base(1, Mode.CSP, prior, rng).l for _ in range(B)])
    c0 = FlowState(f=f0, l=l0)
    traj = integrate(model_velocity(model, kinds=kinds), c0, config, record=False)
    out = []
    for i in range(B):
        final = FlowState(f=traj.final.f[i], l=traj.final.l[i])
        out.append(decode_state(final, Mode.CSP, kinds=kinds[i]))
    return out


def reconstruct_csp(
    model: VectorFieldNet,
    composition,
    prior: LengthPrior,
    config: RunConfig,
    rng: np.random.Generator,
) -> GenerationResult:
    return reconstruct_csp_many(model, [composition], prior, config, rng)[0]


def generate_dng_many(
    model: VectorFieldNet,
    table: AtomCountTable,
    prior: LengthPrior,
    config: RunConfig,
    rng: np.random.Generator,
    count: int,
) -> List[GenerationResult]:
    """Draw atom counts from the table, integrate the flow, decode by sign."""
    if config.mode != Mode.DNG or model.config.mode != Mode.DNG:
        raise ConfigError("de novo generation requires DNG mode")
    sizes = [sample_num_atoms(table, rng) for _ in range(count)]
    results: List[Optional[GenerationResult]] = [None] * count
    by_n: dict = {}
    for i, n in enumerate(sizes):
        by_n.setdefault(n, []).append(i)
    for n, indices in by_n.items():
        bases = [sample_base(n, Mode.DNG, prior, rng) for _ in indices]
        c0 = FlowState(
            f=np.stack([b.f for b in bases]),
            l=np.stack([b.l for b in bases]),
            a=np.stack([b.a for b in bases]),
        )
        traj = integrate(model_velocity(model), c0, config, record=False)
        for j, i in enumerate(indices):
            final = FlowState(
                f=traj.final.f[j], l=traj.final.l[j], a=traj.final.a[j]
            )
            results[i] = decode_state(final, Mode.DNG)
    return results


def generate_dng(
    model: VectorFieldNet,
    table: AtomCountTable,
    prior: LengthPrior,
    config: RunConfig,
    rng: np.random.Generator,
) -> GenerationResult:
    return generate_dng_many(model, table, prior, config, rng, 1)[0]
