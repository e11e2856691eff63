"""Parametric vector field: an EGNN-style message-passing network over the
fully connected atom graph, with checkpoint serialization and an exact
reverse-mode gradient of the training loss."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .errors import CapacityError, ConfigError, DomainError, NumericError, ShapeError
from .flowmatch import LossWeights, PathSample, fm_loss, sce_loss
from .state import ATOM_BITS, ATOM_CLASSES, FlowState, Mode, TangentState

TWO_PI = 2.0 * np.pi
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"FLOWCRYST-CKPT"


def sinusoidal_embedding(x, n_freq: int):
    """Periodic features ``(sin 2pi k x, cos 2pi k x)`` for k = 0..n_freq.

    Each scalar entry maps to an interleaved vector of length
    ``2 (n_freq + 1)``; the output has shape ``x.shape + (2 (n_freq + 1),)``.
    """
    if n_freq < 0:
        raise DomainError("n_freq must be nonnegative")
    if torch.is_tensor(x):
        k = torch.arange(n_freq + 1, dtype=x.dtype)
        arg = TWO_PI * x[..., None] * k
        emb = torch.stack([torch.sin(arg), torch.cos(arg)], dim=-1)
        return emb.reshape(*arg.shape[:-1], -1)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input to sinusoidal embedding")
    arg = TWO_PI * x[..., None] * np.arange(n_freq + 1)
    emb = np.stack([np.sin(arg), np.cos(arg)], axis=-1)
    return emb.reshape(*arg.shape[:-1], -1)


@dataclass
class NetConfig:
    """Architecture hyperparameters; the defaults follow the full profile."""

    mode: Mode = Mode.CSP
    hidden_dim: int = 512
    layers: int = 6
    n_freq: int = 8
    time_embed_dim: int = 256
    count_embed_dim: int = 16
    activation: str = "silu"
    layer_norm: bool = True
    max_atoms: int = 24

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode(self.mode)
        for name in ("hidden_dim", "layers", "time_embed_dim", "count_embed_dim", "max_atoms"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.time_embed_dim % 2 != 0:
            raise ConfigError("time_embed_dim must be even")

    @classmethod
    def desk(cls, mode: Mode = Mode.CSP, **overrides) -> "NetConfig":
        """Small profile for laptop-scale experiments; same architecture shape."""
        params = dict(
            mode=mode, hidden_dim=64, layers=3, n_freq=8, time_embed_dim=64
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


@dataclass
class ZScoreStats:
    """Standardization statistics for the lattice input and the output heads."""

    lattice_mean: np.ndarray = field(default_factory=lambda: np.zeros(6))
    lattice_std: np.ndarray = field(default_factory=lambda: np.ones(6))
    df_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    df_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    dl_mean: np.ndarray = field(default_factory=lambda: np.zeros(6))
    dl_std: np.ndarray = field(default_factory=lambda: np.ones(6))
    da_mean: np.ndarray = field(default_factory=lambda: np.zeros(ATOM_BITS))
    da_std: np.ndarray = field(default_factory=lambda: np.ones(ATOM_BITS))

    def __post_init__(self):
        for name in dataclasses.asdict(self):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if name.endswith("_std") and np.any(arr < 1e-8):
                raise ConfigError(f"{name} below 1e-8")

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScoreStats":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def _mlp(dims: Sequence[int], layer_norm: bool = False) -> nn.Sequential:
    blocks: List[nn.Module] = []
    for i in range(len(dims) - 1):
        blocks.append(nn.Linear(dims[i], dims[i + 1], dtype=torch.float64))
        if i < len(dims) - 2:
            blocks.append(nn.SiLU())
            if layer_norm:
                blocks.append(nn.LayerNorm(dims[i + 1], dtype=torch.float64))
    return nn.Sequential(*blocks)


def _torus_log_t(fi, fj):
    w = TWO_PI * (fj - fi)
    return torch.atan2(torch.sin(w), torch.cos(w)) / TWO_PI


def _sigmoid_angles(y):
    return 60.0 / (1.0 + torch.exp(-y)) + 60.0


def _lattice_matrix_t(l_flow):
    """Batched canonical lattice matrix from flow-space lattice vectors.

    Mid-integration states can carry non-positive lengths; they are floored
    for featurization only.
    """
    lengths = torch.clamp(l_flow[..., :3], min=1e-6)
    ang = torch.deg2rad(_sigmoid_angles(l_flow[..., 3:]))
    ca, cb, cg = ang[..., 0].cos(), ang[..., 1].cos(), ang[..., 2].cos()
    sg = ang[..., 2].sin()
    a, b, c = lengths[..., 0], lengths[..., 1], lengths[..., 2]
    cx = c * cb
    cy = c * (ca - cb * cg) / sg
    cz = torch.sqrt(torch.clamp(c**2 - cx**2 - cy**2, min=1e-12))
    zero = torch.zeros_like(a)
    rows = [
        torch.stack([a, b * cg, cx], dim=-1),
        torch.stack([zero, b * sg, cy], dim=-1),
        torch.stack([zero, zero, cz], dim=-1),
    ]
    return torch.stack(rows, dim=-2)  # (..., 3, 3), columns are lattice vectors


class VectorFieldNet(nn.Module):
    """Message-passing velocity model over the fully connected atom graph.

    Forward tensors are batched with a shared atom count: atom representation
    ``(B, n, A)`` (one-hot classes for CSP, analog bits for DNG), coordinates
    ``(B, n, 3)``, flow-space lattice ``(B, 6)``, and times ``(B,)``.
    """

    def __init__(self, config: NetConfig, zscore: Optional[ZScoreStats] = None):
        super().__init__()
        self.config = config
        self.zscore = zscore or ZScoreStats()
        H = config.hidden_dim
        atom_in = ATOM_BITS if config.mode == Mode.DNG else ATOM_CLASSES
        self.node_embed = nn.Linear(atom_in, H, dtype=torch.float64)
        edge_dim = 3 * 2 * (config.n_freq + 1)
        t_dim = config.time_embed_dim
        msg_in = 2 * H + 6 + edge_dim + t_dim
        if config.mode == Mode.DNG:
            msg_in += config.count_embed_dim + 3  # count embedding + direction cosines
            self.count_embed = nn.Embedding(
                config.max_atoms + 1, config.count_embed_dim, dtype=torch.float64
            )
        self.msg_mlps = nn.ModuleList(
            _mlp([msg_in, H, H], config.layer_norm) for _ in range(config.layers)
        )
        self.node_mlps = nn.ModuleList(
            _mlp([2 * H + t_dim, H, H], config.layer_norm) for _ in range(config.layers)
        )
        self.head_f = _mlp([H, H, 3])
        lat_in = 2 * H if config.mode == Mode.DNG else H
        self.head_l = _mlp([lat_in, H, 6])
        if config.mode == Mode.DNG:
            self.head_a = _mlp([H, H, ATOM_BITS])

    # -- tensor helpers -------------------------------------------------

    def _zs(self, name):
        return (
            torch.as_tensor(getattr(self.zscore, name + "_mean")),
            torch.as_tensor(getattr(self.zscore, name + "_std")),
        )

    def forward(self, atom_rep, f, l, t):
        cfg = self.config
        atom_rep = torch.as_tensor(atom_rep, dtype=torch.float64)
        f = torch.as_tensor(f, dtype=torch.float64)
        l = torch.as_tensor(l, dtype=torch.float64)
        t = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
        B, n = f.shape[0], f.shape[1]
        if n > cfg.max_atoms:
            raise CapacityError(f"{n} atoms exceeds cap {cfg.max_atoms}")
        lat_mean, lat_std = self._zs("lattice")
        l_z = (l - lat_mean) / lat_std
        temb = sinusoidal_embedding(t, cfg.time_embed_dim // 2 - 1)  # (B, t_dim)

        diff = f[:, None, :, :] - f[:, :, None, :]  # entry [i, j] = f_j - f_i
        if cfg.mode == Mode.DNG:
            edge_disp = _torus_log_t(f[:, :, None, :], f[:, None, :, :])
        else:
            edge_disp = diff
        edge_feat = sinusoidal_embedding(edge_disp, cfg.n_freq).reshape(B, n, n, -1)

        per_edge = [
            edge_feat,
            l_z[:, None, None, :].expand(B, n, n, 6),
            temb[:, None, None, :].expand(B, n, n, temb.shape[-1]),
        ]
        if cfg.mode == Mode.DNG:
            M = _lattice_matrix_t(l)  # (B, 3, 3)
            d_min = edge_disp
            cart = torch.einsum("bxy,bijy->bijx", M, d_min)
            cart_norm = torch.linalg.norm(cart, dim=-1, keepdim=True)
            col_norm = torch.linalg.norm(M, dim=-2)  # (B, 3)
            cos = torch.einsum("bijx,bxk->bijk", cart, M) / (
                torch.clamp(cart_norm, min=1e-12) * col_norm[:, None, None, :]
            )
            cos = torch.where(cart_norm > 1e-9, cos, torch.zeros_like(cos))
            cemb = self.count_embed(torch.full((B,), n, dtype=torch.long))
            per_edge.append(cos)
            per_edge.append(cemb[:, None, None, :].expand(B, n, n, cemb.shape[-1]))

        h = self.node_embed(atom_rep)  # (B, n, H)
        for msg_mlp, node_mlp in zip(self.msg_mlps, self.node_mlps):
            hi = h[:, :, None, :].expand(B, n, n, h.shape[-1])
            hj = h[:, None, :, :].expand(B, n, n, h.shape[-1])
            m_ij = msg_mlp(torch.cat([hi, hj, *per_edge], dim=-1))
            m_i = m_ij.sum(dim=2)
            h = h + node_mlp(
                torch.cat([h, m_i, temb[:, None, :].expand(B, n, temb.shape[-1])], dim=-1)
            )

        df_mean, df_std = self._zs("df")
        dl_mean, dl_std = self._zs("dl")
        df = df_mean + df_std * self.head_f(h)
        pooled = h.mean(dim=1)
        if cfg.mode == Mode.DNG:
            pooled = torch.cat([pooled, h.sum(dim=1)], dim=-1)
        dl = dl_mean + dl_std * self.head_l(pooled)
        da = None
        if cfg.mode == Mode.DNG:
            da_mean, da_std = self._zs("da")
            da = da_mean + da_std * self.head_a(h)
        for out in (df, dl) + ((da,) if da is not None else ()):
            if not torch.all(torch.isfinite(out)):
                raise NumericError("non-finite network output")
        return df, dl, da

    # -- numpy-facing convenience ---------------------------------------

    def atom_input(self, state: FlowState, kinds=None):
        """Atom representation tensor for a (possibly batched) flow state."""
        if self.config.mode == Mode.DNG:
            if state.a is None:
                raise ConfigError("DNG forward requires atom bits in the state")
            return torch.as_tensor(state.a, dtype=torch.float64)
        if kinds is None:
            raise ConfigError("CSP forward requires conditioning atom kinds")
        kinds = np.asarray(kinds, dtype=int)
        onehot = np.eye(ATOM_CLASSES)[kinds]
        return torch.as_tensor(onehot, dtype=torch.float64)

    def velocity(self, state: FlowState, t, kinds=None) -> TangentState:
        """No-grad velocity evaluation on numpy states (batched or single)."""
        batched = state.f.ndim == 3
        f = state.f if batched else state.f[None]
        l = state.l if batched else state.l[None]
        a_in = self.atom_input(state, kinds)
        if a_in.ndim == 2:
            a_in = a_in[None].expand(f.shape[0], -1, -1) if batched else a_in[None]
        t_arr = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (f.shape[0],)).copy()
        with torch.no_grad():
            df, dl, da = self.forward(a_in, f, l, t_arr)
        df, dl = df.numpy(), dl.numpy()
        da = None if da is None else da.numpy()
        if not batched:
            df, dl = df[0], dl[0]
            da = None if da is None else da[0]
        return TangentState(df=df, dl=dl, da=da)


# -- parameter vector and checkpoint I/O --------------------------------


def param_layout(model: VectorFieldNet) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in model.named_parameters()]


def flat_params(model: VectorFieldNet) -> np.ndarray:
    with torch.no_grad():
        return torch.cat([p.reshape(-1) for _, p in model.named_parameters()]).numpy().copy()


def set_flat_params(model: VectorFieldNet, vec):
    vec = np.asarray(vec, dtype=float)
    expected = sum(int(np.prod(s)) for _, s in param_layout(model))
    if vec.size != expected:
        raise ShapeError(f"parameter vector has {vec.size} entries, expected {expected}")
    offset = 0
    with torch.no_grad():
        for _, p in model.named_parameters():
            k = p.numel()
            p.copy_(torch.as_tensor(vec[offset : offset + k]).reshape(p.shape))
            offset += k


def save_checkpoint(path, model: VectorFieldNet, extra: Optional[dict] = None):
    """Versioned checkpoint: JSON header + little-endian float64 parameters."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "zscore": model.zscore.to_dict(),
        "layout": [[name, list(shape)] for name, shape in param_layout(model)],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = flat_params(model).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(params)


def load_checkpoint(path) -> VectorFieldNet:
    from .errors import DataError

    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC) + 1)
        if magic != CHECKPOINT_MAGIC + b"\n":
            raise DataError(f"{path} is not a flowcryst checkpoint")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        raw = fh.read()
    if header["version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {header['version']}")
    config = NetConfig.from_dict(header["config"])
    model = VectorFieldNet(config, ZScoreStats.from_dict(header["zscore"]))
    vec = np.frombuffer(raw, dtype="<f8").copy()
    set_flat_params(model, vec)
    return model


# -- training gradient --------------------------------------------------


@dataclass
class TrainExample:
    """One supervised pair plus the conditioning needed by the network."""

    path: PathSample
    kinds: Optional[np.ndarray] = None  # CSP conditioning
    a1_bits: Optional[np.ndarray] = None  # DNG endpoint bits for the SCE term


def training_loss(
    model: VectorFieldNet, examples: Sequence[TrainExample], weights: LossWeights
) -> Tuple[torch.Tensor, dict]:
    """Mean loss over examples; returns the scalar and per-component floats."""
    mode = model.config.mode
    _, _, _, w_sce = weights.normalized(mode)
    total = torch.zeros((), dtype=torch.float64)
    comps = {"fm": 0.0, "sce": 0.0}
    for ex in examples:
        st = ex.path.state
        a_in = model.atom_input(st, ex.kinds)
        df, dl, da = model.forward(
            a_in[None] if a_in.ndim == 2 else a_in,
            st.f[None],
            st.l[None],
            np.array([ex.path.t]),
        )
        pred = TangentState(df=df[0], dl=dl[0], da=None if da is None else da[0])
        loss = fm_loss(pred, ex.path.target, weights, st.n_atoms, mode)
        comps["fm"] += float(loss.detach())
        if mode == Mode.DNG and w_sce > 0:
            if ex.a1_bits is None:
                raise ConfigError("SCE term requires endpoint bits on each example")
            sce = sce_loss(ex.a1_bits, pred.da, st.a, ex.path.t)
            comps["sce"] += float(sce.detach())
            loss = loss + w_sce * sce
        total = total + loss
    k = max(len(examples), 1)
    comps = {name: v / k for name, v in comps.items()}
    return total / k, comps


def gradient(
    model: VectorFieldNet, examples: Sequence[TrainExample], weights: LossWeights
) -> Tuple[float, np.ndarray]:
    """Exact reverse-mode gradient of the mean training loss."""
    model.zero_grad(set_to_none=True)
    loss, _ = training_loss(model, examples, weights)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite training loss {float(loss)}")
    loss.backward()
    grads = []
    for _, p in model.named_parameters():
        g = p.grad
        grads.append(
            torch.zeros(p.numel(), dtype=torch.float64) if g is None else g.reshape(-1)
        )
    return float(loss.detach()), torch.cat(grads).numpy().copy()
