"""Cross-module invariant suite runnable from the CLI.

Each check draws its own fixed-seed randomness so a fresh build reports the
same pass/fail pattern everywhere.
"""

from __future__ import annotations

import os
import tempfile
from typing import Callable, List, Tuple

import numpy as np

from . import geometry
from .basedist import LengthPrior, sample_base
from .crystal import (
    AtomTypes,
    Crystal,
    LatticeParams,
    SymmetryOp,
    angles_from_unconstrained,
    angles_to_unconstrained,
    apply_symmetry,
    decode_atoms,
    encode_atoms,
    matrix_from_params,
    params_from_matrix,
)
from .engine import RunConfig, conditional_velocity, crystal_to_flow, integrate
from .flowmatch import LossWeights, sample_conditional_path
from .metrics import match_structures, structural_validity, wasserstein_1d
from .net import (
    NetConfig,
    TrainExample,
    VectorFieldNet,
    flat_params,
    gradient,
    load_checkpoint,
    save_checkpoint,
)
from .state import Mode

_PRIOR = LengthPrior(loc=np.log([4.0, 5.0, 6.0]), scale=[0.1, 0.1, 0.1])


def _rng():
    return np.random.default_rng(20240613)


def check_torus_exp_log_inverse():
    rng = _rng()
    f = rng.random((64, 3))
    v = rng.uniform(-0.49, 0.49, (64, 3))
    back = geometry.torus_log(f, geometry.torus_exp(f, v))
    assert np.allclose(back, v, atol=1e-12), np.abs(back - v).max()


def check_torus_log_range():
    rng = _rng()
    d = geometry.torus_log(rng.random((256, 3)), rng.random((256, 3)))
    assert np.all(d > -0.5) and np.all(d <= 0.5)
    tie = geometry.torus_log(np.zeros((1, 3)), np.full((1, 3), 0.5))
    assert np.all(tie == 0.5), tie


def check_lattice_round_trip():
    rng = _rng()
    for _ in range(32):
        lat = LatticeParams(*rng.uniform(2, 8, 3), *rng.uniform(61, 119, 3))
        back = params_from_matrix(matrix_from_params(lat))
        assert np.allclose(back.lengths, lat.lengths, atol=1e-9)
        assert np.allclose(back.angles, lat.angles, atol=1e-9)


def check_angle_transform_round_trip():
    rng = _rng()
    ang = rng.uniform(60.001, 119.999, 128)
    back = angles_from_unconstrained(angles_to_unconstrained(ang))
    assert np.allclose(back, ang, atol=1e-9)


def check_atom_bit_codec():
    kinds = np.arange(100)
    decoded, unused = decode_atoms(encode_atoms(kinds))
    assert np.array_equal(decoded, kinds) and not np.any(unused)


def check_base_sample_domains():
    rng = _rng()
    for mode in (Mode.CSP, Mode.DNG):
        st = sample_base(6, mode, _PRIOR, rng)
        assert np.all((st.f >= 0) & (st.f < 1))
        assert np.all(st.l[:3] > 0)


def check_mean_free_target():
    rng = _rng()
    c0 = sample_base(5, Mode.CSP, _PRIOR, rng)
    c1 = sample_base(5, Mode.CSP, _PRIOR, rng)
    target = sample_conditional_path(c0, c1, 0.3, Mode.CSP).target
    assert np.allclose(target.df.mean(axis=0), 0.0, atol=1e-12)


def check_target_reaches_endpoint():
    rng = _rng()
    c0 = sample_base(4, Mode.CSP, _PRIOR, rng)
    c1 = sample_base(4, Mode.CSP, _PRIOR, rng)
    traj = integrate(
        conditional_velocity(c0, c1, Mode.CSP),
        c0,
        RunConfig(mode=Mode.CSP, steps=500),
        record=False,
    )
    assert np.allclose(traj.final.l, c1.l, atol=1e-9)
    shift = geometry.torus_log(traj.final.f, c1.f)
    assert np.ptp(shift, axis=0).max() < 1e-9  # global translation only


def check_gradient_finite():
    rng = _rng()
    import torch

    torch.manual_seed(7)
    model = VectorFieldNet(NetConfig.desk(Mode.CSP, hidden_dim=16, layers=2))
    c0 = sample_base(3, Mode.CSP, _PRIOR, rng)
    c1 = sample_base(3, Mode.CSP, _PRIOR, rng)
    path = sample_conditional_path(c0, c1, 0.4, Mode.CSP)
    ex = TrainExample(path=path, kinds=np.array([1, 2, 3]))
    loss, grad = gradient(model, [ex], LossWeights.csp_default())
    assert np.isfinite(loss) and np.all(np.isfinite(grad)) and np.linalg.norm(grad) > 0


def check_euler_determinism():
    rng = _rng()
    c0 = sample_base(4, Mode.CSP, _PRIOR, rng)
    c1 = sample_base(4, Mode.CSP, _PRIOR, rng)
    vf = conditional_velocity(c0, c1, Mode.CSP)
    cfg = RunConfig(mode=Mode.CSP, steps=100)
    a = integrate(vf, c0, cfg, record=False).final
    b = integrate(vf, c0, cfg, record=False).final
    assert np.array_equal(a.f, b.f) and np.array_equal(a.l, b.l)


def check_matcher_symmetry():
    rng = _rng()
    for _ in range(40):
        lat = LatticeParams(*rng.uniform(3, 7, 3), *rng.uniform(70, 110, 3))
        kinds = rng.integers(0, 5, 4)
        x = Crystal(AtomTypes.from_kinds(kinds), rng.random((4, 3)), lat)
        y = Crystal(
            AtomTypes.from_kinds(kinds),
            x.frac + rng.normal(0, 0.03, (4, 3)),
            lat,
        )
        a, b = match_structures(x, y), match_structures(y, x)
        assert (a is None) == (b is None)
        if a is not None:
            assert abs(a - b) < 1e-9


def check_wasserstein_triangle():
    rng = _rng()
    for _ in range(30):
        xs, ys, zs = (rng.normal(size=rng.integers(2, 12)) for _ in range(3))
        d_xy = wasserstein_1d(xs, ys)
        d_yz = wasserstein_1d(ys, zs)
        d_xz = wasserstein_1d(xs, zs)
        assert d_xz <= d_xy + d_yz + 1e-12


def check_validity_symmetry_invariance():
    rng = _rng()
    lat = LatticeParams(4, 5, 6, 80, 95, 100)
    c = Crystal(AtomTypes.from_kinds([3, 4, 5]), rng.random((3, 3)), lat)
    base = structural_validity(c)
    for op in (
        SymmetryOp.permutation([2, 0, 1]),
        SymmetryOp.translation(rng.random(3)),
        SymmetryOp.rotation(np.eye(3)),
    ):
        assert structural_validity(apply_symmetry(c, op)) == base


def check_checkpoint_round_trip():
    import torch

    torch.manual_seed(11)
    model = VectorFieldNet(NetConfig.desk(Mode.DNG, hidden_dim=16, layers=2))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.ckpt")
        save_checkpoint(path, model, extra={"seed": 0})
        loaded = load_checkpoint(path)
    assert np.array_equal(flat_params(model), flat_params(loaded))


CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("geometry.torus_exp_log_inverse", check_torus_exp_log_inverse),
    ("geometry.torus_log_range_and_cut_locus", check_torus_log_range),
    ("crystal.lattice_param_matrix_round_trip", check_lattice_round_trip),
    ("crystal.angle_transform_round_trip", check_angle_transform_round_trip),
    ("crystal.atom_bit_codec", check_atom_bit_codec),
    ("basedist.sample_domains", check_base_sample_domains),
    ("flowmatch.mean_free_target", check_mean_free_target),
    ("engine.target_integrates_to_endpoint", check_target_reaches_endpoint),
    ("net.gradient_finite", check_gradient_finite),
    ("engine.euler_determinism", check_euler_determinism),
    ("metrics.matcher_symmetry", check_matcher_symmetry),
    ("metrics.wasserstein_triangle", check_wasserstein_triangle),
    ("metrics.validity_symmetry_invariance", check_validity_symmetry_invariance),
    ("net.checkpoint_round_trip", check_checkpoint_round_trip),
]


def run_selfcheck() -> List[Tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            results.append((name, True, ""))
        except Exception as exc:
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
