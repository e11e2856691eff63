import numpy as np
import pytest
import torch

from flowcryst.basedist import LengthPrior, sample_base
from flowcryst.engine import make_train_example
from flowcryst.errors import CapacityError, ConfigError, DataError
from flowcryst.flowmatch import LossWeights
from flowcryst.net import (
    NetConfig,
    VectorFieldNet,
    ZScoreStats,
    flat_params,
    gradient,
    load_checkpoint,
    param_layout,
    save_checkpoint,
    set_flat_params,
    sinusoidal_embedding,
    training_loss,
)
from flowcryst.state import FlowState, Mode

PRIOR = LengthPrior(loc=np.log([4.0, 4.0, 4.0]), scale=[0.1, 0.1, 0.1])


def tiny(mode=Mode.CSP):
    torch.manual_seed(0)
    return VectorFieldNet(NetConfig.desk(mode, hidden_dim=16, layers=2))


def random_state(rng, n=3, mode=Mode.CSP):
    return sample_base(n, mode, PRIOR, rng)


def test_sinusoidal_embedding_values():
    emb = sinusoidal_embedding(np.array(0.0), 2)
    assert np.allclose(emb, [0, 1, 0, 1, 0, 1])
    emb = sinusoidal_embedding(np.array(0.25), 1)
    assert np.allclose(emb, [0, 1, 1, np.cos(np.pi / 2)], atol=1e-12)


def test_sinusoidal_embedding_periodic():
    x = np.array([0.3, 0.7])
    assert np.allclose(
        sinusoidal_embedding(x, 4), sinusoidal_embedding(x + 1.0, 4), atol=1e-9
    )


def test_sinusoidal_embedding_shape():
    out = sinusoidal_embedding(np.zeros((2, 5, 3)), 8)
    assert out.shape == (2, 5, 3, 18)


def test_config_validation():
    with pytest.raises(ConfigError):
        NetConfig(time_embed_dim=17)
    with pytest.raises(ConfigError):
        NetConfig(hidden_dim=0)
    cfg = NetConfig.desk(Mode.DNG)
    assert NetConfig.from_dict(cfg.to_dict()) == cfg


def test_zscore_floor():
    with pytest.raises(ConfigError):
        ZScoreStats(df_std=np.zeros(3))


def test_forward_shapes_csp():
    model = tiny()
    rng = np.random.default_rng(0)
    st = random_state(rng)
    v = model.velocity(st, 0.3, kinds=np.array([1, 2, 3]))
    assert v.df.shape == (3, 3) and v.dl.shape == (6,) and v.da is None


def test_forward_shapes_dng():
    model = tiny(Mode.DNG)
    rng = np.random.default_rng(0)
    st = random_state(rng, mode=Mode.DNG)
    v = model.velocity(st, 0.3)
    assert v.da.shape == (3, 7)


def test_velocity_batched_matches_loop():
    model = tiny()
    rng = np.random.default_rng(1)
    states = [random_state(rng) for _ in range(4)]
    kinds = np.array([1, 2, 3])
    batch = FlowState(
        f=np.stack([s.f for s in states]), l=np.stack([s.l for s in states])
    )
    vb = model.velocity(batch, 0.4, kinds=np.stack([kinds] * 4))
    for i, s in enumerate(states):
        vi = model.velocity(s, 0.4, kinds=kinds)
        assert np.allclose(vb.df[i], vi.df, atol=1e-12)
        assert np.allclose(vb.dl[i], vi.dl, atol=1e-12)


def test_capacity_cap():
    model = tiny()
    rng = np.random.default_rng(2)
    st = random_state(rng, n=25)
    with pytest.raises(CapacityError):
        model.velocity(st, 0.1, kinds=np.arange(25))


def test_permutation_equivariance():
    model = tiny()
    rng = np.random.default_rng(3)
    st = random_state(rng, n=4)
    kinds = np.array([1, 2, 3, 4])
    perm = np.array([3, 1, 0, 2])
    v = model.velocity(st, 0.6, kinds=kinds)
    st_p = FlowState(f=st.f[perm], l=st.l)
    v_p = model.velocity(st_p, 0.6, kinds=kinds[perm])
    assert np.allclose(v_p.df, v.df[perm], atol=1e-10)
    assert np.allclose(v_p.dl, v.dl, atol=1e-10)


def test_translation_invariance():
    for mode in (Mode.CSP, Mode.DNG):
        model = tiny(mode)
        rng = np.random.default_rng(4)
        st = random_state(rng, n=4, mode=mode)
        kinds = np.array([1, 2, 3, 4]) if mode == Mode.CSP else None
        v = model.velocity(st, 0.2, kinds=kinds)
        moved = st.copy()
        moved.f = np.mod(moved.f + np.array([0.31, 0.47, 0.11]), 1.0)
        v2 = model.velocity(moved, 0.2, kinds=kinds)
        assert np.allclose(v2.df, v.df, atol=1e-10)
        assert np.allclose(v2.dl, v.dl, atol=1e-10)


def test_flat_params_round_trip():
    model = tiny()
    vec = flat_params(model)
    assert vec.size == sum(int(np.prod(s)) for _, s in param_layout(model))
    set_flat_params(model, vec * 0.5)
    assert np.allclose(flat_params(model), vec * 0.5)


def test_checkpoint_round_trip(tmp_path):
    model = tiny(Mode.DNG)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, extra={"seed": 3})
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert np.array_equal(flat_params(loaded), flat_params(model))
    rng = np.random.default_rng(5)
    st = random_state(rng, mode=Mode.DNG)
    va, vb = model.velocity(st, 0.7), loaded.velocity(st, 0.7)
    assert np.array_equal(va.df, vb.df)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_training_loss_components():
    model = tiny(Mode.DNG)
    rng = np.random.default_rng(6)
    from flowcryst.synthetic import make_dng_family

    examples = [
        make_train_example(c, Mode.DNG, PRIOR, rng) for c in make_dng_family(3, rng)
    ]
    loss, comps = training_loss(model, examples, LossWeights.dng_default())
    assert float(loss.detach()) > 0 and comps["sce"] > 0
    assert np.isfinite(float(loss.detach()))


def test_gradient_finite_and_nonzero():
    model = tiny()
    rng = np.random.default_rng(7)
    c0, c1 = random_state(rng), random_state(rng)
    from flowcryst.flowmatch import sample_conditional_path
    from flowcryst.net import TrainExample

    path = sample_conditional_path(c0, c1, 0.3, Mode.CSP)
    ex = TrainExample(path=path, kinds=np.array([1, 2, 3]))
    loss, grad = gradient(model, [ex], LossWeights.csp_default())
    assert np.isfinite(loss)
    assert grad.shape == (flat_params(model).size,)
    assert np.linalg.norm(grad) > 0
