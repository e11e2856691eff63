"""Acceptance suite: one test per release criterion.

Each test prints a single PASS/FAIL line with its measured quantities so the
suite doubles as a release report (run with ``pytest -s tests/test_acceptance.py``).
The two desk-scale training criteria (toy-torus density, fixed-site CSP) take
a few minutes of CPU each; everything else is fast.
"""

import time

import numpy as np
import pytest
import torch

from flowcryst import geometry
from flowcryst.basedist import (
    AtomCountTable,
    LengthPrior,
    base_log_density,
    fit_length_prior,
    sample_base,
    sample_num_atoms,
)
from flowcryst.crystal import (
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
from flowcryst.engine import (
    RunConfig,
    conditional_velocity,
    integrate,
    make_train_example,
    model_velocity,
    reconstruct_csp_many,
    train,
)
from flowcryst.errors import DegenerateCellError
from flowcryst.flowmatch import LossWeights, cond_vf_torus_meanfree, sample_conditional_path
from flowcryst.metrics import (
    match_rate,
    match_structures,
    rate_cost,
    structural_validity,
    wasserstein_1d,
)
from flowcryst.net import NetConfig, TrainExample, VectorFieldNet, flat_params, gradient, set_flat_params
from flowcryst.state import FlowState, Mode, TangentState
from flowcryst.synthetic import (
    TOY_KIND,
    histogram_tv,
    make_perov_family,
    make_toy_torus_family,
    toy_displacement_histogram,
)

PRIOR = LengthPrior(loc=np.log([4.0, 4.0, 4.0]), scale=[0.1, 0.1, 0.1])


def report(num: int, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}")
    assert ok, detail


# 1 ---------------------------------------------------------------------


def test_criterion_1_geometry_suite():
    """exp/log inversion, log range, antisymmetry, shift equivariance,
    geodesic endpoints; 10^4 random cases each, < 10 s."""
    start = time.time()
    rng = np.random.default_rng(101)
    N = 10_000
    f = rng.random((N, 3))
    v = rng.uniform(-0.499, 0.499, (N, 3))
    inv_err = np.abs(geometry.torus_log(f, geometry.torus_exp(f, v)) - v).max()

    f0, f1 = rng.random((N, 3)), rng.random((N, 3))
    d = geometry.torus_log(f0, f1)
    range_ok = bool(np.all(d > -0.5) and np.all(d <= 0.5))

    # antisymmetry away from the cut locus (where the sign convention breaks ties)
    interior = np.abs(d) < 0.5 - 1e-9
    anti_err = np.abs((geometry.torus_log(f1, f0) + d)[interior]).max()

    tau = rng.random((N, 3))
    shift_err = np.abs(
        geometry.torus_log(geometry.wrap(f0 + tau), geometry.wrap(f1 + tau)) - d
    ).max()

    start_err = np.abs(geometry.geodesic_point(f0, f1, 0.0, "torus") - f0).max()
    end = geometry.geodesic_point(f0, f1, 1.0, "torus")
    end_err = np.abs(geometry.torus_log(end, f1)).max()
    elapsed = time.time() - start

    ok = (
        inv_err < 1e-12
        and range_ok
        and anti_err < 1e-9
        and shift_err < 1e-9
        and start_err < 1e-12
        and end_err < 1e-9
        and elapsed < 10.0
    )
    report(
        1,
        ok,
        f"geometry suite on {N} cases: inv {inv_err:.2e}, range {range_ok}, "
        f"antisym {anti_err:.2e}, shift {shift_err:.2e}, endpoints "
        f"{max(start_err, end_err):.2e}, {elapsed:.2f}s",
    )


# 2 ---------------------------------------------------------------------


def test_criterion_2_mean_free_field():
    rng = np.random.default_rng(102)
    mean_err = 0.0
    shift_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        f0, f1 = rng.random((n, 3)), rng.random((n, 3))
        tau = rng.random(3)
        v = cond_vf_torus_meanfree(f0, f1)
        mean_err = max(mean_err, np.abs(v.mean(axis=0)).max())
        v_shift = cond_vf_torus_meanfree(
            geometry.wrap(f0 + tau), geometry.wrap(f1 + tau)
        )
        shift_err = max(shift_err, np.abs(v_shift - v).max())
    single = cond_vf_torus_meanfree(rng.random((1, 3)), rng.random((1, 3)))
    ok = mean_err < 1e-12 and shift_err < 1e-12 and np.all(single == 0.0)
    report(
        2,
        ok,
        f"mean-free field: column mean {mean_err:.2e}, translation invariance "
        f"{shift_err:.2e}, n=1 exactly zero {bool(np.all(single == 0.0))}",
    )


# 3 ---------------------------------------------------------------------


def test_criterion_3_theorem_2_oracle():
    start = time.time()
    rng = np.random.default_rng(103)
    cfg = RunConfig(mode=Mode.CSP, steps=1000)
    f_err = l_err = 0.0
    for i in range(100):
        n = [1, 2, 4, 8][i % 4]
        c0 = sample_base(n, Mode.CSP, PRIOR, rng)
        c1 = sample_base(n, Mode.CSP, PRIOR, rng)
        final = integrate(conditional_velocity(c0, c1, Mode.CSP), c0, cfg, record=False).final
        shift = geometry.torus_log(final.f, c1.f)
        f_err = max(f_err, np.ptp(shift, axis=0).max() if n > 1 else 0.0)
        l_err = max(l_err, np.abs(final.l - c1.l).max())
    elapsed = time.time() - start
    ok = f_err < 1e-3 and l_err < 1e-6 and elapsed < 60.0
    report(
        3,
        ok,
        f"analytic-field integration over 100 pairs: coordinate spread "
        f"{f_err:.2e} (global translation removed), lattice {l_err:.2e}, "
        f"{elapsed:.1f}s",
    )


# 4 ---------------------------------------------------------------------


def test_criterion_4_gradient_check():
    torch.manual_seed(104)
    rng = np.random.default_rng(104)
    model = VectorFieldNet(NetConfig.desk(Mode.CSP, hidden_dim=16, layers=2))
    c0 = sample_base(3, Mode.CSP, PRIOR, rng)
    c1 = sample_base(3, Mode.CSP, PRIOR, rng)
    path = sample_conditional_path(c0, c1, 0.35, Mode.CSP)
    examples = [TrainExample(path=path, kinds=np.array([1, 2, 3]))]
    weights = LossWeights.csp_default()
    _, grad = gradient(model, examples, weights)
    theta = flat_params(model)
    idx = rng.choice(theta.size, size=200, replace=False)
    eps = 1e-6
    from flowcryst.net import training_loss

    max_rel = 0.0
    for j in idx:
        t_hi = theta.copy(); t_hi[j] += eps
        t_lo = theta.copy(); t_lo[j] -= eps
        set_flat_params(model, t_hi)
        hi = float(training_loss(model, examples, weights)[0].detach())
        set_flat_params(model, t_lo)
        lo = float(training_loss(model, examples, weights)[0].detach())
        fd = (hi - lo) / (2 * eps)
        rel = abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), 1e-6)
        max_rel = max(max_rel, rel)
    set_flat_params(model, theta)
    ok = max_rel < 1e-4
    report(4, ok, f"central finite differences on 200 parameters: max relative error {max_rel:.2e}")


# 5 ---------------------------------------------------------------------


def test_criterion_5_equivariance_suite():
    torch.manual_seed(105)
    rng = np.random.default_rng(105)
    perm_err = trans_err = 0.0
    for mode in (Mode.CSP, Mode.DNG):
        model = VectorFieldNet(NetConfig.desk(mode, hidden_dim=16, layers=2))
        st = sample_base(4, mode, PRIOR, rng)
        kinds = np.array([1, 2, 3, 4]) if mode == Mode.CSP else None
        v = model.velocity(st, 0.4, kinds=kinds)
        perm = rng.permutation(4)
        st_p = FlowState(f=st.f[perm], l=st.l, a=None if st.a is None else st.a[perm])
        v_p = model.velocity(st_p, 0.4, kinds=None if kinds is None else kinds[perm])
        perm_err = max(perm_err, np.abs(v_p.df - v.df[perm]).max(),
                       np.abs(v_p.dl - v.dl).max())
        moved = st.copy()
        moved.f = geometry.wrap(moved.f + rng.random(3))
        v_t = model.velocity(moved, 0.4, kinds=kinds)
        trans_err = max(trans_err, np.abs(v_t.df - v.df).max(), np.abs(v_t.dl - v.dl).max())

    # endpoint translation equivariance of the integrated flow
    model = VectorFieldNet(NetConfig.desk(Mode.CSP, hidden_dim=16, layers=2))
    c0 = sample_base(3, Mode.CSP, PRIOR, rng)
    kinds = np.array([1, 2, 3])
    tau = rng.random(3)
    cfg = RunConfig(steps=50)
    end = integrate(model_velocity(model, kinds=kinds), c0, cfg, record=False).final
    moved = c0.copy()
    moved.f = geometry.wrap(moved.f + tau)
    end_m = integrate(model_velocity(model, kinds=kinds), moved, cfg, record=False).final
    flow_err = np.abs(
        geometry.torus_log(geometry.wrap(end.f + tau), end_m.f)
    ).max()
    ok = perm_err < 1e-10 and trans_err < 1e-10 and flow_err < 1e-6
    report(
        5,
        ok,
        f"equivariance: permutation {perm_err:.2e}, translation {trans_err:.2e} "
        f"(both modes), integrated-endpoint translation {flow_err:.2e}",
    )


# 6 ---------------------------------------------------------------------


def test_criterion_6_toy_torus_density():
    rng = np.random.default_rng(106)
    train_set = make_toy_torus_family(6000, rng)
    prior = fit_length_prior(np.stack([c.lattice.lengths for c in train_set]))
    config = RunConfig.csp_default(
        epochs=120, batch_size=256, learning_rate=2e-3, steps=50, seed=6,
        anneal_slope=0.0, anneal_f=False,
    )
    start = time.time()
    model, _ = train(config, train_set, prior)
    train_minutes = (time.time() - start) / 60.0

    target = toy_displacement_histogram(make_toy_torus_family(20000, rng))
    comps = [np.array([TOY_KIND, TOY_KIND])] * 4000
    gen = reconstruct_csp_many(model, comps, prior, config, np.random.default_rng(60))
    hist = toy_displacement_histogram([r.crystal for r in gen if r.valid])
    tv = histogram_tv(hist, target)
    ok = tv < 0.15 and train_minutes <= 10.0
    report(
        6,
        ok,
        f"toy torus: 20x20 displacement histogram TV {tv:.4f} (< 0.15), "
        f"training {train_minutes:.1f} min",
    )


# 7 ---------------------------------------------------------------------


def test_criterion_7_synthetic_csp():
    rng = np.random.default_rng(107)
    train_set = make_perov_family(800, rng)
    test_set = make_perov_family(60, rng)
    prior = fit_length_prior(np.stack([c.lattice.lengths for c in train_set]))
    config = RunConfig.csp_default(
        epochs=300, batch_size=128, learning_rate=1.5e-3, lr_decay=0.01, seed=7
    )
    model, _ = train(config, train_set, prior)
    kinds = [c.atoms.kinds for c in test_set]
    rates = {}
    for steps in (50, 500):
        cfg = RunConfig.csp_default(steps=steps, seed=7, anneal_slope=5.0)
        gen = reconstruct_csp_many(model, kinds, prior, cfg, np.random.default_rng(70))
        rates[steps], _ = match_rate([r.crystal if r.valid else None for r in gen], test_set)
    ok = rates[50] >= 0.90 and (rates[500] - rates[50]) < 0.05
    report(
        7,
        ok,
        f"fixed-site CSP family: match rate {rates[50]:.3f} at 50 steps "
        f"(>= 0.90), {rates[500]:.3f} at 500 steps (saturation gap "
        f"{rates[500] - rates[50]:+.3f} < 0.05)",
    )


# 8 ---------------------------------------------------------------------


def test_criterion_8_anti_annealing_contracts():
    rng = np.random.default_rng(108)
    c0 = sample_base(3, Mode.DNG, PRIOR, rng)
    target = TangentState(
        df=rng.normal(size=(3, 3)), dl=rng.normal(size=6), da=rng.normal(size=(3, 7))
    )

    def frozen(state, t):
        return target

    plain = integrate(frozen, c0, RunConfig(mode=Mode.DNG, steps=30), record=False).final
    zero = integrate(
        frozen, c0,
        RunConfig(mode=Mode.DNG, steps=30, anneal_slope=0.0,
                  anneal_a=True, anneal_f=True, anneal_l=True),
        record=False,
    ).final
    bitwise = (
        np.array_equal(plain.f, zero.f)
        and np.array_equal(plain.l, zero.l)
        and np.array_equal(plain.a, zero.a)
    )
    annealed = integrate(
        frozen, c0,
        RunConfig(mode=Mode.DNG, steps=30, anneal_slope=4.0, anneal_f=True),
        record=False,
    ).final
    isolated = (
        not np.array_equal(annealed.f, plain.f)
        and np.array_equal(annealed.l, plain.l)
        and np.array_equal(annealed.a, plain.a)
    )
    ok = bitwise and isolated
    report(
        8,
        ok,
        f"anti-annealing: s'=0 bitwise-equals plain Euler {bitwise}; flagged-only "
        f"group change on a frozen field {isolated}",
    )


# 9 ---------------------------------------------------------------------


def test_criterion_9_crystal_codec_suite():
    kinds = np.arange(100)
    decoded, unused = decode_atoms(encode_atoms(kinds))
    codec_ok = bool(np.array_equal(decoded, kinds) and not unused.any())

    rng = np.random.default_rng(109)
    lat_err = 0.0
    trials = 0
    while trials < 200:
        try:
            lat = LatticeParams(*rng.uniform(2, 9, 3), *rng.uniform(62, 118, 3))
        except DegenerateCellError:
            continue
        trials += 1
        back = params_from_matrix(matrix_from_params(lat))
        lat_err = max(
            lat_err,
            np.abs(back.lengths - lat.lengths).max(),
            np.abs(back.angles - lat.angles).max(),
        )

    ang = rng.uniform(60.001, 119.999, 10_000)
    ang_err = np.abs(angles_from_unconstrained(angles_to_unconstrained(ang)) - ang).max()
    ok = codec_ok and lat_err < 1e-9 and ang_err < 1e-10
    report(
        9,
        ok,
        f"codec exhaustive over 100 classes {codec_ok}; lattice round trip "
        f"{lat_err:.2e} (< 1e-9); angle transform inverse {ang_err:.2e} (< 1e-10)",
    )


# 10 --------------------------------------------------------------------


def test_criterion_10_metrics_suite():
    rng = np.random.default_rng(110)
    lat = LatticeParams(4, 5, 6, 80, 95, 100)
    c = Crystal(AtomTypes.from_kinds([5, 8, 8, 13]), rng.random((4, 3)), lat)
    g = apply_symmetry(c, SymmetryOp.permutation(rng.permutation(4)))
    g = apply_symmetry(g, SymmetryOp.translation(rng.random(3)))
    rmsd = match_structures(c, g)
    sym_ok = rmsd is not None and rmsd < 1e-9

    w_ok = (
        wasserstein_1d([0.0], [1.0]) == 1.0
        and wasserstein_1d([0, 1], [0, 3]) == 1.0
        and wasserstein_1d([3, 4], [4, 3]) == 0.0
    )

    cube = LatticeParams(5, 5, 5, 90, 90, 90)
    val_ok = (
        structural_validity(Crystal(AtomTypes.from_kinds([1]), [[0.1] * 3], cube))
        and not structural_validity(
            Crystal(AtomTypes.from_kinds([1]), [[0.0] * 3], LatticeParams(0.4, 0.4, 0.4, 90, 90, 90))
        )
        and not structural_validity(
            Crystal(AtomTypes.from_kinds([1, 2]), [[0.0] * 3, [0.06, 0.0, 0.0]], cube)
        )
    )

    rate, cost = rate_cost(506, 10000, 1000)
    # published pair: 5.06% stability rate and 1.98 steps per stable x 10^4
    arith_ok = rate == 0.0506 and abs(cost / 1e4 - 1.98) < 0.01
    ok = sym_ok and w_ok and val_ok and arith_ok
    report(
        10,
        ok,
        f"metrics: symmetry-op RMSD {rmsd:.1e}; 2-point Wasserstein exact {w_ok}; "
        f"validity image scan {val_ok}; rate/cost ({rate}, {cost:.0f}) vs "
        f"published (0.0506, 1.98e4) {arith_ok}",
    )


# 11 --------------------------------------------------------------------


def test_criterion_11_base_distribution_suite():
    from scipy.stats import chi2

    rng = np.random.default_rng(111)
    lengths = np.exp(rng.normal(size=(400, 3)))
    fitted = fit_length_prior(lengths)
    logs = np.log(lengths)
    mle_err = max(
        np.abs(fitted.loc - logs.mean(axis=0)).max(),
        np.abs(fitted.scale - logs.std(axis=0)).max(),
    )

    # chi-square uniformity of base fractional coordinates
    draws = np.concatenate(
        [sample_base(8, Mode.CSP, PRIOR, rng).f.ravel() for _ in range(500)]
    )
    bins = 20
    observed, _ = np.histogram(draws, bins=bins, range=(0, 1))
    expected = draws.size / bins
    stat = float(((observed - expected) ** 2 / expected).sum())
    crit = float(chi2.ppf(0.999, bins - 1))
    chi_ok = stat < crit

    table = AtomCountTable.from_sizes([2] * 5 + [4] * 3 + [6] * 2)
    counts = {2: 0, 4: 0, 6: 0}
    M = 20_000
    for _ in range(M):
        counts[sample_num_atoms(table, rng)] += 1
    freq_err = max(
        abs(counts[2] / M - 0.5), abs(counts[4] / M - 0.3), abs(counts[6] / M - 0.2)
    )
    freq_ok = freq_err < 0.02

    state = sample_base(4, Mode.CSP, PRIOR, rng)
    moved = state.copy()
    moved.f = geometry.wrap(moved.f + rng.random(3))
    dens_ok = base_log_density(state, Mode.CSP, PRIOR) == base_log_density(
        moved, Mode.CSP, PRIOR
    )
    ok = mle_err < 1e-12 and chi_ok and freq_ok and dens_ok
    report(
        11,
        ok,
        f"base distribution: MLE closed form {mle_err:.1e}; uniformity chi2 "
        f"{stat:.1f} < {crit:.1f}; p(n) frequency error {freq_err:.4f} < 0.02; "
        f"p(f) translation invariance exact {dens_ok}",
    )
