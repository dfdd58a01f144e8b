import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import choi_by_basis, dense_run, enumerate_distribution, kraus_apply_loop
from qmonitor.channels import Channel, compose, povm_effect, random_channel, unitary_channel, validate_cptp
from qmonitor.circuits import UNITARIES, Circuit, Device, GateSet, Sample, random_circuits
from qmonitor.estimator import (
    DataWindow,
    EstimatorConfig,
    KrausIsometry,
    OptimizerState,
    Record,
    fit,
    herm,
    inner,
    loss,
    loss_from_isometries,
    loss_gradient,
    monitoring_run,
    project_to_tangent,
    radam_step,
    regularizer,
    retract,
)
from qmonitor.noise import depolarizing, true_gateset
from qmonitor.simulator import sample_outcomes

TRUE = true_gateset()
DEV1 = Device(1, ())
DEV2 = Device(2, ((0, 1),))
IDEAL1 = GateSet.ideal(DEV1)
IDEAL2 = GateSet.ideal(DEV2)
TRUE2 = GateSet({k: TRUE[k] for k in IDEAL2})


def record(ops, n, sample):
    return Record(Circuit(n, tuple(ops)), sample)


def random_stiefel(shape, rng):
    z = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return retract(z, np.zeros(shape))


def random_2q_circuit(rng):
    ops = [("P", 0), ("P", 1)]
    for _ in range(int(rng.integers(1, 6))):
        if rng.random() < 0.35:
            ops.append(("CX", (0, 1)))
        else:
            ops.append((str(rng.choice(["X", "SX", "RZ", "ID"])), int(rng.integers(2))))
    ops += [("M", 0), ("M", 1)]
    return Circuit(2, tuple(ops))


def layered_2q_circuit(rng):
    """Two-qubit analogue of the device generator: 0..10 layers of 1q gates then CX."""
    ops = [("P", 0), ("P", 1)]
    for _ in range(int(rng.integers(0, 11))):
        ops += [(str(rng.choice(["X", "SX", "RZ", "ID"])), q) for q in range(2)]
        ops.append(("CX", (0, 1)))
    ops += [(str(rng.choice(["X", "SX", "RZ", "ID"])), q) for q in range(2)]
    ops += [("M", 0), ("M", 1)]
    return Circuit(2, tuple(ops))


def random_2q_window(rng, n_circuits, gateset=TRUE2, shots=500, make=random_2q_circuit):
    cs = [make(rng) for _ in range(n_circuits)]
    return [Record(c, sample_outcomes(c, gateset, shots, rng)) for c in cs]


def choi_of(ch):
    """Choi matrix by explicit basis application, independent of the library."""
    return choi_by_basis(lambda r: kraus_apply_loop(ch.kraus, r), ch.dim)


# ---- data window ----------------------------------------------------------------


def test_window_keeps_most_recent():
    recs = [record([("P", 0), ("M", 0)], 1, Sample({"0": k + 1})) for k in range(5)]
    w = DataWindow(2, recs)
    assert [r.shots for r in w] == [4, 5]
    assert w.first_index == 4 and w.n_seen == 5 and len(w) == 2
    full = DataWindow(None, recs)
    assert len(full) == 5 and full.first_index == 1


def test_window_validation():
    with pytest.raises(ValueError):
        DataWindow(0)
    w = DataWindow()
    with pytest.raises(ValueError):
        w.push(record([("P", 0), ("M", 0)], 1, Sample({"01": 1})))


# ---- config ---------------------------------------------------------------------


def test_config_validation_and_round_trip():
    for bad in (dict(kraus_rank_1q=0), dict(convergence_tol=0), dict(lambda1=-1), dict(max_iters=-1)):
        with pytest.raises(ValueError):
            EstimatorConfig(**bad)
    cfg = EstimatorConfig(lambda1=5, checkpoint_schedule=[2, 4])
    assert cfg.checkpoint_schedule == (2, 4)
    back = EstimatorConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.digest() == cfg.digest()
    assert EstimatorConfig(seed=1).digest() != cfg.digest()


# ---- regularizer ------------------------------------------------------------------


def test_regularizer_at_ideal_is_zero():
    assert regularizer(GateSet.ideal(), GateSet.ideal(), 100, 200) == 0.0


@pytest.mark.parametrize("key,lam", [(("X", 0), 100.0), (("CX", (3, 4)), 200.0)])
def test_regularizer_single_entry(key, lam):
    ideal = GateSet.ideal()
    ch = compose(depolarizing(0.05, ideal[key].dim), ideal[key])
    f = np.linalg.norm(choi_of(ch) - choi_of(ideal[key]))
    g = ideal.replace({key: ch})
    assert regularizer(g, ideal, 100, 200) == pytest.approx(lam * f**2, rel=1e-12)


def test_regularizer_depolarized_closed_form():
    # ||p (1/2 - |psi><psi|)||_F^2 = 3 p^2 for an unnormalized Bell projector
    p = 0.07
    ideal = GateSet.ideal()
    g = ideal.replace({("SX", 2): compose(depolarizing(p), ideal[("SX", 2)])})
    assert regularizer(g, ideal, 100, 200) == pytest.approx(100 * 3 * p**2, rel=1e-12)


def test_regularizer_true_vs_ideal_by_independent_sum():
    ideal = GateSet.ideal()
    total = 0.0
    count = 0
    for key in TRUE:
        if key[0] == "P":
            continue
        u = UNITARIES[key[0]]
        ideal_choi = choi_by_basis(lambda r: u @ r @ u.conj().T, len(u))
        diff = choi_of(TRUE[key]) - ideal_choi
        total += (200.0 if key[0] == "CX" else 100.0) * np.sum(np.abs(diff) ** 2)
        count += 1
    assert count == 29
    assert regularizer(TRUE, ideal, 100, 200) == pytest.approx(total, rel=1e-10)


def test_regularizer_key_mismatch():
    with pytest.raises(KeyError):
        regularizer(IDEAL2, GateSet.ideal(), 1, 1)


def test_regularizer_preparation_flag():
    ideal = GateSet.ideal()
    g = ideal.replace({("P", 0): depolarizing(0.1)})
    assert regularizer(g, ideal, 1, 1) == 0.0
    assert regularizer(g, ideal, 1, 1, include_preparation=True) > 0


# ---- loss ---------------------------------------------------------------------------


def test_loss_empty_window_at_ideal():
    assert loss(GateSet.ideal(), [], EstimatorConfig()) == 0.0


def test_loss_trivial_record():
    c = Circuit(5, tuple([("P", q) for q in range(5)] + [("M", q) for q in range(5)]))
    assert loss(GateSet.ideal(), [Record(c, Sample({"00000": 100}))], EstimatorConfig()) == pytest.approx(0.0)


def test_loss_matches_enumeration_oracle():
    rng = np.random.default_rng(0)
    g = GateSet({k: random_channel(v.dim, rng, 2) if k[0] != "P" else v for k, v in IDEAL2.items()})
    window = random_2q_window(rng, 4, g)
    cfg = EstimatorConfig()
    nll = 0.0
    for r in window:
        p = enumerate_distribution(dense_run(r.circuit, g), 2, r.circuit.measured)
        nll -= sum(n * np.log(p[int(s, 2)]) for s, n in r.sample.counts.items())
    reg = 0.0
    for k in g:
        if k[0] != "P":
            diff = choi_of(g[k]) - choi_of(IDEAL2[k])
            reg += (200 if k[0] == "CX" else 100) * np.sum(np.abs(diff) ** 2)
    expected = nll + reg
    assert abs(loss(g, window, cfg, IDEAL2) - expected) < 1e-9 * max(1.0, abs(expected))


def test_batched_and_reference_loss_agree():
    rng = np.random.default_rng(1)
    cs = random_circuits(rng, 6)
    window = [Record(c, sample_outcomes(c, TRUE, 300, rng)) for c in cs]
    cfg = EstimatorConfig()
    isos = {k: KrausIsometry.from_channel(TRUE[k], 4 if k[0] != "CX" else 16).v for k in TRUE if k[0] != "P"}
    value = loss_from_isometries(isos, window, cfg)
    ref = loss(TRUE, window, cfg)
    assert abs(value - ref) < 1e-9 * abs(ref)


def test_loss_requires_coverage():
    rng = np.random.default_rng(2)
    window = random_2q_window(rng, 2)
    with pytest.raises(KeyError):
        loss(GateSet({("P", 0): IDEAL2[("P", 0)]}), window, EstimatorConfig(), IDEAL2)


# ---- gradient -------------------------------------------------------------------------


def fd_gradient(f, v, h=1e-6):
    """Entrywise central differences of a real function of a complex matrix."""
    g = np.zeros(v.shape, dtype=complex)
    for idx in np.ndindex(v.shape):
        for unit, part in ((1.0, 1.0), (1j, 1j)):
            e = np.zeros(v.shape, dtype=complex)
            e[idx] = unit
            g[idx] += part * (f(v + h * e) - f(v - h * e)) / (2 * h)
    return g


def gradient_instance(seed):
    rng = np.random.default_rng(seed)
    cfg = EstimatorConfig(kraus_rank_1q=2, kraus_rank_2q=3)
    window = random_2q_window(rng, int(rng.integers(1, 5)), shots=200)
    keys = sorted({k for r in window for k in r.circuit.ops if k[0] != "P"}, key=str)
    isos = {k: random_stiefel((3 * 4 if k[0] == "CX" else 2 * 2, 4 if k[0] == "CX" else 2), rng) for k in keys}
    # the regularizer needs every trainable key of the ideal set
    for k in IDEAL2:
        if k[0] != "P" and k not in isos:
            isos[k] = random_stiefel((12, 4) if k[0] == "CX" else (4, 2), rng)
    return window, isos, cfg


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    window, isos, cfg = gradient_instance(seed)
    _, grads = loss_gradient(isos, window, cfg, IDEAL2)
    used = {k for r in window for k in r.circuit.ops}
    for key in [k for k in isos if k in used][:3] + [next(k for k in isos if k[0] == "CX")]:
        def f(v, key=key):
            return loss_from_isometries({**isos, key: v}, window, cfg, IDEAL2)

        fd = fd_gradient(f, isos[key])
        err = np.max(np.abs(grads[key] - fd)) / np.max(np.abs(fd))
        assert err < 1e-5, (seed, key, err)


def test_gradient_on_five_qubit_windows_along_random_directions():
    rng = np.random.default_rng(3)
    cs = random_circuits(rng, 3)
    window = [Record(c, sample_outcomes(c, TRUE, 400, rng)) for c in cs]
    cfg = EstimatorConfig()
    isos = {k: KrausIsometry.from_channel(random_channel(TRUE[k].dim, rng, 2), 16 if k[0] == "CX" else 4).v
            for k in TRUE if k[0] != "P"}
    _, grads = loss_gradient(isos, window, cfg)
    h = 1e-6
    for key in [("CX", (3, 4)), ("CX", (1, 3)), ("X", 2), ("M", 4)]:
        z = rng.normal(size=isos[key].shape) + 1j * rng.normal(size=isos[key].shape)
        fp = loss_from_isometries({**isos, key: isos[key] + h * z}, window, cfg)
        fm = loss_from_isometries({**isos, key: isos[key] - h * z}, window, cfg)
        fd = (fp - fm) / (2 * h)
        assert abs(fd - inner(grads[key], z)) < 1e-5 * max(1.0, abs(fd)), key


def test_regularizer_only_gradient():
    rng = np.random.default_rng(4)
    cfg = EstimatorConfig(lambda1=3.0, lambda2=5.0)
    isos = {k: random_stiefel((16 * 4, 4) if k[0] == "CX" else (8, 2), rng) for k in IDEAL2 if k[0] != "P"}
    _, grads = loss_gradient(isos, [], cfg, IDEAL2)
    for key, v in isos.items():
        d = v.shape[1]
        lam = cfg.lambda2 if key[0] == "CX" else cfg.lambda1
        ks = v.reshape(-1, d, d)
        diff = choi_of(Channel(ks)) - choi_of(IDEAL2[key])
        # dR/dconj(K_m)[a, i] = 2 lam sum_bj D[(a,i),(b,j)] K_m[b, j], doubled for the real-part convention
        analytic = 4 * lam * np.einsum("aibj,mbj->mai", diff.reshape(d, d, d, d), ks).reshape(v.shape)
        np.testing.assert_allclose(grads[key], analytic, atol=1e-8)
        if key in (("X", 0), ("CX", (0, 1))):
            def f(x, key=key):
                return loss_from_isometries({**isos, key: x}, [], cfg, IDEAL2)

            np.testing.assert_allclose(fd_gradient(f, v), analytic, atol=1e-6 * np.max(np.abs(analytic)))


def test_repeated_gate_contributions_accumulate():
    rng = np.random.default_rng(5)
    cfg = EstimatorConfig(kraus_rank_1q=2)
    once = [record([("P", 0), ("X", 0), ("M", 0)], 1, Sample({"0": 30, "1": 70}))]
    twice = [record([("P", 0), ("X", 0), ("X", 0), ("M", 0)], 1, Sample({"0": 30, "1": 70}))]
    isos = {k: random_stiefel((4, 2), rng) for k in IDEAL1 if k[0] != "P"}
    for window in (once, twice):
        _, grads = loss_gradient(isos, window, cfg, IDEAL1)
        fd = fd_gradient(lambda v: loss_from_isometries({**isos, ("X", 0): v}, window, cfg, IDEAL1), isos[("X", 0)])
        assert np.max(np.abs(grads[("X", 0)] - fd)) < 1e-5 * np.max(np.abs(fd))


def test_stationary_at_global_minimum():
    # ideal gates reproduce deterministic data exactly and sit at the regularizer minimum
    cfg = EstimatorConfig()
    window = [record([("P", 0), ("X", 0), ("M", 0)], 1, Sample({"1": 1000}))]
    isos = {k: KrausIsometry.from_channel(IDEAL1[k], 4).v for k in IDEAL1 if k[0] != "P"}
    _, grads = loss_gradient(isos, window, cfg, IDEAL1)
    for k, g in grads.items():
        assert np.linalg.norm(project_to_tangent(isos[k], g)) < 1e-6, k


# ---- manifold primitives ---------------------------------------------------------------


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shape=st.sampled_from([(8, 2), (4, 2), (64, 4), (16, 4)]))
def test_tangent_projection(seed, shape):
    rng = np.random.default_rng(seed)
    v = random_stiefel(shape, rng)
    g = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    x = project_to_tangent(v, g)
    assert np.linalg.norm(herm(v.conj().T @ x)) < 1e-10
    np.testing.assert_allclose(project_to_tangent(v, x), x, atol=1e-12)
    normal = project_to_tangent(v, v)
    assert np.linalg.norm(normal) < 1e-12


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 10.0))
def test_retraction_stays_on_manifold(seed, scale):
    rng = np.random.default_rng(seed)
    v = random_stiefel((16, 4), rng)
    step = scale * project_to_tangent(v, rng.normal(size=v.shape) + 1j * rng.normal(size=v.shape))
    w = retract(v, step)
    assert np.linalg.norm(w.conj().T @ w - np.eye(4)) < 1e-10


def test_retraction_of_zero_step_is_identity():
    v = random_stiefel((8, 2), np.random.default_rng(0))
    np.testing.assert_allclose(retract(v, np.zeros_like(v)), v, atol=1e-14)


def test_retraction_is_second_order():
    rng = np.random.default_rng(1)
    v = random_stiefel((16, 4), rng)
    x = project_to_tangent(v, rng.normal(size=v.shape) + 1j * rng.normal(size=v.shape))
    x /= np.linalg.norm(x)
    errs = [np.linalg.norm(retract(v, t * x) - (v + t * x)) for t in (1e-2, 5e-3, 2.5e-3)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.6 < r < 4.4 for r in ratios), ratios


def test_retraction_rank_deficiency_recovers_once():
    v = np.zeros((4, 2), dtype=complex)
    v[0, 0] = 1.0
    w = retract(v, np.zeros_like(v))
    assert np.linalg.norm(w.conj().T @ w - np.eye(2)) < 1e-10


def test_kraus_isometry_round_trip():
    rng = np.random.default_rng(2)
    ch = random_channel(4, rng, 5)
    iso = KrausIsometry.from_channel(ch, 16)
    assert iso.residual() < 1e-10
    assert iso.rank == 16 and iso.dim == 4
    np.testing.assert_allclose(iso.channel().choi, ch.choi, atol=1e-10)
    np.testing.assert_allclose(iso.superop_matrix(), np.asarray(ch.superop).reshape(16, 16), atol=1e-10)


# ---- Riemannian Adam ----------------------------------------------------------------------


@pytest.mark.parametrize("shape", [(2, 2), (8, 2), (8, 4)])
def test_radam_finds_polar_factor(shape):
    rng = np.random.default_rng(0)
    a = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    u, _, vh = np.linalg.svd(a, full_matrices=False)
    target = u @ vh  # argmin ||V - A||_F over isometries
    pts = [random_stiefel(shape, rng)]
    state = OptimizerState.zeros(pts)
    for t in range(5000):
        lr = 0.05 * 1e-3 ** (t / 4999)
        g = project_to_tangent(pts[0], 2 * (pts[0] - a))
        state, pts = radam_step(state, pts, [g], lr)
        assert np.linalg.norm(pts[0].conj().T @ pts[0] - np.eye(shape[1])) < 1e-10
    assert np.linalg.norm(pts[0] - target) < 1e-6


def test_radam_zero_gradient_keeps_point():
    rng = np.random.default_rng(1)
    pts = [random_stiefel((8, 2), rng), random_stiefel((64, 4), rng)]
    state = OptimizerState.zeros(pts)
    cur = pts
    for _ in range(20):
        state, cur = radam_step(state, cur, [np.zeros_like(p) for p in cur], 0.1)
    for a, b in zip(cur, pts):
        np.testing.assert_allclose(a, b, atol=1e-14)
    assert state.step == 20


def test_radam_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        pts = [random_stiefel((8, 2), rng)]
        a = rng.normal(size=(8, 2))
        state = OptimizerState.zeros(pts)
        for _ in range(50):
            state, pts = radam_step(state, pts, [project_to_tangent(pts[0], pts[0] - a)], 0.02)
        return pts[0]

    assert np.array_equal(run(), run())


# ---- fit ------------------------------------------------------------------------------------


def test_fit_rejects_empty_window():
    with pytest.raises(ValueError):
        fit([], EstimatorConfig())


def test_fit_on_ideal_data_stays_ideal():
    rng = np.random.default_rng(0)
    window = random_2q_window(rng, 128, IDEAL2, shots=8192, make=layered_2q_circuit)
    res = fit(window, EstimatorConfig(max_iters=200), ideal=IDEAL2)
    for k in IDEAL2:
        assert np.linalg.norm(res.gateset[k].choi - IDEAL2[k].choi) < 1e-2, k


def test_fit_recovers_bit_flip_readout():
    q = 0.1
    flip = Channel([np.sqrt(1 - q) * np.eye(2), np.sqrt(q) * UNITARIES["X"]])
    truth = IDEAL1.replace({("M", 0): flip})
    rng = np.random.default_rng(1)
    window = []
    for body in ([], [("X", 0)]):
        c = Circuit(1, tuple([("P", 0)] + body + [("M", 0)]))
        window.append(Record(c, sample_outcomes(c, truth, 100_000, rng)))
    res = fit(window, EstimatorConfig(), ideal=IDEAL1)
    e01 = povm_effect(res.gateset[("M", 0)], 1)[0, 0].real
    assert abs(e01 - q) < 0.01


def test_fit_two_qubit_moves_towards_truth():
    rng = np.random.default_rng(2)
    window = random_2q_window(rng, 64, TRUE2, shots=4096, make=layered_2q_circuit)
    res = fit(window, EstimatorConfig(max_iters=300), ideal=IDEAL2)

    def mean_dist(g):
        return np.mean([np.linalg.norm(g[k].choi - TRUE2[k].choi) for k in TRUE2 if k[0] != "P"])

    assert mean_dist(res.gateset) < mean_dist(IDEAL2)
    for k in res.gateset:
        assert validate_cptp(res.gateset[k], tol=1e-8).ok
    for v in res.isometries.values():
        assert np.linalg.norm(v.conj().T @ v - np.eye(v.shape[1])) < 1e-10
    # preparation entries are never trained
    for q in range(2):
        assert res.gateset[("P", q)] is IDEAL2[("P", q)]
    tail = res.loss_trace[-max(1, len(res.loss_trace) // 10):]
    assert np.all(np.diff(tail) <= 1e-6 * abs(res.loss))
    assert res.loss == pytest.approx(loss(res.gateset, window, EstimatorConfig(), IDEAL2), rel=1e-9)


def test_regularizer_pull_from_default_start():
    c = Circuit(1, (("P", 0), ("X", 0), ("M", 0)))
    res = fit([Record(c, Sample({}))], EstimatorConfig(max_iters=100), ideal=IDEAL1)
    for k in IDEAL1:
        assert np.linalg.norm(res.gateset[k].choi - IDEAL1[k].choi) < 1e-6


def test_regularizer_pull_from_noisy_start():
    noisy = IDEAL1.replace({k: compose(depolarizing(0.1), v) for k, v in IDEAL1.items() if k[0] != "P"})
    c = Circuit(1, (("P", 0), ("X", 0), ("M", 0)))
    cfg = EstimatorConfig()
    start = regularizer(noisy, IDEAL1, cfg.lambda1, cfg.lambda2)
    res = fit([Record(c, Sample({}))], cfg, init=noisy, ideal=IDEAL1)
    assert res.loss < 1e-4 * start
    assert max(np.linalg.norm(res.gateset[k].choi - IDEAL1[k].choi) for k in IDEAL1) < 1e-3


def test_warm_start_does_not_increase_loss():
    rng = np.random.default_rng(3)
    window = random_2q_window(rng, 16, TRUE2, shots=2000)
    cfg = EstimatorConfig(max_iters=100)
    first = fit(window, cfg, ideal=IDEAL2)
    second = fit(window, cfg, init=first.gateset, ideal=IDEAL2)
    assert second.loss <= first.loss + 1e-8 * abs(first.loss)


def test_fit_is_deterministic():
    rng = np.random.default_rng(4)
    window = random_2q_window(rng, 4, TRUE2)
    cfg = EstimatorConfig(max_iters=30)
    a = fit(window, cfg, ideal=IDEAL2)
    b = fit(window, cfg, ideal=IDEAL2)
    assert a.loss_trace == b.loss_trace


def test_callback_sees_every_iteration():
    rng = np.random.default_rng(5)
    window = random_2q_window(rng, 2, TRUE2)
    seen = []
    res = fit(window, EstimatorConfig(max_iters=10), ideal=IDEAL2, callback=lambda it, v: seen.append(it))
    assert seen == list(range(1, 11))
    assert len(res.loss_trace) == 11


# ---- monitoring run -----------------------------------------------------------------------


def test_monitoring_run_schedule():
    rng = np.random.default_rng(6)
    stream = random_2q_window(rng, 4, TRUE2)
    cfg = EstimatorConfig(max_iters=10, checkpoint_schedule=(2, 4, 8))
    cps = monitoring_run(stream, cfg, ideal=IDEAL2)
    assert [cp.index for cp in cps] == [2, 4]
    assert all(cp.window_start == 1 for cp in cps)
    assert all(cp.iterations == 10 and cp.wall_time > 0 for cp in cps)


def test_monitoring_run_window_and_skip():
    rng = np.random.default_rng(7)
    stream = random_2q_window(rng, 5, TRUE2)
    cfg = EstimatorConfig(max_iters=5, checkpoint_schedule=(2, 5), window_limit=2)
    cps = monitoring_run(stream, cfg, ideal=IDEAL2)
    assert [(cp.index, cp.window_start) for cp in cps] == [(2, 1), (5, 4)]
    cps = monitoring_run(stream, cfg, ideal=IDEAL2, skip={2})
    assert [cp.index for cp in cps] == [5]


def test_monitoring_run_warm_starts():
    rng = np.random.default_rng(8)
    stream = random_2q_window(rng, 4, TRUE2)
    cfg = EstimatorConfig(max_iters=20, checkpoint_schedule=(2, 4))
    cps = monitoring_run(stream, cfg, ideal=IDEAL2)
    direct = fit(stream[:4], cfg, init=cps[0].gateset, ideal=IDEAL2)
    assert cps[1].loss == pytest.approx(direct.loss, rel=1e-12)


def test_unitary_channel_isometry_has_zero_blocks():
    iso = KrausIsometry.from_channel(unitary_channel(UNITARIES["SX"]), 4)
    assert np.count_nonzero(np.abs(iso.v[2:]) > 1e-12) == 0
