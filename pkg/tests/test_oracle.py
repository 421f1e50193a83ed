import math

import numpy as np
import pytest

from leapsgd import (EmbeddedTarget, Phase1Config, Phase2Config, correlation_bound_check,
                     drift_martingale_split, hermite_coeffs, init_net, make_shifted_sigmoid,
                     mc_pop_grad, parse_target, pop_grad_nested, pop_grad_single,
                     run_algorithm1, sequence_bounds_check, theory_hyperparams)
from leapsgd.activations import square_activation
from leapsgd.oracle import (OracleDomainError, as_nested, check_nested_reduces, check_sign_law,
                            phase1_martingale_run, random_single_config)

SIG = make_shifted_sigmoid(1.0)


def uniform_w(d):
    return np.full(d, 1 / math.sqrt(d))


def test_sign_of_on_support_drift():
    d = 30
    mu2 = hermite_coeffs(SIG, 2)[2]
    for a0 in (1.0, -1.0):
        drift = pop_grad_single(uniform_w(d), range(d), (2,), SIG, a0).drift
        assert (drift[0] > 0) == (a0 * mu2 > 0)


def test_square_activation_raw_piece():
    # sigma = z^2 / 2, target x1 x2: E[y sigma'(<w, x>) x_1] = w_2
    d = 6
    rng = np.random.default_rng(0)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    t = EmbeddedTarget(parse_target("gauss: He1(z1)*He1(z2)"), d)
    N = 400_000
    X = t.sample_x(rng, N)
    v = t.f_star(X) * (X @ w) * X[:, 0]
    assert abs(v.mean() - w[1]) <= 4 * v.std() / math.sqrt(N)
    # closed form: spherical projection of the raw vector (w2, w1, 0, ...)
    raw = np.zeros(d)
    raw[0], raw[1] = w[1], w[0]
    want = raw - w * np.dot(w, raw)
    got = pop_grad_single(w, range(d), (1, 1), square_activation(0.5), 1.0).drift
    assert np.allclose(got, want, atol=1e-12)


def test_zero_support_coordinate_kills_off_support():
    d = 12
    w = np.full(d, 1.0)
    w[0] = 0.0
    w /= np.linalg.norm(w)
    res = pop_grad_single(w, range(d), (2, 1), SIG, 1.0)
    assert np.all(res.decomposition["off_support"] == 0)
    assert np.all(np.isfinite(res.drift))


def test_domain_errors():
    with pytest.raises(OracleDomainError):
        pop_grad_single(uniform_w(5), range(5), (1,), SIG, 1.0)
    with pytest.raises(OracleDomainError):
        pop_grad_nested(uniform_w(5), range(5), [(1, 0), (0, 2)], SIG, 1.0)
    with pytest.raises(ValueError):
        pop_grad_single(np.ones(5), range(5), (2,), SIG, 1.0)


def test_zero_second_layer():
    d = 10
    assert np.all(pop_grad_nested(uniform_w(d), range(d), [(1,), (1, 2)], SIG, 0.0).drift == 0)
    t = EmbeddedTarget(parse_target("gauss: He2(z1)"), d)
    mean, _ = mc_pop_grad(uniform_w(d), range(d), t, SIG, 0.0, N=1000, rng=np.random.default_rng(0))
    assert np.all(mean == 0)


def test_nested_levels_labeled_and_summed():
    d = 10
    w = uniform_w(d)
    res = pop_grad_nested(w, range(d), [(1,), (1, 2)], SIG, 1.0)
    assert set(res.decomposition) == {"level1", "level2"}
    assert np.array_equal(res.decomposition["level1"] + res.decomposition["level2"], res.drift)


def test_nested_vs_mc():
    d = 8
    h = parse_target("gauss: He1(z1) + He1(z1)*He2(z2)")
    levels, coeffs = as_nested(h)
    t = EmbeddedTarget(h, d)
    rng = np.random.default_rng(3)
    w = rng.standard_normal(d)
    w[:2] = np.abs(w[:2]) + 1
    w /= np.linalg.norm(w)
    exact = pop_grad_nested(w, range(d), levels, SIG, 1.0, coeffs=coeffs).drift
    mc, se = mc_pop_grad(w, range(d), t, SIG, 1.0, N=1_000_000, rng=rng)
    assert np.all(np.abs(mc - exact) <= 4.5 * se)
    assert np.sign(mc[1]) == np.sign(exact[1])


def test_single_vs_mc_small():
    rng = np.random.default_rng(1)
    for c in range(3):
        k, in_s, w, a0 = random_single_config(rng, 20)
        exact = pop_grad_single(w, in_s, k, SIG, a0).drift
        t = EmbeddedTarget(parse_target("gauss: " + "*".join(
            f"He{e}(z{i + 1})" for i, e in enumerate(k) if e)), 20)
        mc, se = mc_pop_grad(w, in_s, t, SIG, a0, N=300_000, rng=np.random.default_rng(100 + c))
        assert np.all(np.abs(mc - exact) <= 4.5 * se), k


def test_mc_se_shrinks():
    d = 6
    t = EmbeddedTarget(parse_target("gauss: He2(z1)"), d)
    _, se1 = mc_pop_grad(uniform_w(d), range(d), t, SIG, 1.0, N=100_000, rng=np.random.default_rng(0))
    _, se2 = mc_pop_grad(uniform_w(d), range(d), t, SIG, 1.0, N=200_000, rng=np.random.default_rng(1))
    assert np.all(np.abs(se2 / se1 - 1 / math.sqrt(2)) < 0.05)


def test_nested_single_level_bitwise():
    assert check_nested_reduces(seed=4)["passed"]


def test_sign_law():
    rep = check_sign_law(seed=2)
    assert rep["passed"] and rep["checked"] > 50


def test_split_of_pure_drift():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((50, 4))
    sp = drift_martingale_split(D, list(range(50)), lambda s: D[s])
    assert np.all(sp.martingale_increment == 0)


def test_split_of_pure_noise():
    rng = np.random.default_rng(1)
    U = rng.standard_normal((80, 3))
    sp = drift_martingale_split(U, [None] * 80, lambda s: np.zeros(3))
    assert np.all(sp.cum_drift == 0)
    assert np.array_equal(sp.cum_martingale, np.cumsum(U, axis=0))
    assert np.array_equal(sp.running_max[-1], np.abs(np.cumsum(U, axis=0)).max(axis=0))


def test_split_reconstructs_bitwise():
    # updates dominated by their noise, as in real runs
    rng = np.random.default_rng(2)
    U = rng.standard_normal((2000, 5)) * np.logspace(-8, 3, 5)
    D = U * rng.uniform(-1, 1, U.shape)
    sp = drift_martingale_split(U, list(range(2000)), lambda s: D[s])
    assert np.array_equal(sp.drift_part + sp.martingale_increment, U)
    assert np.all(np.abs(sp.drift_part - D) <= np.spacing(np.abs(U)))


def test_split_under_cancellation_stays_within_ulps():
    # |drift| >> |update|: some sums have no exact float64 split
    rng = np.random.default_rng(3)
    U = rng.standard_normal((500, 4))
    D = 50 * U
    sp = drift_martingale_split(U, list(range(500)), lambda s: D[s])
    err = np.abs(sp.drift_part + sp.martingale_increment - U)
    assert np.all(err <= 64 * np.spacing(np.abs(U)))


def test_split_of_real_run_is_exact():
    d, M = 32, 4
    t = EmbeddedTarget(parse_target("gauss: He2(z1)"), d)
    rng = np.random.default_rng(1)
    net = init_net(M, d, 1 / (M * d), 0.0, rng)
    _, eta = theory_hyperparams(d, 2, 1 / (M * d))
    rec = []
    run_algorithm1(t, net, Phase1Config(eta, 400), Phase2Config(1.0, 0), rng=rng, act=SIG,
                   eval_size=16, callback=lambda s, Wb, S, u, *_: rec.append((Wb, S, u.copy())))
    for j in range(M):
        U = np.array([u[j] for _, _, u in rec])
        states = [(Wb[j], S[j]) for Wb, S, _ in rec]
        sp = drift_martingale_split(
            U, states, lambda st: eta * pop_grad_single(st[0], st[1], (2,), SIG, net.a[j]).drift)
        assert np.array_equal(sp.drift_part + sp.martingale_increment, U)


def test_split_length_mismatch():
    with pytest.raises(ValueError):
        drift_martingale_split(np.zeros((3, 2)), [0, 1], lambda s: np.zeros(2))


def test_phase1_martingale_small():
    worst, splits = phase1_martingale_run(d=32, M=4, seed=0, T=500)
    assert len(splits) == 4
    for sp in splits:
        assert sp.martingale_increment.shape == (500, 32)
    assert worst <= 1 / math.sqrt(32)


def test_sequence_k2_exact():
    rep = sequence_bounds_check(0.1, 0.01, 0.1, 0.01, 2, 2000, 1.0)
    assert rep.ok and rep.steps_checked == 2000


def test_sequence_k3_upper():
    rep = sequence_bounds_check(0.05, 0.005, 0.1, 0.01, 3, 10_000, 0.5,
                                rng=np.random.default_rng(0))
    assert rep.ok


def test_sequence_overflow_horizon():
    rep = sequence_bounds_check(1.0, 1.0, 2.0, 2.0, 2, 10_000, 1.0)
    assert rep.ok and rep.horizon_reached


def test_sequence_rejects_bad_params():
    with pytest.raises(ValueError):
        sequence_bounds_check(0.2, 0.1, 0.1, 0.1, 2, 10, 1.0)
    with pytest.raises(ValueError):
        sequence_bounds_check(0.1, 0.1, 0.1, 0.1, 1, 10, 1.0)


def test_correlation_zero_coordinate():
    w = np.array([0.0, 0.6, 0.8, 0.0])
    rep = correlation_bound_check(w, 2, SIG, N=20_000, rng=np.random.default_rng(0))
    assert rep["exact"] == 0.0 and rep["bound_holds"]


def test_correlation_bound_random():
    rng = np.random.default_rng(5)
    w = rng.standard_normal(8)
    w /= np.linalg.norm(w)
    rep = correlation_bound_check(w, 3, SIG, N=1_000_000, rng=rng)
    assert rep["bound_holds"] and rep["identity_holds"]
