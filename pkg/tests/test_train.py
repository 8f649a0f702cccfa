from dataclasses import replace
from decimal import Decimal, getcontext

import numpy as np
import pytest
import scipy.sparse as sp

from topogcn.graph import build_normalized_adjacency, generate_two_group_graph, grouping_from_labels
from topogcn.model import GcnParams2, forward2, grad2, init_params2, init_params3, loss_l2, norm_2_4, regularizer
from topogcn.sampling import SamplingPlan, draw, effective_adjacency
from topogcn.synth import TargetSpec, gen_features, gen_labels, split
from topogcn.train import (
    DecaySchedule,
    NumericalAbort,
    TrainConfig,
    evaluate,
    paper_schedule,
    select_best_noise,
    train_three_layer,
    train_two_layer,
    with_schedule,
)


def ulps(a, b):
    return abs(a - b) / np.spacing(b)


# --- decay schedule -----------------------------------------------------------


def test_decay_schedule_exact_powers():
    getcontext().prec = 60
    for eta in (1e-3, 0.01, 0.3):
        sched = DecaySchedule(eta)
        base = Decimal(1.0 - eta)  # the exact binary value of the float
        ref = Decimal(1)
        for t in range(10_001):
            if t:
                ref *= base
            if t % 97 == 0 or t in (1, 2, 10_000):
                assert ulps(sched(t), float(ref)) <= 4


def test_decay_schedule_closed_form():
    assert DecaySchedule(1e-3)(100) == pytest.approx(0.90479, abs=1e-5)
    np.testing.assert_array_equal(DecaySchedule(0.0).values(5), np.ones(5))
    with pytest.raises(ValueError):
        DecaySchedule(0.1)(-1)


def test_paper_schedule():
    assert paper_schedule(300) == (4, 300)
    assert with_schedule(TrainConfig(), 1500).T_w == 1500
    with pytest.raises(ValueError):
        paper_schedule(3, T=8)


# --- norms and regularizer ----------------------------------------------------


def test_norm_2_4_examples():
    assert norm_2_4(np.array([[0.6], [0.8]])) == pytest.approx(1.0, rel=1e-15)
    assert norm_2_4(np.eye(2)) == pytest.approx(2 ** 0.25, rel=1e-15)
    assert 2 ** 0.25 == pytest.approx(1.1892, abs=1e-4)


def test_norm_2_4_brute_force():
    W = np.random.default_rng(0).standard_normal((7, 5))
    literal = sum(sum(W[r, c] ** 2 for r in range(7)) ** 2 for c in range(5)) ** 0.25
    assert norm_2_4(W) == pytest.approx(literal, rel=1e-12)


def test_regularizer_examples():
    assert regularizer(np.zeros((3, 2)), np.zeros((2, 2)), 0.5, 1.0, 1.0)[0] == 0.0
    unit = np.zeros((3, 2))
    unit[0, 0] = 1.0
    assert regularizer(unit, np.zeros((2, 2)), 1.0, 0.25, 9.0)[0] == 0.25
    lam = 0.8
    assert regularizer(np.eye(2), np.zeros((2, 2)), lam, 0.5, 0.0)[0] == pytest.approx(2 * 0.5 * lam ** 2)
    V = np.arange(4.0).reshape(2, 2)
    assert regularizer(np.zeros((2, 2)), V, lam, 0.0, 0.5)[0] == pytest.approx(0.5 * lam * 14.0)


def test_regularizer_gradient_finite_differences():
    rng = np.random.default_rng(1)
    W = rng.standard_normal((4, 3))
    V = rng.standard_normal((3, 2))
    args = (0.7, 0.3, 0.2)
    _, dW, dV = regularizer(W, V, *args)
    h = 1e-5
    for M, G in ((W, dW), (V, dV)):
        fd = np.zeros_like(M)
        for idx in np.ndindex(M.shape):
            old = M[idx]
            M[idx] = old + h
            fp = regularizer(W, V, *args)[0]
            M[idx] = old - h
            fm = regularizer(W, V, *args)[0]
            M[idx] = old
            fd[idx] = (fp - fm) / (2 * h)
        assert np.max(np.abs(fd - G)) / np.max(np.abs(G)) < 1e-6


# --- select_best_noise --------------------------------------------------------


def test_select_best_noise():
    assert select_best_noise(1, lambda j: 5.0) == 0
    assert select_best_noise(4, lambda j: 1.0) == 0
    vals = [3.0, 1.0, 2.0, 1.0]
    best = select_best_noise(4, vals.__getitem__)
    assert best == 1 and all(vals[best] <= v for v in vals)
    with pytest.raises(ValueError):
        select_best_noise(0, lambda j: 0.0)


# --- evaluate -----------------------------------------------------------------


def test_evaluate_loss_triple():
    p = init_params3(1, 2, 2, 2, 2, seed=0)
    p.C[...] = 0
    A = sp.identity(2, format="csr")
    X = np.ones((2, 1))
    W, V = p.W0, p.V0
    assert evaluate(W, V, p, A, X, np.zeros((2, 2)), [0, 1]) == 0.0
    labels = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert evaluate(W, V, p, A, X, labels, [1]) == 12.5
    assert evaluate(W, V, p, A, X, labels, [0, 1]) == 6.25
    with pytest.raises(ValueError):
        evaluate(W, V, p, A, X, labels, [])


# --- configs ------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(eta=1.0), dict(T=0), dict(batch=0), dict(dropout_kind="x"),
                                dict(noise_per="x"), dict(dropout_rate=1.0), dict(noise_candidates=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_theory_preset_formulas():
    cfg = TrainConfig.theory(m1=100, m2=400, eps0=0.05, C0=2.0)
    assert cfg.sigma_w == pytest.approx(100 ** -0.99)
    assert cfg.sigma_v == pytest.approx(400 ** -0.51)
    assert cfg.lambda_v == pytest.approx(2 * 0.05 * 400 / 100 ** 0.99)
    assert cfg.lambda_w == pytest.approx(2 * 0.05 * 100 ** 2.998 / 16)
    assert cfg.dropout_kind == "sign"
    assert TrainConfig.unit_l2().lambda_v == 1.0


# --- three-layer training -----------------------------------------------------


@pytest.fixture(scope="module")
def task():
    g = generate_two_group_graph(20, 180, 8, 2, seed=1)
    A = build_normalized_adjacency(g)
    gr = grouping_from_labels(g)
    X = gen_features(g.n_nodes, 4, seed=2)
    pstar = [0.7, 0.3]
    Y = gen_labels(effective_adjacency(A, gr, pstar), X, TargetSpec.random(4, 4, 2, seed=3))
    omega, test = split(g.n_nodes, 100, seed=4)
    plan = SamplingPlan.fractional(gr, pstar, 0.9)
    return A, gr, plan, X, Y, omega, test


def test_zero_step_keeps_params_and_lambda(task):
    A, gr, plan, X, Y, omega, test = task
    cfg = TrainConfig.practical(eta=0.0, T=3, T_w=5, m1=8, m2=8, dropout_on=False)
    p, rep = train_three_layer(A, gr, plan, X, Y, omega, cfg, test)
    assert not p.W.any() and not p.V.any()
    assert rep.lambda_t == [1.0, 1.0, 1.0]
    assert len(rep.train_loss) == len(rep.test_loss) == 3
    assert rep.steps == 15


def test_training_is_reproducible(task):
    A, gr, plan, X, Y, omega, test = task
    cfg = TrainConfig.practical(T=2, T_w=20, m1=16, m2=16, eta=1e-2, seed=5)
    p1, r1 = train_three_layer(A, gr, plan, X, Y, omega, cfg, test)
    p2, r2 = train_three_layer(A, gr, plan, X, Y, omega, cfg, test)
    assert r1.rows() == r2.rows()
    assert np.array_equal(p1.W, p2.W) and np.array_equal(p1.V, p2.V)
    assert np.array_equal(r1.W_out, r2.W_out) and np.array_equal(r1.V_out, r2.V_out)


def test_training_variants_run(task):
    A, gr, plan, X, Y, omega, test = task
    base = TrainConfig.theory(m1=16, m2=16, T=2, T_w=10, eta=1e-3, eps0=1e-6)
    for cfg in (base, replace(base, noise_per="outer"), replace(base, shared_sample=True),
                replace(base, noise_candidates=3)):
        _, rep = train_three_layer(A, gr, plan, X, Y, omega, cfg, test)
        assert np.all(np.isfinite(rep.train_loss))


def test_output_weights_fold_in_lambda(task):
    A, gr, plan, X, Y, omega, test = task
    cfg = TrainConfig.practical(T=3, T_w=10, m1=8, m2=8, eta=0.05, dropout_on=False)
    p, rep = train_three_layer(A, gr, plan, X, Y, omega, cfg, test)
    s = np.sqrt(rep.lambda_t[-1])
    np.testing.assert_allclose(rep.W_out, s * (p.W0 + p.W), rtol=1e-15)
    np.testing.assert_allclose(rep.V_out, s * (p.V0 + p.V), rtol=1e-15)
    assert rep.lambda_t[-1] == pytest.approx(0.95 ** 2, rel=1e-15)


def test_tiny_step_is_small(task):
    A, gr, plan, X, Y, omega, _ = task
    from topogcn.model import NoiseState, forward3, grad3, sgd_step3

    rng = np.random.default_rng(0)
    p = init_params3(X.shape[1], 8, 8, gr.n, Y.shape[1], seed=1)
    p.W[...] = rng.normal(0, 0.3, p.W.shape)
    p.V[...] = rng.normal(0, 0.3, p.V.shape)
    adjs = [draw(A, gr, plan, rng) for _ in range(3)]
    noise = NoiseState(rng.normal(0, 0.01, p.W.shape), rng.normal(0, 0.01, p.V.shape), rng.choice([-1.0, 1.0], 8))
    rows = omega[:5]
    _, c = forward3(*adjs, X, p, noise, 0.9, rows=rows)
    g = grad3(c, p, Y[rows], 1e-4, 1e-4)
    gnorm = np.sqrt(np.sum(g.dW ** 2) + np.sum(g.dV ** 2))
    W0, V0 = p.W.copy(), p.V.copy()
    eta = 1e-8
    sgd_step3(*adjs, X, p, Y[rows], rows, eta, noise, 0.9, 1e-4, 1e-4)
    delta = np.sqrt(np.sum((p.W - W0) ** 2) + np.sum((p.V - V0) ** 2))
    assert 0 < delta <= eta * (gnorm + 1)


def test_three_layer_learns_at_paper_hyperparameters(task):
    A, gr, plan, X, Y, omega, test = task
    wins = 0
    for seed in range(5):
        cfg = with_schedule(TrainConfig.practical(m1=100, m2=100, seed=seed), len(omega))
        _, rep = train_three_layer(A, gr, plan, X, Y, omega, cfg, test)
        wins += rep.final_test_loss < rep.initial_test_loss
    assert wins >= 4


def test_divergence_guard(task):
    A, gr, plan, X, Y, omega, test = task
    cfg = TrainConfig.practical(T=1, T_w=200, m1=16, m2=16, eta=0.9, dropout_on=False)
    with pytest.raises(NumericalAbort):
        train_three_layer(A, gr, plan, X, 1e3 * Y, omega, cfg, test)


def test_empty_omega_rejected(task):
    A, gr, plan, X, Y, _, _ = task
    with pytest.raises(ValueError):
        train_three_layer(A, gr, plan, X, Y, [], TrainConfig())


# --- two-layer training -------------------------------------------------------


def linear_regime(seed, N=40, d=3, m=10):
    """Two-layer instance whose hidden pre-activations stay positive, so the model is linear in W."""
    rng = np.random.default_rng(seed)
    A = build_normalized_adjacency(generate_two_group_graph(10, 30, 4, 2, seed=seed)).matrix
    X = rng.standard_normal((N, d)) * 0.1
    p = init_params2(d, m, N, 1, seed=seed)
    p.b[...] = 5.0
    teacher = GcnParams2(rng.standard_normal((d, m)), p.W0, p.b, p.Cout, N)
    Y, _ = forward2(A, X, teacher)
    return A, X, p, Y


def test_two_layer_zero_step():
    A, X, p, Y = linear_regime(0)
    cfg = TrainConfig(eta=0.0, T=20, batch=4)
    out, _ = train_two_layer(A, X, Y, np.arange(30), cfg, params=p)
    assert not out.W.any()


def test_two_layer_identity_sampler_decreases_loss():
    for seed in range(5):
        A, X, p, Y = linear_regime(seed)
        cfg = TrainConfig(eta=1e-3, T=200, batch=5, seed=seed)
        _, rep = train_two_layer(A, X, Y, np.arange(30), cfg, test=np.arange(30, 40), params=p)
        assert rep.train_loss[-1] < rep.initial_train_loss


def test_two_layer_monotone_below_inverse_curvature():
    A, X, p, Y = linear_regime(3)
    omega = np.arange(40)
    # curvature of the least-squares objective in W via power iteration on its Hessian-vector product
    _, c = forward2(A, X, p)
    M = c.M
    Cout = p.Cout

    def hvp(D):
        return M.T @ (M @ D @ Cout @ Cout.T) / M.shape[0]

    v = np.random.default_rng(0).standard_normal(p.W.shape)
    for _ in range(200):
        v = hvp(v)
        v /= np.linalg.norm(v)
    curv = float(np.vdot(v, hvp(v)))
    eta = 0.9 / curv
    losses = []
    for _ in range(30):
        out, cache = forward2(A, X, p)
        assert np.all(cache.Z > 0)
        losses.append(loss_l2(out, Y))
        p.step(grad2(cache, p, Y).dW, eta)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_two_layer_running_mean_settles():
    A, X, p, Y = linear_regime(2)
    cfg = TrainConfig(eta=1e-3, T=400, batch=5, seed=2)
    _, rep = train_two_layer(A, X, Y, np.arange(30), cfg, test=np.arange(30, 40), params=p, eval_every=1)
    run = np.cumsum(rep.test_loss) / np.arange(1, len(rep.test_loss) + 1)
    tail = run[3 * len(run) // 4:]
    assert np.all(np.isfinite(tail))
    assert np.all(np.diff(tail) <= 0)


def test_two_layer_random_sampler(task):
    A, gr, plan, X, Y, omega, test = task
    cfg = TrainConfig(eta=1e-2, T=50, batch=5, m1=16)
    sampler = lambda rng, step: draw(A, gr, plan, rng, iteration=step)  # noqa: E731
    with pytest.raises(ValueError):
        train_two_layer(sampler, X, Y, omega, cfg)
    _, rep = train_two_layer(sampler, X, Y, omega, cfg, test=test, A_eval=effective_adjacency(A, gr, plan.pstar))
    assert np.all(np.isfinite(rep.test_loss))
    assert isinstance(_, GcnParams2)
