import numpy as np
import pytest

from oracles import rand_channels, rand_precoder, rand_state, unit_params
from subris.fp import (FpAux, InfeasibleBudget, assemble_a_problem,
                       assemble_amp_terms, assemble_w_problem, f1_objective_nats,
                       f2_objective, update_eta, update_mu)
from subris.model import (ChannelSet, Precoder, RisState, SystemDims,
                          all_sinrs, build_reflection_operator, ris_frobenius_power)


def _setup(seed=0, N=4, K=3, M=8, L=4, **kw):
    rng = np.random.default_rng(seed)
    dims = SystemDims(N=N, K=K, M=M, L=L)
    params = unit_params(dims, **kw)
    ch = rand_channels(rng, dims)
    op = build_reflection_operator(rand_state(rng, dims), dims)
    prec = rand_precoder(rng, dims)
    return rng, dims, params, ch, op, prec


def test_update_mu_zero_precoder():
    _, dims, params, ch, op, _ = _setup()
    prec0 = Precoder(np.zeros((dims.K, dims.N), dtype=complex))
    np.testing.assert_allclose(update_mu(ch, op, prec0, params), np.zeros(dims.K))


def test_update_mu_equals_sinr():
    _, dims, params, ch, op, prec = _setup(seed=5)
    np.testing.assert_allclose(update_mu(ch, op, prec, params),
                               all_sinrs(ch, op, prec, params), rtol=1e-12)


def test_update_mu_maximises_dual_lift():
    _, dims, params, ch, op, prec = _setup(seed=9)
    mu = update_mu(ch, op, prec, params)
    base = f1_objective_nats(ch, op, prec, mu, params)
    for k in range(dims.K):
        for d in (1e-3, -1e-3):
            pert = mu.copy()
            pert[k] = max(pert[k] + d, 0.0)
            assert f1_objective_nats(ch, op, prec, pert, params) < base


def test_update_eta_zero_precoder():
    _, dims, params, ch, op, _ = _setup()
    prec0 = Precoder(np.zeros((dims.K, dims.N), dtype=complex))
    aux = FpAux(np.zeros(dims.K), np.zeros(dims.K))
    np.testing.assert_allclose(update_eta(ch, op, prec0, aux, params), np.zeros(dims.K))


def test_update_eta_single_user_closed_form():
    rng = np.random.default_rng(2)
    dims = SystemDims(N=3, K=1, M=2, L=1)
    params = unit_params(dims, sigma_sq=0.7)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    ch = ChannelSet(h[None, :], np.zeros((2, 3)), np.zeros((1, 2)))
    op = build_reflection_operator(RisState(np.ones(2), np.zeros(1)), dims)
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    prec = Precoder(w[None, :])
    mu = update_mu(ch, op, prec, params)
    eta = update_eta(ch, op, prec, FpAux(mu, np.zeros(1)), params)
    hw = np.conj(h) @ w
    expected = np.sqrt(1 + mu[0]) * hw / (np.abs(hw) ** 2 + 0.7)
    assert eta[0] == pytest.approx(expected, rel=1e-12)


def test_update_eta_stationary_for_f2():
    _, dims, params, ch, op, prec = _setup(seed=21)
    mu = update_mu(ch, op, prec, params)
    eta = update_eta(ch, op, prec, FpAux(mu, np.zeros(dims.K)), params)
    aux = FpAux(mu, eta)
    base = f2_objective(ch, op, prec, aux, params)
    # central-difference complex gradient residual
    delta = 1e-6
    for k in range(dims.K):
        for step in (delta, 1j * delta):
            up = eta.copy(); up[k] += step
            dn = eta.copy(); dn[k] -= step
            diff = (f2_objective(ch, op, prec, FpAux(mu, up), params)
                    - f2_objective(ch, op, prec, FpAux(mu, dn), params)) / (2 * delta)
            assert abs(diff) < 1e-8 * max(1.0, abs(base))
        # concavity: any perturbation lowers f2
        pert = eta.copy(); pert[k] += 1e-2 * (1 + 1j)
        assert f2_objective(ch, op, prec, FpAux(mu, pert), params) < base


def test_f2_zero_aux_is_zero():
    _, dims, params, ch, op, prec = _setup()
    aux = FpAux(np.zeros(dims.K), np.zeros(dims.K))
    assert f2_objective(ch, op, prec, aux, params) == pytest.approx(0.0, abs=1e-15)


def test_f2_tightness_at_optimal_aux():
    for seed in range(8):
        _, dims, params, ch, op, prec = _setup(seed=seed)
        mu = update_mu(ch, op, prec, params)
        eta = update_eta(ch, op, prec, FpAux(mu, np.zeros(dims.K)), params)
        f2 = f2_objective(ch, op, prec, FpAux(mu, eta), params)
        rate = float(np.sum(np.log2(1 + all_sinrs(ch, op, prec, params))))
        assert f2 == pytest.approx(rate, abs=1e-10)


def test_assemble_w_problem_structure():
    _, dims, params, ch, op, prec = _setup(seed=31)
    aux0 = FpAux(np.ones(dims.K), np.zeros(dims.K))
    p0 = assemble_w_problem(ch, op, aux0, params)
    assert np.all(p0.x == 0) and np.abs(p0.Y).max() == 0

    rng = np.random.default_rng(32)
    dims1 = SystemDims(N=3, K=1, M=4, L=2)
    params1 = unit_params(dims1)
    ch1 = rand_channels(rng, dims1)
    op1 = build_reflection_operator(rand_state(rng, dims1), dims1)
    mu = np.array([0.8])
    eta = np.array([0.3 - 0.2j])
    p1 = assemble_w_problem(ch1, op1, FpAux(mu, eta), params1)
    from subris.model import composite_channel
    h = composite_channel(0, ch1, op1)
    np.testing.assert_allclose(p1.x, 2 * np.sqrt(1.8) * eta[0] * h, rtol=1e-12)


def test_assemble_w_problem_offset_oracle():
    _, dims, params, ch, op, prec = _setup(seed=33)
    mu = update_mu(ch, op, prec, params)
    eta = update_eta(ch, op, prec, FpAux(mu, np.zeros(dims.K)), params)
    aux = FpAux(mu, eta)
    p = assemble_w_problem(ch, op, aux, params)
    rng = np.random.default_rng(34)
    w1 = rand_precoder(rng, dims)
    w2 = rand_precoder(rng, dims)
    lhs = p.objective(w1.w_stack) - p.objective(w2.w_stack)
    rhs = f2_objective(ch, op, w1, aux, params) - f2_objective(ch, op, w2, aux, params)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    eig = np.linalg.eigvalsh(p.Y)
    assert eig.min() > -1e-10


def test_assemble_w_problem_budget_flag():
    _, dims, params, ch, op, prec = _setup(seed=35)
    tight = unit_params(dims, p_ris_tot=1e-9, sigma_z_sq=10.0)
    aux = FpAux(np.ones(dims.K), np.ones(dims.K))
    with pytest.raises(InfeasibleBudget):
        assemble_w_problem(ch, op, aux, tight)


def test_amp_terms_all_ones_block():
    rng = np.random.default_rng(41)
    dims = SystemDims(N=3, K=2, M=4, L=2)
    params = unit_params(dims)
    ch = rand_channels(rng, dims)
    state = RisState(np.ones(4), np.array([0.7, 1.3]))
    op = build_reflection_operator(state, dims)
    prec = rand_precoder(rng, dims)
    terms = assemble_amp_terms(ch, op, prec, params)
    g = (ch.G @ prec.W.T).T
    Phi = np.ones((2, 2))
    for k in range(2):
        for i in range(2):
            for l in range(2):
                sl = slice(2 * l, 2 * l + 2)
                expect = np.conj(g[i, sl]) @ Phi.T.conj() @ ch.h_r[k, sl] / np.sqrt(2)
                assert terms.b[k, i, l] == pytest.approx(expect, rel=1e-12)


def test_amp_terms_single_block_t():
    rng = np.random.default_rng(43)
    dims = SystemDims(N=3, K=2, M=4, L=1)
    params = unit_params(dims, sigma_z_sq=0.9)
    ch = rand_channels(rng, dims)
    state = rand_state(rng, dims)
    op = build_reflection_operator(state, dims)
    prec = rand_precoder(rng, dims)
    terms = assemble_amp_terms(ch, op, prec, params)
    Phi = np.outer(state.theta, state.theta)
    g = (ch.G @ prec.W.T).T
    expect = (sum(np.linalg.norm(Phi @ g[k]) ** 2 for k in range(2))
              + np.linalg.norm(Phi, "fro") ** 2 * 0.9) / 4
    assert terms.t[0] == pytest.approx(expect, rel=1e-12)


def test_assemble_a_problem_offset_oracle():
    rng, dims, params, ch, op, prec = _setup(seed=51)
    mu = update_mu(ch, op, prec, params)
    eta = update_eta(ch, op, prec, FpAux(mu, np.zeros(dims.K)), params)
    aux = FpAux(mu, eta)
    p = assemble_a_problem(ch, op, prec, aux, params, dims)
    assert p.nonneg
    eig = np.linalg.eigvalsh(p.Y)
    assert eig.min() > -1e-10

    def f2_at_a(a):
        op_a = build_reflection_operator(RisState(op.theta, a), dims)
        return f2_objective(ch, op_a, prec, aux, params)

    for _ in range(4):
        a1 = rng.uniform(0, 2, dims.L)
        a2 = rng.uniform(0, 2, dims.L)
        lhs = p.objective(a1.astype(complex)) - p.objective(a2.astype(complex))
        rhs = f2_at_a(a1) - f2_at_a(a2)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)

    # the cap encodes total reflect power: a^T T a = reflect_power(a)
    from subris.model import reflect_power
    a = rng.uniform(0, 2, dims.L)
    op_a = build_reflection_operator(RisState(op.theta, a), dims)
    cap = p.constraints[0]
    assert a @ (np.real(cap.S) @ a) == pytest.approx(
        reflect_power(ch, op_a, prec, params), rel=1e-12)
