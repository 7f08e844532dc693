import numpy as np
import pytest

from oracles import (dense_couplings, dense_quartic_gram, rand_channels,
                     rand_precoder, rand_state, rand_unit_theta, unit_params, vec)
from subris.fp import FpAux, update_eta, update_mu
from subris.model import (Precoder, RisState, SystemDims, all_sinrs,
                          build_reflection_operator)
from subris.surrogates import (MmIterate, ThetaProblemData, build_mm_iterate,
                               build_pm_constraint_data,
                               build_pm_constraint_surrogates,
                               build_theta_problem_data, build_theta_qp,
                               coupling_values, pm_constraint_value,
                               pm_surrogate_value, quartic_value,
                               realify_and_majorize, realify_bilinear, stack_real,
                               surrogate_quartic, theta_objective_value, u_times)


def _setup(seed=0, N=3, K=2, M=6, L=3, **kw):
    rng = np.random.default_rng(seed)
    dims = SystemDims(N=N, K=K, M=M, L=L)
    params = unit_params(dims, **kw)
    ch = rand_channels(rng, dims)
    state = rand_state(rng, dims)
    op = build_reflection_operator(state, dims)
    prec = rand_precoder(rng, dims)
    mu = update_mu(ch, op, prec, params)
    eta = update_eta(ch, op, prec, FpAux(mu, np.zeros(dims.K)), params)
    aux = FpAux(mu, eta)
    return rng, dims, params, ch, state, op, prec, aux


def _rand_disk_theta(rng, M):
    return rand_unit_theta(rng, M) * rng.uniform(0.1, 1.0, M)


def test_theta_data_zero_amplification():
    rng, dims, params, ch, state, op, prec, aux = _setup(seed=1)
    op0 = build_reflection_operator(RisState(state.theta, np.zeros(dims.L)), dims)
    data = build_theta_problem_data(ch, prec, op0, aux, params)
    assert np.abs(data.P_tilde).max() == 0
    assert np.abs(data.Q1).max() == 0 and np.abs(data.Q2).max() == 0
    assert data.tau == pytest.approx(params.ris_reflect_budget(dims))


def test_couplings_match_dense_vectorisation():
    rng, dims, params, ch, state, op, prec, aux = _setup(seed=2, K=1, M=4, L=2, N=4)
    data = build_theta_problem_data(ch, prec, op, aux, params)
    dense = dense_couplings(ch, state, dims, prec)
    np.testing.assert_allclose(data.P_tilde, dense, rtol=1e-12, atol=1e-14)
    # f_{1,1} = vec of the coupling, and the norms agree
    np.testing.assert_allclose(data.f_norm_sq[0, 0],
                               np.linalg.norm(vec(dense[0, 0])) ** 2, rtol=1e-12)


def test_q2_encodes_reflect_power():
    rng, dims, params, ch, state, op, prec, aux = _setup(seed=3)
    data = build_theta_problem_data(ch, prec, op, aux, params)
    theta = rand_unit_theta(rng, dims.M)
    lhs = np.real(np.conj(theta) @ (data.Q2 @ theta))
    g = (ch.G @ prec.W.T).T
    from oracles import dense_xi
    xi = dense_xi(state, dims)
    rhs = sum(np.linalg.norm(xi @ np.diag(theta) @ g[k]) ** 2 for k in range(dims.K))
    assert lhs == pytest.approx(rhs, rel=1e-11)


def test_quartic_surrogate_matches_dense_gram():
    rng, dims, params, ch, state, op, prec, aux = _setup(seed=4, M=3, L=3, K=2)
    data = build_theta_problem_data(ch, prec, op, aux, params)
    w = np.abs(aux.eta) ** 2
    F = dense_quartic_gram(data.P_tilde, w)
    theta_t = rand_unit_theta(rng, dims.M)
    F_tilde, lambda_f, c_f = surrogate_quartic(data, aux, theta_t)
    assert lambda_f == pytest.approx(np.real(np.trace(F)), rel=1e-10)
    v_t = vec(np.outer(theta_t, theta_t))
    f_tilde_dense = 2.0 * (F - lambda_f * np.eye(F.shape[0])) @ v_t
    np.testing.assert_allclose(vec(F_tilde), f_tilde_dense, rtol=1e-10, atol=1e-12)
    # v^H F v through the couplings equals the dense quadratic form
    assert quartic_value(data, aux, theta_t) == pytest.approx(
        float(np.real(np.conj(v_t) @ (F @ v_t))), rel=1e-10)


def test_quartic_surrogate_majorises():
    rng, dims, params, ch, state, op, prec, aux = _setup(seed=5, M=4, L=2)
    data = build_theta_problem_data(ch, prec, op, aux, params)
    theta_t = rand_unit_theta(rng, dims.M)
    F_tilde, lambda_f, c_f = surrogate_quartic(data, aux, theta_t)

    def surrogate(theta):
        return float(np.real(np.conj(theta) @ (F_tilde @ np.conj(theta)))) + c_f

    at_t = surrogate(theta_t)
    assert at_t == pytest.approx(quartic_value(data, aux, theta_t), rel=1e-9, abs=1e-9)
    for _ in range(200):
        theta = _rand_disk_theta(rng, dims.M)
        assert surrogate(theta) - quartic_value(data, aux, theta) >= -1e-8


def test_realify_identity_majorisation():
    M = 5
    theta_t = rand_unit_theta(np.random.default_rng(6), M)
    lam, p_bar, c_p = realify_and_majorize(np.eye(M, dtype=complex), theta_t)
    assert lam == pytest.approx(2.0, rel=1e-8)


def test_realify_majorisation_random_hermitian():
    rng = np.random.default_rng(7)
    M = 4
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    P = 0.5 * (A + np.conj(A).T)
    theta_t = _rand_disk_theta(rng, M)  # expansion point need not be unit-modulus
    lam, p_bar, c_p = realify_and_majorize(P, theta_t)

    def form(theta):
        return float(np.real(np.conj(theta) @ (P @ np.conj(theta))))

    def surrogate(theta):
        return 0.5 * lam * float(np.linalg.norm(theta) ** 2) \
            + float(np.real(np.conj(theta) @ u_times(p_bar))) + c_p

    assert surrogate(theta_t) == pytest.approx(form(theta_t), rel=1e-9, abs=1e-12)
    for _ in range(200):
        theta = _rand_disk_theta(rng, M)
        assert surrogate(theta) - form(theta) >= -1e-8


def test_realified_eigenvalue_matches_dense():
    rng = np.random.default_rng(8)
    for M in (4, 8, 16):
        A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
        Pb = realify_bilinear(A)
        S = Pb + Pb.T
        theta_t = rand_unit_theta(rng, M)
        lam, p_bar, _ = realify_and_majorize(A, theta_t)
        dense = np.linalg.eigvalsh(S).max()
        assert abs(lam - dense) <= 1e-6 * max(1.0, abs(dense))
        np.testing.assert_allclose(p_bar, (S - lam * np.eye(2 * M)) @ stack_real(theta_t),
                                   rtol=1e-9, atol=1e-12)


def test_realify_bilinear_convention():
    rng = np.random.default_rng(9)
    M = 6
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    theta = _rand_disk_theta(rng, M)
    lhs = float(np.real(np.conj(theta) @ (A @ np.conj(theta))))
    tb = stack_real(theta)
    assert lhs == pytest.approx(float(tb @ (realify_bilinear(A) @ tb)), rel=1e-12)


def test_full_theta_surrogate_majorises_augmented_lagrangian():
    rng, dims, params, ch, state, op, prec, aux = _setup(seed=10, M=6, L=2)
    data = build_theta_problem_data(ch, prec, op, aux, params)
    theta_t = rand_unit_theta(rng, dims.M)
    vartheta = rand_unit_theta(rng, dims.M)
    omega = 0.3 * (rng.standard_normal(dims.M) + 1j * rng.standard_normal(dims.M))
    rho = 1.0
    mm = build_mm_iterate(data, aux, theta_t, vartheta, omega, rho)

    shift = vartheta - omega / rho
    const = mm.c_f_t + mm.c_p_t + 0.5 * rho * float(np.linalg.norm(shift) ** 2)

    def surrogate(theta):
        val = float(np.real(np.conj(theta) @ (mm.Upsilon_t @ theta)))
        val += float(np.real(np.conj(theta) @ mm.zeta_t))
        return val + const

    def neg_al(theta):
        prox = 0.5 * rho * float(np.linalg.norm(theta - vartheta + omega / rho) ** 2)
        return theta_objective_value(data, aux, theta) + prox

    assert surrogate(theta_t) == pytest.approx(neg_al(theta_t), rel=1e-8, abs=1e-8)
    for _ in range(200):
        theta = _rand_disk_theta(rng, dims.M)
        assert surrogate(theta) - neg_al(theta) >= -1e-8


def test_pm_data_specialisations():
    # Gamma = 0, single user, zero direct channel: only the own-signal quartic survives
    rng = np.random.default_rng(11)
    dims = SystemDims(N=3, K=1, M=4, L=2)
    params = unit_params(dims, gamma=np.array([0.0]))
    ch = rand_channels(rng, dims)
    ch = type(ch)(np.zeros_like(ch.h_d), ch.G, ch.h_r)
    state = rand_state(rng, dims)
    op = build_reflection_operator(state, dims)
    prec = rand_precoder(rng, dims)
    pm = build_pm_constraint_data(ch, prec, op, params)
    assert np.abs(pm.P_hat).max() == pytest.approx(0.0, abs=1e-15)
    assert np.abs(pm.Q_hat).max() == pytest.approx(0.0, abs=1e-15)
    assert pm.varsigma[0] == pytest.approx(0.0, abs=1e-15)
    assert pm.lambda1[0] == 0.0
    theta = rand_unit_theta(rng, dims.M)
    s = coupling_values(pm.P_tilde, theta)
    assert pm_constraint_value(pm, theta, 0) == pytest.approx(-np.abs(s[0, 0]) ** 2, rel=1e-10)


def test_pm_single_user_p_hat_form():
    rng = np.random.default_rng(12)
    dims = SystemDims(N=3, K=1, M=4, L=2)
    params = unit_params(dims, gamma=np.array([1.7]))
    ch = rand_channels(rng, dims)
    state = rand_state(rng, dims)
    op = build_reflection_operator(state, dims)
    prec = rand_precoder(rng, dims)
    pm = build_pm_constraint_data(ch, prec, op, params)
    alpha = np.conj(ch.h_d[0]) @ prec.W[0]
    expected = -2.0 * alpha * pm.P_tilde[0, 0].T
    np.testing.assert_allclose(pm.P_hat[0], expected, rtol=1e-12)


def test_pm_constraint_equals_sinr_threshold():
    rng, dims, params, ch, state, op, prec, _ = _setup(seed=13, M=4, L=2, K=2)
    gamma = np.array([1.3, 0.4])
    params = unit_params(dims, gamma=gamma)
    pm = build_pm_constraint_data(ch, prec, op, params)
    # at the operator's own unit-modulus theta the constraint value must equal
    # Gamma_k * (interference + noise) - signal from the exact SINR expression
    theta = op.theta
    sinrs = all_sinrs(ch, op, prec, params)
    from subris.fp import link_stats
    _, cross, denom_full = link_stats(ch, op, prec, params)
    sig = np.abs(np.diag(cross)) ** 2
    for k in range(dims.K):
        D = denom_full[k] - sig[k]
        expected = gamma[k] * D - sig[k]
        assert pm_constraint_value(pm, theta, k) == pytest.approx(expected, rel=1e-9)
        # sign consistency with the SINR target
        assert (pm_constraint_value(pm, theta, k) <= 0) == (sinrs[k] >= gamma[k])


def test_pm_surrogates_majorise_and_touch():
    rng, dims, params, ch, state, op, prec, _ = _setup(seed=14, M=4, L=2, K=2)
    gamma = np.array([0.9, 0.6])
    params = unit_params(dims, gamma=gamma)
    pm = build_pm_constraint_data(ch, prec, op, params)
    theta_t = rand_unit_theta(rng, dims.M)
    surrs = build_pm_constraint_surrogates(pm, theta_t)
    for k, s in enumerate(surrs):
        assert pm_surrogate_value(s, theta_t) == pytest.approx(
            pm_constraint_value(pm, theta_t, k), rel=1e-8, abs=1e-8)
        for _ in range(200):
            theta = _rand_disk_theta(rng, dims.M)
            slack = pm_surrogate_value(s, theta) - pm_constraint_value(pm, theta, k)
            assert slack >= -1e-8


def test_pm_lambda_traces_match_dense():
    rng, dims, params, ch, state, op, prec, _ = _setup(seed=15, M=3, L=3, K=2)
    gamma = np.array([1.1, 0.8])
    params = unit_params(dims, gamma=gamma)
    pm = build_pm_constraint_data(ch, prec, op, params)
    dense = dense_couplings(ch, state, dims, prec)
    for k in range(dims.K):
        tr_interf = sum(np.linalg.norm(vec(dense[k, i])) ** 2
                        for i in range(dims.K) if i != k)
        assert pm.lambda1[k] == pytest.approx(gamma[k] * tr_interf, rel=1e-10)
        assert pm.lambda2[k] == pytest.approx(
            np.linalg.norm(vec(dense[k, k])) ** 2, rel=1e-10)


def test_mm_iterate_trace_bound_dominates():
    # lambda_f >= lambda_max(F) on dense instances (M <= 8)
    for seed in range(5):
        rng, dims, params, ch, state, op, prec, aux = _setup(seed=seed, M=4, L=2)
        data = build_theta_problem_data(ch, prec, op, aux, params)
        F = dense_quartic_gram(data.P_tilde, np.abs(aux.eta) ** 2)
        lam_max = np.linalg.eigvalsh(F).max()
        _, lambda_f, _ = surrogate_quartic(data, aux, rand_unit_theta(rng, dims.M))
        assert lambda_f >= lam_max - 1e-10
