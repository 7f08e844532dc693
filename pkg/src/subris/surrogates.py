"""Majorisation builders for the phase-shift subproblems.

The phase-shift vector enters the lifted objective quartically (through
v = theta (x) theta) and through an indefinite bilinear form Re{theta^H P
conj(theta)}.  Both are majorised by tangent-touching upper bounds: the
quartic via a trace eigenvalue bound on the (never materialised) M^2 x M^2
Gram operator, the bilinear form via a second-order expansion of its
realified representation.  The same chain, applied per user on the SINR
constraints, yields the convex restrictions used by the power-minimisation
phase-shift step.

All couplings reduce to per-sub-array rank-one blocks
(a_l/sqrt(Q)) h_r,k,l g_i,l^H, which keeps every build at O(K^2 M Q).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fp import FpAux, InfeasibleBudget
from .model import (ChannelSet, Precoder, ReflectionOperator, SystemParams,
                    ris_frobenius_power)
from .solvers import max_eigenvalue_upper


def realify_bilinear(P: np.ndarray) -> np.ndarray:
    """2M x 2M real matrix with tb^T out tb = Re{theta^H P conj(theta)}
    for tb = [Re theta; Im theta]."""
    return np.block([[P.real, P.imag], [P.imag, -P.real]])


def stack_real(theta: np.ndarray) -> np.ndarray:
    return np.concatenate([theta.real, theta.imag])


def _coupling_blocks(channels: ChannelSet, op: ReflectionOperator, g: np.ndarray):
    """Dense couplings P_tilde[k, i] (M x M, block diagonal) and their squared
    Frobenius norms; g holds the K beam-through-RIS vectors G w_i as rows."""
    dims = op.dims
    K, L, Q, M = dims.K, dims.L, dims.Q, dims.M
    hr_b = channels.h_r.reshape(K, L, Q)
    g_b = g.reshape(K, L, Q)
    P_tilde = np.zeros((K, K, M, M), dtype=complex)
    for l in range(L):
        sl = slice(l * Q, (l + 1) * Q)
        blk = op.block_scale[l] * np.einsum("kq,ir->kiqr", hr_b[:, l], np.conj(g_b[:, l]))
        P_tilde[:, :, sl, sl] = blk
    f_norm_sq = np.einsum("l,kl,il->ki", op.block_scale ** 2,
                          np.sum(np.abs(hr_b) ** 2, axis=2),
                          np.sum(np.abs(g_b) ** 2, axis=2)).real
    return P_tilde, f_norm_sq


def _noise_quadratics(channels: ChannelSet, op: ReflectionOperator) -> np.ndarray:
    """Per-user PSD blocks for the amplified-noise term: block l is
    a_l^2 h_r,k,l h_r,k,l^H."""
    dims = op.dims
    K, L, Q, M = dims.K, dims.L, dims.Q, dims.M
    hr_b = channels.h_r.reshape(K, L, Q)
    out = np.zeros((K, M, M), dtype=complex)
    for l in range(L):
        sl = slice(l * Q, (l + 1) * Q)
        out[:, sl, sl] = op.a[l] ** 2 * np.einsum("kq,kr->kqr", hr_b[:, l],
                                                  np.conj(hr_b[:, l]))
    return out


def _reflect_quadratic(op: ReflectionOperator, g: np.ndarray) -> np.ndarray:
    """Q2 with theta^H Q2 theta = sum_k ||Xi diag(theta) G w_k||^2; block l of
    the k-th term is a_l^2 conj(g_k,l) g_k,l^T."""
    dims = op.dims
    K, L, Q, M = dims.K, dims.L, dims.Q, dims.M
    g_b = g.reshape(K, L, Q)
    out = np.zeros((M, M), dtype=complex)
    for l in range(L):
        sl = slice(l * Q, (l + 1) * Q)
        out[sl, sl] = op.a[l] ** 2 * np.einsum("kq,kr->qr", np.conj(g_b[:, l]), g_b[:, l])
    return out


def coupling_values(P_tilde: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """s[k, i] = theta^T P_tilde[k, i]^H theta, the per-pair RIS path gains."""
    return np.einsum("m,kinm,n->ki", theta, np.conj(P_tilde), theta)


# ---------------------------------------------------------------------------
# sum-rate side: data for the phase-shift augmented-Lagrangian objective
# ---------------------------------------------------------------------------

@dataclass
class ThetaProblemData:
    """theta-independent pieces of the (negated) lifted objective.

    Minimised form: v^H F v + Re{theta^H P conj(theta)} + theta^H Q1 theta
    plus the ADMM proximal term, subject to theta^H Q2 theta <= tau and the
    unit disks.  F is only ever touched through P_tilde and f_norm_sq.
    """

    P_tilde: np.ndarray    # (K, K, M, M)
    f_norm_sq: np.ndarray  # (K, K)
    P1: np.ndarray
    P2: np.ndarray
    P: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    tau: float


def build_theta_problem_data(channels: ChannelSet, precoder: Precoder,
                             op: ReflectionOperator, aux: FpAux,
                             params: SystemParams) -> ThetaProblemData:
    g = (channels.G @ precoder.W.T).T  # (K, M)
    P_tilde, f_norm_sq = _coupling_blocks(channels, op, g)

    K = op.dims.K
    coef1 = 2.0 * np.sqrt(1.0 + aux.mu) * np.conj(aux.eta)
    P1 = np.einsum("k,kmn->mn", coef1, np.conj(P_tilde[np.arange(K), np.arange(K)]))
    alpha = np.conj(channels.h_d) @ precoder.W.T  # alpha[k, i] = h_d,k^H w_i
    coef2 = 2.0 * (np.abs(aux.eta) ** 2)[:, None] * np.conj(alpha)
    P2 = np.einsum("ki,kimn->mn", coef2, np.conj(P_tilde))
    P = np.conj(P2).T - np.conj(P1).T

    noise_blocks = _noise_quadratics(channels, op)
    Q1 = params.sigma_z_sq * np.einsum("k,kmn->mn", np.abs(aux.eta) ** 2, noise_blocks)
    Q2 = _reflect_quadratic(op, g)
    tau = params.ris_reflect_budget(op.dims) - ris_frobenius_power(op) * params.sigma_z_sq
    return ThetaProblemData(P_tilde, f_norm_sq, P1, P2, P, Q1, Q2, float(tau))


def quartic_value(data: ThetaProblemData, aux: FpAux, theta: np.ndarray) -> float:
    """v^H F v evaluated through the couplings."""
    s = coupling_values(data.P_tilde, theta)
    return float(np.sum(np.abs(aux.eta) ** 2 * np.sum(np.abs(s) ** 2, axis=1)))


def theta_objective_value(data: ThetaProblemData, aux: FpAux, theta: np.ndarray) -> float:
    """Negated theta-dependent part of the lifted objective (no ADMM term)."""
    quad_p = np.real(np.conj(theta) @ (data.P @ np.conj(theta)))
    quad_q1 = np.real(np.conj(theta) @ (data.Q1 @ theta))
    return quartic_value(data, aux, theta) + float(quad_p) + float(quad_q1)


def surrogate_quartic(data: ThetaProblemData, aux: FpAux, theta_t: np.ndarray):
    """Linear majoriser of the quartic term at theta_t.

    Returns (F_tilde_t, lambda_f, c_f_t) with
    v^H F v <= Re{theta^H F_tilde_t conj(theta)} + c_f_t, equality at
    unit-modulus theta_t.
    """
    w = np.abs(aux.eta) ** 2
    lambda_f = float(np.sum(w * np.sum(data.f_norm_sq, axis=1)))
    s = coupling_values(data.P_tilde, theta_t)
    F_tilde = 2.0 * np.einsum("ki,kimn->mn", w[:, None] * s, data.P_tilde) \
        - 2.0 * lambda_f * np.outer(theta_t, theta_t)
    M = theta_t.shape[0]
    norm4 = float(np.sum(np.abs(theta_t) ** 2)) ** 2
    vFv = float(np.sum(w * np.sum(np.abs(s) ** 2, axis=1)))
    c_f = lambda_f * M ** 2 + lambda_f * norm4 - vFv
    return F_tilde, lambda_f, c_f


def realify_and_majorize(P_t: np.ndarray, theta_t: np.ndarray):
    """Quadratic majoriser of Re{theta^H P_t conj(theta)} at theta_t.

    Returns (lambda_p_t, p_bar_t, c_p_t) so that the form is bounded by
    (lambda_p_t/2)||theta||^2 + Re{theta^H U p_bar_t} + c_p_t with
    U = [I, jI]; lambda_p_t upper-bounds the realified Hessian's largest
    eigenvalue (power iteration, Frobenius fallback).
    """
    Pb = realify_bilinear(P_t)
    S = Pb + Pb.T
    lambda_p = max_eigenvalue_upper(S)
    tb = stack_real(theta_t)
    p_bar = (S - lambda_p * np.eye(S.shape[0])) @ tb
    c_p = float(tb @ (Pb @ tb) - tb @ (S @ tb) + 0.5 * lambda_p * (tb @ tb))
    return lambda_p, p_bar, c_p


@dataclass
class MmIterate:
    """One majorisation expansion of the phase-shift objective."""

    theta_t: np.ndarray
    lambda_f: float
    F_tilde_t: np.ndarray
    c_f_t: float
    P_t: np.ndarray
    lambda_p_t: float
    p_bar_t: np.ndarray
    c_p_t: float
    Upsilon_t: np.ndarray
    zeta_t: np.ndarray


def u_times(p_bar: np.ndarray) -> np.ndarray:
    """U p_bar = p_bar[:M] + j p_bar[M:]."""
    M = p_bar.shape[0] // 2
    return p_bar[:M] + 1j * p_bar[M:]


def build_mm_iterate(data: ThetaProblemData, aux: FpAux, theta_t: np.ndarray,
                     vartheta: np.ndarray, omega: np.ndarray, rho: float) -> MmIterate:
    """Assemble the convex phase-shift subproblem at expansion point theta_t."""
    if data.tau < 0:
        raise InfeasibleBudget(f"reflect budget leaves tau = {data.tau:.4g} < 0")
    F_tilde, lambda_f, c_f = surrogate_quartic(data, aux, theta_t)
    P_t = F_tilde + data.P
    lambda_p, p_bar, c_p = realify_and_majorize(P_t, theta_t)
    M = theta_t.shape[0]
    Upsilon = data.Q1 + 0.5 * (lambda_p + rho) * np.eye(M)
    zeta = u_times(p_bar) - rho * vartheta + omega
    return MmIterate(theta_t, lambda_f, F_tilde, c_f, P_t, lambda_p, p_bar, c_p,
                     Upsilon, zeta)


def build_theta_qp(data: ThetaProblemData, mm: MmIterate):
    """(Upsilon, zeta, quad_constraints) for the box-QCQP solver."""
    if data.tau < 0:
        raise InfeasibleBudget(f"reflect budget leaves tau = {data.tau:.4g} < 0")
    return mm.Upsilon_t, mm.zeta_t, [(data.Q2, None, -data.tau)]


# ---------------------------------------------------------------------------
# power-minimisation side: SINR constraints as functions of theta
# ---------------------------------------------------------------------------

@dataclass
class PmConstraintData:
    """Static pieces of the per-user SINR constraints in theta.

    Constraint k reads v^H Fhat_k v + Re{theta^H Phat_k conj(theta)}
    + theta^H Qhat_k theta + varsigma_k <= 0, equivalent to
    gamma_k >= Gamma_k at unit-modulus theta.
    """

    P_tilde: np.ndarray    # (K, K, M, M)
    f_norm_sq: np.ndarray  # (K, K)
    P_hat: np.ndarray      # (K, M, M)
    Q_hat: np.ndarray      # (K, M, M)
    varsigma: np.ndarray   # (K,)
    lambda1: np.ndarray    # (K,) trace bounds of the interference part
    lambda2: np.ndarray    # (K,) trace bounds of the signal part
    Q2: np.ndarray
    gamma: np.ndarray


def build_pm_constraint_data(channels: ChannelSet, precoder: Precoder,
                             op: ReflectionOperator, params: SystemParams) -> PmConstraintData:
    gamma = np.asarray(params.gamma, dtype=float)
    g = (channels.G @ precoder.W.T).T
    P_tilde, f_norm_sq = _coupling_blocks(channels, op, g)
    K = op.dims.K
    alpha = np.conj(channels.h_d) @ precoder.W.T

    P_tilde_T = np.swapaxes(P_tilde, -1, -2)
    P_hat = 2.0 * gamma[:, None, None, None] * alpha[:, :, None, None] * P_tilde_T
    own = P_hat[np.arange(K), np.arange(K)]
    P_hat = P_hat.sum(axis=1) - own  # drop i == k from the interference sum
    P_hat -= 2.0 * alpha[np.arange(K), np.arange(K)][:, None, None] \
        * P_tilde_T[np.arange(K), np.arange(K)]

    Q_hat = gamma[:, None, None] * params.sigma_z_sq * _noise_quadratics(channels, op)
    abs_alpha_sq = np.abs(alpha) ** 2
    interf = abs_alpha_sq.sum(axis=1) - np.diag(abs_alpha_sq)
    varsigma = gamma * interf + gamma * params.sigma_k_sq - np.diag(abs_alpha_sq)

    off = f_norm_sq.sum(axis=1) - np.diag(f_norm_sq)
    lambda1 = gamma * off
    lambda2 = np.diag(f_norm_sq).copy()
    Q2 = _reflect_quadratic(op, g)
    return PmConstraintData(P_tilde, f_norm_sq, P_hat, Q_hat, varsigma,
                            lambda1, lambda2, Q2, gamma)


def pm_constraint_value(pm: PmConstraintData, theta: np.ndarray, k: int) -> float:
    """Exact constraint-k value; <= 0 means user k meets its target
    (at unit-modulus theta)."""
    s = coupling_values(pm.P_tilde, theta)
    vFv = pm.gamma[k] * (np.sum(np.abs(s[k]) ** 2) - np.abs(s[k, k]) ** 2) \
        - np.abs(s[k, k]) ** 2
    quad_p = np.real(np.conj(theta) @ (pm.P_hat[k] @ np.conj(theta)))
    quad_q = np.real(np.conj(theta) @ (pm.Q_hat[k] @ theta))
    return float(vFv + quad_p + quad_q + pm.varsigma[k])


@dataclass
class PmSurrogate:
    """Convex restriction of one SINR constraint at expansion point theta_t."""

    Lambda: np.ndarray
    beta: np.ndarray
    c: float
    lambda_k: float
    lambda_q: float
    F_hat_t: np.ndarray
    c_kt: float
    c_q: float


def build_pm_constraint_surrogates(pm: PmConstraintData, theta_t: np.ndarray) -> list[PmSurrogate]:
    """Per-user convex constraints ghat_k(theta | theta_t) <= 0 dominating the
    true constraints, tight at unit-modulus theta_t."""
    K = pm.gamma.shape[0]
    M = theta_t.shape[0]
    s = coupling_values(pm.P_tilde, theta_t)
    out = []
    for k in range(K):
        lambda_k = float(pm.lambda1[k] + pm.lambda2[k])
        coef = pm.gamma[k] * s[k].copy()
        coef[k] = -s[k, k]
        F_hat_t = 2.0 * np.einsum("i,imn->mn", coef, pm.P_tilde[k]) \
            - 2.0 * lambda_k * np.outer(theta_t, theta_t)
        c_kt = 2.0 * lambda_k * M ** 2 \
            - pm.gamma[k] * (np.sum(np.abs(s[k]) ** 2) - np.abs(s[k, k]) ** 2) \
            + np.abs(s[k, k]) ** 2
        P_kt = F_hat_t + pm.P_hat[k]
        lambda_q, q_bar, c_q = realify_and_majorize(P_kt, theta_t)
        Lambda = pm.Q_hat[k] + 0.5 * lambda_q * np.eye(M)
        beta = u_times(q_bar)
        c = float(c_q + c_kt + pm.varsigma[k])
        out.append(PmSurrogate(Lambda, beta, c, lambda_k, lambda_q, F_hat_t, c_kt, c_q))
    return out


def pm_surrogate_value(surr: PmSurrogate, theta: np.ndarray) -> float:
    quad = np.real(np.conj(theta) @ (surr.Lambda @ theta))
    lin = np.real(np.conj(theta) @ surr.beta)
    return float(quad + lin + surr.c)
