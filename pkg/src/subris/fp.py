"""Fractional-programming transforms and convex-subproblem assembly.

The sum-rate objective is lifted twice: a Lagrangian-dual auxiliary mu_k per
user turns log-of-ratio into ratio form, then a quadratic-transform auxiliary
eta_k linearises each ratio.  Both have closed-form optimal updates, and with
both held at their optima the lifted objective f2 collapses back to the true
sum rate.  The precoder and amplification blocks of f2 are plain concave
quadratics, assembled here into `QuadMaxProblem` instances for the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (ChannelSet, Precoder, ReflectionOperator, SystemDims,
                    SystemParams, composite_channel_matrix, ris_frobenius_power,
                    ris_noise_power_at_user)


class InfeasibleBudget(Exception):
    """Raised when the RIS reflect-power budget cannot accommodate any signal."""


@dataclass(frozen=True)
class FpAux:
    """FP auxiliaries: mu (real, >= 0, one per user) and eta (complex, one per user)."""

    mu: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=complex))
        if np.any(self.mu < 0):
            raise ValueError("mu must be nonnegative")


@dataclass(frozen=True)
class QuadConstraint:
    """w^H S w <= bound; S = None means the identity (norm ball)."""

    S: np.ndarray | None
    bound: float


@dataclass(frozen=True)
class QuadMaxProblem:
    """maximize Re{x^H w} - w^H Y w subject to quadratic constraints.

    With nonneg=True the variable is real and entrywise nonnegative (the
    amplification step); constraints are then expected to carry diagonal S.
    """

    x: np.ndarray
    Y: np.ndarray
    constraints: list[QuadConstraint] = field(default_factory=list)
    nonneg: bool = False

    def objective(self, w: np.ndarray) -> float:
        return float(np.real(np.vdot(self.x, w)) - np.real(np.vdot(w, self.Y @ w)))


def link_stats(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
               params: SystemParams):
    """Shared per-state quantities: composite H, cross gains h_k^H w_i, denominators.

    Returns (H, cross, denom_full) where cross[k, i] = h_k^H w_i and
    denom_full[k] = sum_i |h_k^H w_i|^2 + ||h_r,k^H Psi||^2 sigma_z^2 + sigma_k^2.
    """
    H = composite_channel_matrix(channels, op)
    cross = np.conj(H) @ precoder.W.T
    K = H.shape[0]
    noise = np.array([ris_noise_power_at_user(k, channels, op) for k in range(K)])
    denom_full = np.sum(np.abs(cross) ** 2, axis=1) + noise * params.sigma_z_sq \
        + params.sigma_k_sq
    return H, cross, denom_full


def update_mu(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
              params: SystemParams) -> np.ndarray:
    """Optimal dual auxiliaries; coincide with the per-user SINRs."""
    _, cross, denom_full = link_stats(channels, op, precoder, params)
    sig = np.abs(np.diag(cross)) ** 2
    return sig / (denom_full - sig)


def update_eta(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
               aux: FpAux, params: SystemParams) -> np.ndarray:
    """Optimal quadratic-transform auxiliaries for fixed mu.

    A zero denominator (all-zero precoder and channels) yields eta_k = 0,
    the limit of the closed form.
    """
    _, cross, denom_full = link_stats(channels, op, precoder, params)
    num = np.sqrt(1.0 + aux.mu) * np.diag(cross)
    return np.where(denom_full > 0, num / np.where(denom_full > 0, denom_full, 1.0), 0.0)


def f1_objective_nats(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
                      mu: np.ndarray, params: SystemParams) -> float:
    """Dual-lifted objective in natural-log units.

    The closed-form update (mu_k = SINR_k) is the exact per-user maximiser in
    these units; the bits version differs by a constant factor on the affine
    part and is only value-tight, not stationary.
    """
    _, cross, denom_full = link_stats(channels, op, precoder, params)
    sig = np.abs(np.diag(cross)) ** 2
    ratio = (1.0 + mu) * sig / denom_full
    return float(np.sum(np.log(1.0 + mu) - mu + ratio))


def f2_objective(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
                 aux: FpAux, params: SystemParams) -> float:
    """Doubly-lifted sum-rate objective (bits/s/Hz at optimal auxiliaries)."""
    _, cross, denom_full = link_stats(channels, op, precoder, params)
    signal = 2.0 * np.sqrt(1.0 + aux.mu) * np.real(np.conj(aux.eta) * np.diag(cross))
    terms = np.log2(1.0 + aux.mu) - aux.mu + signal - np.abs(aux.eta) ** 2 * denom_full
    return float(np.sum(terms))


def assemble_w_problem(channels: ChannelSet, op: ReflectionOperator, aux: FpAux,
                       params: SystemParams, include_reflect_cap: bool = True) -> QuadMaxProblem:
    """Precoder subproblem over the stacked NK vector.

    Raises InfeasibleBudget when the reflect budget cannot even cover the
    amplified RIS noise floor; include_reflect_cap=False drops that cap for
    the no-RIS degraded mode (amplification forced off).
    """
    H = composite_channel_matrix(channels, op)
    K, N = H.shape
    x = (2.0 * np.sqrt(1.0 + aux.mu) * aux.eta)[:, None] * H
    Y0 = np.einsum("k,kn,km->nm", np.abs(aux.eta) ** 2, H, np.conj(H))
    Y = np.kron(np.eye(K), Y0)

    constraints = [QuadConstraint(None, params.P_BS)]
    if include_reflect_cap:
        psi_G = op.psi_matmat(channels.G)
        Z0 = np.conj(psi_G).T @ psi_G
        Z = np.kron(np.eye(K), Z0)
        p_ris = params.ris_reflect_budget(op.dims)
        b2 = p_ris - ris_frobenius_power(op) * params.sigma_z_sq
        if b2 < 0:
            raise InfeasibleBudget(
                f"reflect budget {p_ris:.4g} W below amplified noise floor")
        constraints.append(QuadConstraint(Z, b2))
    return QuadMaxProblem(x.reshape(-1), Y, constraints, nonneg=False)


@dataclass(frozen=True)
class AmpTerms:
    """Per-amplifier couplings with theta and w held fixed.

    b[k, i] is the L-vector with b[k, i, l]^* a_l the RIS path of h_k^H w_i;
    alpha[k, i] = h_d,k^H w_i the direct path; s[k, l] the amplified-noise
    diagonal; t[l] the reflect-power diagonal.
    """

    b: np.ndarray      # (K, K, L) complex
    alpha: np.ndarray  # (K, K) complex
    s: np.ndarray      # (K, L) real
    t: np.ndarray      # (L,) real


def assemble_amp_terms(channels: ChannelSet, op: ReflectionOperator,
                       precoder: Precoder, params: SystemParams) -> AmpTerms:
    """Collapse the per-block rank-one reflection structure onto the a variable."""
    dims = op.dims
    L, Q, K = dims.L, dims.Q, dims.K
    g = (channels.G @ precoder.W.T).T          # (K, M), g[i] = G w_i
    gb = g.reshape(K, L, Q)
    hb = np.conj(channels.h_r).reshape(K, L, Q)
    c1 = np.sum(hb * op.theta_blocks[None], axis=2)   # (K, L): h_r,k,l^H theta_l
    c2 = np.einsum("lq,ilq->il", op.theta_blocks, gb)  # (K, L): theta_l^T g_i,l
    blk_norm = np.sum(np.abs(op.theta_blocks) ** 2, axis=1)  # ||theta_l||^2

    b = np.conj(c1[:, None, :] * c2[None, :, :]) / np.sqrt(Q)
    alpha = np.conj(channels.h_d) @ precoder.W.T
    s = (np.abs(c1) ** 2) * blk_norm[None, :] * params.sigma_z_sq / Q
    t = (blk_norm[None, :] * np.abs(c2) ** 2).sum(axis=0) / Q \
        + blk_norm ** 2 * params.sigma_z_sq / Q
    return AmpTerms(b=b, alpha=alpha, s=s, t=t)


def assemble_a_problem(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
                       aux: FpAux, params: SystemParams, dims: SystemDims) -> QuadMaxProblem:
    """Amplification subproblem: real nonnegative a with one diagonal power cap."""
    p_ris = params.ris_reflect_budget(dims)
    if p_ris < 0:
        raise InfeasibleBudget(f"reflect budget {p_ris:.4g} W is negative")
    terms = assemble_amp_terms(channels, op, precoder, params)
    eta, mu = aux.eta, aux.mu
    abs_eta_sq = np.abs(eta) ** 2

    b_kk = terms.b[np.arange(dims.K), np.arange(dims.K)]       # (K, L)
    d = (2.0 * np.sqrt(1.0 + mu) * eta) @ b_kk
    c = 2.0 * terms.alpha[..., None] * terms.b                  # c[k, i] = 2 alpha b
    d = d - np.einsum("k,kil->l", abs_eta_sq, c)

    R = np.einsum("k,kil,kim->lm", abs_eta_sq, terms.b, np.conj(terms.b))
    R = R + np.diag(abs_eta_sq @ terms.s)
    T = np.diag(terms.t)
    return QuadMaxProblem(d, R, [QuadConstraint(T, p_ris)], nonneg=True)
