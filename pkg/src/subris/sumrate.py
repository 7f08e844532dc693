"""Sum-rate maximisation: initialisation, the FP/BCD outer loop and the
ADMM-MM phase-shift inner loop.

Outer loop blocks: refresh the FP auxiliaries, precoder step (two-cap QCQP),
phase-shift step (ADMM with one majorised convex solve per pass), then the
amplification step (nonnegative QCQP).  Every closed-form or convex block is
wrapped in an ascent guard on the lifted objective: the candidate is kept only
if it does not decrease f2.  The guards are inert for the exact block maxima
(eta, w, a) and make the auxiliary refresh safe too - the closed-form mu
update is value-tight but not an f2 block maximiser in bits, so it can dip
slightly when a user's SINR fell during the sweep.  The phase-shift step
carries no monotonicity guarantee; it is traced, not guarded on f2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import trial_rng
from .fp import (FpAux, InfeasibleBudget, assemble_a_problem, assemble_w_problem,
                 f2_objective, update_eta, update_mu)
from .model import (ChannelSet, Precoder, ReflectionOperator, RisState, SystemDims,
                    SystemParams, all_sinrs, build_reflection_operator,
                    composite_channel_matrix, reflect_power, ris_frobenius_power,
                    ris_noise_power_at_user, sum_rate)
from .solvers import (INFEASIBLE, SolveReport, SolverOptions, rcg_unit_modulus,
                      solve_quad_max)
from .solvers import _box_qcqp_min_impl
from .surrogates import build_mm_iterate, build_theta_problem_data, build_theta_qp


@dataclass
class AdmmState:
    """Split state for the phase-shift step: unit-modulus shadow, dual, penalty."""

    vartheta: np.ndarray
    omega: np.ndarray
    rho: float = 1.0


@dataclass
class AlgoOptions:
    outer_tol: float = 1e-4
    outer_max_iter: int = 30
    admm_tol: float = 1e-3
    admm_max_iter: int = 100
    # warm unit-modulus starts satisfy the primal residual immediately, so the
    # loop also runs until the per-pass theta movement stalls
    theta_step_tol: float = 1e-4
    rho: float = 1.0
    reset_admm_duals: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)
    # looser/fatter-stepped barrier settings for the many inner theta solves
    theta_solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(kkt_tol=1e-6, barrier_mu=30.0))


@dataclass
class RunTrace:
    """Diagnostics: per-outer lifted objective and rate, per-block f2 after each
    update, inner ADMM primal residuals, and subproblem statuses."""

    outer_f2: list = field(default_factory=list)
    outer_sum_rate: list = field(default_factory=list)
    block_f2: list = field(default_factory=list)
    admm_residuals: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    budget_infeasible: bool = False


def _unit_projection(theta):
    mag = np.abs(theta)
    return np.where(mag > 0, theta / np.where(mag > 0, mag, 1.0), 1.0)


def shadow_update(theta, omega, rho):
    """Closed-form unit-modulus shadow: the entrywise phase of rho*theta + omega."""
    return np.exp(1j * np.angle(rho * theta + omega))


def dual_update(omega, theta, vartheta, rho):
    """Scaled dual ascent on the split constraint theta = vartheta."""
    return omega + rho * (theta - vartheta)


def initialize(channels: ChannelSet, dims: SystemDims, params: SystemParams,
               opts: AlgoOptions | None = None):
    """Channel-gain-driven start: phase shifts from Riemannian CG on the
    composite-gain quadratic, unit amplification, MMSE precoding at full power.

    The amplification vector is scaled down when needed so the initial point
    respects the reflect-power budget (zero when the budget itself is
    infeasible).
    """
    opts = opts or AlgoOptions()
    R = np.conj(channels.h_r)[:, :, None] * channels.G[None, :, :]  # (K, M, N)
    M_mat = np.einsum("kmn,kpn->mp", R, np.conj(R))
    m_vec = 2.0 * np.einsum("kmn,kn->m", R, channels.h_d)
    psi_breve = rcg_unit_modulus(M_mat, m_vec, np.ones(dims.M), opts.solver)
    psi = np.conj(psi_breve)
    theta = np.exp(1j * np.angle(psi) / 2.0)

    p_ris = params.ris_reflect_budget(dims)
    if p_ris <= 0:
        a = np.zeros(dims.L)
    else:
        a = np.ones(dims.L)
        noise_floor = dims.Q * dims.L * params.sigma_z_sq  # ||Psi||_F^2 sigma_z^2 at a = 1
        if noise_floor >= 0.5 * p_ris:
            a *= np.sqrt(0.25 * p_ris / noise_floor)
    state = RisState(theta, a)
    op = build_reflection_operator(state, dims)

    H = composite_channel_matrix(channels, op)
    noise = np.array([ris_noise_power_at_user(k, channels, op) for k in range(dims.K)])
    sig_t = noise * params.sigma_z_sq + params.sigma_k_sq
    gram = np.einsum("kn,km->nm", H, np.conj(H))
    W = np.zeros((dims.K, dims.N), dtype=complex)
    for k in range(dims.K):
        d = np.linalg.solve(gram + sig_t[k] * np.eye(dims.N), H[k])
        W[k] = d / np.linalg.norm(d)
    W *= np.sqrt(params.P_BS / dims.K)
    prec = Precoder(W)

    # drive the amplification to (just under) the reflect budget so the loop
    # starts from a working RIS whatever the transmit power
    if p_ris > 0:
        refl = reflect_power(channels, op, prec, params)
        if refl > 0:
            a = a * np.sqrt(0.95 * p_ris / refl)
            state = RisState(theta, a)
    return state, prec


def admm_theta_loop(state: RisState, channels: ChannelSet, precoder: Precoder,
                    aux: FpAux, params: SystemParams, admm: AdmmState,
                    opts: AlgoOptions):
    """Inner loop for the phase shifts: one majorised convex solve per pass,
    then the closed-form shadow and dual updates.

    Returns (theta_unit, residuals, status); theta is projected to exact unit
    modulus on exit, admm is updated in place.
    """
    dims = SystemDims(channels.h_d.shape[1], channels.h_d.shape[0],
                      state.theta.shape[0], state.a.shape[0])
    op = build_reflection_operator(state, dims)
    data = build_theta_problem_data(channels, precoder, op, aux, params)
    if data.tau < 0:
        return _unit_projection(state.theta), [], "infeasible_budget"
    if opts.reset_admm_duals:
        admm.vartheta = _unit_projection(state.theta)
        admm.omega = np.zeros(dims.M, dtype=complex)

    theta = state.theta.copy()
    residuals = []
    status = "ok"
    warm_t = None
    for _ in range(opts.admm_max_iter):
        mm = build_mm_iterate(data, aux, theta, admm.vartheta, admm.omega, admm.rho)
        Ups, zeta, quads = build_theta_qp(data, mm)
        theta_new, rep, warm_t = _box_qcqp_min_impl(Ups, zeta, quads, opts.theta_solver,
                                                    theta, warm_t)
        if rep.status == INFEASIBLE:
            status = "theta_solver_infeasible"
            break
        move = float(np.abs(theta_new - theta).max())
        theta = theta_new
        admm.vartheta = shadow_update(theta, admm.omega, admm.rho)
        admm.omega = dual_update(admm.omega, theta, admm.vartheta, admm.rho)
        resid = float(np.abs(theta - admm.vartheta).max())
        residuals.append(resid)
        if resid <= opts.admm_tol and move <= opts.theta_step_tol:
            break
    return _unit_projection(theta), residuals, status


def run_sum_rate_max(channels: ChannelSet, dims: SystemDims, params: SystemParams,
                     opts: AlgoOptions | None = None):
    """Full sum-rate pipeline; returns (Precoder, RisState, RunTrace).

    With an infeasible RIS budget the amplification is forced to zero and only
    the precoder loop runs, reproducing the no-RIS rate.
    """
    opts = opts or AlgoOptions()
    channels.check_dims(dims)
    budget_ok = params.ris_budget_feasible(dims)
    p_ris = params.ris_reflect_budget(dims)

    state, prec = initialize(channels, dims, params, opts)
    if not budget_ok:
        state = RisState(state.theta, np.zeros(dims.L))
    op = build_reflection_operator(state, dims)
    admm = AdmmState(_unit_projection(state.theta),
                     np.zeros(dims.M, dtype=complex), opts.rho)

    mu = update_mu(channels, op, prec, params)
    eta = update_eta(channels, op, prec, FpAux(mu, np.zeros(dims.K)), params)
    aux = FpAux(mu, eta)
    f2_cur = f2_objective(channels, op, prec, aux, params)

    trace = RunTrace(budget_infeasible=not budget_ok)
    rate_prev = sum_rate(channels, op, prec, params)
    slack = lambda v: 1e-12 * (1.0 + abs(v))

    for outer in range(opts.outer_max_iter):
        blocks = {}
        status = {}

        mu_new = update_mu(channels, op, prec, params)
        f2_try = f2_objective(channels, op, prec, FpAux(mu_new, aux.eta), params)
        if f2_try >= f2_cur - slack(f2_cur):
            aux = FpAux(mu_new, aux.eta)
            f2_cur = f2_try
        else:
            status["mu"] = "held"
        blocks["mu"] = f2_cur

        eta_new = update_eta(channels, op, prec, aux, params)
        f2_try = f2_objective(channels, op, prec, FpAux(aux.mu, eta_new), params)
        if f2_try >= f2_cur - slack(f2_cur):
            aux = FpAux(aux.mu, eta_new)
            f2_cur = f2_try
        else:
            status["eta"] = "held"
        blocks["eta"] = f2_cur

        w_prob = assemble_w_problem(channels, op, aux, params,
                                    include_reflect_cap=budget_ok)
        w_new, rep_w = solve_quad_max(w_prob, opts.solver)
        status["w"] = rep_w.status
        cand = Precoder(w_new.reshape(dims.K, dims.N))
        f2_try = f2_objective(channels, op, cand, aux, params)
        if rep_w.status != INFEASIBLE and f2_try >= f2_cur - slack(f2_cur):
            prec = cand
            f2_cur = f2_try
        else:
            status["w"] = status["w"] + ",held"
        blocks["w"] = f2_cur

        if budget_ok and np.any(state.a > 0):
            theta_new, residuals, th_status = admm_theta_loop(
                state, channels, prec, aux, params, admm, opts)
            trace.admm_residuals.append(residuals)
            status["theta"] = th_status
            a_cur = state.a
            cand_state = RisState(theta_new, a_cur)
            cand_op = build_reflection_operator(cand_state, dims)
            refl = reflect_power(channels, cand_op, prec, params)
            if refl > p_ris:
                # projection to unit modulus can overshoot the budget; a uniform
                # amplification shrink restores it exactly
                a_cur = a_cur * np.sqrt(p_ris / refl) * (1 - 1e-12)
                cand_state = RisState(theta_new, a_cur)
                cand_op = build_reflection_operator(cand_state, dims)
            state, op = cand_state, cand_op
            f2_cur = f2_objective(channels, op, prec, aux, params)
        else:
            trace.admm_residuals.append([])
        blocks["theta"] = f2_cur

        if budget_ok:
            a_prob = assemble_a_problem(channels, op, prec, aux, params, dims)
            a_new, rep_a = solve_quad_max(a_prob, opts.solver)
            status["a"] = rep_a.status
            cand_state = RisState(state.theta, np.maximum(a_new.real, 0.0))
            cand_op = build_reflection_operator(cand_state, dims)
            f2_try = f2_objective(channels, cand_op, prec, aux, params)
            if rep_a.status != INFEASIBLE and f2_try >= f2_cur - slack(f2_cur):
                state, op = cand_state, cand_op
                f2_cur = f2_try
            else:
                status["a"] = status["a"] + ",held"
        blocks["a"] = f2_cur

        trace.block_f2.append(blocks)
        trace.statuses.append(status)

        # boundary diagnostics with refreshed auxiliaries
        mu_b = update_mu(channels, op, prec, params)
        eta_b = update_eta(channels, op, prec, FpAux(mu_b, np.zeros(dims.K)), params)
        trace.outer_f2.append(f2_objective(channels, op, prec, FpAux(mu_b, eta_b), params))
        rate = sum_rate(channels, op, prec, params)
        trace.outer_sum_rate.append(rate)

        if abs(rate - rate_prev) <= opts.outer_tol * max(1.0, abs(rate_prev)):
            break
        rate_prev = rate

    return prec, state, trace
