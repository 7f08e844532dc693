"""Power minimisation under per-user SINR targets.

BCD over three blocks: cone-programmed precoding, the constraint-side ADMM-MM
phase-shift step, and cone-programmed amplification.  The phase-shift step has
no descent guarantee of its own, so every block passes an acceptance guard:
candidates are kept only if the true SINRs (never the surrogates) stay within
tolerance of the targets and the tracked power term does not increase.  The
outer loop is therefore a descent method on the true total power.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fp import assemble_amp_terms
from .model import (ChannelSet, Precoder, RisState, SystemDims, SystemParams,
                    all_sinrs, bs_power, build_reflection_operator, reflect_power,
                    ris_power, sum_rate)
from .solvers import INFEASIBLE, SolverOptions, solve_a_socp_min, solve_socp_power
from .solvers import _box_qcqp_min_impl
from .sumrate import AdmmState, AlgoOptions, _unit_projection, dual_update, \
    initialize, shadow_update
from .surrogates import (build_pm_constraint_data, build_pm_constraint_surrogates,
                         pm_constraint_value)

SINR_RELTOL = 1e-3  # accepted relative shortfall against the targets


@dataclass
class PmRunTrace:
    """Per-outer total power, worst SINR slack, block powers and statuses."""

    outer_power: list = field(default_factory=list)
    block_power: list = field(default_factory=list)
    min_sinr_slack: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    admm_residuals: list = field(default_factory=list)
    feasible: bool = True


def _total_power(channels, op, prec, params, dims):
    return bs_power(prec, params) + ris_power(channels, op, prec, params, dims)


def _meets_targets(channels, op, prec, params):
    sinrs = all_sinrs(channels, op, prec, params)
    return bool(np.all(sinrs >= params.gamma * (1.0 - SINR_RELTOL)))


def pm_admm_theta_loop(state: RisState, channels: ChannelSet, precoder: Precoder,
                       params: SystemParams, admm: AdmmState, opts: AlgoOptions):
    """Reflect-power descent in theta under surrogate SINR constraints.

    Returns (theta_unit, residuals, status).  The caller re-checks the true
    SINRs at the projected point and keeps the incumbent on violation; a
    surrogate-infeasible subproblem also falls back to the incumbent.
    """
    dims = SystemDims(channels.h_d.shape[1], channels.h_d.shape[0],
                      state.theta.shape[0], state.a.shape[0])
    if not np.any(state.a > 0):
        # no amplification: the constraints do not depend on theta at all
        return _unit_projection(state.theta), [], "inactive"
    op = build_reflection_operator(state, dims)
    pm = build_pm_constraint_data(channels, precoder, op, params)
    if opts.reset_admm_duals:
        admm.vartheta = _unit_projection(state.theta)
        admm.omega = np.zeros(dims.M, dtype=complex)

    Omega = pm.Q2 + 0.5 * admm.rho * np.eye(dims.M)
    theta = state.theta.copy()
    residuals = []
    status = "ok"
    warm_t = None
    for _ in range(opts.admm_max_iter):
        surrs = build_pm_constraint_surrogates(pm, theta)
        quads = [(s.Lambda, s.beta, s.c) for s in surrs]
        varrho = -admm.rho * admm.vartheta + admm.omega
        theta_new, rep, warm_t = _box_qcqp_min_impl(Omega, varrho, quads,
                                                    opts.theta_solver, theta, warm_t)
        if rep.status == INFEASIBLE:
            status = "surrogate_infeasible"
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


def run_power_min(channels: ChannelSet, dims: SystemDims, params: SystemParams,
                  opts: AlgoOptions | None = None):
    """Full power-minimisation pipeline; returns (Precoder, RisState, PmRunTrace).

    When even the first precoding step is infeasible the trace is marked
    infeasible and the (unusable) initial state is returned.
    """
    opts = opts or AlgoOptions()
    channels.check_dims(dims)
    if params.gamma is None or np.any(params.gamma <= 0):
        raise ValueError("power minimisation needs strictly positive SINR targets")

    state, _ = initialize(channels, dims, params, opts)
    state = RisState(state.theta, np.ones(dims.L))
    op = build_reflection_operator(state, dims)
    admm = AdmmState(_unit_projection(state.theta),
                     np.zeros(dims.M, dtype=complex), opts.rho)
    trace = PmRunTrace()
    prec = None
    power_cur = np.inf

    for outer in range(opts.outer_max_iter):
        blocks = {}
        status = {}

        W_new, rep_w = solve_socp_power(channels, op, params,
                                        w0=None if prec is None else prec.W,
                                        opts=opts.solver)
        status["w"] = rep_w.status
        if rep_w.status == INFEASIBLE:
            if prec is None:
                trace.feasible = False
                trace.statuses.append(status)
                return Precoder(np.zeros((dims.K, dims.N), complex)), state, trace
        else:
            cand = Precoder(W_new)
            p_cand = _total_power(channels, op, cand, params, dims)
            if prec is None or (p_cand <= power_cur + 1e-12 * (1 + abs(power_cur))
                                and _meets_targets(channels, op, cand, params)):
                prec = cand
                power_cur = p_cand
            else:
                status["w"] += ",held"
        blocks["w"] = power_cur

        theta_new, residuals, th_status = pm_admm_theta_loop(
            state, channels, prec, params, admm, opts)
        trace.admm_residuals.append(residuals)
        cand_state = RisState(theta_new, state.a)
        cand_op = build_reflection_operator(cand_state, dims)
        refl_old = reflect_power(channels, op, prec, params)
        refl_new = reflect_power(channels, cand_op, prec, params)
        if th_status in ("ok",) and refl_new <= refl_old + 1e-12 * (1 + refl_old) \
                and _meets_targets(channels, cand_op, prec, params):
            state, op = cand_state, cand_op
            power_cur = _total_power(channels, op, prec, params, dims)
        else:
            th_status += ",held"
        status["theta"] = th_status
        blocks["theta"] = power_cur

        terms = assemble_amp_terms(channels, op, prec, params)
        a_new, rep_a = solve_a_socp_min(terms, params.gamma, params.sigma_k_sq,
                                        state.a, opts.solver)
        status["a"] = rep_a.status
        if rep_a.status != INFEASIBLE:
            cand_state = RisState(state.theta, np.maximum(a_new, 0.0))
            cand_op = build_reflection_operator(cand_state, dims)
            p_cand = _total_power(channels, cand_op, prec, params, dims)
            if p_cand <= power_cur + 1e-12 * (1 + abs(power_cur)) \
                    and _meets_targets(channels, cand_op, prec, params):
                state, op = cand_state, cand_op
                power_cur = p_cand
            else:
                status["a"] += ",held"
        blocks["a"] = power_cur

        sinrs = all_sinrs(channels, op, prec, params)
        trace.min_sinr_slack.append(float(np.min(sinrs / params.gamma - 1.0)))
        trace.block_power.append(blocks)
        trace.statuses.append(status)
        trace.outer_power.append(power_cur)

        if outer > 0 and abs(trace.outer_power[-2] - power_cur) \
                <= opts.outer_tol * max(1.0, abs(power_cur)):
            break

    return prec, state, trace
