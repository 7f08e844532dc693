"""Joint transmit precoding and reflection beamforming for sub-connected
active-RIS MU-MISO downlinks: models, bespoke convex solvers, the sum-rate and
power-minimisation pipelines, and a Monte-Carlo experiment harness."""

from .channels import Geometry, PathLossParams, draw_geometry, generate_channels, \
    path_loss, sample_rayleigh, trial_rng
from .fp import FpAux, InfeasibleBudget, QuadConstraint, QuadMaxProblem, \
    assemble_a_problem, assemble_w_problem, f2_objective, update_eta, update_mu
from .model import (ChannelSet, Precoder, ReflectionOperator, RisState, SystemDims,
                    SystemParams, all_sinrs, bs_power, build_reflection_operator,
                    composite_channel, ris_frobenius_power, ris_power, sinr, sum_rate)
from .powermin import PmRunTrace, pm_admm_theta_loop, run_power_min
from .solvers import (SolveReport, SolverOptions, rcg_unit_modulus,
                      solve_a_socp_min, solve_box_qcqp_min, solve_quad_max,
                      solve_socp_power)
from .sumrate import AdmmState, AlgoOptions, RunTrace, admm_theta_loop, initialize, \
    run_sum_rate_max

__all__ = [name for name in dir() if not name.startswith("_")]
