"""Dense convex micro-solvers for the subproblem classes the algorithms emit.

Everything here is deterministic, self-contained and dense: subproblem sizes
stay small (a few hundred variables at most), so factorised Newton steps and
scalar bisection are simpler and more reproducible than pulling in a conic
modelling stack.

Solver classes
--------------
* `solve_quad_max`   - maximise a concave quadratic under at most two centred
  ellipsoid caps (precoder step), or under one diagonal cap plus entrywise
  nonnegativity (amplification step).  Dual bisection with a closed-form inner
  stationary point; projected gradient plus an active-set polish for the
  nonnegative variant.
* `solve_box_qcqp_min` - minimise a strictly convex quadratic over per-entry
  unit disks and convex quadratic constraints (phase-shift step).  Log-barrier
  path following on the realified variable, with a phase-I slack barrier when
  no strictly feasible start is known.
* `solve_socp_power` / `solve_a_socp_min` - minimum-power precoding and
  amplification under SINR cone constraints, via the standard quadratic-form
  barrier for second-order cones.
* `rcg_unit_modulus` - Riemannian conjugate-gradient ascent on the
  unit-modulus torus (phase-shift initialisation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fp import QuadMaxProblem

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-7
    max_iter: int = 500
    bisection_tol: float = 1e-13
    barrier_mu: float = 20.0

    def __post_init__(self):
        if min(self.kkt_tol, self.bisection_tol) <= 0 or self.barrier_mu <= 1:
            raise ValueError("tolerances must be positive and barrier_mu > 1")


@dataclass
class SolveReport:
    status: str
    kkt_residual: float
    iterations: int
    objective: float


# ---------------------------------------------------------------------------
# shared numerics
# ---------------------------------------------------------------------------

def solve_hermitian(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hermitian solve with trace-scaled jitter and lstsq fallback."""
    n = A.shape[0]
    tr = np.real(np.trace(A))
    scale = tr / n if np.isfinite(tr) and tr > 0 else 1.0
    Aj = A + (1e-12 * scale) * np.eye(n, dtype=A.dtype)
    try:
        return np.linalg.solve(Aj, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(Aj, b, rcond=None)[0]


def realify_hermitian(A: np.ndarray) -> np.ndarray:
    """Symmetric 2n x 2n matrix with z^T out z = x^H A x for z = [Re x; Im x]."""
    Ar, Ai = A.real, A.imag
    return np.block([[Ar, -Ai], [Ai, Ar]])


def realify_vector(x: np.ndarray) -> np.ndarray:
    """Real 2n vector with z^T out = Re{x^H arg} under the same stacking."""
    return np.concatenate([x.real, x.imag])


def complexify(z: np.ndarray) -> np.ndarray:
    n = z.shape[0] // 2
    return z[:n] + 1j * z[n:]


def max_eigenvalue_sym(S: np.ndarray, tol: float = 1e-9, max_iter: int = 500):
    """Largest (signed) eigenvalue of a symmetric matrix by power iteration.

    Two stages: iterate on S^2 for the spectral radius, then on the shifted
    S + rho*I whose dominant eigenvalue is rho + lambda_max.  Returns
    (estimate, converged); callers needing a guaranteed upper bound should
    fall back to ||S||_F when converged is False.
    """
    n = S.shape[0]
    if n == 0:
        return 0.0, True
    fro = float(np.linalg.norm(S))
    if fro == 0.0:
        return 0.0, True
    v0 = np.ones(n) + 1e-3 * np.arange(n)  # deterministic, unlikely orthogonal start
    v0 /= np.linalg.norm(v0)
    v = v0.copy()
    rho = fro
    for _ in range(max_iter // 2):
        w = S @ (S @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, True
        v_new = w / nw
        rho_new = np.sqrt(nw)
        if abs(rho_new - rho) <= tol * max(1.0, abs(rho_new)):
            rho = rho_new
            v = v_new
            break
        rho, v = rho_new, v_new

    # fresh start: the squared iteration may have deflated the +rho direction
    v = v0
    lam = float(v @ (S @ v))
    for it in range(max_iter):
        w = S @ v + rho * v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return -rho, True  # v in the kernel of S + rho I: lambda_min = -rho attained
        v = w / nw
        lam_new = float(v @ (S @ v))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new, True
        lam = lam_new
    return lam, False


def max_eigenvalue_upper(S: np.ndarray, tol: float = 1e-9, max_iter: int = 500) -> float:
    """Guaranteed upper bound on lambda_max(S), tight when power iteration converges."""
    lam, ok = max_eigenvalue_sym(S, tol, max_iter)
    if not ok:
        return float(np.linalg.norm(S))
    # Rayleigh quotients approach lambda_max from below; pad by the tolerance.
    return lam + tol * max(1.0, abs(lam))


# ---------------------------------------------------------------------------
# quadratic maximisation under ellipsoid caps (precoder / amplification steps)
# ---------------------------------------------------------------------------

def _constraint_value(S, w):
    if S is None:
        return float(np.real(np.vdot(w, w)))
    return float(np.real(np.vdot(w, S @ w)))


def _stationary_point(x, Y, constraints, lam):
    A = Y.astype(complex, copy=True)
    n = A.shape[0]
    for lam_j, con in zip(lam, constraints):
        if lam_j == 0.0:
            continue
        if con.S is None:
            A[np.diag_indices(n)] += lam_j
        else:
            A = A + lam_j * con.S
    return 0.5 * solve_hermitian(A, x)


def _solve_quad_max_dual(p: QuadMaxProblem, opts: SolverOptions):
    """Dual descent on the (at most two) multipliers: coordinate bisection to
    bracket, then projected Newton with the analytic dual Hessian."""
    x, Y, cons = p.x, p.Y, p.constraints
    n = x.shape[0]
    J = len(cons)
    lam = np.zeros(J)
    feas_tol = 1e-10
    bounds = np.array([c.bound for c in cons])

    def A_of(lam_vec):
        A = Y.astype(complex, copy=True)
        for lam_j, con in zip(lam_vec, cons):
            if lam_j == 0.0:
                continue
            if con.S is None:
                A[np.diag_indices(n)] += lam_j
            else:
                A = A + lam_j * con.S
        return A

    def w_of(lam_vec):
        return 0.5 * solve_hermitian(A_of(lam_vec), x)

    def dual_value(lam_vec):
        w = w_of(lam_vec)
        return 0.25 * float(np.real(np.vdot(x, 2.0 * w))) + float(lam_vec @ bounds)

    iters = 0
    for sweep in range(4):  # coordinate bisection: bracket each multiplier
        moved = False
        for j, con in enumerate(cons):
            lam_try = lam.copy()
            lam_try[j] = 0.0
            if _constraint_value(con.S, w_of(lam_try)) <= con.bound * (1 + feas_tol) + 1e-300:
                if lam[j] != 0.0:
                    moved = True
                lam[j] = 0.0
                continue
            lo = 0.0
            hi = max(lam[j], 1.0)
            lam_try[j] = hi
            for _ in range(200):
                if _constraint_value(con.S, w_of(lam_try)) <= con.bound:
                    break
                hi *= 4.0
                lam_try[j] = hi
                iters += 1
            for _ in range(60):
                if hi - lo <= max(opts.bisection_tol * hi, 1e-300):
                    break
                mid = 0.5 * (lo + hi)
                lam_try[j] = mid
                if _constraint_value(con.S, w_of(lam_try)) <= con.bound:
                    hi = mid
                else:
                    lo = mid
                iters += 1
            if abs(hi - lam[j]) > 1e-12 * (1 + hi):
                moved = True
            lam[j] = hi
        if not moved:
            break

    # projected Newton polish on the dual (handles coupled active constraints)
    mats = [np.eye(n, dtype=complex) if c.S is None else c.S for c in cons]
    for _ in range(60):
        A = A_of(lam)
        w = 0.5 * solve_hermitian(A, x)
        cvals = np.array([_constraint_value(S, w) for S in mats])
        grad = bounds - cvals  # gradient of the dual
        active = (lam > 0) | (grad < -feas_tol * np.maximum(1.0, np.abs(bounds)))
        resid = max(np.abs(grad[lam > 0] / np.maximum(1.0, bounds[lam > 0])).max(initial=0.0),
                    np.maximum(-grad / np.maximum(1.0, np.abs(bounds)), 0.0).max(initial=0.0))
        if resid <= 1e-12:
            break
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        Sw = [mats[j] @ w for j in idx]
        AiSw = [solve_hermitian(A, sw) for sw in Sw]
        Hd = np.array([[2.0 * float(np.real(np.vdot(Sw[a], AiSw[b])))
                        for b in range(len(idx))] for a in range(len(idx))])
        Hd[np.diag_indices_from(Hd)] += 1e-14 * (1.0 + np.abs(Hd).max())
        try:
            step = np.linalg.solve(Hd, -grad[idx])
        except np.linalg.LinAlgError:
            break
        g0 = dual_value(lam)
        t = 1.0
        improved = False
        for _ in range(40):
            lam_new = lam.copy()
            lam_new[idx] = np.maximum(lam[idx] + t * step, 0.0)
            if dual_value(lam_new) <= g0 + 1e-15 * (1 + abs(g0)):
                lam = lam_new
                improved = True
                break
            t *= 0.5
        iters += 1
        if not improved:
            break

    w = w_of(lam)
    # radial safety net: all constraints are centred quadratics, so a uniform
    # shrink restores feasibility without changing the multipliers' roles
    viol = 1.0
    for con in cons:
        c = _constraint_value(con.S, w)
        if c > con.bound:
            viol = max(viol, c / max(con.bound, 1e-300))
    if viol > 1.0:
        w = w / np.sqrt(viol) * (1 - 1e-12)

    obj = p.objective(w)
    # KKT residuals (relative)
    A = Y.astype(complex, copy=True)
    for lam_j, con in zip(lam, cons):
        if con.S is None:
            A[np.diag_indices(n)] += lam_j
        else:
            A = A + lam_j * con.S
    stat = np.linalg.norm(x - 2.0 * (A @ w)) / max(1.0, np.linalg.norm(x))
    feas = 0.0
    comp = 0.0
    for lam_j, con in zip(lam, cons):
        c = _constraint_value(con.S, w)
        feas = max(feas, (c - con.bound) / max(1.0, abs(con.bound)))
        comp = max(comp, lam_j * abs(con.bound - c) / max(1.0, abs(obj), lam_j * abs(con.bound)))
    kkt = max(stat, feas, comp, 0.0)
    status = OPTIMAL if kkt <= opts.kkt_tol else MAX_ITER
    return w, SolveReport(status, float(kkt), iters, obj)


def _project_orthant_ball(u, ball_idx, radius_sq):
    """Exact projection onto {u >= 0} intersected with a ball on a coordinate subset."""
    out = np.maximum(u, 0.0)
    if ball_idx.size:
        nrm_sq = float(np.sum(out[ball_idx] ** 2))
        if nrm_sq > radius_sq > 0:
            out = out.copy()
            out[ball_idx] *= np.sqrt(radius_sq / nrm_sq)
        elif radius_sq == 0.0:
            out = out.copy()
            out[ball_idx] = 0.0
    return out


def _solve_quad_max_nonneg(p: QuadMaxProblem, opts: SolverOptions):
    """Projected gradient with active-set polish for the amplification step."""
    if len(p.constraints) != 1:
        raise ValueError("nonneg quadratic maximisation expects exactly one cap")
    con = p.constraints[0]
    r = np.real(p.x).astype(float)
    n = r.shape[0]
    Rs = np.real(p.Y)
    Rs = 0.5 * (Rs + Rs.T)
    t = np.ones(n) if con.S is None else np.real(np.diag(con.S)).copy()
    if con.S is not None and np.abs(con.S - np.diag(np.diag(con.S))).max() > 1e-12 * (1 + np.abs(con.S).max()):
        raise ValueError("nonneg cap must be diagonal")
    b = float(con.bound)
    if b < 0:
        return np.zeros(n), SolveReport(INFEASIBLE, np.inf, 0, 0.0)

    # u_l = sqrt(t_l) a_l turns the cap into a ball on the coordinates with t_l > 0
    pos = t > 0
    d = np.where(pos, np.sqrt(np.where(pos, t, 1.0)), 1.0)
    rt = r / d
    Rt = Rs / np.outer(d, d)
    ball_idx = np.flatnonzero(pos)

    def obj_u(u):
        return float(rt @ u - u @ (Rt @ u))

    lip = 2.0 * max_eigenvalue_upper(Rt) if Rt.size else 0.0
    step = 1.0 / max(lip, 1e-12)
    u = _project_orthant_ball(0.5 * solve_hermitian(Rt + 1e-12 * np.eye(n), rt).real, ball_idx, b)
    iters = 0
    for it in range(opts.max_iter):
        grad = rt - 2.0 * (Rt @ u)
        u_new = _project_orthant_ball(u + step * grad, ball_idx, b)
        iters += 1
        if np.linalg.norm(u_new - u) <= 1e-14 * (1.0 + np.linalg.norm(u)):
            u = u_new
            break
        u = u_new

    # active-set polish: exact stationary point on the free coordinates
    for _ in range(4):
        grad = rt - 2.0 * (Rt @ u)
        scale_u = max(1.0, np.abs(u).max() if u.size else 1.0)
        free = (u > 1e-11 * scale_u) | ((u >= 0) & (grad > 1e-11 * max(1.0, np.abs(grad).max())))
        if not np.any(free):
            u = np.zeros(n)
            break
        F = np.flatnonzero(free)
        ballF = np.intersect1d(F, ball_idx)
        RFF = Rt[np.ix_(F, F)]
        rF = rt[F]
        uF = 0.5 * solve_hermitian(RFF + 1e-14 * np.eye(F.size), rF).real
        cand = np.zeros(n)
        cand[F] = uF
        nu = 0.0
        in_ball = float(np.sum(cand[ball_idx] ** 2)) <= b * (1 + 1e-12) if ball_idx.size else True
        if not in_ball:
            # secular bisection on the cap multiplier
            mask = np.zeros(F.size)
            mask[np.searchsorted(F, ballF)] = 1.0
            def u_of(nu_val):
                return 0.5 * solve_hermitian(RFF + nu_val * np.diag(mask) + 1e-14 * np.eye(F.size), rF).real
            lo_nu, hi_nu = 0.0, 1.0
            for _ in range(200):
                cF = u_of(hi_nu)
                if float(np.sum((cF * mask) ** 2)) <= b:
                    break
                hi_nu *= 4.0
            for _ in range(100):
                mid = 0.5 * (lo_nu + hi_nu)
                cF = u_of(mid)
                if float(np.sum((cF * mask) ** 2)) <= b:
                    hi_nu = mid
                else:
                    lo_nu = mid
            nu = hi_nu
            uF = u_of(nu)
            cand = np.zeros(n)
            cand[F] = uF
        if np.all(cand >= -1e-12 * scale_u) and obj_u(np.maximum(cand, 0.0)) >= obj_u(u) - 1e-15 * (1 + abs(obj_u(u))):
            u = _project_orthant_ball(cand, ball_idx, b)
            break
        # polish disagreed with the working set: take a PG step and retry
        grad = rt - 2.0 * (Rt @ u)
        u = _project_orthant_ball(u + step * grad, ball_idx, b)
        iters += 1

    a = u / d
    obj = p.objective(a.astype(complex))
    # KKT: estimate the cap multiplier from the radial gradient component
    grad = rt - 2.0 * (Rt @ u)
    nrm_sq = float(np.sum(u[ball_idx] ** 2)) if ball_idx.size else 0.0
    nu = 0.0
    if ball_idx.size and nrm_sq >= b * (1 - 1e-9) and nrm_sq > 0:
        nu = max(0.0, float(grad[ball_idx] @ u[ball_idx]) / (2.0 * nrm_sq))
    resid = grad.copy()
    resid[ball_idx] -= 2.0 * nu * u[ball_idx]
    gs = max(1.0, np.abs(rt).max() if rt.size else 1.0)
    scale_u = max(1.0, np.abs(u).max() if u.size else 1.0)
    active = u <= 1e-11 * scale_u
    stat = max(np.abs(resid[~active]).max() / gs if np.any(~active) else 0.0,
               np.max(resid[active]) / gs if np.any(active) else 0.0, 0.0)
    feas = max(0.0, (nrm_sq - b) / max(1.0, b))
    kkt = max(stat, feas)
    status = OPTIMAL if kkt <= opts.kkt_tol else MAX_ITER
    return a, SolveReport(status, float(kkt), iters, obj)


def solve_quad_max(p: QuadMaxProblem, opts: SolverOptions | None = None):
    """Maximise Re{x^H w} - w^H Y w subject to the problem's quadratic caps.

    Returns (argmax, SolveReport).  Infeasible caps (negative bounds) are
    reported rather than raised; the zero vector is returned alongside.
    """
    opts = opts or SolverOptions()
    if any(c.bound < 0 for c in p.constraints):
        return np.zeros(p.x.shape[0], dtype=float if p.nonneg else complex), \
            SolveReport(INFEASIBLE, np.inf, 0, 0.0)
    if p.nonneg:
        return _solve_quad_max_nonneg(p, opts)
    if np.linalg.norm(p.x) == 0.0:
        return np.zeros(p.x.shape[0], dtype=complex), SolveReport(OPTIMAL, 0.0, 0, 0.0)
    return _solve_quad_max_dual(p, opts)


# ---------------------------------------------------------------------------
# damped-Newton centering (shared by every barrier solver below)
# ---------------------------------------------------------------------------

def _newton_centering(value_fn, fgh_fn, z, tol, max_steps):
    """Minimise a self-concordant barrier objective; value_fn must return +inf
    outside the domain.  Returns (z, steps, final_decrement_sq).

    Uses the standard damped step 1/(1+lambda) outside the quadratic
    convergence region, falling back to backtracking only when the damped
    step fails numerically."""
    steps = 0
    lam_sq = np.inf
    for _ in range(max_steps):
        phi, grad, hess = fgh_fn(z)
        n = hess.shape[0]
        jitter = 1e-12 * (1.0 + np.abs(np.diag(hess)).max())
        try:
            delta = np.linalg.solve(hess + jitter * np.eye(n), -grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(hess + jitter * np.eye(n), -grad, rcond=None)[0]
        lam_sq = float(-grad @ delta)
        if lam_sq <= 2.0 * tol:
            break
        gTd = float(grad @ delta)
        alpha = 1.0
        accepted = False
        while alpha > 1e-16:
            z_try = z + alpha * delta
            phi_try = value_fn(z_try)
            if np.isfinite(phi_try) and phi_try <= phi + 0.25 * alpha * gTd:
                z = z_try
                accepted = True
                break
            alpha *= 0.5
        steps += 1
        if not accepted:
            break
    return z, steps, max(lam_sq, 0.0)


# ---------------------------------------------------------------------------
# box-constrained QCQP minimisation (phase-shift steps)
# ---------------------------------------------------------------------------

def _disk_values(z, M):
    u, v = z[:M], z[M:]
    return u * u + v * v - 1.0


def _quad_value(quad, z):
    Lam, beta, c = quad
    return float(z @ (Lam @ z) + beta @ z + c)


def _box_phase1(quads, M, z0, opts):
    """Minimise the worst constraint violation inside the unit disks.

    Returns (z, smin): z strictly satisfies every quadratic when smin < 0.
    """
    n = 2 * M
    margin = 1e-6

    def g_all(z):
        return np.array([_quad_value(q, z) for q in quads])

    z = z0.copy()
    s = float(np.max(g_all(z))) + 1.0

    def value(x):
        zz, ss = x[:n], x[n]
        d = _disk_values(zz, M)
        g = g_all(zz)
        if np.any(d >= 0) or np.any(g - ss >= 0):
            return np.inf
        return t * ss - np.sum(np.log(-d)) - np.sum(np.log(ss - g))

    def fgh(x):
        zz, ss = x[:n], x[n]
        d = _disk_values(zz, M)
        g = g_all(zz)
        phi = t * ss - np.sum(np.log(-d)) - np.sum(np.log(ss - g))
        grad = np.zeros(n + 1)
        hess = np.zeros((n + 1, n + 1))
        grad[n] = t
        u, v = zz[:M], zz[M:]
        inv_d = 1.0 / (-d)
        grad[:M] += 2.0 * u * inv_d
        grad[M:n] += 2.0 * v * inv_d
        ii = np.arange(M)
        hess[ii, ii] += 2.0 * inv_d + 4.0 * u * u * inv_d ** 2
        hess[M + ii, M + ii] += 2.0 * inv_d + 4.0 * v * v * inv_d ** 2
        hess[ii, M + ii] += 4.0 * u * v * inv_d ** 2
        hess[M + ii, ii] += 4.0 * u * v * inv_d ** 2
        for q, gj in zip(quads, g):
            Lam, beta, _ = q
            slack = ss - gj
            gz = 2.0 * (Lam @ zz) + beta
            gfull = np.concatenate([-gz, [1.0]])
            grad += -gfull / slack
            hess += np.outer(gfull, gfull) / slack ** 2
            hess[:n, :n] += 2.0 * Lam / slack
        return phi, grad, hess

    x = np.concatenate([z, [s]])
    t = 1.0
    total = 0
    for _ in range(60):
        x, steps, _ = _newton_centering(value, fgh, x, 1e-9, 60)
        total += steps
        s_cur = x[n]
        if s_cur < -margin:
            return x[:n], float(s_cur)
        gap = (len(quads) + M) / t
        if gap <= 1e-9 * max(1.0, abs(s_cur)):
            break
        t *= opts.barrier_mu
    return x[:n], float(x[n])


def solve_box_qcqp_min(Upsilon: np.ndarray, zeta: np.ndarray, quad_constraints,
                       opts: SolverOptions | None = None, theta0: np.ndarray | None = None):
    """Minimise theta^H Upsilon theta + Re{theta^H zeta} over the unit polydisk.

    quad_constraints is a list of (Lambda, beta, c) convex quadratics
    theta^H Lambda theta + Re{theta^H beta} + c <= 0 (Lambda Hermitian PSD,
    beta may be None).  Returns (theta, SolveReport); the solution is strictly
    feasible and kkt_residual carries the final duality-gap estimate.
    """
    theta, rep, _ = _box_qcqp_min_impl(Upsilon, zeta, quad_constraints, opts, theta0, None)
    return theta, rep


def _box_qcqp_min_impl(Upsilon, zeta, quad_constraints, opts, theta0, t_start):
    """Worker with warm-startable barrier parameter; returns (theta, report, t)."""
    opts = opts or SolverOptions()
    Ups = np.asarray(Upsilon, dtype=complex)
    zt = np.asarray(zeta, dtype=complex)
    M = Ups.shape[0]
    n = 2 * M

    Ub = realify_hermitian(Ups)
    cb = realify_vector(zt)
    s_obj = max(np.abs(Ub).max(), np.abs(cb).max() if cb.size else 0.0, 1e-300)
    Ubn, cbn = Ub / s_obj, cb / s_obj

    quads = []
    for Lam, beta, c in quad_constraints:
        Lb = realify_hermitian(np.asarray(Lam, dtype=complex)) if Lam is not None \
            else np.zeros((n, n))
        bb = realify_vector(np.asarray(beta, dtype=complex)) if beta is not None \
            else np.zeros(n)
        lam_mag = np.abs(Lb).max() if Lb.size else 0.0
        b_mag = float(np.linalg.norm(bb))
        if lam_mag < 1e-300 and b_mag < 1e-300:
            if c > 0:
                return np.zeros(M, dtype=complex), SolveReport(INFEASIBLE, np.inf, 0, 0.0), None
            continue  # vacuous
        scale = max(abs(c), float(np.linalg.norm(Lb)), b_mag, 1e-300)
        quads.append((Lb / scale, bb / scale, c / scale))

    # stack the objective with the constraints: row 0 is the objective, the
    # rest are the scaled quadratics, all evaluated in one fused product
    J = len(quads)
    A_stack = np.empty((J + 1, n, n))
    b_stack = np.empty((J + 1, n))
    c_stack = np.empty(J + 1)
    A_stack[0], b_stack[0], c_stack[0] = Ubn, cbn, 0.0
    for j, (Lj, bj, cj) in enumerate(quads):
        A_stack[j + 1], b_stack[j + 1], c_stack[j + 1] = Lj, bj, cj
    A_flat = A_stack.reshape(J + 1, n * n)

    def all_values(z):
        zz = np.outer(z, z).reshape(-1)
        return A_flat @ zz + b_stack @ z + c_stack

    def g_values(z):
        return all_values(z)[1:]

    def strictly_feasible(z):
        if np.any(_disk_values(z, M) >= -1e-12):
            return False
        g = g_values(z)
        return bool(np.all(g < -1e-11)) if g.size else True

    # start: warm candidate, origin, then phase-I
    z = None
    candidates = []
    if theta0 is not None:
        th0 = np.asarray(theta0, dtype=complex)
        mag = np.abs(th0).max() if th0.size else 0.0
        shrink = (1.0 - 1e-7) / max(1.0, mag)
        candidates.append(realify_vector(th0 * shrink))
    candidates.append(np.zeros(n))
    for cand in candidates:
        if strictly_feasible(cand):
            z = cand
            break
    iters = 0
    if z is None:
        z, smin = _box_phase1(quads, M, candidates[0], opts)
        if smin >= -1e-12 or not strictly_feasible(z):
            return complexify(z), SolveReport(INFEASIBLE, np.inf, 0, float(smin)), None

    def f0(z_):
        return float(z_ @ (Ubn @ z_) + cbn @ z_)

    u_idx = np.arange(M)

    m_total = len(quads) + M
    t_cold = max(1.0, m_total / (abs(f0(z)) + 1.0))
    t = t_start if t_start is not None else t_cold

    def value(z_):
        vals = all_values(z_)
        d = z_[:M] * z_[:M] + z_[M:] * z_[M:] - 1.0
        if d.max() >= 0 or (J and vals[1:].max() >= 0):
            return np.inf
        out = t * vals[0] - np.log(-d).sum()
        if J:
            out -= np.log(-vals[1:]).sum()
        return out

    def fgh(z_):
        vals = all_values(z_)
        g = vals[1:]
        lin = A_stack @ z_            # (J+1, n): A_j z
        phi = t * vals[0] - (np.log(-g).sum() if J else 0.0)
        grad = t * (2.0 * lin[0] + cbn)
        hess = t * 2.0 * Ubn.copy()
        u, v = z_[:M], z_[M:]
        d = u * u + v * v - 1.0
        phi -= np.log(-d).sum()
        inv_d = 1.0 / (-d)
        grad[:M] += 2.0 * u * inv_d
        grad[M:] += 2.0 * v * inv_d
        hess[u_idx, u_idx] += 2.0 * inv_d + 4.0 * u * u * inv_d ** 2
        hess[M + u_idx, M + u_idx] += 2.0 * inv_d + 4.0 * v * v * inv_d ** 2
        hess[u_idx, M + u_idx] += 4.0 * u * v * inv_d ** 2
        hess[M + u_idx, u_idx] += 4.0 * u * v * inv_d ** 2
        for j in range(J):
            gz = 2.0 * lin[j + 1] + b_stack[j + 1]
            grad += gz / (-g[j])
            hess += np.outer(gz, gz) / g[j] ** 2 + 2.0 * A_stack[j + 1] / (-g[j])
        return phi, grad, hess

    status = OPTIMAL
    warm_attempt = t_start is not None
    for _ in range(80):
        z_new, steps, dec_sq = _newton_centering(value, fgh, z, 1e-10, 60)
        if warm_attempt and dec_sq > 2e-9:
            # warm path parameter did not center cleanly: restart cold
            warm_attempt = False
            t = t_cold
            iters += steps
            continue
        warm_attempt = False
        z = z_new
        iters += steps
        if m_total / t <= opts.kkt_tol * max(1.0, abs(f0(z))):
            break
        if iters > 40 * opts.max_iter:
            status = MAX_ITER
            break
        t *= opts.barrier_mu

    # KKT: at the barrier optimum stationarity holds with the central-path
    # multipliers up to the Newton decrement (measured in the barrier metric,
    # so divide by t); complementarity slack is the duality gap
    stat = np.sqrt(dec_sq) / t / max(1.0, np.abs(cbn).max())
    comp = (m_total / t) / max(1.0, abs(f0(z)))
    kkt = max(stat, comp)
    if status == OPTIMAL and kkt > opts.kkt_tol:
        status = MAX_ITER
    return complexify(z), SolveReport(status, float(kkt), iters, s_obj * f0(z)), t


# ---------------------------------------------------------------------------
# second-order cone barrier machinery (power-minimisation steps)
# ---------------------------------------------------------------------------

class _SocConstraint:
    """(c^T z + c0)^2 >= ||A z + b||^2 with c^T z + c0 > 0, pre-scaled."""

    def __init__(self, A, b, c, c0, scale=None):
        s = scale or max(float(np.abs(c).max() if c.size else 0.0), float(np.abs(A).max() if A.size else 0.0),
                         float(np.abs(b).max() if b.size else 0.0), abs(c0), 1e-300)
        self.A = A / s
        self.b = b / s
        self.c = c / s
        self.c0 = c0 / s
        self.AtA = self.A.T @ self.A
        self.ccT = np.outer(self.c, self.c)

    def lin(self, z):
        return float(self.c @ z + self.c0)

    def q(self, z):
        resid = self.A @ z + self.b
        return self.lin(z) ** 2 - float(resid @ resid)

    def margin(self, z):
        """Cone margin lin - ||resid||, positive inside."""
        resid = self.A @ z + self.b
        return self.lin(z) - float(np.linalg.norm(resid))

    def add_barrier(self, z, grad, hess):
        lin = self.lin(z)
        resid = self.A @ z + self.b
        qv = lin * lin - float(resid @ resid)
        gq = 2.0 * lin * self.c - 2.0 * (self.A.T @ resid)
        grad += -gq / qv - self.c / lin
        hess += np.outer(gq, gq) / qv ** 2 - (2.0 * self.ccT - 2.0 * self.AtA) / qv \
            + self.ccT / lin ** 2
        return qv, lin


def _complex_row(coeff: np.ndarray, offset: int, width: int):
    """Real rows (re, im) of the C-linear functional coeff^T w_block on the
    realified stack [Re w; Im w]; the block starts at `offset` complex coords."""
    n = width // 2
    re = np.zeros(width)
    im = np.zeros(width)
    cr, ci = coeff.real, coeff.imag
    sl = slice(offset, offset + coeff.shape[0])
    re[sl.start:sl.stop] = cr
    re[n + sl.start:n + sl.stop] = -ci
    im[sl.start:sl.stop] = ci
    im[n + sl.start:n + sl.stop] = cr
    return re, im


def _soc_barrier_minimize(H, socs, z0, m_total, opts, extra_log_idx=None,
                          newton_tol=1e-10):
    """Path-following for min z^T H z subject to SOC constraints (plus optional
    -log(z_i) domain terms on the coordinates in extra_log_idx)."""
    n = z0.shape[0]
    z = z0.copy()
    s_obj = max(np.abs(H).max(), 1e-300)
    Hn = H / s_obj
    log_idx = np.asarray(extra_log_idx if extra_log_idx is not None else [], dtype=int)

    def f0(z_):
        return float(z_ @ (Hn @ z_))

    def value(z_):
        if log_idx.size and np.any(z_[log_idx] <= 0):
            return np.inf
        out = t * f0(z_)
        for soc in socs:
            if soc.lin(z_) <= 0:
                return np.inf
            qv = soc.q(z_)
            if qv <= 0:
                return np.inf
            out -= np.log(qv) + np.log(soc.lin(z_))
        if log_idx.size:
            out -= np.sum(np.log(z_[log_idx]))
        return out

    def fgh(z_):
        grad = t * 2.0 * (Hn @ z_)
        hess = t * 2.0 * Hn.copy()
        phi = t * f0(z_)
        for soc in socs:
            qv, lin = soc.add_barrier(z_, grad, hess)
            phi -= np.log(qv) + np.log(lin)
        if log_idx.size:
            phi -= np.sum(np.log(z_[log_idx]))
            grad[log_idx] += -1.0 / z_[log_idx]
            hess[log_idx, log_idx] += 1.0 / z_[log_idx] ** 2
        return phi, grad, hess

    t = max(1.0, m_total / (abs(f0(z)) + 1.0))
    iters = 0
    status = OPTIMAL
    for _ in range(80):
        z, steps, dec_sq = _newton_centering(value, fgh, z, newton_tol, 60)
        iters += steps
        if m_total / t <= opts.kkt_tol * max(1.0, abs(f0(z))):
            break
        if iters > 40 * opts.max_iter:
            status = MAX_ITER
            break
        t *= opts.barrier_mu

    comp = (m_total / t) / max(1.0, abs(f0(z)))
    stat = np.sqrt(dec_sq) / t / max(1.0, np.abs(2.0 * (Hn @ z)).max())
    kkt = max(stat, comp)
    if status == OPTIMAL and kkt > opts.kkt_tol:
        status = MAX_ITER
    return z, SolveReport(status, float(kkt), iters, s_obj * f0(z))


def solve_socp_power(channels, op, params, Gamma=None, w0: np.ndarray | None = None,
                     opts: SolverOptions | None = None):
    """Minimum-power precoding under per-user SINR targets, RIS state fixed.

    Minimises nu1^-1 sum ||w_k||^2 + nu2^-1 sum ||Psi G w_k||^2 subject to
    gamma_k >= Gamma_k.  Each w_k is phase-rotated so its useful gain is real,
    which turns every SINR constraint into a second-order cone; the cone system
    is solved by barrier path following on the realified stacked precoder.

    Returns (W, SolveReport) with W of shape (K, N); on infeasibility W is the
    (unusable) zero matrix and status is "infeasible".
    """
    from .model import composite_channel_matrix, ris_noise_power_at_user

    opts = opts or SolverOptions()
    H = composite_channel_matrix(channels, op)
    K, N = H.shape
    gam = np.asarray(Gamma if Gamma is not None else params.gamma, dtype=float)
    noise = np.array([ris_noise_power_at_user(k, channels, op) for k in range(K)])
    sig_t = noise * params.sigma_z_sq + params.sigma_k_sq

    psi_G = op.psi_matmat(channels.G)
    C = np.eye(N) / params.nu1 + (np.conj(psi_G).T @ psi_G) / params.nu2

    def sinrs_of(W):
        cross = np.abs(np.conj(H) @ W.T) ** 2
        sig = np.diag(cross)
        return sig / (cross.sum(axis=1) - sig + sig_t)

    def scaled_start(dirs):
        # rotate rows so the useful gain is real-positive, then find the
        # smallest common scale meeting every target with margin
        gains = np.conj(H) @ dirs.T
        own = np.diag(gains)
        if np.any(np.abs(own) == 0):
            return None
        rot = dirs * np.conj(own / np.abs(own))[:, None]
        gains = np.conj(H) @ rot.T
        num = np.abs(np.diag(gains)) ** 2
        intf = np.sum(np.abs(gains) ** 2, axis=1) - num
        gm = gam * (1 + 1e-3)
        head = num - gm * intf
        if np.any(head <= 0):
            return None
        s_sq = np.max(gm * sig_t / head)
        W = np.sqrt(s_sq) * (1 + 1e-6) * rot
        return W if np.all(sinrs_of(W) >= gam * (1 + 1e-4)) else None

    candidates = []
    if w0 is not None and np.linalg.norm(w0) > 0:
        candidates.append(np.asarray(w0, dtype=complex))
    reg = np.mean(sig_t) * K / max(params.P_BS, 1e-300)
    gram = np.einsum("kn,km->nm", H, np.conj(H)) + reg * np.eye(N)
    candidates.append(solve_hermitian(gram, H.T).T)
    candidates.append(np.linalg.pinv(np.conj(H)).T)  # zero-forcing directions
    W_start = None
    for cand in candidates:
        W_start = scaled_start(cand)
        if W_start is not None:
            break
    if W_start is None:
        return np.zeros((K, N), dtype=complex), SolveReport(INFEASIBLE, np.inf, 0, np.inf)

    width = 2 * N * K
    socs = []
    for k in range(K):
        re_own, im_own = _complex_row(np.conj(H[k]), k * N, width)
        rows = []
        offs = []
        for i in range(K):
            if i == k:
                continue
            re_i, im_i = _complex_row(np.conj(H[k]), i * N, width)
            rows += [re_i, im_i]
            offs += [0.0, 0.0]
        rows.append(im_own / np.sqrt(gam[k]))
        offs.append(0.0)
        rows.append(np.zeros(width))
        offs.append(np.sqrt(sig_t[k]))
        socs.append(_SocConstraint(np.array(rows), np.array(offs),
                                   re_own / np.sqrt(gam[k]), 0.0))

    Hbar = realify_hermitian(np.kron(np.eye(K), C))
    z0 = realify_vector(W_start.reshape(-1))
    z, report = _soc_barrier_minimize(Hbar, socs, z0, 2 * K, opts)
    W = complexify(z).reshape(K, N)

    feas = float(np.max(np.maximum(0.0, (gam - sinrs_of(W)) / gam)))
    report.kkt_residual = max(report.kkt_residual, feas)
    if report.status == OPTIMAL and feas > 1e-8:
        report.status = MAX_ITER
    return W, report


def _amp_socs(terms, gam, sigma_k_sq, phases):
    """Cone data for the amplification step under the given numerator rotations."""
    K, _, L = terms.b.shape
    socs = []
    for k in range(K):
        r = np.exp(-1j * phases[k])
        coeff_own = r * np.conj(terms.b[k, k])
        off_own = r * terms.alpha[k, k]
        sg = np.sqrt(gam[k])
        rows = []
        offs = []
        for i in range(K):
            if i == k:
                continue
            coeff = np.conj(terms.b[k, i])
            rows += [coeff.real, coeff.imag]
            offs += [terms.alpha[k, i].real, terms.alpha[k, i].imag]
        for l in range(L):
            row = np.zeros(L)
            row[l] = np.sqrt(terms.s[k, l])
            rows.append(row)
            offs.append(0.0)
        rows.append(coeff_own.imag / sg)
        offs.append(off_own.imag / sg)
        rows.append(np.zeros(L))
        offs.append(np.sqrt(sigma_k_sq[k]))
        socs.append(_SocConstraint(np.array(rows), np.array(offs),
                                   coeff_own.real / sg, off_own.real / sg))
    return socs


def _amp_phase1(socs, a0, opts):
    """Minimise the worst cone-margin violation over a > 0; returns (a, worst).

    A weak proximal pull towards the incumbent keeps the search bounded (the
    slack objective alone is indifferent to growing a)."""
    L = a0.shape[0]
    eps = 1e-2 / (1.0 + float(a0 @ a0))

    def margins(a):
        return np.array([-s.margin(a) for s in socs])  # <= 0 when feasible

    a = a0.copy()
    s = float(np.max(margins(a))) + 1.0

    def value(x):
        aa, ss = x[:L], x[L]
        if np.any(aa <= 0):
            return np.inf
        gm = margins(aa)
        if np.any(ss - gm <= 0):
            return np.inf
        return t * (ss + eps * float((aa - a0) @ (aa - a0))) \
            - np.sum(np.log(ss - gm)) - np.sum(np.log(aa))

    def fgh(x):
        aa, ss = x[:L], x[L]
        gm = margins(aa)
        phi = t * (ss + eps * float((aa - a0) @ (aa - a0))) \
            - np.sum(np.log(ss - gm)) - np.sum(np.log(aa))
        grad = np.zeros(L + 1)
        hess = np.zeros((L + 1, L + 1))
        grad[L] = t
        grad[:L] += t * 2.0 * eps * (aa - a0) - 1.0 / aa
        hess[np.arange(L), np.arange(L)] += t * 2.0 * eps + 1.0 / aa ** 2
        for soc in socs:
            resid = soc.A @ aa + soc.b
            nr = float(np.linalg.norm(resid))
            Atr = soc.A.T @ resid
            g_a = Atr / nr - soc.c
            slack = ss - (nr - soc.lin(aa))
            gfull = np.concatenate([-g_a, [1.0]])
            grad += -gfull / slack
            hess += np.outer(gfull, gfull) / slack ** 2
            hg = (soc.AtA - np.outer(Atr, Atr) / nr ** 2) / nr
            hess[:L, :L] += hg / slack
        return phi, grad, hess

    x = np.concatenate([a, [s]])
    t = 1.0
    for _ in range(60):
        x, _, _ = _newton_centering(value, fgh, x, 1e-9, 60)
        if x[L] < -1e-8:
            return x[:L], float(x[L])
        if (len(socs) + L + 1) / t <= 1e-9 * max(1.0, abs(x[L])):
            break
        t *= opts.barrier_mu
    return x[:L], float(x[L])


def solve_a_socp_min(terms, Gamma, sigma_k_sq, a0: np.ndarray,
                     opts: SolverOptions | None = None):
    """Minimum reflect-power amplification under SINR targets, theta and w fixed.

    Minimises a^T T a over a >= 0 subject to the per-user cones obtained by
    rotating each numerator to the incumbent's phase; a short sequence of
    re-rotation passes (each containing the previous solution) removes the
    restriction bias.  Returns (a, SolveReport).
    """
    opts = opts or SolverOptions()
    gam = np.asarray(Gamma, dtype=float)
    sigma_k_sq = np.asarray(sigma_k_sq, dtype=float)
    L = terms.t.shape[0]
    H = np.diag(terms.t)

    def numerators(a):
        return terms.alpha[np.arange(gam.size), np.arange(gam.size)] \
            + np.einsum("kl,l->k", np.conj(terms.b[np.arange(gam.size), np.arange(gam.size)]), a)

    def true_sinrs(a):
        vals = terms.alpha + np.einsum("kil,l->ki", np.conj(terms.b), a)
        num = np.abs(np.diag(vals)) ** 2
        intf = np.sum(np.abs(vals) ** 2, axis=1) - num
        return num / (intf + terms.s @ a ** 2 + sigma_k_sq)

    a_cur = np.maximum(np.asarray(a0, dtype=float), 1e-12 * (1 + np.abs(a0).max()))
    phases = np.angle(numerators(a_cur))
    best_a = None
    best_obj = np.inf
    report = None
    iters = 0
    for _ in range(3):
        socs = _amp_socs(terms, gam, sigma_k_sq, phases)
        a_start = a_cur.copy()
        margins = np.array([s.margin(a_start) for s in socs])
        if np.any(margins <= 1e-9):
            a_start, worst = _amp_phase1(socs, a_start, opts)
            if worst >= -1e-9:
                if best_a is not None:
                    break
                return np.asarray(a0, dtype=float), SolveReport(INFEASIBLE, np.inf, 0, np.inf)
        a_new, rep = _soc_barrier_minimize(H, socs, a_start, 2 * gam.size + L, opts,
                                           extra_log_idx=np.arange(L))
        iters += rep.iterations
        obj = float(a_new @ (H @ a_new))
        if best_a is None or obj < best_obj - 1e-12 * (1 + abs(best_obj)):
            best_obj, best_a, report = obj, a_new, rep
            a_cur = a_new
            phases = np.angle(numerators(a_cur))
        else:
            break

    if best_a is None:
        return np.asarray(a0, dtype=float), SolveReport(INFEASIBLE, np.inf, 0, np.inf)
    feas = float(np.max(np.maximum(0.0, (gam - true_sinrs(best_a)) / gam)))
    report.iterations = iters
    report.objective = best_obj
    report.kkt_residual = max(report.kkt_residual, feas)
    if report.status == OPTIMAL and feas > 1e-8:
        report.status = MAX_ITER
    return best_a, report


def rcg_unit_modulus(M_mat: np.ndarray, m_vec: np.ndarray, theta0: np.ndarray,
                     opts: SolverOptions | None = None) -> np.ndarray:
    """Maximise psi^H M psi + Re{psi^H m} over unit-modulus psi.

    Riemannian conjugate gradient on the torus: tangent projection of the
    Euclidean gradient 2 M psi + m, Polak-Ribiere directions with vector
    transport by re-projection, entrywise-normalisation retraction and Armijo
    backtracking.  Returns the best iterate found.
    """
    opts = opts or SolverOptions()
    M_mat = np.asarray(M_mat, dtype=complex)
    m_vec = np.asarray(m_vec, dtype=complex)
    scale = max(float(np.linalg.norm(M_mat)), float(np.linalg.norm(m_vec)), 1e-300)
    Mn = M_mat / scale
    mn = m_vec / scale

    psi = np.asarray(theta0, dtype=complex).copy()
    mag = np.abs(psi)
    psi = np.where(mag > 0, psi / np.where(mag > 0, mag, 1.0), 1.0)

    def f(p):
        return float(np.real(np.vdot(p, Mn @ p)) + np.real(np.vdot(p, mn)))

    def rgrad_of(p):
        eg = 2.0 * (Mn @ p) + mn
        return eg - np.real(eg * np.conj(p)) * p

    def retract(p):
        return p / np.abs(p)

    def tangent(x, p):
        return x - np.real(x * np.conj(p)) * p

    g = rgrad_of(psi)
    d = g.copy()
    fval = f(psi)
    best_psi, best_f = psi.copy(), fval
    alpha = 1.0
    tol = opts.kkt_tol * np.sqrt(psi.size)
    for _ in range(opts.max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            break
        slope = float(np.real(np.vdot(g, d)))
        if slope <= 0:
            d = g.copy()
            slope = gnorm ** 2
        alpha = min(alpha * 2.0, 1e6 / max(gnorm, 1e-300))
        accepted = False
        while alpha > 1e-20:
            cand = retract(psi + alpha * d)
            fc = f(cand)
            if fc >= fval + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        g_old = g
        psi_old = psi
        psi, fval = cand, fc
        if fval > best_f:
            best_f, best_psi = fval, psi.copy()
        g = rgrad_of(psi)
        g_old_t = tangent(g_old, psi)
        beta = max(0.0, float(np.real(np.vdot(g, g - g_old_t)))
                   / max(float(np.real(np.vdot(g_old, g_old))), 1e-300))
        d = g + beta * tangent(d, psi)
    return best_psi
