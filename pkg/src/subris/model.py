"""Sub-connected active-RIS algebra: dimensions, reflection operator, SINR/rate and power models.

The RIS groups its M elements into L sub-arrays of Q = M/L elements, each
driven by one amplifier.  Per sub-array the incident signals are phase
shifted, combined, amplified by a_l, re-split over the Q elements (1/sqrt(Q)
amplitude scaling) and re-emitted with a second phase shift.  The resulting
reflection matrix is block diagonal with rank-one blocks
(a_l/sqrt(Q)) * theta_l theta_l^T, which every hot path here exploits; dense
M x M materialisation only happens on demand (tests, tiny systems).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SystemDims:
    """Array sizes: N BS antennas, K users, M RIS elements, L amplifiers."""

    N: int
    K: int
    M: int
    L: int

    def __post_init__(self):
        if self.K < 1 or self.N < self.K:
            raise ValueError(f"need N >= K >= 1, got N={self.N}, K={self.K}")
        if self.L < 1 or self.M < self.L:
            raise ValueError(f"need M >= L >= 1, got M={self.M}, L={self.L}")
        if self.M % self.L != 0:
            raise ValueError(f"L must divide M exactly, got M={self.M}, L={self.L}")

    @property
    def Q(self) -> int:
        """Elements per sub-array."""
        return self.M // self.L


@dataclass(frozen=True)
class SystemParams:
    """Physical constants in linear units (watts).

    sigma_k_sq holds one noise power per user; gamma holds the per-user SINR
    targets (linear) and is only consulted by the power-minimisation path.
    """

    P_BS: float
    P_RIS_tot: float
    W_BS: float
    W_PS: float
    W_PA: float
    nu1: float
    nu2: float
    sigma_k_sq: np.ndarray
    sigma_z_sq: float
    gamma: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma_k_sq", np.asarray(self.sigma_k_sq, dtype=float))
        if self.gamma is not None:
            object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        for name in ("P_BS", "P_RIS_tot", "W_BS", "W_PS", "W_PA"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("nu1", "nu2"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if np.any(self.sigma_k_sq < 0) or self.sigma_z_sq < 0:
            raise ValueError("noise powers must be nonnegative")
        if self.gamma is not None and np.any(self.gamma < 0):
            raise ValueError("SINR targets must be nonnegative")

    def ris_reflect_budget(self, dims: SystemDims) -> float:
        """Power available for reflection: nu2 * (P_RIS_tot - M*W_PS - L*W_PA).

        May be negative; callers must treat that as an infeasible RIS budget,
        never clamp it silently.
        """
        return self.nu2 * (self.P_RIS_tot - dims.M * self.W_PS - dims.L * self.W_PA)

    def ris_budget_feasible(self, dims: SystemDims) -> bool:
        return self.ris_reflect_budget(dims) > 0.0


@dataclass(frozen=True)
class RisState:
    """Phase-shift coefficients theta (|theta_m| <= 1, unit modulus at output)
    and nonnegative per-amplifier gains a."""

    theta: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=complex))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")
        if np.any(self.a < 0) or not np.all(np.isfinite(self.a)):
            raise ValueError("amplification coefficients must be finite and >= 0")


@dataclass(frozen=True)
class ChannelSet:
    """One realisation of the three channel blocks.

    h_d: (K, N) BS->user direct rows; G: (M, N) BS->RIS; h_r: (K, M) RIS->user rows.
    """

    h_d: np.ndarray
    G: np.ndarray
    h_r: np.ndarray

    def __post_init__(self):
        for name in ("h_d", "G", "h_r"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")

    def check_dims(self, dims: SystemDims):
        if self.h_d.shape != (dims.K, dims.N):
            raise ValueError(f"h_d shape {self.h_d.shape} != {(dims.K, dims.N)}")
        if self.G.shape != (dims.M, dims.N):
            raise ValueError(f"G shape {self.G.shape} != {(dims.M, dims.N)}")
        if self.h_r.shape != (dims.K, dims.M):
            raise ValueError(f"h_r shape {self.h_r.shape} != {(dims.K, dims.M)}")


@dataclass(frozen=True)
class Precoder:
    """Transmit precoding vectors, one row per user: W is (K, N)."""

    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", np.asarray(self.W, dtype=complex))

    @property
    def w_stack(self) -> np.ndarray:
        """[w_1^T, ..., w_K^T]^T as a flat NK vector."""
        return self.W.reshape(-1)

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))


class ReflectionOperator:
    """Reflection beamforming of the sub-connected RIS in factored block form.

    Block l of Psi is (a_l/sqrt(Q)) * theta_l theta_l^T; Xi is the
    theta-independent core (1/sqrt(Q)) E^T A E with E = I_L (x) 1_Q^T, so that
    Psi = diag(theta) Xi diag(theta).  Products are evaluated per block in
    O(M); `psi` / `xi` assemble dense matrices and are meant for tests and
    small systems only.
    """

    def __init__(self, state: RisState, dims: SystemDims):
        if state.theta.shape != (dims.M,):
            raise ValueError(f"theta shape {state.theta.shape} != ({dims.M},)")
        if state.a.shape != (dims.L,):
            raise ValueError(f"a shape {state.a.shape} != ({dims.L},)")
        self.dims = dims
        self.theta = state.theta
        self.a = state.a
        self.theta_blocks = state.theta.reshape(dims.L, dims.Q)
        # per-block scalar of the Xi core: Xi block = block_scale_l * ones(Q, Q)
        self.block_scale = state.a / np.sqrt(dims.Q)

    @property
    def xi(self) -> np.ndarray:
        """Dense M x M Xi (test/small-system use)."""
        L, Q = self.dims.L, self.dims.Q
        out = np.zeros((self.dims.M, self.dims.M))
        for l in range(L):
            out[l * Q:(l + 1) * Q, l * Q:(l + 1) * Q] = self.block_scale[l]
        return out

    @property
    def psi(self) -> np.ndarray:
        """Dense M x M Psi (test/small-system use)."""
        L, Q = self.dims.L, self.dims.Q
        out = np.zeros((self.dims.M, self.dims.M), dtype=complex)
        for l in range(L):
            blk = self.block_scale[l] * np.outer(self.theta_blocks[l], self.theta_blocks[l])
            out[l * Q:(l + 1) * Q, l * Q:(l + 1) * Q] = blk
        return out

    def psi_matvec(self, x: np.ndarray) -> np.ndarray:
        """Psi @ x for an M vector."""
        xb = x.reshape(self.dims.L, self.dims.Q)
        combined = np.sum(self.theta_blocks * xb, axis=1)
        out = (self.block_scale * combined)[:, None] * self.theta_blocks
        return out.reshape(self.dims.M)

    def psi_matmat(self, X: np.ndarray) -> np.ndarray:
        """Psi @ X for an (M, n) matrix."""
        L, Q = self.dims.L, self.dims.Q
        Xb = X.reshape(L, Q, -1)
        combined = np.einsum("lq,lqn->ln", self.theta_blocks, Xb)
        out = (self.block_scale[:, None, None] * self.theta_blocks[:, :, None]) * combined[:, None, :]
        return out.reshape(self.dims.M, X.shape[1])

    def row_psi(self, h: np.ndarray) -> np.ndarray:
        """Row vector h^H Psi for an M vector h, returned as a flat array."""
        hb = np.conj(h).reshape(self.dims.L, self.dims.Q)
        combined = np.sum(hb * self.theta_blocks, axis=1)
        out = (self.block_scale * combined)[:, None] * self.theta_blocks
        return out.reshape(self.dims.M)


def build_reflection_operator(state: RisState, dims: SystemDims) -> ReflectionOperator:
    """Validate shapes and wrap the RIS state in its factored reflection operator."""
    return ReflectionOperator(state, dims)


def ris_frobenius_power(op: ReflectionOperator) -> float:
    """||Psi||_F^2 = Q * sum_l a_l^2, valid for unit-modulus theta."""
    return float(op.dims.Q * np.sum(op.a ** 2))


def composite_channel(k: int, channels: ChannelSet, op: ReflectionOperator) -> np.ndarray:
    """Composite BS->user-k channel h_k with h_k^H = h_d,k^H + h_r,k^H Psi G."""
    row = op.row_psi(channels.h_r[k])
    return channels.h_d[k] + np.conj(row @ channels.G)


def composite_channel_matrix(channels: ChannelSet, op: ReflectionOperator) -> np.ndarray:
    """All composite channels stacked as rows of an (K, N) matrix."""
    K = channels.h_d.shape[0]
    return np.stack([composite_channel(k, channels, op) for k in range(K)])


def ris_noise_power_at_user(k: int, channels: ChannelSet, op: ReflectionOperator) -> float:
    """||h_r,k^H Psi||^2, the RIS dynamic-noise gain towards user k."""
    row = op.row_psi(channels.h_r[k])
    return float(np.sum(np.abs(row) ** 2))


def sinr(k: int, channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
         params: SystemParams) -> float:
    """SINR of user k: |h_k^H w_k|^2 over interference + amplified RIS noise + AWGN."""
    h_k = composite_channel(k, channels, op)
    gains = np.abs(np.conj(h_k) @ precoder.W.T) ** 2
    num = gains[k]
    interf = float(np.sum(gains)) - float(gains[k])
    den = interf + ris_noise_power_at_user(k, channels, op) * params.sigma_z_sq \
        + params.sigma_k_sq[k]
    return float(num / den)


def all_sinrs(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
              params: SystemParams) -> np.ndarray:
    """Vector of all K SINRs (single pass over the composite channels)."""
    H = composite_channel_matrix(channels, op)
    gains = np.abs(np.conj(H) @ precoder.W.T) ** 2  # gains[k, i] = |h_k^H w_i|^2
    num = np.diag(gains).copy()
    interf = gains.sum(axis=1) - num
    noise = np.array([ris_noise_power_at_user(k, channels, op) for k in range(H.shape[0])])
    return num / (interf + noise * params.sigma_z_sq + params.sigma_k_sq)


def sum_rate(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
             params: SystemParams) -> float:
    """Sum of log2(1 + SINR_k) in bits/s/Hz."""
    return float(np.sum(np.log2(1.0 + all_sinrs(channels, op, precoder, params))))


def bs_power(precoder: Precoder, params: SystemParams) -> float:
    """BS power draw: nu1^-1 * transmit power + static W_BS."""
    return precoder.total_power() / params.nu1 + params.W_BS


def ris_power(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
              params: SystemParams, dims: SystemDims) -> float:
    """RIS power draw: amplified signal + amplified noise plus static circuitry."""
    reflected = op.psi_matmat(channels.G @ precoder.W.T)
    dyn = float(np.sum(np.abs(reflected) ** 2)) + ris_frobenius_power(op) * params.sigma_z_sq
    return dyn / params.nu2 + dims.M * params.W_PS + dims.L * params.W_PA


def reflect_power(channels: ChannelSet, op: ReflectionOperator, precoder: Precoder,
                  params: SystemParams) -> float:
    """Budget-side quantity sum_k ||Psi G w_k||^2 + ||Psi||_F^2 sigma_z^2."""
    reflected = op.psi_matmat(channels.G @ precoder.W.T)
    return float(np.sum(np.abs(reflected) ** 2)) + ris_frobenius_power(op) * params.sigma_z_sq
