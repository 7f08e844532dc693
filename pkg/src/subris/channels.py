"""Scenario geometry and Rayleigh-faded channel generation with distance path loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChannelSet, SystemDims


@dataclass(frozen=True)
class PathLossParams:
    """PL(d) = C0 * (d0/d)^iota with per-link exponents; C0 is linear gain at d0."""

    C0: float = 1e-3          # -30 dB at the 1 m reference
    d0: float = 1.0
    iota_d: float = 3.8       # BS -> user
    iota_G: float = 2.5       # BS -> RIS
    iota_r: float = 2.8       # RIS -> user

    def __post_init__(self):
        if self.C0 <= 0 or self.d0 <= 0:
            raise ValueError("C0 and d0 must be positive")
        if min(self.iota_d, self.iota_G, self.iota_r) <= 0:
            raise ValueError("path-loss exponents must be positive")


@dataclass(frozen=True)
class Geometry:
    """BS/RIS anchors plus K user positions in the 2-D deployment plane (metres)."""

    bs_pos: np.ndarray
    ris_pos: np.ndarray
    user_center_x: float
    user_radius: float
    user_pos: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bs_pos", np.asarray(self.bs_pos, dtype=float))
        object.__setattr__(self, "ris_pos", np.asarray(self.ris_pos, dtype=float))
        object.__setattr__(self, "user_pos", np.asarray(self.user_pos, dtype=float))
        center = np.array([self.user_center_x, 0.0])
        d = np.linalg.norm(self.user_pos - center, axis=1)
        if np.any(d > self.user_radius * (1 + 1e-9)):
            raise ValueError("user positions must lie within the deployment circle")


def path_loss(d: float, iota: float, plp: PathLossParams) -> float:
    """Linear large-scale gain at distance d."""
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    return plp.C0 * (plp.d0 / d) ** iota


def draw_geometry(dims: SystemDims, rng: np.random.Generator, *,
                  user_center_x: float = 200.0, user_radius: float = 10.0,
                  bs_pos=(0.0, 0.0), ris_pos=(0.0, 50.0)) -> Geometry:
    """Drop K users uniformly in the disk around (user_center_x, 0)."""
    r = user_radius * np.sqrt(rng.uniform(size=dims.K))
    phi = rng.uniform(0.0, 2 * np.pi, size=dims.K)
    users = np.stack([user_center_x + r * np.cos(phi), r * np.sin(phi)], axis=1)
    return Geometry(bs_pos, ris_pos, user_center_x, user_radius, users)


def sample_rayleigh(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. CN(0, gain) entries; exactly zero when gain is zero."""
    if gain < 0:
        raise ValueError("gain must be nonnegative")
    re = rng.standard_normal(size=(rows, cols))
    im = rng.standard_normal(size=(rows, cols))
    return np.sqrt(gain / 2.0) * (re + 1j * im)


def generate_channels(dims: SystemDims, geom: Geometry, plp: PathLossParams,
                      rng: np.random.Generator) -> ChannelSet:
    """Draw one (h_d, G, h_r) realisation; per-entry variance equals the link path loss.

    Draw order is fixed (h_d rows, then G, then h_r rows) so a given rng state
    always produces the same channels.
    """
    d_bs_users = np.linalg.norm(geom.user_pos - geom.bs_pos, axis=1)
    d_ris_users = np.linalg.norm(geom.user_pos - geom.ris_pos, axis=1)
    d_bs_ris = float(np.linalg.norm(geom.ris_pos - geom.bs_pos))

    h_d = np.vstack([sample_rayleigh(1, dims.N, path_loss(d, plp.iota_d, plp), rng)
                     for d in d_bs_users])
    G = sample_rayleigh(dims.M, dims.N, path_loss(d_bs_ris, plp.iota_G, plp), rng)
    h_r = np.vstack([sample_rayleigh(1, dims.M, path_loss(d, plp.iota_r, plp), rng)
                     for d in d_ris_users])
    ch = ChannelSet(h_d, G, h_r)
    ch.check_dims(dims)
    return ch


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent counter-based stream for one Monte-Carlo trial.

    Streams are derived from (master_seed, trial) alone, so trials can run in
    any order or in parallel without changing the draws.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial,))
    return np.random.Generator(np.random.Philox(ss))
