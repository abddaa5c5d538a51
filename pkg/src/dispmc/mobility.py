"""Active-Brownian transmitter mobility.

The transmitter position follows

    dX = v(s_k) n(t) dt + sqrt(2 D_t) dW,

integrated by Euler-Maruyama with step dt_traj.  The heading n(t) is a unit
vector undergoing rotational diffusion with symbol-dependent coefficient
D_r(s_k): each step adds an isotropic Gaussian increment of per-axis variance
2 D_r dt, projected onto the tangent plane of n, and renormalizes.  For small
steps this reproduces the 3-D heading autocorrelation exp(-2 D_r t).

The symbol value switches (v, D_r) at slot boundaries; heading and position
persist across slots within a packet.  The long-time effective diffusivity is
D_eff(s) = D_t + v(s)^2 / (6 D_r(s)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import ChannelParams

__all__ = [
    "MobilityParams",
    "TrajectoryState",
    "SeparationSeries",
    "step_abp",
    "simulate_packet_separations",
    "effective_diffusivity",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class MobilityParams:
    """Active-Brownian parameters and link geometry.

    v0, v1       -- self-propulsion speed per symbol, m/s
    dr0, dr1     -- rotational diffusion per symbol, 1/s
    d_trans      -- translational diffusion, m^2/s
    dt_traj      -- integrator step, s
    x0           -- transmitter position at packet start, m (3-vector)
    x_receiver   -- receiver position, m (3-vector)
    """

    v0: float = 0.0
    v1: float = 30e-6
    dr0: float = 8.0
    dr1: float = 0.8
    d_trans: float = 2e-13
    dt_traj: float = 1e-3
    x0: tuple = (10e-6, 0.0, 0.0)
    x_receiver: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.v0 < 0 or self.v1 < 0:
            raise ValueError("speeds must be nonnegative")
        if self.dr0 <= 0 or self.dr1 <= 0:
            raise ValueError("rotational diffusion must be positive")
        if self.d_trans < 0:
            raise ValueError("d_trans must be nonnegative")
        if self.dt_traj <= 0:
            raise ValueError("dt_traj must be positive")
        if len(self.x0) != 3 or len(self.x_receiver) != 3:
            raise ValueError("positions must be 3-vectors")

    def speed(self, bit: int) -> float:
        return self.v1 if bit else self.v0

    def rot_diffusion(self, bit: int) -> float:
        return self.dr1 if bit else self.dr0


def effective_diffusivity(bit: int, params: MobilityParams) -> float:
    """Long-time diffusivity D_t + v^2/(6 D_r) for the given symbol."""
    v = params.speed(bit)
    dr = params.rot_diffusion(bit)
    return params.d_trans + v * v / (6.0 * dr)


@dataclass
class TrajectoryState:
    """Mutable integrator state: position, unit heading, and its RNG."""

    position: np.ndarray
    orientation: np.ndarray
    rng: np.random.Generator

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        norm = np.linalg.norm(self.orientation)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ValueError("orientation must be unit length")


@dataclass(frozen=True)
class SeparationSeries:
    """Transmitter-receiver separations at the sample offsets, shape (K, M)."""

    r: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2:
            raise ValueError("separations must be a (K, M) array")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("separations must be finite and nonnegative")
        object.__setattr__(self, "r", r)


def _unit_sphere_draw(rng: np.random.Generator) -> np.ndarray:
    vec = rng.standard_normal(3)
    while True:
        norm = np.linalg.norm(vec)
        if norm > 1e-12:
            return vec / norm
        vec = rng.standard_normal(3)


def step_abp(state: TrajectoryState, bit: int, params: MobilityParams) -> TrajectoryState:
    """Advance one Euler-Maruyama step under the given symbol.

    Heading updates first (tangential increment, renormalize), then the
    position moves with the new heading.  Consumes 3 rotational then 3
    translational normals from state.rng.
    """
    dt = params.dt_traj
    rot = state.rng.standard_normal(3) * np.sqrt(2.0 * params.rot_diffusion(bit) * dt)
    trans = state.rng.standard_normal(3) * np.sqrt(2.0 * params.d_trans * dt)
    n = state.orientation
    rot_tan = rot - np.dot(rot, n) * n
    n_new = n + rot_tan
    n_new /= np.linalg.norm(n_new)
    x_new = state.position + params.speed(bit) * dt * n_new + trans
    return TrajectoryState(position=x_new, orientation=n_new, rng=state.rng)


def _steps_per_symbol(channel: ChannelParams, params: MobilityParams) -> int:
    if params.dt_traj > channel.t_sym / channel.m_samples + 1e-12:
        raise ValueError("dt_traj must not exceed the sampling interval t_sym / M")
    n_steps = int(round(channel.t_sym / params.dt_traj))
    if abs(n_steps * params.dt_traj - channel.t_sym) > 1e-9 * channel.t_sym:
        raise ValueError("t_sym must be an integer multiple of dt_traj")
    return n_steps


def _offset_step_index(channel: ChannelParams, n_steps: int) -> np.ndarray:
    # X after step j sits at time j*dt; pick the step nearest each offset t_m.
    m = np.arange(1, channel.m_samples + 1)
    j = np.rint((m - 0.5) * n_steps / channel.m_samples).astype(int)
    return np.clip(j, 1, n_steps) - 1


def _separations_batch(
    bits: np.ndarray,
    params: MobilityParams,
    channel: ChannelParams,
    rngs: list,
) -> np.ndarray:
    """Propagate a batch of packets; returns separations of shape (P, K, M).

    Each packet consumes its own generator in a fixed order: 3 normals for the
    initial heading, then per symbol a (n_steps, 3) rotational block followed
    by a (n_steps, 3) translational block.  Batched and single-packet runs of
    the same generator state therefore agree exactly, and packets are
    propagated in bounded blocks so scratch memory does not scale with the
    batch size.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=int))
    n_pack, n_sym = bits.shape
    if len(rngs) != n_pack:
        raise ValueError("need one generator per packet")
    n_steps = _steps_per_symbol(channel, params)
    out = np.empty((n_pack, n_sym, channel.m_samples))
    block = max(1, 2_000_000 // max(1, n_steps))
    for lo in range(0, n_pack, block):
        hi = min(n_pack, lo + block)
        out[lo:hi] = _propagate_block(bits[lo:hi], params, channel, rngs[lo:hi], n_steps)
    return out


def _propagate_block(
    bits: np.ndarray,
    params: MobilityParams,
    channel: ChannelParams,
    rngs: list,
    n_steps: int,
) -> np.ndarray:
    n_pack, n_sym = bits.shape
    idx = _offset_step_index(channel, n_steps)
    dt = params.dt_traj
    x_rx = np.asarray(params.x_receiver, dtype=float)

    x = np.tile(np.asarray(params.x0, dtype=float), (n_pack, 1))
    heading = np.empty((n_pack, 3))
    for p in range(n_pack):
        heading[p] = _unit_sphere_draw(rngs[p])

    speeds = np.where(bits == 1, params.v1, params.v0)
    rot_sd = np.sqrt(2.0 * np.where(bits == 1, params.dr1, params.dr0) * dt)
    trans_sd = np.sqrt(2.0 * params.d_trans * dt)

    out = np.empty((n_pack, n_sym, channel.m_samples))
    n_path = np.empty((n_steps, n_pack, 3))
    for k in range(n_sym):
        rot = np.empty((n_pack, n_steps, 3))
        trans = np.empty((n_pack, n_steps, 3))
        for p in range(n_pack):
            rot[p] = rngs[p].standard_normal((n_steps, 3))
            trans[p] = rngs[p].standard_normal((n_steps, 3))
        rot *= rot_sd[:, k, None, None]
        trans *= trans_sd

        for j in range(n_steps):
            dn = rot[:, j, :]
            dot = np.einsum("ij,ij->i", dn, heading)
            heading += dn - dot[:, None] * heading
            heading /= np.linalg.norm(heading, axis=1, keepdims=True)
            n_path[j] = heading

        incr = np.swapaxes(n_path, 0, 1) * (speeds[:, k, None, None] * dt)
        incr += trans
        path = np.cumsum(incr, axis=1)
        path += x[:, None, :]
        disp = path[:, idx, :] - x_rx
        out[:, k, :] = np.linalg.norm(disp, axis=2)
        x = path[:, -1, :]
    return out


def simulate_packet_separations(
    bits,
    params: MobilityParams,
    channel: ChannelParams,
    rng: np.random.Generator,
) -> SeparationSeries:
    """Separation series r_{k,m} for one packet's bit sequence.

    Deterministic given the generator state; the heading is drawn once at
    packet start and persists across symbols.
    """
    bits = np.asarray(bits, dtype=int)
    if bits.ndim != 1:
        raise ValueError("bits must be a 1-D sequence")
    r = _separations_batch(bits[None, :], params, channel, [rng])
    return SeparationSeries(r=r[0])


def write_trajectory_csv(series: SeparationSeries, channel: ChannelParams, path) -> None:
    """Dump separations as CSV rows (k, m, t_seconds, r_meters)."""
    offsets = channel.sample_offsets()
    with open(path, "w") as fh:
        fh.write("k,m,t_seconds,r_meters\n")
        for k in range(series.r.shape[0]):
            for m in range(series.r.shape[1]):
                t_abs = k * channel.t_sym + offsets[m]
                fh.write(f"{k + 1},{m + 1},{t_abs:.17g},{series.r[k, m]:.17g}\n")
