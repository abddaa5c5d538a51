"""Diffusive channel physics for a point-release molecular link.

A transmitter releases A(s) molecules at the start of each symbol slot and a
counting receiver samples the local concentration M times per slot.  The
gain-normalized intensity seen at separation r and delay t after a release is

    h(r, t) = g0 * (4 pi D_m t)**-1.5 * exp(-r**2 / (4 D_m t)),   t > 0,

and zero at or before the release instant.  Intensities from the last L
releases superpose linearly; a packet-level multiplicative gain psi and an
additive background rate turn the superposition into the count intensity.

All quantities are SI: meters, seconds, m^2/s.  Counts are dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelParams",
    "GainModel",
    "default_g0",
    "kernel",
    "tap_superposition",
    "compose_intensity",
]


def default_g0(receiver_radius: float) -> float:
    """Receiver gain convention: the volume of a sphere of the given radius (m^3)."""
    if receiver_radius <= 0:
        raise ValueError("receiver radius must be positive")
    return 4.0 / 3.0 * np.pi * receiver_radius**3


@dataclass(frozen=True)
class ChannelParams:
    """Static description of the diffusive link.

    g0         -- receiver gain factor, m^3 (see default_g0)
    dm         -- molecular diffusion coefficient, m^2/s
    memory     -- number of superposed release taps L >= 1
    t_sym      -- symbol duration, s
    m_samples  -- receiver samples per symbol M >= 1
    a0, a1     -- release amplitudes for bits 0 / 1, molecules
    lambda_bg  -- background count rate per sample
    r_min      -- clamping floor on separations fed to the kernel, m
    """

    g0: float = default_g0(5e-6)
    dm: float = 1e-10
    memory: int = 1
    t_sym: float = 2.0
    m_samples: int = 40
    a0: float = 1e4
    a1: float = 2e4
    lambda_bg: float = 2.0
    r_min: float = 0.8e-6

    def __post_init__(self) -> None:
        if self.g0 <= 0 or self.dm <= 0:
            raise ValueError("g0 and dm must be positive")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if self.t_sym <= 0:
            raise ValueError("t_sym must be positive")
        if self.m_samples < 1:
            raise ValueError("m_samples must be at least 1")
        if self.a0 < 0 or self.a1 < 0:
            raise ValueError("release amplitudes must be nonnegative")
        if self.lambda_bg < 0:
            raise ValueError("lambda_bg must be nonnegative")
        if self.r_min <= 0:
            raise ValueError("r_min must be positive")

    def amplitude(self, bit: int) -> float:
        """Release amplitude A(s) for a binary symbol."""
        return self.a1 if bit else self.a0

    def sample_offsets(self) -> np.ndarray:
        """Mid-bin sampling offsets t_m = (m - 1/2) * t_sym / M, shape (M,)."""
        m = np.arange(1, self.m_samples + 1)
        return (m - 0.5) * (self.t_sym / self.m_samples)


@dataclass(frozen=True)
class GainModel:
    """Packet-level multiplicative gain psi > 0 applied to the signal term only."""

    psi: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.psi) or self.psi <= 0:
            raise ValueError("psi must be finite and positive")


def kernel(r, t, params: ChannelParams):
    """Gain-normalized release kernel h(r, t).

    r and t broadcast against each other; entries with t <= 0 give 0.
    Raises ValueError on non-finite input or non-positive separations.
    """
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
        raise ValueError("kernel arguments must be finite")
    if np.any(r <= 0):
        raise ValueError("separations must be positive")
    r, t = np.broadcast_arrays(r, t)
    out = np.zeros(r.shape, dtype=float)
    live = t > 0
    if np.any(live):
        tl = t[live]
        out[live] = (
            params.g0
            * (4.0 * np.pi * params.dm * tl) ** -1.5
            * np.exp(-(r[live] ** 2) / (4.0 * params.dm * tl))
        )
    if out.ndim == 0:
        return float(out)
    return out


def tap_superposition(bits_context, separations, params: ChannelParams) -> np.ndarray:
    """Gain-normalized intensity at the M sample offsets of one symbol slot.

    bits_context lists the current and previous bits (s_k, s_{k-1}, ...,
    s_{k-L+1}) and must have exactly params.memory entries.  separations holds
    the transmitter-receiver distance at each sample offset (shape (M,) or a
    batch (..., M)); values below params.r_min are clamped to it before the
    kernel is evaluated.  Tap ell contributes A(s_{k-ell}) * h(r_m, ell*t_sym
    + t_m) at offset m.
    """
    bits = np.asarray(bits_context, dtype=int)
    if bits.ndim != 1 or bits.size != params.memory:
        raise ValueError("bits_context must have exactly `memory` entries")
    r = np.asarray(separations, dtype=float)
    if r.shape[-1] != params.m_samples:
        raise ValueError("separations must cover all m_samples offsets")
    r = np.maximum(r, params.r_min)
    amps = np.where(bits == 1, params.a1, params.a0)
    offsets = params.sample_offsets()
    out = np.zeros(r.shape, dtype=float)
    for ell in range(params.memory):
        if amps[ell] == 0.0:
            continue
        out += amps[ell] * kernel(r, ell * params.t_sym + offsets, params)
    return out


def compose_intensity(tilde_intensity, gain, params: ChannelParams) -> np.ndarray:
    """Count intensity lambda_bg + psi * tilde_intensity.

    The multiplicative gain scales the signal term only; the background floor
    is unaffected.  gain may be a GainModel or a bare positive float.
    """
    psi = gain.psi if isinstance(gain, GainModel) else float(gain)
    if not np.isfinite(psi) or psi <= 0:
        raise ValueError("psi must be finite and positive")
    tilde = np.asarray(tilde_intensity, dtype=float)
    if np.any(tilde < 0) or not np.all(np.isfinite(tilde)):
        raise ValueError("tilde_intensity must be finite and nonnegative")
    return params.lambda_bg + psi * tilde
