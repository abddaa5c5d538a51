"""Packet generation and the conditional-Poisson observation law.

Counts are conditionally Poisson given the latent intensity: Y ~ Poisson(L)
with L = lambda_bg + psi * Ltilde, where Ltilde superposes the last `memory`
releases through the diffusion kernel evaluated at the (random) transmitter
separation.  Randomizing the intensity makes the marginal counts
overdispersed: Var(Y) = E[L] + Var(L).

Every packet consumes a dedicated counter-based generator derived from
(master_seed, packet_index), in a fixed draw order (warm-up bits if enabled,
initial heading, per-symbol mobility noise, then one Poisson call over the
whole count matrix), so records are reproducible packet by packet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mobility import MobilityParams, _separations_batch
from .physics import ChannelParams, kernel

__all__ = [
    "SymbolFrame",
    "PacketRecord",
    "packet_stream",
    "sample_counts",
    "generate_packet",
    "generate_packet_batch",
    "overdispersion_decomposition",
    "params_snapshot",
    "channel_from_snapshot",
    "mobility_from_snapshot",
    "write_packet_archive",
    "read_packet_archive",
    "write_counts_csv",
]


def packet_stream(master_seed: int, packet_index: int) -> np.random.Generator:
    """Counter-based generator for one packet, a pure function of its key."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(packet_index),))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class SymbolFrame:
    """One symbol slot: counts plus the latent state that produced them."""

    k: int
    bits_context: tuple
    counts: np.ndarray
    latent_intensity: np.ndarray | None
    separations: np.ndarray | None


@dataclass
class PacketRecord:
    """A simulated packet: K symbol slots sharing one gain realization psi."""

    psi: float
    bits: np.ndarray
    seed: tuple
    params_snapshot: dict
    counts: np.ndarray
    latent: np.ndarray | None = None
    separations: np.ndarray | None = None
    warmup: np.ndarray | None = None  # pre-packet bits, oldest first; None = zeros

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=int)
        self.counts = np.asarray(self.counts)
        if self.psi <= 0:
            raise ValueError("psi must be positive")
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("bits must be binary")
        if self.counts.shape[0] != self.bits.size:
            raise ValueError("counts must have one row per symbol")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        for arr in (self.latent, self.separations):
            if arr is not None and arr.shape != self.counts.shape:
                raise ValueError("latent/separation shapes must match counts")

    @property
    def n_symbols(self) -> int:
        return self.bits.size

    def bits_context(self, k: int, memory: int) -> tuple:
        """(s_k, s_{k-1}, ..., s_{k-L+1}); pre-packet slots use the warm-up bits."""
        ctx = []
        for ell in range(memory):
            j = k - ell
            if j >= 0:
                ctx.append(int(self.bits[j]))
            elif self.warmup is not None and len(self.warmup) + j >= 0:
                ctx.append(int(self.warmup[len(self.warmup) + j]))
            else:
                ctx.append(0)
        return tuple(ctx)

    @cached_property
    def frames(self) -> tuple:
        memory = int(self.params_snapshot.get("channel", {}).get("memory", 1))
        out = []
        for k in range(self.n_symbols):
            out.append(
                SymbolFrame(
                    k=k + 1,
                    bits_context=self.bits_context(k, memory),
                    counts=self.counts[k],
                    latent_intensity=None if self.latent is None else self.latent[k],
                    separations=None if self.separations is None else self.separations[k],
                )
            )
        return tuple(out)


def sample_counts(intensity, rng: np.random.Generator) -> np.ndarray:
    """Poisson counts for the given intensity array."""
    lam = np.asarray(intensity, dtype=float)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("intensity must be finite and nonnegative")
    return rng.poisson(lam)


def _tilde_batch(
    bits: np.ndarray,
    seps: np.ndarray,
    channel: ChannelParams,
    pre_bits: np.ndarray | None = None,
) -> np.ndarray:
    """Gain-normalized intensity for a batch: bits (P, K), seps (P, K, M).

    All taps of a slot are evaluated at that slot's separations; releases
    before the packet start take their bit from pre_bits (zeros by default).
    """
    n_pack, n_sym = bits.shape
    mem = channel.memory
    if pre_bits is None:
        pre_bits = np.zeros((n_pack, mem - 1), dtype=int)
    padded = np.concatenate([pre_bits, bits], axis=1)
    offsets = channel.sample_offsets()
    r = np.maximum(seps, channel.r_min)
    tilde = np.zeros_like(r)
    for ell in range(mem):
        past = padded[:, mem - 1 - ell : mem - 1 - ell + n_sym]
        amps = np.where(past == 1, channel.a1, channel.a0).astype(float)
        h = kernel(r, ell * channel.t_sym + offsets, channel)
        tilde += amps[:, :, None] * h
    return tilde


def _warmup_bits(rng: np.random.Generator, memory: int) -> np.ndarray:
    if memory <= 1:
        return np.zeros(0, dtype=int)
    return rng.integers(0, 2, size=memory - 1)


def generate_packet(
    bits,
    psi: float,
    channel: ChannelParams,
    mobility: MobilityParams,
    seed: int,
    packet_index: int = 0,
    random_warmup: bool = False,
) -> PacketRecord:
    """Simulate one packet end to end.

    Identical (bits, psi, seed, packet_index) reproduce the record exactly.
    With random_warmup the pre-packet context bits are drawn from the packet
    stream instead of being zero.
    """
    recs = generate_packet_batch(
        np.atleast_2d(np.asarray(bits, dtype=int)),
        [psi],
        channel,
        mobility,
        seed,
        first_index=packet_index,
        random_warmup=random_warmup,
    )
    return recs[0]


def generate_packet_batch(
    bits_matrix,
    psis,
    channel: ChannelParams,
    mobility: MobilityParams,
    master_seed: int,
    first_index: int = 0,
    random_warmup: bool = False,
) -> list:
    """Simulate a batch of packets, one stream per packet.

    Equivalent to calling generate_packet per row with packet_index
    first_index + p; the batch only amortizes the integrator loop.
    """
    bits_matrix = np.atleast_2d(np.asarray(bits_matrix, dtype=int))
    n_pack, n_sym = bits_matrix.shape
    psis = np.broadcast_to(np.asarray(psis, dtype=float), (n_pack,))
    if np.any(psis <= 0):
        raise ValueError("psi must be positive")
    if not np.all((bits_matrix == 0) | (bits_matrix == 1)):
        raise ValueError("bits must be binary")

    rngs = [packet_stream(master_seed, first_index + p) for p in range(n_pack)]
    if random_warmup:
        pre_bits = np.stack([_warmup_bits(r, channel.memory) for r in rngs])
    else:
        pre_bits = np.zeros((n_pack, channel.memory - 1), dtype=int)

    seps = _separations_batch(bits_matrix, mobility, channel, rngs)
    tilde = _tilde_batch(bits_matrix, seps, channel, pre_bits=pre_bits)

    snapshot = params_snapshot(channel, mobility)
    records = []
    for p in range(n_pack):
        lam = channel.lambda_bg + psis[p] * tilde[p]
        counts = sample_counts(lam, rngs[p])
        records.append(
            PacketRecord(
                psi=float(psis[p]),
                bits=bits_matrix[p].copy(),
                seed=(int(master_seed), int(first_index + p)),
                params_snapshot=snapshot,
                counts=counts,
                latent=lam,
                separations=seps[p],
                warmup=pre_bits[p].copy() if random_warmup else None,
            )
        )
    return records


def overdispersion_decomposition(samples) -> tuple:
    """Split marginal count variance into (mean term, latent excess).

    Returns (mean(Y), var(Y) - mean(Y)); for a mixed Poisson the second term
    estimates Var(L).
    """
    y = np.asarray(samples, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two samples")
    mean = float(np.mean(y))
    return mean, float(np.var(y, ddof=1) - mean)


def params_snapshot(channel: ChannelParams, mobility: MobilityParams) -> dict:
    """JSON-able record of every physical parameter."""
    return {
        "channel": {
            "g0": channel.g0,
            "dm": channel.dm,
            "memory": channel.memory,
            "t_sym": channel.t_sym,
            "m_samples": channel.m_samples,
            "a0": channel.a0,
            "a1": channel.a1,
            "lambda_bg": channel.lambda_bg,
            "r_min": channel.r_min,
        },
        "mobility": {
            "v0": mobility.v0,
            "v1": mobility.v1,
            "dr0": mobility.dr0,
            "dr1": mobility.dr1,
            "d_trans": mobility.d_trans,
            "dt_traj": mobility.dt_traj,
            "x0": list(mobility.x0),
            "x_receiver": list(mobility.x_receiver),
        },
    }


def channel_from_snapshot(snapshot: dict) -> ChannelParams:
    c = snapshot["channel"]
    return ChannelParams(
        g0=c["g0"], dm=c["dm"], memory=int(c["memory"]), t_sym=c["t_sym"],
        m_samples=int(c["m_samples"]), a0=c["a0"], a1=c["a1"],
        lambda_bg=c["lambda_bg"], r_min=c["r_min"],
    )


def mobility_from_snapshot(snapshot: dict) -> MobilityParams:
    m = snapshot["mobility"]
    return MobilityParams(
        v0=m["v0"], v1=m["v1"], dr0=m["dr0"], dr1=m["dr1"],
        d_trans=m["d_trans"], dt_traj=m["dt_traj"],
        x0=tuple(m["x0"]), x_receiver=tuple(m["x_receiver"]),
    )


def write_packet_archive(records, path) -> None:
    """One JSON object per line: params_snapshot, psi, bits, seed, counts."""
    with open(path, "w") as fh:
        for rec in records:
            obj = {
                "psi": rec.psi,
                "bits": rec.bits.tolist(),
                "seed": list(rec.seed),
                "params_snapshot": rec.params_snapshot,
                "counts": rec.counts.tolist(),
            }
            if rec.warmup is not None:
                obj["warmup"] = rec.warmup.tolist()
            fh.write(json.dumps(obj) + "\n")


def read_packet_archive(path) -> list:
    """Load archived packets; latent fields are not stored and come back None."""
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                PacketRecord(
                    psi=obj["psi"],
                    bits=np.asarray(obj["bits"], dtype=int),
                    seed=tuple(obj["seed"]),
                    params_snapshot=obj["params_snapshot"],
                    counts=np.asarray(obj["counts"]),
                    warmup=None if "warmup" not in obj else np.asarray(obj["warmup"], int),
                )
            )
    return records


def write_counts_csv(record: PacketRecord, path) -> None:
    """Counts as CSV rows (k, m, y)."""
    with open(path, "w") as fh:
        fh.write("k,m,y\n")
        for k in range(record.n_symbols):
            for m in range(record.counts.shape[1]):
                fh.write(f"{k + 1},{m + 1},{int(record.counts[k, m])}\n")
