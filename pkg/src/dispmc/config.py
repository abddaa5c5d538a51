"""Experiment configuration: typed sections with a flat INI text form.

The on-disk format is deliberately plain (commented ``key = value`` lines
grouped into sections) so configs diff cleanly between experiment runs.
Every field round-trips losslessly: floats are written with ``repr`` and
parsed back bit-identically.  Hand-written configs may omit keys, which then
keep their defaults; unknown sections or keys are rejected rather than
silently ignored.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace

from .mobility import MobilityParams
from .physics import ChannelParams, default_g0

__all__ = [
    "RunSettings",
    "DetectionSettings",
    "BaselineSettings",
    "GainSweepSettings",
    "RocSweepSettings",
    "MobilitySweepSettings",
    "SamplingSweepSettings",
    "IsiSweepSettings",
    "ExperimentConfig",
    "ConfigError",
]


class ConfigError(ValueError):
    """Malformed configuration text or values."""


DEFAULT_RECEIVER_RADIUS = 5e-6


@dataclass(frozen=True)
class RunSettings:
    """Global run bookkeeping shared by every experiment."""

    master_seed: int = 20260815
    n_packets: int = 500
    packet_symbols: int = 64
    output_dir: str = "out"

    def __post_init__(self) -> None:
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        if self.n_packets < 1 or self.packet_symbols < 1:
            raise ValueError("packet and symbol budgets must be positive")


@dataclass(frozen=True)
class DetectionSettings:
    """Window trimming, gate, and threshold calibration knobs.

    The packet budgets size the three calibration streams: an all-ones
    stream for the template, an all-ones pilot stream for orienting the
    decision threshold, and an all-zeros pilot stream for the gate and the
    null quantiles.
    """

    trim_alpha: float = 0.05
    trim_beta: float = 0.05
    alpha_gate: float = 0.05
    pfa_target: float = 0.05
    template_packets: int = 100
    h1_pilot_packets: int = 50
    h0_pilot_packets: int = 313

    def __post_init__(self) -> None:
        for name in ("trim_alpha", "trim_beta", "alpha_gate", "pfa_target"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.pfa_target <= 0.0:
            raise ValueError("pfa_target must be positive")
        for name in ("template_packets", "h1_pilot_packets", "h0_pilot_packets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BaselineSettings:
    """Monte-Carlo path bank and nuisance-profiling budgets for the
    likelihood-based reference receivers."""

    n_paths: int = 512
    path_seed: int = 0
    glrt_max_eval: int = 200

    def __post_init__(self) -> None:
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if self.glrt_max_eval < 10:
            raise ValueError("glrt_max_eval must be at least 10")


@dataclass(frozen=True)
class GainSweepSettings:
    psi_grid: tuple = (0.5, 0.75, 1.0, 1.5, 2.0)
    eval_packets: int = 313  # 313 packets x 64 symbols = 2e4 null symbols per point
    glrt_symbols: int = 192  # subsampled budget for the profiled receiver

    def __post_init__(self) -> None:
        grid = tuple(float(v) for v in self.psi_grid)
        object.__setattr__(self, "psi_grid", grid)
        if not grid or any(v <= 0 for v in grid):
            raise ValueError("psi_grid must be nonempty and positive")
        if self.eval_packets < 1:
            raise ValueError("eval_packets must be positive")
        if self.glrt_symbols < 0:
            raise ValueError("glrt_symbols must be nonnegative")


@dataclass(frozen=True)
class RocSweepSettings:
    """Operating-characteristic sweep over random per-packet geometry gains.

    Scores isolated symbols: each evaluation packet carries a single symbol
    with a fresh trajectory and its own gain draw, so ``eval_packets`` counts
    symbols directly.  Thresholds come from isolated pilot packets at unit
    gain, scored against a template learned from quiescent traffic.
    """

    psi_low: float = 0.5
    psi_high: float = 2.0
    eval_packets: int = 24000  # isolated symbols; 0 inherits run.n_packets
    curve_points: int = 41
    glrt_symbols: int = 960
    pilot_packets: int = 1500
    template_packets: int = 600

    def __post_init__(self) -> None:
        if not (0.0 < self.psi_low <= self.psi_high):
            raise ValueError("need 0 < psi_low <= psi_high")
        if self.curve_points < 2:
            raise ValueError("curve_points must be at least 2")
        if self.eval_packets < 0 or self.glrt_symbols < 0:
            raise ValueError("budgets must be nonnegative")
        if min(self.pilot_packets, self.template_packets) < 1:
            raise ValueError("pilot budgets must be positive")


@dataclass(frozen=True)
class MobilitySweepSettings:
    """Bit-1 speed sweep tracing the effective-diffusivity contrast.

    This sweep scores isolated symbols: every simulated packet carries a
    single symbol with a fresh trajectory at the nominal geometry, so the
    budgets below count symbols directly.
    """

    v1_grid: tuple = (0.0, 3e-6, 7.5e-6, 1.5e-5, 3e-5)
    eval_packets: int = 3000
    pilot_packets: int = 1500
    template_packets: int = 600
    neutral_tol: float = 0.01
    max_pilot_rounds: int = 8

    def __post_init__(self) -> None:
        grid = tuple(float(v) for v in self.v1_grid)
        object.__setattr__(self, "v1_grid", grid)
        if not grid or any(v < 0 for v in grid):
            raise ValueError("v1_grid must be nonempty and nonnegative")
        if min(self.pilot_packets, self.template_packets, self.eval_packets) < 1:
            raise ValueError("packet budgets must be positive")
        if not (0.0 < self.neutral_tol < 1.0):
            raise ValueError("neutral_tol must lie in (0, 1)")
        if self.max_pilot_rounds < 1:
            raise ValueError("max_pilot_rounds must be positive")


@dataclass(frozen=True)
class SamplingSweepSettings:
    """Within-window sampling-step sweep (varies the per-symbol sample count
    at fixed symbol time).

    Runs at its own operating point: ``packet_symbols`` and the bit-1 speed
    ``v1`` override the run/mobility values so whole packets stay inside the
    useful range of the link.  At the nominal geometry a bit-1 symbol wanders
    several microns, so full-length packets at the fastest contrast point
    would decay before the packet ends.
    """

    m_grid: tuple = (80, 40, 20, 10, 5, 4)
    eval_packets: int = 250
    packet_symbols: int = 8
    v1: float = 3e-6

    def __post_init__(self) -> None:
        grid = tuple(int(v) for v in self.m_grid)
        object.__setattr__(self, "m_grid", grid)
        if not grid or any(v < 4 for v in grid):
            raise ValueError("m_grid entries must be at least 4")
        if self.eval_packets < 1:
            raise ValueError("eval_packets must be positive")
        if self.packet_symbols < 1:
            raise ValueError("packet_symbols must be positive")
        if self.v1 < 0:
            raise ValueError("v1 must be nonnegative")


@dataclass(frozen=True)
class IsiSweepSettings:
    """Channel-memory sweep with and without decision-feedback cancellation.

    Runs at a short-symbol, near-static operating point: ``t_sym`` overrides
    the channel symbol period so residual tails carry appreciable weight, and
    ``packet_symbols`` and ``v1`` override the run/mobility values so the
    geometry stays nearly frozen across a packet.  With the geometry pinned,
    the interference terms (not transmitter wander) dominate the no-cancel
    error floor, which is the regime the cancellers are meant to repair.
    """

    memory_grid: tuple = (1, 2, 3, 4, 5)
    eval_packets: int = 500
    detectors: tuple = ("dispersion", "mean")
    glrt_symbols: int = 192
    packet_symbols: int = 8
    v1: float = 1e-6
    t_sym: float = 1.0

    def __post_init__(self) -> None:
        grid = tuple(int(v) for v in self.memory_grid)
        object.__setattr__(self, "memory_grid", grid)
        if not grid or any(v < 1 for v in grid):
            raise ValueError("memory_grid entries must be at least 1")
        dets = tuple(str(d) for d in self.detectors)
        object.__setattr__(self, "detectors", dets)
        bad = set(dets) - {"dispersion", "mean", "glrt", "lrt"}
        if bad:
            raise ValueError(f"unknown detectors {sorted(bad)}")
        if self.eval_packets < 1 or self.glrt_symbols < 0:
            raise ValueError("budgets must be positive (glrt may be 0)")
        if self.packet_symbols < 1:
            raise ValueError("packet_symbols must be positive")
        if self.v1 < 0:
            raise ValueError("v1 must be nonnegative")
        if self.t_sym <= 0:
            raise ValueError("t_sym must be positive")


# Field kinds drive both directions of the text serialization.
_F, _I, _S, _FS, _IS, _SS = "float", "int", "str", "floats", "ints", "strs"

_SCHEMA = (
    ("run", "run", RunSettings, (
        ("master_seed", _I), ("n_packets", _I), ("packet_symbols", _I), ("output_dir", _S),
    )),
    ("channel", "channel", ChannelParams, (
        ("g0", _F), ("dm", _F), ("memory", _I), ("t_sym", _F), ("m_samples", _I),
        ("a0", _F), ("a1", _F), ("lambda_bg", _F), ("r_min", _F),
    )),
    ("mobility", "mobility", MobilityParams, (
        ("v0", _F), ("v1", _F), ("dr0", _F), ("dr1", _F), ("d_trans", _F),
        ("dt_traj", _F), ("x0", _FS), ("x_receiver", _FS),
    )),
    ("detection", "detection", DetectionSettings, (
        ("trim_alpha", _F), ("trim_beta", _F), ("alpha_gate", _F), ("pfa_target", _F),
        ("template_packets", _I), ("h1_pilot_packets", _I), ("h0_pilot_packets", _I),
    )),
    ("baseline", "baseline", BaselineSettings, (
        ("n_paths", _I), ("path_seed", _I), ("glrt_max_eval", _I),
    )),
    ("sweep.gain", "gain", GainSweepSettings, (
        ("psi_grid", _FS), ("eval_packets", _I), ("glrt_symbols", _I),
    )),
    ("sweep.roc", "roc", RocSweepSettings, (
        ("psi_low", _F), ("psi_high", _F), ("eval_packets", _I),
        ("curve_points", _I), ("glrt_symbols", _I),
        ("pilot_packets", _I), ("template_packets", _I),
    )),
    ("sweep.mobility", "contrast", MobilitySweepSettings, (
        ("v1_grid", _FS), ("eval_packets", _I), ("pilot_packets", _I),
        ("template_packets", _I), ("neutral_tol", _F), ("max_pilot_rounds", _I),
    )),
    ("sweep.sampling", "sampling", SamplingSweepSettings, (
        ("m_grid", _IS), ("eval_packets", _I), ("packet_symbols", _I), ("v1", _F),
    )),
    ("sweep.isi", "isi", IsiSweepSettings, (
        ("memory_grid", _IS), ("eval_packets", _I), ("detectors", _SS), ("glrt_symbols", _I),
        ("packet_symbols", _I), ("v1", _F), ("t_sym", _F),
    )),
)

_SECTION_NOTES = {
    "run": "seeds, budgets, and output location",
    "channel": "release/counting channel (SI units: meters, seconds, counts)",
    "mobility": "active-Brownian transceiver motion (SI units)",
    "detection": "window trimming, activity gate, threshold calibration",
    "baseline": "likelihood-receiver path bank and profiling budgets",
    "sweep.gain": "gain-stability sweep",
    "sweep.roc": "threshold sweep under random per-packet gain",
    "sweep.mobility": "bit-1 speed sweep; fixed-release and mean-neutralized arms",
    "sweep.sampling": "within-window sampling-step sweep",
    "sweep.isi": "channel-memory sweep with decision feedback",
}


def _format_value(value, kind: str) -> str:
    if kind == _F:
        return repr(float(value))
    if kind == _I:
        return str(int(value))
    if kind == _S:
        return str(value)
    if kind == _FS:
        return " ".join(repr(float(v)) for v in value)
    if kind == _IS:
        return " ".join(str(int(v)) for v in value)
    if kind == _SS:
        return " ".join(str(v) for v in value)
    raise AssertionError(kind)


def _parse_value(raw: str, kind: str):
    raw = raw.strip()
    try:
        if kind == _F:
            return float(raw)
        if kind == _I:
            return int(raw)
        if kind == _S:
            return raw
        if kind == _FS:
            return tuple(float(tok) for tok in raw.split())
        if kind == _IS:
            return tuple(int(tok) for tok in raw.split())
        if kind == _SS:
            return tuple(raw.split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {kind}") from exc
    raise AssertionError(kind)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of the simulator, detectors, and experiment drivers."""

    run: RunSettings
    channel: ChannelParams
    mobility: MobilityParams
    detection: DetectionSettings
    baseline: BaselineSettings
    gain: GainSweepSettings
    roc: RocSweepSettings
    contrast: MobilitySweepSettings
    sampling: SamplingSweepSettings
    isi: IsiSweepSettings

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls(
            run=RunSettings(),
            channel=ChannelParams(g0=default_g0(DEFAULT_RECEIVER_RADIUS)),
            mobility=MobilityParams(),
            detection=DetectionSettings(),
            baseline=BaselineSettings(),
            gain=GainSweepSettings(),
            roc=RocSweepSettings(),
            contrast=MobilitySweepSettings(),
            sampling=SamplingSweepSettings(),
            isi=IsiSweepSettings(),
        )

    def packets_for(self, sweep: str) -> int:
        """Per-point evaluation budget; a stored 0 inherits run.n_packets."""
        stored = {
            "gain": self.gain.eval_packets,
            "roc": self.roc.eval_packets,
            "mobility": self.contrast.eval_packets,
            "sampling": self.sampling.eval_packets,
            "isi": self.isi.eval_packets,
        }[sweep]
        return stored if stored > 0 else self.run.n_packets

    def items(self):
        """Flat (section, key, formatted value) triples in canonical order."""
        out = []
        for section, attr, _cls, keys in _SCHEMA:
            obj = getattr(self, attr)
            for key, kind in keys:
                out.append((section, key, _format_value(getattr(obj, key), kind)))
        return out

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# dispmc experiment configuration\n")
        for section, attr, _cls, keys in _SCHEMA:
            obj = getattr(self, attr)
            buf.write(f"\n# {_SECTION_NOTES[section]}\n[{section}]\n")
            for key, kind in keys:
                buf.write(f"{key} = {_format_value(getattr(obj, key), kind)}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        known = {section: (attr, factory, dict(keys)) for section, attr, factory, keys in _SCHEMA}
        unknown = set(parser.sections()) - set(known)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        parts = {}
        for section, (attr, factory, keys) in known.items():
            kwargs = {}
            if parser.has_section(section):
                for key, raw in parser.items(section):
                    if key not in keys:
                        raise ConfigError(f"unknown key {key!r} in section [{section}]")
                    kwargs[key] = _parse_value(raw, keys[key])
            if attr == "channel" and "g0" not in kwargs:
                kwargs["g0"] = default_g0(DEFAULT_RECEIVER_RADIUS)
            try:
                parts[attr] = factory(**kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid section [{section}]: {exc}") from exc
        return cls(**parts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def with_run(self, **kwargs) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, **kwargs))

    def replace_section(self, section: str, **kwargs) -> "ExperimentConfig":
        """New config with the named section's fields replaced.

        Accepts either the on-disk section name (e.g. "sweep.gain") or the
        attribute name (e.g. "gain").
        """
        for sec, attr, _cls, _keys in _SCHEMA:
            if section in (sec, attr):
                return replace(self, **{attr: replace(getattr(self, attr), **kwargs)})
        raise ConfigError(f"unknown config section {section!r}")


def _self_check() -> None:
    # The schema must cover every dataclass field exactly once.
    for section, attr, factory, keys in _SCHEMA:
        names = [k for k, _ in keys]
        actual = [f.name for f in fields(factory)]
        if names != actual:
            raise AssertionError(f"schema for [{section}] does not match {factory.__name__}")


_self_check()
