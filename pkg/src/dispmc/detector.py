"""Dispersion-domain symbol detector with activity gating.

Each symbol's windowed count vector is reduced to

    psi(m) = ((y(m) - mu_hat(m))^2 - y(m)) / mu_hat(m)^2,

whose numerator removes the intrinsic Poisson variance at the fitted mean, so
a conditionally Poisson symbol contributes near zero while latent-intensity
randomness (mobility, geometry) adds a positive excess.  The per-symbol
statistic averages psi over the energy window with a degrees-of-freedom
correction for the p fitted mean parameters.  Squared-mean normalization makes
the statistic invariant to a symbol-constant multiplicative gain on the fitted
mean, which is what stabilizes a fixed threshold across gain mismatch.

Decision flow per symbol: a light activity gate on the windowed mean rejects
near-empty windows where a profile fit is meaningless; gated symbols are fit
and thresholded on the dispersion statistic.  Gate failure and fit failure
both resolve to a 0 decision, so the unconditional false-alarm rate factors as
gate-pass probability times the conditional threshold exceedance.

Both thresholds are calibrated from labeled null symbols by empirical order
statistics: the gate at the alpha_gate-quantile of the windowed mean and the
decision threshold at the (1 - pfa_target)-quantile of the gated statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .profiling import CalibrationError, ProfileFit, Template, fit_profile_batch

__all__ = [
    "RULE_GATE",
    "RULE_NO_FIT",
    "RULE_DISPERSION",
    "RULE_MEAN",
    "RULE_LRT",
    "RULE_GLRT",
    "GateConfig",
    "DispersionThreshold",
    "DetectorVerdict",
    "psi_contribution",
    "t_delta",
    "windowed_mean",
    "calibrate_gate",
    "calibrate_threshold",
    "detect",
    "detect_batch",
    "gate_integrated_pfa",
    "write_verdicts_csv",
]

RULE_GATE = "gate"
RULE_NO_FIT = "no_fit"
RULE_DISPERSION = "dispersion"
RULE_MEAN = "mean"
RULE_LRT = "lrt"
RULE_GLRT = "glrt"

# Rules that never reach a statistic comparison.
_SHORT_CIRCUIT_RULES = (RULE_GATE, RULE_NO_FIT)
_DECISION_RULES = (RULE_DISPERSION, RULE_MEAN, RULE_LRT, RULE_GLRT)

MIN_GATE_CALIBRATION = 100


@dataclass(frozen=True)
class GateConfig:
    """Activity-gate threshold on the windowed mean count."""

    tau_y: float
    alpha_gate: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.tau_y) and self.tau_y >= 0.0):
            raise ValueError("gate threshold must be finite and nonnegative")
        if not (0.0 <= self.alpha_gate < 1.0):
            raise ValueError("alpha_gate must lie in [0, 1)")


@dataclass(frozen=True)
class DispersionThreshold:
    """Calibrated decision threshold on the dispersion statistic.

    kappa orients the comparison: decide 1 when kappa * T > kappa * tau_t.
    It defaults to +1 (the alternative has the larger dispersion) and is
    estimated from labeled data when both hypotheses are supplied.
    """

    tau_t: float
    pfa_target: float
    kappa: int = 1
    n_calibration: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau_t):
            raise ValueError("threshold must be finite")
        if not (0.0 < self.pfa_target < 1.0):
            raise ValueError("pfa_target must lie in (0, 1)")
        if self.kappa not in (-1, 1):
            raise ValueError("kappa must be -1 or +1")


@dataclass(frozen=True)
class DetectorVerdict:
    """Outcome of one per-symbol decision.

    rule records which branch fired: "gate" (windowed mean at or below the
    gate), "no_fit" (gated but the statistic could not be formed), or one of
    the decision rules "dispersion", "mean", "lrt", "glrt" naming the
    statistic that was compared against a threshold.  statistic is None
    whenever no comparison was reached.
    """

    decision: int
    gated: bool
    statistic: float | None
    rule: str

    def __post_init__(self) -> None:
        if self.decision not in (0, 1):
            raise ValueError("decision must be 0 or 1")
        if self.rule not in _SHORT_CIRCUIT_RULES + _DECISION_RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if not self.gated and self.decision != 0:
            raise ValueError("gate failure forces a 0 decision")
        if self.rule in _SHORT_CIRCUIT_RULES and self.statistic is not None:
            raise ValueError("statistic is only defined on a decision branch")


def psi_contribution(y, mu):
    """Poisson-centered, squared-mean-normalized dispersion contribution.

    Elementwise ((y - mu)^2 - y) / mu^2; mu must be strictly positive.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0):
        raise ValueError("fitted means must be finite and positive")
    out = ((y - mu) ** 2 - y) / mu**2
    if out.ndim == 0:
        return float(out)
    return out


def _window_rows(counts, template: Template) -> np.ndarray:
    y = np.asarray(counts, dtype=float)
    if y.shape[-1] == template.u.size:
        return y[..., template.m1 - 1 : template.m2]
    if y.shape[-1] == template.m_eff:
        return y
    raise ValueError("counts must cover all offsets or exactly the window")


def windowed_mean(counts, template: Template):
    """Mean count over the energy window; accepts full or windowed rows."""
    out = _window_rows(counts, template).mean(axis=-1)
    if np.ndim(out) == 0:
        return float(out)
    return out


def t_delta(counts_row, fit: ProfileFit, template: Template) -> float:
    """Window-averaged dispersion statistic for one symbol.

    Divides by (M_eff - p) with p taken from the fit, compensating the
    degrees of freedom absorbed by the profiled mean.
    """
    if not fit.converged:
        raise ValueError("profile fit did not converge")
    if template.m_eff <= fit.p:
        raise ValueError("window must have more samples than fitted parameters")
    y = _window_rows(counts_row, template)
    if y.ndim != 1:
        raise ValueError("expected a single symbol row")
    psi = psi_contribution(y, fit.mu_hat)
    return float(np.sum(psi) / (template.m_eff - fit.p))


def _order_statistic(values: np.ndarray, q: float) -> float:
    """Empirical q-quantile as the ceil(q*n)-th order statistic (1-based)."""
    s = np.sort(values)
    idx = math.ceil(q * s.size)
    if idx < 1:
        return float(np.nextafter(s[0], -np.inf))
    return float(s[min(idx, s.size) - 1])


def calibrate_gate(h0_counts, alpha_gate: float, template: Template | None = None) -> GateConfig:
    """Gate threshold from null calibration symbols.

    Accepts a 2-D count matrix (windowed means computed via the template) or
    a 1-D vector of already-computed windowed means.  The threshold is the
    alpha_gate-quantile, so roughly a (1 - alpha_gate) fraction of null
    symbols pass the strict gate.  alpha_gate = 0 places the threshold just
    below the sample minimum (clamped at 0, the physical floor).
    """
    arr = np.asarray(h0_counts, dtype=float)
    if arr.ndim == 2:
        if template is None:
            raise ValueError("a template is required to window 2-D counts")
        means = windowed_mean(arr, template)
    elif arr.ndim == 1:
        means = arr
    else:
        raise ValueError("calibration input must be 1-D means or a 2-D count matrix")
    if not np.all(np.isfinite(means)) or np.any(means < 0):
        raise ValueError("windowed means must be finite and nonnegative")
    if means.size < MIN_GATE_CALIBRATION:
        raise CalibrationError(
            f"need at least {MIN_GATE_CALIBRATION} null symbols, got {means.size}"
        )
    tau = max(_order_statistic(means, alpha_gate), 0.0)
    return GateConfig(tau_y=tau, alpha_gate=float(alpha_gate))


def calibrate_threshold(
    h0_statistics, pfa_target: float, h1_statistics=None, min_tail: float = 10.0
) -> DispersionThreshold:
    """Decision threshold from gated null statistics.

    tau_t is the order statistic at ceil((1 - pfa_target) * n), so the
    strict-exceedance count on the calibration set itself is within one of
    floor(pfa_target * n).  When labeled alternative statistics are supplied,
    kappa is set from the sign of the mean difference; otherwise +1.

    Tail resolution requires roughly min_tail samples beyond the threshold,
    i.e. n >= min_tail / pfa_target; lower min_tail only for toy inputs.
    """
    stats = np.asarray(h0_statistics, dtype=float)
    if stats.ndim != 1 or stats.size == 0:
        raise ValueError("null statistics must be a nonempty 1-D array")
    if not np.all(np.isfinite(stats)):
        raise ValueError("null statistics must be finite")
    if not (0.0 < pfa_target < 1.0):
        raise ValueError("pfa_target must lie in (0, 1)")
    if stats.size < min_tail / pfa_target:
        raise CalibrationError(
            f"tail resolution needs >= {math.ceil(min_tail / pfa_target)} gated null "
            f"statistics, got {stats.size}"
        )
    kappa = 1
    if h1_statistics is not None:
        alt = np.asarray(h1_statistics, dtype=float)
        if alt.size and np.all(np.isfinite(alt)):
            kappa = 1 if float(np.mean(alt)) >= float(np.mean(stats)) else -1
    signed = np.sort(kappa * stats)
    idx = max(1, math.ceil((1.0 - pfa_target) * stats.size))
    tau = kappa * float(signed[idx - 1])
    return DispersionThreshold(
        tau_t=tau, pfa_target=float(pfa_target), kappa=kappa, n_calibration=int(stats.size)
    )


def _dispersion_verdict(t: float, thr: DispersionThreshold) -> DetectorVerdict:
    if not math.isfinite(t):
        return DetectorVerdict(decision=0, gated=True, statistic=None, rule=RULE_NO_FIT)
    decision = 1 if thr.kappa * t > thr.kappa * thr.tau_t else 0
    return DetectorVerdict(decision=decision, gated=True, statistic=t, rule=RULE_DISPERSION)


def detect_batch(counts, template: Template, gate: GateConfig, thr: DispersionThreshold) -> list:
    """Per-symbol decisions for every row of a count matrix.

    Gate first, fit only the surviving rows, then threshold.  Ties at either
    threshold resolve to 0 (strict inequalities throughout).
    """
    y = np.asarray(counts, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    means = windowed_mean(y, template)
    means = np.atleast_1d(means)
    verdicts: list[DetectorVerdict | None] = [None] * y.shape[0]
    open_rows = np.nonzero(means > gate.tau_y)[0]
    for i in np.nonzero(means <= gate.tau_y)[0]:
        verdicts[i] = DetectorVerdict(decision=0, gated=False, statistic=None, rule=RULE_GATE)
    if open_rows.size:
        fits = fit_profile_batch(y[open_rows], template)
        for i, fit in zip(open_rows, fits):
            if not fit.converged or template.m_eff <= fit.p or np.any(fit.mu_hat <= 0.0):
                verdicts[i] = DetectorVerdict(
                    decision=0, gated=True, statistic=None, rule=RULE_NO_FIT
                )
                continue
            verdicts[i] = _dispersion_verdict(t_delta(y[i], fit, template), thr)
    return verdicts


def detect(counts_row, template: Template, gate: GateConfig, thr: DispersionThreshold) -> DetectorVerdict:
    """Single-symbol decision; see detect_batch."""
    return detect_batch(np.asarray(counts_row, dtype=float)[None, :], template, gate, thr)[0]


def gate_integrated_pfa(gate_pass_rate_h0: float, pfa_conditional: float) -> float:
    """Unconditional false-alarm probability: gate pass rate times the
    conditional exceedance level (gate failure always decides 0)."""
    for name, val in (("gate_pass_rate_h0", gate_pass_rate_h0), ("pfa_conditional", pfa_conditional)):
        if not (0.0 <= val <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1]")
    return float(gate_pass_rate_h0) * float(pfa_conditional)


def write_verdicts_csv(path, packet_ids, symbol_ids, truth_bits, verdicts, detector=None) -> None:
    """Verdict stream as CSV rows (packet, k, truth_bit, decision, gated,
    statistic[, detector]); statistic is empty off the dispersion branch."""
    packet_ids = np.asarray(packet_ids)
    symbol_ids = np.asarray(symbol_ids)
    truth_bits = np.asarray(truth_bits)
    n = len(verdicts)
    if not (packet_ids.size == symbol_ids.size == truth_bits.size == n):
        raise ValueError("id, truth, and verdict lengths must agree")
    names = None
    if detector is not None:
        names = [detector] * n if isinstance(detector, str) else list(detector)
        if len(names) != n:
            raise ValueError("detector column length must match verdicts")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["packet", "k", "truth_bit", "decision", "gated", "statistic"]
        if names is not None:
            header.append("detector")
        writer.writerow(header)
        for i, v in enumerate(verdicts):
            stat = "" if v.statistic is None else format(v.statistic, ".17g")
            row = [
                int(packet_ids[i]),
                int(symbol_ids[i]),
                int(truth_bits[i]),
                v.decision,
                int(v.gated),
                stat,
            ]
            if names is not None:
                row.append(names[i])
            writer.writerow(row)
