"""Reference receivers for the mobile diffusive link.

Implements the comparison detectors that bracket the dispersion statistic:

* a windowed-mean threshold test,
* a genie-aided likelihood-ratio test that knows the true gain, background,
  and past bits and integrates the mobility randomness out by Monte-Carlo
  path averaging,
* a GLRT that profiles the marginal likelihood over (gain, background) with
  a low-dimensional simplex search,
* a two-pass decision-feedback wrapper applicable to any per-symbol rule.

The Monte-Carlo marginal likelihood draws a fixed bank of separation paths
per hypothesis (common random numbers across hypotheses and across nuisance
evaluations) and averages product-Poisson likelihoods over the energy window
in log space.  Paths restart from the nominal transmit geometry each symbol;
this drops cross-symbol position memory but keeps the within-symbol mixing
that distinguishes the hypotheses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp, xlogy

from .detector import (
    RULE_GATE,
    RULE_GLRT,
    RULE_LRT,
    RULE_MEAN,
    RULE_NO_FIT,
    DetectorVerdict,
    GateConfig,
    _window_rows,
    windowed_mean,
)
from .mobility import MobilityParams, _separations_batch
from .physics import ChannelParams, kernel
from .profiling import Template, fit_profile

__all__ = [
    "NuisanceVector",
    "MarginalLikelihoodConfig",
    "ProfiledNuisanceFit",
    "PathBank",
    "marginal_log_likelihood",
    "oracle_lrt",
    "profile_marginal_likelihood",
    "glrt",
    "mean_detector",
    "IsiMeanCanceller",
    "calibrate_isi_scale",
    "dfe_wrap",
]

BACKGROUND_EPS = 1e-6
LOG_PSI_BOUND = 60.0


@dataclass(frozen=True)
class NuisanceVector:
    """Quantities the genie receiver is handed per symbol.

    past_bits lists (s_{k-1}, ..., s_{k-L+1}), most recent first; its length
    must match the channel memory minus one at the point of use.
    """

    psi: float
    lambda_bg: float
    past_bits: tuple = ()

    def __post_init__(self) -> None:
        if not np.isfinite(self.psi) or self.psi <= 0:
            raise ValueError("psi must be finite and positive")
        if not np.isfinite(self.lambda_bg) or self.lambda_bg < 0:
            raise ValueError("lambda_bg must be finite and nonnegative")
        object.__setattr__(self, "past_bits", tuple(int(b) for b in self.past_bits))
        if any(b not in (0, 1) for b in self.past_bits):
            raise ValueError("past_bits must be binary")


@dataclass(frozen=True)
class MarginalLikelihoodConfig:
    """Path-averaging budget for the marginal likelihood."""

    n_paths: int = 512
    common_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")


@dataclass(frozen=True)
class ProfiledNuisanceFit:
    """Result of maximizing the marginal likelihood over (psi, lambda_bg)."""

    psi_hat: float
    lambda_hat: float
    loglik: float
    converged: bool
    n_eval: int


class PathBank:
    """Per-hypothesis separation paths and their tap kernels.

    For each hypothesis bit the bank simulates ``cfg.n_paths`` single-symbol
    trajectories from the nominal geometry and tabulates the kernel at every
    release tap and window offset.  Both hypotheses consume identical driving
    noise (same seeds), so likelihood differences reflect the motion
    parameters rather than Monte-Carlo luck.  Weighted tap sums are cached
    per (bit, past_bits) context; nuisance parameters enter only through the
    affine map lambda_bg + psi * signal, so one bank serves every evaluation.
    """

    def __init__(
        self,
        channel: ChannelParams,
        mobility: MobilityParams,
        template: Template,
        cfg: MarginalLikelihoodConfig = MarginalLikelihoodConfig(),
    ) -> None:
        self.channel = channel
        self.mobility = mobility
        self.template = template
        self.cfg = cfg
        self.underflow_count = 0
        self._signal_cache: dict = {}

        offsets = channel.sample_offsets()[template.indices]
        times = np.arange(channel.memory)[:, None] * channel.t_sym + offsets[None, :]
        self._taps = {}
        for s in (0, 1):
            r = self._simulate_paths(s)[:, template.indices]
            r = np.maximum(r, channel.r_min)
            self._taps[s] = kernel(r[:, None, :], times[None, :, :], channel)

    def _simulate_paths(self, bit: int) -> np.ndarray:
        # Rebuilding the generators per hypothesis replays the same normals.
        rngs = [
            np.random.Generator(
                np.random.Philox(np.random.SeedSequence(self.cfg.common_seed, spawn_key=(j,)))
            )
            for j in range(self.cfg.n_paths)
        ]
        bits = np.full((self.cfg.n_paths, 1), bit, dtype=int)
        return _separations_batch(bits, self.mobility, self.channel, rngs)[:, 0, :]

    def signal(self, hypothesis_bit: int, past_bits: tuple) -> np.ndarray:
        """Per-path gain-normalized window intensity, shape (n_paths, M_eff)."""
        if hypothesis_bit not in (0, 1):
            raise ValueError("hypothesis_bit must be 0 or 1")
        past = tuple(int(b) for b in past_bits)
        if len(past) != self.channel.memory - 1:
            raise ValueError("past_bits must have memory - 1 entries")
        if any(b not in (0, 1) for b in past):
            raise ValueError("past_bits must be binary")
        key = (hypothesis_bit, past)
        cached = self._signal_cache.get(key)
        if cached is not None:
            return cached
        amps = np.array(
            [self.channel.amplitude(hypothesis_bit)]
            + [self.channel.amplitude(b) for b in past]
        )
        out = np.einsum("jlm,l->jm", self._taps[hypothesis_bit], amps)
        self._signal_cache[key] = out
        return out


def marginal_log_likelihood(
    counts_row,
    hypothesis_bit: int,
    nuisance: NuisanceVector,
    bank: PathBank,
) -> float:
    """Monte-Carlo estimate of log p(window counts | hypothesis, nuisance).

    Averages the per-path product-Poisson likelihood over the bank's paths in
    log space.  Returns -inf when every path underflows (the bank's
    underflow_count is incremented as a diagnostic).
    """
    y = _window_rows(np.asarray(counts_row, dtype=float), bank.template)
    if y.ndim != 1:
        raise ValueError("expected a single symbol row")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("counts must be finite and nonnegative")
    signal = bank.signal(hypothesis_bit, nuisance.past_bits)
    lam = nuisance.lambda_bg + nuisance.psi * signal
    with np.errstate(divide="ignore", invalid="ignore"):
        path_ll = xlogy(y[None, :], lam).sum(axis=1) - lam.sum(axis=1)
    path_ll -= gammaln(y + 1.0).sum()
    out = float(logsumexp(path_ll) - np.log(bank.cfg.n_paths))
    if out == -np.inf:
        bank.underflow_count += 1
    return out


def oracle_lrt(
    counts_row,
    nuisance: NuisanceVector,
    bank: PathBank,
    gate: GateConfig | None = None,
    log_eta: float = 0.0,
) -> DetectorVerdict:
    """Genie-aided likelihood-ratio test at threshold eta (log_eta = log eta).

    Decides 1 iff the marginal log-likelihood ratio strictly exceeds log_eta;
    ties go to 0.  With a gate supplied, symbols whose windowed mean does not
    exceed the gate are declared 0 without evaluating likelihoods.
    """
    if gate is not None and windowed_mean(counts_row, bank.template) <= gate.tau_y:
        return DetectorVerdict(decision=0, gated=False, statistic=None, rule=RULE_GATE)
    ll1 = marginal_log_likelihood(counts_row, 1, nuisance, bank)
    ll0 = marginal_log_likelihood(counts_row, 0, nuisance, bank)
    if ll1 == -np.inf and ll0 == -np.inf:
        return DetectorVerdict(decision=0, gated=True, statistic=None, rule=RULE_NO_FIT)
    llr = ll1 - ll0
    decision = 1 if llr > log_eta else 0
    return DetectorVerdict(decision=decision, gated=True, statistic=llr, rule=RULE_LRT)


def _nuisance_from_point(z: np.ndarray) -> tuple:
    psi = float(np.exp(np.clip(z[0], -LOG_PSI_BOUND, LOG_PSI_BOUND)))
    lam = max(float(np.exp(np.clip(z[1], -700.0, 700.0))) - BACKGROUND_EPS, 0.0)
    return psi, lam


def profile_marginal_likelihood(
    counts_row,
    hypothesis_bit: int,
    past_bits: tuple,
    bank: PathBank,
    max_eval: int = 200,
) -> ProfiledNuisanceFit:
    """Maximize the marginal likelihood over (psi, lambda_bg) for one symbol.

    Nelder-Mead in (log psi, log(lambda_bg + eps)) from three deterministic
    moment-matched starts, at most max_eval evaluations each, on the shared
    path bank.  converged is False only when no finite likelihood was found.
    """
    y = _window_rows(np.asarray(counts_row, dtype=float), bank.template)
    signal = bank.signal(hypothesis_bit, tuple(past_bits))
    const = gammaln(y + 1.0).sum()
    n_eval = 0

    def objective(z: np.ndarray) -> float:
        nonlocal n_eval
        n_eval += 1
        psi, lam_bg = _nuisance_from_point(z)
        lam = lam_bg + psi * signal
        if not np.all(np.isfinite(lam)):
            return np.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            path_ll = xlogy(y[None, :], lam).sum(axis=1) - lam.sum(axis=1)
        ll = logsumexp(path_ll) - np.log(bank.cfg.n_paths) - const
        return np.inf if np.isnan(ll) else -ll

    s_bar = float(signal.mean())
    y_bar = float(y.mean())
    lam_start = max(0.25 * y_bar, 0.05)
    psi_start = max((y_bar - lam_start) / s_bar, 1e-3) if s_bar > 0 else 1e-3
    starts = [
        (psi_start, lam_start),
        (0.25 * psi_start, 4.0 * lam_start),
        (4.0 * psi_start, max(0.25 * lam_start, BACKGROUND_EPS)),
    ]

    best = None
    for psi0, lam0 in starts:
        z0 = np.array([np.log(psi0), np.log(lam0 + BACKGROUND_EPS)])
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            options={"maxfev": max_eval, "xatol": 1e-4, "fatol": 1e-7},
        )
        if best is None or res.fun < best.fun:
            best = res
    psi_hat, lam_hat = _nuisance_from_point(best.x)
    loglik = -float(best.fun)
    return ProfiledNuisanceFit(
        psi_hat=psi_hat,
        lambda_hat=lam_hat,
        loglik=loglik,
        converged=bool(np.isfinite(loglik)),
        n_eval=n_eval,
    )


def glrt(
    counts_row,
    past_bits: tuple,
    bank: PathBank,
    gate: GateConfig | None = None,
    log_eta: float = 0.0,
    max_eval: int = 200,
) -> DetectorVerdict:
    """Profiled likelihood-ratio test with ISI side information.

    past_bits carries the previous decisions (tentative or genie).  An
    all-zero window short-circuits to a tie: both profiled likelihoods peak
    at vanishing gain and background, so the ratio is 1 and the strict
    comparison yields 0.
    """
    if gate is not None and windowed_mean(counts_row, bank.template) <= gate.tau_y:
        return DetectorVerdict(decision=0, gated=False, statistic=None, rule=RULE_GATE)
    y = _window_rows(np.asarray(counts_row, dtype=float), bank.template)
    if not np.any(y > 0):
        decision = 1 if 0.0 > log_eta else 0
        return DetectorVerdict(decision=decision, gated=True, statistic=0.0, rule=RULE_GLRT)
    fits = [
        profile_marginal_likelihood(counts_row, s, past_bits, bank, max_eval=max_eval)
        for s in (0, 1)
    ]
    if not (fits[0].converged or fits[1].converged):
        return DetectorVerdict(decision=0, gated=True, statistic=None, rule=RULE_NO_FIT)
    llr = fits[1].loglik - fits[0].loglik
    decision = 1 if llr > log_eta else 0
    return DetectorVerdict(decision=decision, gated=True, statistic=llr, rule=RULE_GLRT)


def mean_detector(
    counts_row,
    template: Template,
    tau_ybar: float,
    gate: GateConfig | None = None,
) -> DetectorVerdict:
    """Windowed-mean threshold test: decide 1 iff the mean strictly exceeds tau."""
    if not np.isfinite(tau_ybar):
        raise ValueError("tau_ybar must be finite")
    ybar = windowed_mean(counts_row, template)
    if np.ndim(ybar) != 0:
        raise ValueError("expected a single symbol row")
    if gate is not None and ybar <= gate.tau_y:
        return DetectorVerdict(decision=0, gated=False, statistic=None, rule=RULE_GATE)
    decision = 1 if ybar > tau_ybar else 0
    return DetectorVerdict(decision=decision, gated=True, statistic=float(ybar), rule=RULE_MEAN)


@dataclass(frozen=True)
class IsiMeanCanceller:
    """Subtracts the predicted mean ISI tail from count rows, clipping at zero.

    The prediction puts the transmitter at a fixed reference separation:
    gamma * sum_{ell>=1} A(s_{k-ell}) * kernel(r_ref, ell*T + t_m), with gamma
    the calibrated counts-per-model scale (see calibrate_isi_scale).
    """

    channel: ChannelParams
    gamma: float
    r_ref: float = 10e-6

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError("gamma must be finite and nonnegative")
        if self.r_ref <= 0:
            raise ValueError("r_ref must be positive")

    def tail_prediction(self, past_bits) -> np.ndarray:
        past = tuple(int(b) for b in past_bits)
        if len(past) != self.channel.memory - 1:
            raise ValueError("past_bits must have memory - 1 entries")
        offsets = self.channel.sample_offsets()
        pred = np.zeros(self.channel.m_samples)
        for ell, bit in enumerate(past, start=1):
            amp = self.channel.amplitude(bit)
            if amp == 0.0:
                continue
            pred += amp * kernel(self.r_ref, ell * self.channel.t_sym + offsets, self.channel)
        return self.gamma * pred

    def __call__(self, counts_row, past_bits) -> np.ndarray:
        y = np.asarray(counts_row, dtype=float)
        if y.shape != (self.channel.m_samples,):
            raise ValueError("counts_row must cover all m_samples offsets")
        return np.maximum(y - self.tail_prediction(past_bits), 0.0)


def calibrate_isi_scale(
    calibration_counts,
    template: Template,
    channel: ChannelParams,
    r_ref: float = 10e-6,
) -> float:
    """Counts-per-model scale gamma for the ISI canceller.

    Fits the signal profile to the calibration column means and divides the
    fitted window-mean signal by the fixed-geometry prediction for the same
    all-ones bit pattern the calibration stream transmits, so gamma absorbs
    the mobility-induced gap between the reference kernel and the realized
    mean counts.
    """
    counts = np.asarray(calibration_counts, dtype=float)
    if counts.ndim != 2:
        raise ValueError("calibration_counts must be 2-D (symbols, offsets)")
    fit = fit_profile(counts.mean(axis=0), template)
    if not fit.converged:
        raise ValueError("profile fit on calibration means failed")
    offsets = channel.sample_offsets()[template.indices]
    model = np.zeros(offsets.size)
    for ell in range(channel.memory):
        model += channel.a1 * kernel(r_ref, ell * channel.t_sym + offsets, channel)
    denom = float(model.mean())
    if denom <= 0:
        raise ValueError("reference-geometry prediction has no mass in the window")
    return float(fit.a_hat) * float(template.u_window.mean()) / denom


def _past_from(decisions, k: int, memory: int, pre_bits) -> tuple:
    past = []
    for i in range(1, memory):
        idx = k - i
        past.append(int(decisions[idx]) if idx >= 0 else int(pre_bits[-idx - 1]))
    return tuple(past)


def dfe_wrap(
    rule,
    counts,
    memory: int,
    canceller: IsiMeanCanceller | None = None,
    pre_bits=None,
    feedback_bits=None,
    rule2=None,
) -> tuple:
    """Two-pass decision feedback around any per-symbol rule.

    rule(counts_row, past_bits) -> DetectorVerdict.  Pass 1 runs the rule
    sequentially, feeding each symbol its own pass's earlier decisions (the
    tentative pass).  Pass 2 re-detects every symbol against pass-1 decisions:
    likelihood-style rules receive them as past_bits; with a canceller the
    predicted ISI tail is subtracted from the counts first, so gating and
    fitting both see corrected data.  feedback_bits (e.g. true bits from a
    genie) replaces the pass-1 decisions as pass-2 feedback when given.
    rule2 overrides the rule for pass 2; threshold-style rules need this when
    their cutoffs were calibrated on cancelled pilot data.

    Returns (pass2_verdicts, pass1_verdicts).
    """
    y = np.asarray(counts, dtype=float)
    if y.ndim != 2:
        raise ValueError("counts must be 2-D (symbols, offsets)")
    if memory < 1:
        raise ValueError("memory must be at least 1")
    if pre_bits is None:
        pre_bits = (0,) * (memory - 1)
    pre_bits = tuple(int(b) for b in pre_bits)
    if len(pre_bits) != memory - 1:
        raise ValueError("pre_bits must have memory - 1 entries")
    n = y.shape[0]

    if rule2 is None:
        rule2 = rule

    pass1 = []
    decisions1 = np.zeros(n, dtype=int)
    for k in range(n):
        verdict = rule(y[k], _past_from(decisions1, k, memory, pre_bits))
        pass1.append(verdict)
        decisions1[k] = verdict.decision

    feedback = decisions1
    if feedback_bits is not None:
        feedback = np.asarray(feedback_bits, dtype=int)
        if feedback.shape != (n,):
            raise ValueError("feedback_bits must match the symbol count")

    pass2 = []
    for k in range(n):
        past = _past_from(feedback, k, memory, pre_bits)
        row = canceller(y[k], past) if canceller is not None else y[k]
        pass2.append(rule2(row, past))
    return pass2, pass1
