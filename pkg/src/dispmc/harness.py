"""Experiment drivers: calibration, the four sweep families, and CSV output.

Every driver is a pure function of (ExperimentConfig, master_seed): packet
streams, pilot rounds, and coin flips all draw from seeds derived through
fixed stage keys, so rerunning a sweep reproduces its rows bit for bit.
Calibration traffic is generated on dedicated streams and never enters a
reported metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import baselines
from .analysis import estimate_lrv, correlation_diagnostics, fit_gaussian_model, q_func, roc_curve
from .config import ExperimentConfig
from .counting import generate_packet_batch, params_snapshot
from .detector import (
    DispersionThreshold,
    GateConfig,
    calibrate_gate,
    calibrate_threshold,
    psi_contribution,
    t_delta,
    windowed_mean,
)
from .mobility import MobilityParams, effective_diffusivity
from .physics import ChannelParams
from .profiling import Template, fit_profile_batch, learn_template

__all__ = [
    "CalibrationProduct",
    "SweepResult",
    "calibrate_link",
    "run_gain_stability",
    "run_roc",
    "run_mobility_contrast",
    "run_correlation_isi",
]

# Stage keys separate every packet stream a driver opens from master_seed.
_STAGES = {
    "cal_template": 1,
    "cal_h0": 2,
    "cal_h1": 3,
    "gain_eval": 10,
    "roc_bits": 20,
    "roc_psi": 21,
    "roc_eval": 22,
    "roc_template": 23,
    "roc_pilot": 24,
    "mob_pilot": 30,
    "mob_bits": 31,
    "mob_eval": 32,
    "samp_cal": 40,
    "samp_bits": 41,
    "samp_eval": 42,
    "samp_coin": 43,
    "isi_cal": 50,
    "isi_bits": 51,
    "isi_eval": 52,
    "isi_pilot": 53,
    "isi_pilot_bits": 54,
    "sim_bits": 60,
    "sim_eval": 61,
}


def _stage_seed(master_seed: int, stage: str, index: int = 0) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(_STAGES[stage], int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def _stage_rng(master_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(_stage_seed(master_seed, stage, index))


def _pool_counts(records) -> np.ndarray:
    return np.concatenate([np.asarray(r.counts, dtype=float) for r in records], axis=0)


def _constant_bits(n_packets: int, k_symbols: int, value: int) -> np.ndarray:
    return np.full((n_packets, k_symbols), int(value), dtype=int)


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationProduct:
    """Frozen outputs of the pilot stage: window template, activity gate,
    and the two decision thresholds (dispersion statistic and windowed mean)."""

    template: Template
    gate: GateConfig
    dispersion: DispersionThreshold
    ybar: DispersionThreshold
    gate_pass_h0: float
    fit_p: int
    n_h0_stats: int
    n_h1_stats: int


@dataclass(frozen=True)
class _CalPools:
    """Raw calibration count pools, kept so ISI variants can recalibrate
    thresholds on cancelled pilot data."""

    template: np.ndarray
    h0: np.ndarray
    h1: np.ndarray


@dataclass
class _SymbolStats:
    means: np.ndarray
    open_: np.ndarray
    t: np.ndarray
    psi_rows: np.ndarray
    valid: np.ndarray
    p: int


def _symbol_stats(pool: np.ndarray, template: Template, tau_gate: float | None = None) -> _SymbolStats:
    """Windowed means, gate mask, and dispersion statistics for count rows.

    Rows failing the gate are not fitted.  A fit is usable only when it
    converged with fewer parameters than window samples and a strictly
    positive fitted mean; anything else leaves nan (a forced 0 decision).
    """
    pool = np.asarray(pool, dtype=float)
    n = pool.shape[0]
    means = np.atleast_1d(windowed_mean(pool, template))
    open_ = means > tau_gate if tau_gate is not None else np.ones(n, dtype=bool)
    t = np.full(n, np.nan)
    psi_rows = np.full((n, template.m_eff), np.nan)
    wrows = pool[:, template.indices] if pool.shape[1] != template.m_eff else pool
    p_seen = []
    idx = np.nonzero(open_)[0]
    if idx.size:
        fits = fit_profile_batch(pool[idx], template)
        for i, fit in zip(idx, fits):
            if fit.converged and fit.p < template.m_eff and np.all(fit.mu_hat > 0.0):
                t[i] = t_delta(pool[i], fit, template)
                psi_rows[i] = psi_contribution(wrows[i], fit.mu_hat)
                p_seen.append(fit.p)
    p = int(np.bincount(p_seen).argmax()) if p_seen else 2
    valid = open_ & np.isfinite(t)
    return _SymbolStats(means=means, open_=open_, t=t, psi_rows=psi_rows, valid=valid, p=p)


def _thresholds_from_pools(
    pool0: np.ndarray,
    pool1: np.ndarray,
    template: Template,
    alpha_gate: float,
    pfa_target: float,
):
    """Gate and both decision thresholds from null/alternative pilot pools."""
    means0 = np.atleast_1d(windowed_mean(pool0, template))
    gate = calibrate_gate(means0, alpha_gate)
    s0 = _symbol_stats(pool0, template, gate.tau_y)
    s1 = _symbol_stats(pool1, template, gate.tau_y)
    thr = calibrate_threshold(s0.t[s0.valid], pfa_target, s1.t[s1.valid])
    ybar = calibrate_threshold(s0.means[s0.open_], pfa_target, s1.means[s1.open_])
    product = CalibrationProduct(
        template=template,
        gate=gate,
        dispersion=thr,
        ybar=ybar,
        gate_pass_h0=float(np.mean(s0.open_)),
        fit_p=s0.p,
        n_h0_stats=int(s0.valid.sum()),
        n_h1_stats=int(s1.valid.sum()),
    )
    return product


def _calibrate(
    channel: ChannelParams,
    mob: MobilityParams,
    detection,
    k_symbols: int,
    master_seed: int,
):
    """Template from an all-ones stream, gate and thresholds from pilots.

    The null pilot transmits all zeros (bit 0 still releases its amplitude,
    so the stream carries representative interference); the alternative
    pilot transmits all ones and only orients the thresholds.
    """
    tpl_recs = generate_packet_batch(
        _constant_bits(detection.template_packets, k_symbols, 1),
        1.0, channel, mob, _stage_seed(master_seed, "cal_template"),
    )
    tpl_pool = _pool_counts(tpl_recs)
    template = learn_template(tpl_pool, detection.trim_alpha, detection.trim_beta)

    h0_recs = generate_packet_batch(
        _constant_bits(detection.h0_pilot_packets, k_symbols, 0),
        1.0, channel, mob, _stage_seed(master_seed, "cal_h0"),
    )
    h1_recs = generate_packet_batch(
        _constant_bits(detection.h1_pilot_packets, k_symbols, 1),
        1.0, channel, mob, _stage_seed(master_seed, "cal_h1"),
    )
    pools = _CalPools(template=tpl_pool, h0=_pool_counts(h0_recs), h1=_pool_counts(h1_recs))
    product = _thresholds_from_pools(
        pools.h0, pools.h1, template, detection.alpha_gate, detection.pfa_target
    )
    return product, pools


def calibrate_link(config: ExperimentConfig, master_seed: int | None = None) -> CalibrationProduct:
    """Run the full calibration stage at the configured operating point."""
    seed = config.run.master_seed if master_seed is None else master_seed
    product, _ = _calibrate(
        config.channel, config.mobility, config.detection, config.run.packet_symbols, seed
    )
    return product


# ---------------------------------------------------------------------------
# sweep result plumbing


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


@dataclass(frozen=True)
class SweepResult:
    """Rows of one experiment sweep plus everything needed to rerun it.

    metadata carries the full flattened configuration, so the CSV header
    alone identifies the run; rows are plain tuples aligned with columns.
    """

    sweep: str
    axis: str
    axis_values: tuple
    columns: tuple
    rows: tuple
    metadata: tuple  # ((key, value), ...) already formatted, canonical order

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.asarray([row[j] for row in self.rows])

    def select(self, **filters) -> list:
        """Rows as dicts, keeping those matching all equality filters."""
        out = []
        for row in self.rows:
            d = dict(zip(self.columns, row))
            if all(d[k] == v for k, v in filters.items()):
                out.append(d)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# dispmc sweep={self.sweep} axis={self.axis}\n")
            vals = " ".join(_fmt_cell(v) for v in self.axis_values)
            fh.write(f"# axis.values={vals}\n")
            for key, value in self.metadata:
                fh.write(f"# {key}={value}\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _meta_items(config: ExperimentConfig, extra: dict | None = None) -> tuple:
    items = [(f"cfg.{section}.{key}", value) for section, key, value in config.items()]
    if extra:
        items.extend((f"meta.{k}", _fmt_cell(v)) for k, v in sorted(extra.items()))
    return tuple(items)


def _binom_se(rate: float, n: int) -> float:
    if n <= 0:
        return math.nan
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / n)


# ---------------------------------------------------------------------------
# gain stability


def run_gain_stability(config: ExperimentConfig, detectors=("dispersion", "mean", "glrt")) -> SweepResult:
    """Null false-alarm rate versus multiplicative gain, thresholds frozen.

    Calibrates once at gain 1, then replays all-zero traffic at each grid
    gain.  Every empirical row reports the gate-integrated false-alarm rate
    (a failed gate decides 0); the dispersion detector also gets a Gaussian
    prediction row computed from that point's own fitted moments and gate
    pass rate.
    """
    master = config.run.master_seed
    k = config.run.packet_symbols
    channel, mob = config.channel, config.mobility
    cal, _ = _calibrate(channel, mob, config.detection, k, master)
    tpl, gate, thr, ybar = cal.template, cal.gate, cal.dispersion, cal.ybar

    bank = None
    if "glrt" in detectors and config.gain.glrt_symbols > 0:
        bank = baselines.PathBank(
            channel, mob, tpl,
            baselines.MarginalLikelihoodConfig(config.baseline.n_paths, config.baseline.path_seed),
        )

    columns = ("psi", "detector", "kind", "n", "n_pass", "pass_rate", "rate", "se")
    rows = []
    for i, psi in enumerate(config.gain.psi_grid):
        recs = generate_packet_batch(
            _constant_bits(config.gain.eval_packets, k, 0),
            psi, channel, mob, _stage_seed(master, "gain_eval", i),
        )
        pool = _pool_counts(recs)
        st = _symbol_stats(pool, tpl, gate.tau_y)
        n = pool.shape[0]
        n_pass = int(st.open_.sum())
        pass_rate = n_pass / n

        if "dispersion" in detectors:
            fa_disp = st.valid & (thr.kappa * st.t > thr.kappa * thr.tau_t)
            rate = float(np.mean(fa_disp))
            rows.append((psi, "dispersion", "empirical", n, n_pass, pass_rate, rate, _binom_se(rate, n)))
            n_valid = int(st.valid.sum())
            if n_valid >= 30:
                mu0 = float(st.t[st.valid].mean())
                lrv = estimate_lrv(st.psi_rows[st.valid], l_max=min(10, tpl.m_eff - 1))
                scale = tpl.m_eff / (tpl.m_eff - st.p) ** 2
                sd = math.sqrt(max(scale * lrv.omega2, 1e-300))
                cond = q_func(thr.kappa * (thr.tau_t - mu0) / sd)
                pred = pass_rate * cond
                rows.append((psi, "dispersion", "gaussian", n_valid, n_pass, pass_rate, float(pred), _binom_se(pred, n_valid)))
        if "mean" in detectors:
            fa_mean = st.open_ & (ybar.kappa * st.means > ybar.kappa * ybar.tau_t)
            rate = float(np.mean(fa_mean))
            rows.append((psi, "mean", "empirical", n, n_pass, pass_rate, rate, _binom_se(rate, n)))
        if bank is not None:
            n_sub = min(config.gain.glrt_symbols, n)
            past = (0,) * (channel.memory - 1)
            dec = np.zeros(n_sub, dtype=int)
            hits = 0
            for j in range(n_sub):
                verdict = baselines.glrt(
                    pool[j], past, bank, gate=gate, max_eval=config.baseline.glrt_max_eval
                )
                dec[j] = verdict.decision
                hits += int(verdict.gated)
            rate = float(dec.mean()) if n_sub else math.nan
            rows.append((psi, "glrt", "empirical", n_sub, hits, hits / n_sub if n_sub else math.nan, rate, _binom_se(rate, n_sub)))

    extra = {
        "gate.tau_y": cal.gate.tau_y,
        "dispersion.tau_t": thr.tau_t,
        "dispersion.kappa": thr.kappa,
        "ybar.tau_t": ybar.tau_t,
        "ybar.kappa": ybar.kappa,
        "cal.gate_pass_h0": cal.gate_pass_h0,
    }
    return SweepResult(
        sweep="gain",
        axis="psi",
        axis_values=tuple(config.gain.psi_grid),
        columns=columns,
        rows=tuple(rows),
        metadata=_meta_items(config, extra),
    )


# ---------------------------------------------------------------------------
# ROC under random per-packet gain


def _roc_points(signed: np.ndarray, eligible: np.ndarray, bits: np.ndarray, curve_points: int):
    """Empirical (tau, pfa, pd) rows from one statistic.

    signed holds the oriented statistic (decide 1 when it strictly exceeds
    tau); ineligible symbols always decide 0.  The threshold grid spans the
    pooled eligible statistics plus sentinels for the (0, 0) endpoint and
    the gate-pass-limited maximum.
    """
    b0 = bits == 0
    b1 = bits == 1
    n0, n1 = int(b0.sum()), int(b1.sum())
    pool = signed[eligible]
    taus = [math.inf, -math.inf]
    if pool.size:
        qs = np.linspace(0.0, 1.0, curve_points)
        taus.extend(float(v) for v in np.quantile(pool, qs))
    taus = sorted(set(taus), reverse=True)
    out = []
    for tau in taus:
        dec = eligible & (signed > tau)
        pfa = float(np.mean(dec[b0])) if n0 else math.nan
        pd = float(np.mean(dec[b1])) if n1 else math.nan
        out.append((tau, n0, n1, pfa, pd))
    return out


def _auc(points) -> float:
    """Area under the empirical curve, completed to (1, 1) by randomization."""
    pts = sorted((p[3], p[4]) for p in points)
    xs = np.array([0.0] + [p[0] for p in pts])
    ys = np.array([0.0] + [p[1] for p in pts])
    area = float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))
    area += (1.0 - xs[-1]) * (ys[-1] + 1.0) / 2.0
    return area


def run_roc(config: ExperimentConfig, detectors=("dispersion", "mean", "glrt", "lrt")) -> SweepResult:
    """Threshold sweep with the gain drawn log-uniformly per symbol.

    Symbols are scored in isolation: each simulated packet carries a single
    symbol, a fresh trajectory, and its own gain draw, so the curve averages
    over independent geometry realizations instead of over positions inside
    a decaying long packet.  Thresholds come from isolated unit-gain pilots
    scored against a template learned from the static bit-0 stream (the
    template has to match the null's within-window profile or null residuals
    absorb a systematic misfit).  Emits empirical operating points per
    detector plus the Gaussian working model's predicted curve under the
    same gate.  The mean detector runs ungated here, as the weakest
    reference; the likelihood receivers share the calibrated gate.
    """
    master = config.run.master_seed
    k = 1  # one symbol per packet: geometry is redrawn for every symbol
    channel, mob = config.channel, config.mobility
    s = config.roc
    n_packets = config.packets_for("roc")

    tpl_recs = generate_packet_batch(
        _constant_bits(s.template_packets, k, 0),
        1.0, channel, mob, _stage_seed(master, "roc_template"),
    )
    template = learn_template(
        _pool_counts(tpl_recs), config.detection.trim_alpha, config.detection.trim_beta
    )
    h0_recs = generate_packet_batch(
        _constant_bits(s.pilot_packets, k, 0),
        1.0, channel, mob, _stage_seed(master, "roc_pilot", 0),
    )
    h1_recs = generate_packet_batch(
        _constant_bits(s.pilot_packets, k, 1),
        1.0, channel, mob, _stage_seed(master, "roc_pilot", 1),
    )
    cal = _thresholds_from_pools(
        _pool_counts(h0_recs), _pool_counts(h1_recs), template,
        config.detection.alpha_gate, config.detection.pfa_target,
    )
    tpl, gate = cal.template, cal.gate

    bits = _stage_rng(master, "roc_bits").integers(0, 2, size=(n_packets, k))
    lo, hi = s.psi_low, s.psi_high
    psis = np.exp(_stage_rng(master, "roc_psi").uniform(math.log(lo), math.log(hi), size=n_packets))
    recs = generate_packet_batch(bits, psis, channel, mob, _stage_seed(master, "roc_eval"))
    pool = _pool_counts(recs)
    labels = bits.reshape(-1)
    st = _symbol_stats(pool, tpl, gate.tau_y)
    n = pool.shape[0]

    columns = ("detector", "kind", "tau", "n0", "n1", "p_fa", "p_fa_se", "p_d", "p_d_se")
    rows = []
    auc = {}

    def emit(name: str, signed: np.ndarray, eligible: np.ndarray, lab: np.ndarray) -> None:
        pts = _roc_points(signed, eligible, lab, config.roc.curve_points)
        auc[name] = _auc(pts)
        for tau, n0, n1, pfa, pd in pts:
            rows.append((name, "empirical", tau, n0, n1, pfa, _binom_se(pfa, n0), pd, _binom_se(pd, n1)))

    if "dispersion" in detectors:
        signed = np.where(st.valid, cal.dispersion.kappa * st.t, -math.inf)
        emit("dispersion", signed, st.valid, labels)
    if "mean" in detectors:
        emit("mean", st.means, np.ones(n, dtype=bool), labels)

    if "glrt" in detectors and config.roc.glrt_symbols > 0:
        bank = baselines.PathBank(
            channel, mob, tpl,
            baselines.MarginalLikelihoodConfig(config.baseline.n_paths, config.baseline.path_seed),
        )
        n_sub = min(config.roc.glrt_symbols, n)
        signed = np.full(n_sub, -math.inf)
        elig = np.zeros(n_sub, dtype=bool)
        pasts = _true_pasts(recs, channel.memory)
        for j in range(n_sub):
            verdict = baselines.glrt(
                pool[j], pasts[j], bank, gate=gate, max_eval=config.baseline.glrt_max_eval
            )
            if verdict.statistic is not None:
                signed[j] = verdict.statistic
                elig[j] = True
        emit("glrt", signed, elig, labels[:n_sub])

    if "lrt" in detectors:
        bank = baselines.PathBank(
            channel, mob, tpl,
            baselines.MarginalLikelihoodConfig(config.baseline.n_paths, config.baseline.path_seed),
        )
        pasts = _true_pasts(recs, channel.memory)
        psi_per_symbol = np.repeat(psis, k)
        signed = np.full(n, -math.inf)
        elig = np.zeros(n, dtype=bool)
        for j in range(n):
            nu = baselines.NuisanceVector(
                psi=float(psi_per_symbol[j]), lambda_bg=channel.lambda_bg, past_bits=pasts[j]
            )
            verdict = baselines.oracle_lrt(pool[j], nu, bank, gate=gate)
            if verdict.statistic is not None:
                signed[j] = verdict.statistic
                elig[j] = True
        emit("lrt", signed, elig, labels)

    if "dispersion" in detectors:
        t0 = st.t[st.valid & (labels == 0)]
        t1 = st.t[st.valid & (labels == 1)]
        if min(t0.size, t1.size) >= 200:
            model = fit_gaussian_model(
                t0, t1,
                st.psi_rows[st.valid & (labels == 0)],
                st.psi_rows[st.valid & (labels == 1)],
                st.p,
                l_max=min(10, tpl.m_eff - 1),
            )
            pass0 = float(np.mean(st.valid[labels == 0]))
            pass1 = float(np.mean(st.valid[labels == 1]))
            grid = np.linspace(0.005, 0.995, config.roc.curve_points)
            for pt in roc_curve(model, grid, gate_pass_h0=pass0, gate_pass_h1=pass1):
                rows.append(("dispersion", "gaussian", pt.tau, t0.size, t1.size,
                             pt.pfa, math.nan, pt.pd, math.nan))

    extra = {f"auc.{k_}": v for k_, v in sorted(auc.items())}
    extra["gate.tau_y"] = gate.tau_y
    return SweepResult(
        sweep="roc",
        axis="threshold_quantile",
        axis_values=tuple(np.linspace(0.0, 1.0, config.roc.curve_points)),
        columns=columns,
        rows=tuple(rows),
        metadata=_meta_items(config, extra),
    )


def _true_pasts(records, memory: int) -> list:
    """Per symbol, the true previous bits (newest first), pooled in packet order."""
    pasts = []
    for rec in records:
        for sym in range(rec.n_symbols):
            pasts.append(rec.bits_context(sym, memory)[1:])
    return pasts


# ---------------------------------------------------------------------------
# mobility contrast


def _split_threshold(s0: np.ndarray, s1: np.ndarray):
    """Minimum-error split of two labeled samples.

    Returns (tau, orient, training error rate) for the rule: decide 1 when
    orient * s > orient * tau.  Candidate cuts sit between distinct sorted
    values (plus both ends); ties break toward the smallest cut and the +1
    orientation.
    """
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    n0, n1 = s0.size, s1.size
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes need at least one finite statistic")
    vals = np.concatenate([s0, s1])
    lab = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    order = np.argsort(vals, kind="stable")
    v = vals[order]
    l_sorted = lab[order]
    cum1 = np.concatenate([[0], np.cumsum(l_sorted)])
    cum0 = np.concatenate([[0], np.cumsum(1 - l_sorted)])
    total = n0 + n1
    # cut after position j (0..total): left side = first j samples
    boundaries = [j for j in range(total + 1) if j in (0, total) or v[j - 1] < v[j]]
    best = None
    for j in boundaries:
        err_plus = cum1[j] + (n0 - cum0[j])  # ones left of cut + zeros right of it
        err_minus = (n1 - cum1[j]) + cum0[j]
        for orient, err in ((1, err_plus), (-1, err_minus)):
            if best is None or err < best[0]:
                if j == 0:
                    tau = v[0] - 1.0 if total else 0.0
                elif j == total:
                    tau = v[-1] + 1.0
                else:
                    tau = 0.5 * (v[j - 1] + v[j])
                best = (err, tau, orient)
    err, tau, orient = best
    return float(tau), int(orient), err / total


def _balanced_bits(n_packets: int, k_symbols: int) -> np.ndarray:
    # alternating pattern, offset per packet: exactly half ones, both transitions
    p = np.arange(n_packets)[:, None]
    k = np.arange(k_symbols)[None, :]
    return ((p + k) % 2).astype(int)


def run_mobility_contrast(config: ExperimentConfig, detectors=("dispersion", "mean")) -> SweepResult:
    """BER versus the bit-1 speed, with the activity gate disabled.

    Symbols are scored in isolation: each simulated packet carries one
    symbol and a fresh trajectory at the nominal geometry, so every symbol
    sees the same initial separation and the bit-1 motion contrast acts only
    through within-window dispersion.  Two arms per grid point:
    fixed-release (both bits share the bit-0 amplitude) and mean-neutralized
    (the bit-1 amplitude is recalibrated from balanced pilots until the
    windowed count means match within the configured tolerance, so only
    dispersion separates the hypotheses).  Decision thresholds are
    minimum-error splits learned on the pilot statistics; BER is evaluated
    on fresh symbols with finite statistics.
    """
    master = config.run.master_seed
    k = 1  # one symbol per packet: geometry is redrawn for every symbol
    channel, mob0 = config.channel, config.mobility
    s = config.contrast
    n_eval = config.packets_for("mobility")

    columns = ("v1", "contrast", "arm", "detector", "kind", "a1_eff", "rounds",
               "flagged", "n", "n_excluded", "ber", "se", "tau", "orient")
    rows = []

    # template from the static bit-0 stream: it matches the null's
    # within-window shape, so null residuals stay Poisson-tight at every
    # sweep point (bit-0 dynamics do not vary along the grid)
    tpl_recs = generate_packet_batch(
        _constant_bits(s.template_packets, k, 0),
        1.0, channel, mob0, _stage_seed(master, "cal_template", 1),
    )
    template = learn_template(
        _pool_counts(tpl_recs), config.detection.trim_alpha, config.detection.trim_beta
    )

    for i, v1 in enumerate(s.v1_grid):
        mob = replace(mob0, v1=v1)
        d0 = effective_diffusivity(0, mob)
        d1 = effective_diffusivity(1, mob)
        contrast = d1 / d0 if d0 > 0 else math.inf

        for arm_id, arm in enumerate(("fixed", "neutral")):
            a1_eff = channel.a0
            rounds = 0
            flagged = False
            pilot_pool = None
            pilot_bits = None
            if arm == "fixed":
                ch_arm = replace(channel, a1=channel.a0)
                pb = _balanced_bits(s.pilot_packets, k)
                precs = generate_packet_batch(
                    pb, 1.0, ch_arm, mob, _stage_seed(master, "mob_pilot", i * 64 + arm_id * 32)
                )
                pilot_pool, pilot_bits = _pool_counts(precs), pb.reshape(-1)
            else:
                converged = False
                for r in range(s.max_pilot_rounds):
                    ch_arm = replace(channel, a1=a1_eff)
                    pb = _balanced_bits(s.pilot_packets, k)
                    precs = generate_packet_batch(
                        pb, 1.0, ch_arm, mob,
                        _stage_seed(master, "mob_pilot", i * 64 + arm_id * 32 + r),
                    )
                    pilot_pool, pilot_bits = _pool_counts(precs), pb.reshape(-1)
                    means = np.atleast_1d(windowed_mean(pilot_pool, template))
                    m0 = float(means[pilot_bits == 0].mean())
                    m1 = float(means[pilot_bits == 1].mean())
                    rounds = r + 1
                    if abs(m1 - m0) <= s.neutral_tol * m0:
                        converged = True
                        break
                    sig0 = m0 - channel.lambda_bg
                    sig1 = m1 - channel.lambda_bg
                    if sig0 <= 0 or sig1 <= 0:
                        break
                    a1_eff *= sig0 / sig1
                flagged = not converged
                ch_arm = replace(channel, a1=a1_eff)

            pst = _symbol_stats(pilot_pool, template)
            eb = _stage_rng(master, "mob_bits", i * 2 + arm_id).integers(0, 2, size=(n_eval, k))
            erecs = generate_packet_batch(
                eb, 1.0, ch_arm, mob, _stage_seed(master, "mob_eval", i * 2 + arm_id)
            )
            epool = _pool_counts(erecs)
            elabels = eb.reshape(-1)
            est = _symbol_stats(epool, template)

            stats = {}
            if "dispersion" in detectors:
                stats["dispersion"] = (pst.t, est.t)
            if "mean" in detectors:
                stats["mean"] = (pst.means.astype(float), est.means.astype(float))
            for det, (ps_stat, es_stat) in stats.items():
                pfin = np.isfinite(ps_stat)
                tau, orient, _ = _split_threshold(
                    ps_stat[pfin & (pilot_bits == 0)], ps_stat[pfin & (pilot_bits == 1)]
                )
                efin = np.isfinite(es_stat)
                dec = orient * es_stat[efin] > orient * tau
                err = dec != (elabels[efin] == 1)
                ber = float(err.mean())
                rows.append((v1, contrast, arm, det, "empirical", a1_eff, rounds,
                             int(flagged), int(efin.sum()), int((~efin).sum()),
                             ber, _binom_se(ber, int(efin.sum())), tau, orient))

    return SweepResult(
        sweep="mobility",
        axis="v1",
        axis_values=tuple(s.v1_grid),
        columns=columns,
        rows=tuple(rows),
        metadata=_meta_items(config, {"gate": "disabled"}),
    )


# ---------------------------------------------------------------------------
# sampling correlation and ISI / DFE


def _threshold_decisions(st: _SymbolStats, product: CalibrationProduct):
    """Gate-integrated dispersion and mean decisions for precomputed stats."""
    thr, ybar = product.dispersion, product.ybar
    disp = st.valid & (thr.kappa * st.t > thr.kappa * thr.tau_t)
    mean = st.open_ & (ybar.kappa * st.means > ybar.kappa * ybar.tau_t)
    return disp.astype(int), mean.astype(int)


def _cancelled_pool(pool: np.ndarray, pasts, canceller: baselines.IsiMeanCanceller) -> np.ndarray:
    """Subtract the predicted interference tail per row, clipping at zero."""
    preds = {}
    out = np.empty_like(pool)
    for j, past in enumerate(pasts):
        key = tuple(past)
        if key not in preds:
            preds[key] = canceller.tail_prediction(key)
        out[j] = np.maximum(pool[j] - preds[key], 0.0)
    return out


def _feedback_pasts(decisions: np.ndarray, n_packets: int, k: int, memory: int) -> list:
    """Per-symbol past tuples built from per-packet decision feedback."""
    dec = decisions.reshape(n_packets, k)
    pasts = []
    for p in range(n_packets):
        for sym in range(k):
            past = []
            for ell in range(1, memory):
                j = sym - ell
                past.append(int(dec[p, j]) if j >= 0 else 0)
            pasts.append(tuple(past))
    return pasts


def run_correlation_isi(
    config: ExperimentConfig,
    arms=("sampling", "isi"),
    detectors=None,
    genie: bool = False,
) -> SweepResult:
    """Dependence diagnostics and ISI stress in one result table.

    The sampling arm varies the per-symbol sample count at fixed symbol
    time, reporting the correlation-adjusted sample ratio and the
    gate-integrated BER where a failed gate decides by fair coin.  The ISI
    arm sweeps the channel memory and reruns each detector with
    decision-feedback cancellation, whose thresholds are recalibrated on
    cancelled pilot data so the two variants stay comparable.

    Both arms run at their configured operating point (packet length and
    bit-1 speed) rather than the run defaults: packets must stay inside the
    live range of the link for a memory trend to be visible at all.
    """
    master = config.run.master_seed
    channel, mob0 = config.channel, config.mobility

    columns = ("arm", "m_samples", "memory", "dt", "dt_over_tau", "ratio", "omega",
               "tau_psi", "detector", "dfe", "genie", "n", "n_coin", "ber", "se")
    rows = []
    axis_vals = []

    if "sampling" in arms:
        tau_ref = math.nan
        n_eval = config.sampling.eval_packets
        k = config.sampling.packet_symbols
        mob = replace(mob0, v1=config.sampling.v1)
        for j, m in enumerate(config.sampling.m_grid):
            ch = replace(channel, m_samples=m)
            dt = ch.t_sym / m
            axis_vals.append(float(m))
            cal, _ = _calibrate(ch, mob, config.detection, k, _stage_seed(master, "samp_cal", j))
            bits = _stage_rng(master, "samp_bits", j).integers(0, 2, size=(n_eval, k))
            recs = generate_packet_batch(bits, 1.0, ch, mob, _stage_seed(master, "samp_eval", j))
            pool = _pool_counts(recs)
            labels = bits.reshape(-1)
            st = _symbol_stats(pool, cal.template, cal.gate.tau_y)
            disp, mean = _threshold_decisions(st, cal)

            closed = ~st.open_
            coins = _stage_rng(master, "samp_coin", j).integers(0, 2, size=int(closed.sum()))
            disp[closed] = coins
            mean[closed] = coins

            h1 = st.valid & (labels == 1)
            l_max = min(10, cal.template.m_eff - 1)
            diag = correlation_diagnostics(st.psi_rows[h1], dt, l_max=l_max)
            if j == 0 and math.isfinite(diag.tau_psi):
                tau_ref = diag.tau_psi
            dt_over_tau = dt / tau_ref if math.isfinite(tau_ref) else math.nan

            for det, dec in (("dispersion", disp), ("mean", mean)):
                ber = float(np.mean(dec != labels))
                rows.append(("sampling", m, channel.memory, dt, dt_over_tau, diag.ratio,
                             diag.omega, diag.tau_psi, det, 0, 0, labels.size,
                             int(closed.sum()), ber, _binom_se(ber, labels.size)))

    if "isi" in arms:
        dets = tuple(detectors) if detectors is not None else config.isi.detectors
        n_eval = config.isi.eval_packets
        k = config.isi.packet_symbols
        mob = replace(mob0, v1=config.isi.v1)
        for j, mem in enumerate(config.isi.memory_grid):
            ch = replace(channel, memory=mem, t_sym=config.isi.t_sym)
            dt = ch.t_sym / ch.m_samples
            axis_vals.append(float(mem))
            # calibration traffic is random and labelled, like the eval
            # stream: the learned template then carries the average
            # interference pedestal, so the profile fit leaves only the
            # context-to-context tail deviation as residual, and the
            # thresholds see the same law the eval symbols follow
            # (constant-bit pilots carry biased tails, and alternating
            # pilots visit only two bit histories, so both misstate the
            # eval law at larger memories)
            n_pil = config.detection.h0_pilot_packets + config.detection.h1_pilot_packets
            pil_bits = _stage_rng(master, "isi_pilot_bits", j).integers(0, 2, size=(n_pil, k))
            pil_recs = generate_packet_batch(
                pil_bits, 1.0, ch, mob, _stage_seed(master, "isi_pilot", j)
            )
            pil_pool = _pool_counts(pil_recs)
            pil_labels = pil_bits.reshape(-1)
            tpl = learn_template(
                pil_pool, config.detection.trim_alpha, config.detection.trim_beta
            )
            # canceller tap scale from an all-ones stream at this memory
            cal_recs = generate_packet_batch(
                _constant_bits(config.detection.template_packets, k, 1),
                1.0, ch, mob, _stage_seed(master, "isi_cal", j),
            )
            gamma = baselines.calibrate_isi_scale(_pool_counts(cal_recs), tpl, ch)
            canceller = baselines.IsiMeanCanceller(ch, gamma)
            cal = _thresholds_from_pools(
                pil_pool[pil_labels == 0], pil_pool[pil_labels == 1],
                tpl, config.detection.alpha_gate, config.detection.pfa_target,
            )
            # feedback-pass thresholds per detector, from the same pilots
            # cancelled with that detector's own first-pass decisions;
            # calibrating on genie-cancelled pilots would leave the pilot
            # law cleaner than the decision-fed eval law and push the
            # cancelled statistics across their thresholds
            st_pil = _symbol_stats(pil_pool, tpl, cal.gate.tau_y)
            pil_dec = dict(zip(("dispersion", "mean"), _threshold_decisions(st_pil, cal)))
            cal2 = {}
            for det in ("dispersion", "mean"):
                if genie:
                    pil_pasts = _true_pasts(pil_recs, mem)
                else:
                    pil_pasts = _feedback_pasts(np.asarray(pil_dec[det]), n_pil, k, mem)
                pc = _cancelled_pool(pil_pool, pil_pasts, canceller)
                cal2[det] = _thresholds_from_pools(
                    pc[pil_labels == 0], pc[pil_labels == 1],
                    tpl, config.detection.alpha_gate, config.detection.pfa_target,
                )

            bits = _stage_rng(master, "isi_bits", j).integers(0, 2, size=(n_eval, k))
            recs = generate_packet_batch(bits, 1.0, ch, mob, _stage_seed(master, "isi_eval", j))
            pool = _pool_counts(recs)
            labels = bits.reshape(-1)
            st = _symbol_stats(pool, tpl, cal.gate.tau_y)
            disp1, mean1 = _threshold_decisions(st, cal)

            def _emit(det: str, dfe: int, dec: np.ndarray, n_used: int | None = None) -> None:
                nn = labels.size if n_used is None else n_used
                ber = float(np.mean(dec != labels[:nn]))
                rows.append(("isi", ch.m_samples, mem, dt, math.nan, math.nan, math.nan,
                             math.nan, det, dfe, int(genie and dfe), nn, 0, ber,
                             _binom_se(ber, nn)))

            for det, dec1 in (("dispersion", disp1), ("mean", mean1)):
                if det not in dets:
                    continue
                _emit(det, 0, dec1)
                feedback = labels if genie else dec1
                pasts = _feedback_pasts(np.asarray(feedback), n_eval, k, mem)
                pool2 = _cancelled_pool(pool, pasts, canceller)
                c2 = cal2[det]
                if det == "dispersion":
                    st2 = _symbol_stats(pool2, tpl, c2.gate.tau_y)
                    dec2, _ = _threshold_decisions(st2, c2)
                else:
                    means2 = np.atleast_1d(windowed_mean(pool2, tpl))
                    open2 = means2 > c2.gate.tau_y
                    yb2 = c2.ybar
                    dec2 = (open2 & (yb2.kappa * means2 > yb2.kappa * yb2.tau_t)).astype(int)
                _emit(det, 1, dec2)

            if ("glrt" in dets or "lrt" in dets) and config.isi.glrt_symbols > 0:
                bank = baselines.PathBank(
                    ch, mob, tpl,
                    baselines.MarginalLikelihoodConfig(
                        config.baseline.n_paths, config.baseline.path_seed
                    ),
                )
                n_sub_packets = max(1, min(n_eval, config.isi.glrt_symbols // k))
                n_sub = n_sub_packets * k
                if "lrt" in dets:
                    pasts = _true_pasts(recs[:n_sub_packets], mem)
                    dec = np.zeros(n_sub, dtype=int)
                    for q in range(n_sub):
                        nu = baselines.NuisanceVector(
                            psi=1.0, lambda_bg=ch.lambda_bg, past_bits=pasts[q]
                        )
                        dec[q] = baselines.oracle_lrt(pool[q], nu, bank, gate=cal.gate).decision
                    _emit("lrt", 0, dec, n_sub)
                if "glrt" in dets:
                    def rule(row, past):
                        return baselines.glrt(
                            row, past, bank, gate=cal.gate,
                            max_eval=config.baseline.glrt_max_eval,
                        )

                    dec_nc = np.zeros(n_sub, dtype=int)
                    for q in range(n_sub):
                        dec_nc[q] = rule(pool[q], (0,) * (mem - 1)).decision
                    _emit("glrt", 0, dec_nc, n_sub)
                    dec_fb = np.zeros(n_sub, dtype=int)
                    for p in range(n_sub_packets):
                        seg = pool[p * k:(p + 1) * k]
                        fb = labels[p * k:(p + 1) * k] if genie else None
                        pass2, _ = baselines.dfe_wrap(rule, seg, mem, feedback_bits=fb)
                        dec_fb[p * k:(p + 1) * k] = [v.decision for v in pass2]
                    _emit("glrt", 1, dec_fb, n_sub)

    axis = "+".join(arms)
    return SweepResult(
        sweep="correlation_isi",
        axis=axis,
        axis_values=tuple(axis_vals),
        columns=columns,
        rows=tuple(rows),
        metadata=_meta_items(config, {"genie": int(genie)}),
    )
