"""End-to-end acceptance gate.

Each criterion prints a single PASS/FAIL line (run with ``pytest
tests/test_acceptance.py -v -s`` to see them stream).  The sweep-backed
criteria run the production drivers at the default configuration, once per
session through module fixtures; budget the better part of ten minutes on a
laptop core.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from dispmc.analysis import (
    GaussianWorkingModel,
    estimate_lrv,
    meff_scaling_probe,
    oracle_psi_mean,
    oracle_psi_moments,
    profiling_sensitivity,
    q_inv,
    separability,
)
from dispmc.config import (
    BaselineSettings,
    DetectionSettings,
    ExperimentConfig,
    GainSweepSettings,
    IsiSweepSettings,
    MobilitySweepSettings,
    RocSweepSettings,
    RunSettings,
    SamplingSweepSettings,
)
from dispmc.counting import overdispersion_decomposition
from dispmc.harness import (
    run_correlation_isi,
    run_gain_stability,
    run_mobility_contrast,
    run_roc,
)
from dispmc.mobility import MobilityParams, _separations_batch, effective_diffusivity
from dispmc.physics import ChannelParams, default_g0

CFG = ExperimentConfig.default()


def _verdict(tag: str, ok: bool, detail: str) -> None:
    print(f"{tag}: {'PASS' if ok else 'FAIL'} [{detail}]")
    assert ok, f"{tag} [{detail}]"


def _rows(result, **match):
    out = []
    for row in result.rows:
        d = dict(zip(result.columns, row))
        if all(d[k] == v for k, v in match.items()):
            out.append(d)
    return out


def _interp_pd(points, pfa: float) -> float:
    pts = sorted((p["p_fa"], p["p_d"]) for p in points)
    return float(np.interp(pfa, [p[0] for p in pts], [p[1] for p in pts]))


@pytest.fixture(scope="module")
def gain_sweep():
    return run_gain_stability(CFG, detectors=("dispersion", "mean"))


@pytest.fixture(scope="module")
def roc_sweep():
    return run_roc(CFG, detectors=("dispersion",))


@pytest.fixture(scope="module")
def mobility_sweep():
    return run_mobility_contrast(CFG, detectors=("dispersion", "mean"))


@pytest.fixture(scope="module")
def isi_sweep():
    return run_correlation_isi(CFG, arms=("isi",), detectors=("dispersion", "mean"))


def test_a01_gain_stability(gain_sweep):
    # thresholds frozen at gain 1; dispersion false alarms must hold the
    # gate-integrated level 0.05 * 0.95 across the whole gain grid
    disp = _rows(gain_sweep, detector="dispersion", kind="empirical")
    mean = _rows(gain_sweep, detector="mean", kind="empirical")
    target = 0.05 * 0.95
    worst = max(abs(d["rate"] - target) for d in disp)
    span = max(d["rate"] for d in mean) - min(d["rate"] for d in mean)
    ok = len(disp) == 5 and worst <= 0.02 and span > 0.10
    _verdict(
        "A1 gain stability",
        ok,
        f"dispersion max |rate - {target:.4f}| = {worst:.4f} over {len(disp)} gains; "
        f"mean-detector span = {span:.3f}",
    )


def test_a02_mixed_poisson_identity():
    # latent Gamma(shape 4, rate 2): mean 2, variance 1, so Var(Y) = 3
    rng = np.random.default_rng(202)
    n = 1_000_000
    lam = rng.gamma(shape=4.0, scale=0.5, size=n)
    y = rng.poisson(lam)
    mean, excess = overdispersion_decomposition(y)
    var = mean + excess
    ok = abs(var - 3.0) <= 0.02 and abs(excess - 1.0) <= 0.02
    _verdict(
        "A2 mixed-Poisson identity",
        ok,
        f"var = {var:.4f} (want 3 +/- 0.02), latent excess = {excess:.4f} (want 1 +/- 0.02)",
    )


def test_a03_effective_diffusivity():
    # ensemble MSD of 1e4 active 10 s trajectories released at the receiver
    mob = MobilityParams(x0=(0.0, 0.0, 0.0), x_receiver=(0.0, 0.0, 0.0))
    ch = ChannelParams(t_sym=10.0, m_samples=40)
    offsets = ch.sample_offsets()
    chunk, n_traj = 250, 10_000
    bits = np.full((chunk, 1), 1, dtype=int)
    acc = np.zeros(ch.m_samples)
    done = 0
    i = 0
    while done < n_traj:
        rngs = [np.random.default_rng((303, i, p)) for p in range(chunk)]
        r = _separations_batch(bits, mob, ch, rngs)[:, 0, :]
        acc += np.sum(r**2, axis=0)
        done += chunk
        i += 1
    msd = acc / done
    window = offsets >= 2.0  # past the heading-decorrelation transient
    slope = np.polyfit(offsets[window], msd[window], 1)[0]
    d_hat = slope / 6.0
    d_ref = effective_diffusivity(1, mob)
    rel = abs(d_hat - d_ref) / d_ref
    ok = rel <= 0.10 and d_ref == pytest.approx(1.877e-10, rel=1e-3)
    _verdict(
        "A3 effective diffusivity",
        ok,
        f"MSD slope/6 = {d_hat:.4e}, closed form = {d_ref:.4e}, rel err = {rel:.3f} "
        f"over {done} trajectories",
    )


def test_a04_oracle_gain_invariance():
    # latent Gamma(shape 4, rate 2): tilde cumulants (1, 1, 1.5), mean 2
    rng = np.random.default_rng(33)
    mu_tilde = 2.0
    target = oracle_psi_mean(1.0, mu_tilde)
    n, c_n = 400_000, 50.0
    means, ses = [], []
    for psi in (0.5, 1.0, 2.0):
        lam = rng.gamma(shape=4.0, scale=0.5, size=n)
        m, v = oracle_psi_moments(lam, psi, c_n, mu_tilde, rng=rng)
        means.append(m)
        ses.append(math.sqrt(v / n))
    dev = max(abs(m - target) / se for m, se in zip(means, ses))
    zmax = max(
        abs(means[i] - means[j]) / math.hypot(ses[i], ses[j])
        for i, j in ((0, 1), (0, 2), (1, 2))
    )
    ok = dev < 3.0 and zmax < 2.576  # two-sided p > 0.01
    _verdict(
        "A4 oracle gain invariance",
        ok,
        f"max |mean - {target}| = {dev:.2f} SE; max pairwise |z| = {zmax:.2f} "
        f"across gains 0.5/1/2",
    )


def test_a05_profiling_sensitivity():
    m = 32
    u = np.ones(m)
    v_tilde0 = 0.3
    worst = 0.0
    sens_high = 0.0
    for scale in (1e2, 1e4):  # count scale grows 100x
        diag = profiling_sensitivity(
            u, scale * u, scale**2 * v_tilde0 * np.ones(m), mode="scale"
        )
        analytic = 1.0 / scale + 2.0 * v_tilde0
        worst = max(
            worst,
            abs(diag.sensitivity - abs(diag.scale_closed_form)),
            abs(diag.sensitivity - analytic),
        )
        sens_high = diag.sensitivity
    floor = 0.1 * 2.0 * v_tilde0
    ok = worst < 1e-10 and sens_high > floor
    _verdict(
        "A5 profiling sensitivity",
        ok,
        f"matrix vs closed form max err = {worst:.2e}; "
        f"sensitivity at 100x counts = {sens_high:.3f} > {floor:.2f}",
    )


def _ar1(rng, rho: float, shape) -> np.ndarray:
    n, m = shape
    x = np.empty(shape)
    x[:, 0] = rng.standard_normal(n) / math.sqrt(1.0 - rho * rho)
    for j in range(1, m):
        x[:, j] = rho * x[:, j - 1] + rng.standard_normal(n)
    return x


def test_a06_dependence_inflation():
    # AR(1) rho = 0.5 has inflation factor (1 + rho) / (1 - rho) = 3
    est = estimate_lrv(_ar1(np.random.default_rng(606), 0.5, (200, 1000)), l_max=30)
    rel = abs(est.omega - 3.0) / 3.0
    white = estimate_lrv(
        np.random.default_rng(607).standard_normal((100, 1000)), l_max=10
    )
    ok = rel <= 0.15 and abs(white.omega - 1.0) <= 0.05
    _verdict(
        "A6 dependence inflation",
        ok,
        f"AR(1) omega = {est.omega:.3f} (rel err {rel:.3f}, lag {est.l_s}); "
        f"white omega = {white.omega:.3f}",
    )


def test_a07_gaussian_roc_machinery(roc_sweep):
    def upper_tail(x: float) -> float:
        val, _ = quad(
            lambda t: math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi), x, np.inf
        )
        return val

    oracle = brentq(lambda x: upper_tail(x) - 0.05, 0.0, 10.0, xtol=1e-12)
    q_hat = q_inv(0.05)
    qdev = abs(q_hat - 1.6449)
    odev = abs(q_hat - oracle)
    emp = _rows(roc_sweep, detector="dispersion", kind="empirical")
    gau = _rows(roc_sweep, detector="dispersion", kind="gaussian")
    pd_emp = _interp_pd(emp, 0.1)
    pd_gau = _interp_pd(gau, 0.1)
    gap = abs(pd_emp - pd_gau)
    ok = qdev <= 1e-3 and odev <= 1e-3 and gap <= 0.05
    _verdict(
        "A7 Gaussian ROC machinery",
        ok,
        f"Q^-1(0.05) = {q_hat:.6f} (|err| = {qdev:.1e}, vs quadrature {odev:.1e}); "
        f"P_D at P_FA = 0.1: predicted {pd_gau:.3f} vs empirical {pd_emp:.3f}",
    )


def test_a08_separability_closed_forms():
    # equal variances, unit mean shift: D_B = D_C = 1/4, symmetric KL = 1
    model = GaussianWorkingModel(
        delta0=0.0, delta1=1.0, omega2_0=0.5, omega2_1=0.5,
        m_eff=1, p=0, mt0=0.0, mt1=1.0, vt0=0.5, vt1=0.5,
    )
    rep = separability(model)
    closed = max(abs(rep.d_b - 0.25), abs(rep.d_c - 0.25), abs(rep.d_kl - 1.0))

    def d_b(delta: float, m_eff: int) -> float:
        probe = GaussianWorkingModel.from_moments(0.0, delta, 1.0, 1.0, m_eff, 0)
        return separability(probe).d_b

    r_window = d_b(0.2, 128) / d_b(0.2, 64)
    r_shift = d_b(0.4, 64) / d_b(0.2, 64)
    probe = meff_scaling_probe(
        GaussianWorkingModel.from_moments(0.0, 0.2, 1.0, 1.0, 64, 0), (32, 64, 128)
    )
    lin = max(abs(v - probe.slope * m) for m, v in zip(probe.m_eff_grid, probe.d_b))
    ok = (
        closed <= 1e-9
        and abs(r_window - 2.0) <= 0.2
        and abs(r_shift - 4.0) <= 0.4
        and lin <= 0.1 * probe.d_b[-1]
    )
    _verdict(
        "A8 separability closed forms",
        ok,
        f"closed-form max err = {closed:.1e}; window doubling ratio = {r_window:.3f}; "
        f"shift doubling ratio = {r_shift:.3f}",
    )


def test_a09_mobility_contrast(mobility_sweep):
    rows = _rows(mobility_sweep, kind="empirical")
    contrasts = sorted({d["contrast"] for d in rows})
    base = [d for d in rows if d["contrast"] == contrasts[0]]
    band_lo = min(d["ber"] for d in base)
    band_hi = max(d["ber"] for d in base)

    margins = []
    for c in contrasts:
        if c < 100.0:
            continue
        disp = next(
            d for d in rows
            if d["contrast"] == c and d["arm"] == "neutral" and d["detector"] == "dispersion"
        )
        mean = next(
            d for d in rows
            if d["contrast"] == c and d["arm"] == "neutral" and d["detector"] == "mean"
        )
        margins.append((mean["ber"] - disp["ber"]) / math.hypot(mean["se"], disp["se"]))

    fixed_mean = sorted(
        (d for d in rows if d["arm"] == "fixed" and d["detector"] == "mean"),
        key=lambda d: d["contrast"],
    )
    inversions = sum(
        1 for a, b in zip(fixed_mean, fixed_mean[1:]) if b["ber"] > a["ber"]
    )
    ok = (
        contrasts[0] == 1.0
        and 0.45 <= band_lo <= band_hi <= 0.55
        and len(margins) == 2
        and min(margins) >= 5.0
        and inversions <= 1
    )
    _verdict(
        "A9 mobility contrast",
        ok,
        f"chance band at contrast 1: [{band_lo:.3f}, {band_hi:.3f}]; "
        f"neutral-arm dispersion margin = {min(margins):.1f} SE at contrast >= 100; "
        f"fixed-arm mean inversions = {inversions}",
    )


def test_a10_isi_stress(isi_sweep):
    rows = _rows(isi_sweep, arm="isi")

    def series(detector: str, dfe: int):
        sel = [d for d in rows if d["detector"] == detector and d["dfe"] == dfe]
        return sorted(sel, key=lambda d: d["memory"])

    mean_nc = series("mean", 0)
    inversions = sum(1 for a, b in zip(mean_nc, mean_nc[1:]) if b["ber"] < a["ber"])

    slack = 0.0
    for det in ("dispersion", "mean"):
        for nc, fb in zip(series(det, 0), series(det, 1)):
            assert nc["memory"] == fb["memory"]
            slack = max(
                slack,
                (fb["ber"] - nc["ber"]) / math.hypot(nc["se"], fb["se"]),
            )

    eq_l1 = all(
        series(det, 1)[0]["ber"] == series(det, 0)[0]["ber"]
        for det in ("dispersion", "mean")
    )
    memories = [d["memory"] for d in mean_nc]
    ok = (
        memories == [1, 2, 3, 4, 5]
        and inversions <= 1
        and slack <= 2.0
        and eq_l1
    )
    _verdict(
        "A10 memory stress",
        ok,
        f"no-cancel mean inversions = {inversions}; worst feedback slack = "
        f"{slack:.2f} SE; exact match at memory 1 = {eq_l1}",
    )


def _toy_config() -> ExperimentConfig:
    return ExperimentConfig(
        run=RunSettings(master_seed=77, n_packets=60, packet_symbols=8),
        channel=ChannelParams(
            default_g0(5e-6), memory=1, t_sym=0.48, m_samples=12,
            a0=400.0, a1=800.0, lambda_bg=2.0,
        ),
        mobility=MobilityParams(v1=6e-6, dt_traj=0.004),
        detection=DetectionSettings(
            template_packets=30, h1_pilot_packets=30, h0_pilot_packets=40
        ),
        baseline=BaselineSettings(n_paths=128),
        gain=GainSweepSettings(psi_grid=(0.5, 1.0, 2.0), eval_packets=50, glrt_symbols=24),
        roc=RocSweepSettings(eval_packets=120, curve_points=21, glrt_symbols=120),
        contrast=MobilitySweepSettings(
            v1_grid=(0.0, 3e-5), eval_packets=600, pilot_packets=300, template_packets=200
        ),
        sampling=SamplingSweepSettings(m_grid=(12, 4), eval_packets=200),
        isi=IsiSweepSettings(memory_grid=(1, 3), eval_packets=60, glrt_symbols=16),
    )


def test_a11_sweep_determinism(tmp_path):
    cfg = _toy_config()
    paths = []
    for tag in ("first", "second"):
        res = run_gain_stability(cfg, detectors=("dispersion", "mean"))
        path = tmp_path / f"{tag}.csv"
        res.to_csv(path)
        paths.append(path)
    blobs = [p.read_bytes() for p in paths]
    ok = blobs[0] == blobs[1] and len(blobs[0]) > 0
    _verdict(
        "A11 determinism",
        ok,
        f"gain sweep rerun byte-identical = {blobs[0] == blobs[1]} "
        f"({len(blobs[0])} bytes)",
    )
