import math

import numpy as np
import numpy.testing as npt
import pytest

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
from dispmc.harness import (
    CalibrationProduct,
    SweepResult,
    _balanced_bits,
    _split_threshold,
    _stage_seed,
    calibrate_link,
    run_correlation_isi,
    run_gain_stability,
    run_mobility_contrast,
    run_roc,
)
from dispmc.mobility import MobilityParams
from dispmc.physics import ChannelParams, default_g0


def toy_config(**overrides) -> ExperimentConfig:
    # Small channel: short symbols, 12 samples, amplitudes a few hundred.
    # Slow enough motion that packets stay informative over 8 symbols.
    base = dict(
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
        roc=RocSweepSettings(
            eval_packets=1600, curve_points=21, glrt_symbols=120,
            pilot_packets=260, template_packets=160,
        ),
        contrast=MobilitySweepSettings(
            v1_grid=(0.0, 3e-5), eval_packets=600, pilot_packets=300, template_packets=200
        ),
        sampling=SamplingSweepSettings(
            m_grid=(12, 4), eval_packets=200, packet_symbols=8, v1=6e-6
        ),
        isi=IsiSweepSettings(
            memory_grid=(1, 3), eval_packets=60, glrt_symbols=16,
            packet_symbols=8, v1=6e-6,
        ),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def cfg():
    return toy_config()


@pytest.fixture(scope="module")
def gain_result(cfg):
    return run_gain_stability(cfg)


@pytest.fixture(scope="module")
def roc_result(cfg):
    return run_roc(cfg)


@pytest.fixture(scope="module")
def mobility_result(cfg):
    return run_mobility_contrast(cfg)


@pytest.fixture(scope="module")
def sampling_result(cfg):
    return run_correlation_isi(cfg, arms=("sampling",))


@pytest.fixture(scope="module")
def isi_result(cfg):
    return run_correlation_isi(
        cfg, arms=("isi",), detectors=("dispersion", "mean", "glrt", "lrt")
    )


# ---------------------------------------------------------------------------
# seeding and small helpers


def test_stage_seeds_are_stable_and_distinct():
    seen = set()
    for stage in ("cal_template", "cal_h0", "cal_h1", "roc_eval"):
        for index in (0, 1, 7):
            s = _stage_seed(1234, stage, index)
            assert s == _stage_seed(1234, stage, index)
            seen.add(s)
    assert len(seen) == 12
    assert _stage_seed(1234, "cal_h0") != _stage_seed(1235, "cal_h0")


def test_stage_seed_rejects_unknown_stage():
    with pytest.raises(KeyError):
        _stage_seed(1, "no_such_stage")


def test_balanced_bits_alternate_and_balance():
    bits = _balanced_bits(6, 8)
    assert bits.shape == (6, 8)
    assert set(np.unique(bits)) == {0, 1}
    npt.assert_array_equal(bits[0], [0, 1, 0, 1, 0, 1, 0, 1])
    npt.assert_array_equal(bits[1], [1, 0, 1, 0, 1, 0, 1, 0])
    assert bits.mean() == 0.5
    # single-symbol packets alternate across packets
    npt.assert_array_equal(_balanced_bits(5, 1).ravel(), [0, 1, 0, 1, 0])


def test_split_threshold_separable_cases():
    tau, orient, err = _split_threshold([0.0, 1.0], [2.0, 3.0])
    assert orient == 1 and err == 0.0 and 1.0 < tau < 2.0
    tau, orient, err = _split_threshold([2.0, 3.0], [0.0, 1.0])
    assert orient == -1 and err == 0.0 and 1.0 < tau < 2.0


def test_split_threshold_overlap_and_ties():
    # best cut leaves exactly one error: zeros {0,1,5}, ones {2,3,4}
    tau, orient, err = _split_threshold([0.0, 1.0, 5.0], [2.0, 3.0, 4.0])
    assert err == pytest.approx(1.0 / 6.0)
    assert orient == 1 and 1.0 < tau < 2.0
    # identical samples: no split does better than guessing one class
    tau, orient, err = _split_threshold([1.0, 1.0], [1.0, 1.0])
    assert err == 0.5


def _brute_force_error(s0, s1):
    vals = np.unique(np.concatenate([s0, s1]))
    cand = [vals[0] - 1.0, vals[-1] + 1.0]
    cand += [0.5 * (a + b) for a, b in zip(vals[:-1], vals[1:])]
    best = math.inf
    for tau in cand:
        for orient in (1, -1):
            err = np.sum(orient * np.asarray(s0) > orient * tau)
            err += np.sum(orient * np.asarray(s1) <= orient * tau)
            best = min(best, err / (len(s0) + len(s1)))
    return best


def test_split_threshold_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(60):
        s0 = rng.normal(0.0, 1.0, size=rng.integers(1, 12))
        s1 = rng.normal(0.8, 1.3, size=rng.integers(1, 12))
        tau, orient, err = _split_threshold(s0, s1)
        assert err == pytest.approx(_brute_force_error(s0, s1))
        applied = np.sum(orient * s0 > orient * tau) + np.sum(orient * s1 <= orient * tau)
        assert applied / (s0.size + s1.size) == pytest.approx(err)


# ---------------------------------------------------------------------------
# calibration product


def test_calibrate_link_product(cfg):
    product = calibrate_link(cfg)
    assert isinstance(product, CalibrationProduct)
    assert product.gate.tau_y > cfg.channel.lambda_bg
    assert 0.5 < product.gate_pass_h0 <= 1.0
    assert product.fit_p == 2
    assert product.n_h0_stats >= 200
    assert product.n_h1_stats > 0
    assert math.isfinite(product.dispersion.tau_t)
    assert product.dispersion.kappa in (-1.0, 1.0)
    assert product.ybar.kappa in (-1.0, 1.0)
    # same master seed reproduces the calibration exactly
    again = calibrate_link(cfg)
    assert again.gate.tau_y == product.gate.tau_y
    assert again.dispersion.tau_t == product.dispersion.tau_t


# ---------------------------------------------------------------------------
# gain stability sweep


def test_gain_sweep_shape(gain_result, cfg):
    assert gain_result.sweep == "gain"
    assert gain_result.axis == "psi"
    assert gain_result.axis_values == cfg.gain.psi_grid
    for psi in cfg.gain.psi_grid:
        dets = {r["detector"] for r in gain_result.select(psi=psi, kind="empirical")}
        assert dets == {"dispersion", "mean", "glrt"}
    assert len(gain_result.select(kind="gaussian")) == len(cfg.gain.psi_grid)


def test_gain_sweep_rates_and_budgets(gain_result, cfg):
    n_sym = cfg.gain.eval_packets * cfg.run.packet_symbols
    for r in gain_result.select(kind="empirical"):
        assert 0.0 <= r["rate"] <= 1.0
        assert 0 <= r["n_pass"] <= r["n"]
        if r["detector"] in ("dispersion", "mean"):
            assert r["n"] == n_sym
        else:
            assert r["n"] == cfg.gain.glrt_symbols
    # the gate opens more often as the gain grows
    passes = [r["n_pass"] for r in gain_result.select(detector="dispersion", kind="empirical")]
    assert passes == sorted(passes)


def test_gain_dispersion_rate_is_stable(gain_result):
    rates = [r["rate"] for r in gain_result.select(detector="dispersion", kind="empirical")]
    assert max(rates) <= 0.10


def test_gain_mean_rate_climbs_with_gain(gain_result):
    rates = [r["rate"] for r in gain_result.select(detector="mean", kind="empirical")]
    assert rates[-1] > 0.5
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] - rates[0] > 0.10


def test_gain_sweep_is_deterministic(cfg, gain_result):
    again = run_gain_stability(cfg)
    assert again.rows == gain_result.rows
    assert again.metadata == gain_result.metadata


def test_csv_round_trip_is_byte_identical(tmp_path, cfg, gain_result):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    gain_result.to_csv(p1)
    run_gain_stability(cfg).to_csv(p2)
    b1, b2 = p1.read_bytes(), p2.read_bytes()
    assert b1 == b2
    text = b1.decode()
    assert text.startswith("# dispmc sweep=gain")
    assert "# cfg.channel.a0=400" in text
    assert "# cfg.run.master_seed=77" in text
    assert "# meta.gate.tau_y=" in text


# ---------------------------------------------------------------------------
# roc sweep


def test_roc_curves_are_valid(roc_result):
    for det in ("dispersion", "mean", "glrt", "lrt"):
        pts = roc_result.select(detector=det, kind="empirical")
        assert len(pts) >= 3
        pfa = np.array([p["p_fa"] for p in pts])
        pd = np.array([p["p_d"] for p in pts])
        assert np.all((pfa >= 0) & (pfa <= 1) & (pd >= 0) & (pd <= 1))
        # the all-reject endpoint is always present
        assert pfa.min() == 0.0 and pd.min() == 0.0


def test_roc_mean_detector_reaches_the_corner(roc_result):
    pts = roc_result.select(detector="mean", kind="empirical")
    assert max(p["p_fa"] for p in pts) == 1.0
    assert max(p["p_d"] for p in pts) == 1.0


def test_roc_gated_detectors_are_pass_limited(roc_result):
    # gated curves stop at the gate pass rate, well short of (1,1)
    for det in ("dispersion", "lrt"):
        pts = roc_result.select(detector=det, kind="empirical")
        assert max(p["p_fa"] for p in pts) < 0.9


def test_roc_auc_ordering(roc_result):
    meta = dict(roc_result.metadata)
    auc = {k[len("meta.auc."):]: float(v) for k, v in meta.items() if k.startswith("meta.auc.")}
    assert set(auc) == {"dispersion", "mean", "glrt", "lrt"}
    assert all(0.0 <= v <= 1.0 for v in auc.values())
    # the genie-aided likelihood receiver upper-bounds the profiled one
    assert auc["lrt"] >= auc["glrt"]
    assert auc["dispersion"] > 0.55


def test_roc_gaussian_prediction_rows(roc_result, cfg):
    rows = roc_result.select(detector="dispersion", kind="gaussian")
    assert len(rows) == cfg.roc.curve_points
    for r in rows:
        assert 0.0 <= r["p_fa"] <= 1.0
        assert 0.0 <= r["p_d"] <= 1.0
        assert math.isfinite(r["tau"])


def test_roc_is_deterministic(cfg, roc_result):
    assert run_roc(cfg).rows == roc_result.rows


# ---------------------------------------------------------------------------
# mobility contrast sweep


def test_mobility_sweep_shape(mobility_result, cfg):
    assert mobility_result.sweep == "mobility"
    assert len(mobility_result.rows) == len(cfg.contrast.v1_grid) * 4
    for r in mobility_result.select():
        assert r["arm"] in ("fixed", "neutral")
        assert r["detector"] in ("dispersion", "mean")
        assert r["n"] + r["n_excluded"] == cfg.contrast.eval_packets
        assert 0.0 <= r["ber"] <= 1.0
        assert r["orient"] in (-1, 1)
        assert not r["flagged"]
    meta = dict(mobility_result.metadata)
    assert meta["meta.gate"] == "disabled"


def test_mobility_contrast_axis(mobility_result):
    by_v = {r["v1"]: r["contrast"] for r in mobility_result.select()}
    assert by_v[0.0] == pytest.approx(1.0)
    # Table-style active-Brownian contrast at 30 um/s
    assert by_v[3e-5] == pytest.approx(938.5, rel=0.01)


def test_mobility_no_contrast_means_chance(mobility_result):
    for r in mobility_result.select(v1=0.0):
        assert 0.45 <= r["ber"] <= 0.55


def test_mobility_fixed_arm_mean_improves(mobility_result):
    bers = [r["ber"] for r in mobility_result.select(arm="fixed", detector="mean")]
    assert bers[-1] < bers[0] - 0.1


def test_mobility_dispersion_gains_with_contrast(mobility_result):
    bers = [r["ber"] for r in mobility_result.select(arm="neutral", detector="dispersion")]
    assert bers[-1] < bers[0] - 0.05


def test_mobility_neutralization_recalibrates_amplitude(mobility_result, cfg):
    rows = mobility_result.select(arm="neutral")
    by_v = {r["v1"]: r for r in rows}
    assert by_v[0.0]["a1_eff"] == pytest.approx(cfg.channel.a0)
    assert by_v[3e-5]["a1_eff"] != cfg.channel.a0
    assert by_v[3e-5]["rounds"] >= 1
    for r in mobility_result.select(arm="fixed"):
        assert r["a1_eff"] == cfg.channel.a0


def test_mobility_is_deterministic(cfg, mobility_result):
    assert run_mobility_contrast(cfg).rows == mobility_result.rows


# ---------------------------------------------------------------------------
# sampling-step arm


def test_sampling_arm_diagnostics(sampling_result, cfg):
    assert sampling_result.sweep == "correlation_isi"
    rows = sampling_result.select(arm="sampling")
    assert len(rows) == len(cfg.sampling.m_grid) * 2
    for r in rows:
        assert r["m_samples"] in cfg.sampling.m_grid
        assert 0.0 < r["ratio"] <= 1.0
        assert r["tau_psi"] > 0.0
        assert r["dt"] == pytest.approx(cfg.channel.t_sym / r["m_samples"])
        assert r["dt_over_tau"] > 0.0
        assert 0.0 <= r["ber"] <= 1.0
        assert r["n"] == cfg.sampling.eval_packets * cfg.run.packet_symbols
        assert 0 <= r["n_coin"] <= r["n"]


def test_sampling_coarser_grids_have_larger_steps(sampling_result):
    disp = sampling_result.select(arm="sampling", detector="dispersion")
    dts = [r["dt_over_tau"] for r in disp]
    assert dts == sorted(dts)
    # coin counts agree between the detectors at the same point: one shared draw
    mean_rows = sampling_result.select(arm="sampling", detector="mean")
    assert [r["n_coin"] for r in disp] == [r["n_coin"] for r in mean_rows]


def test_sampling_is_deterministic(cfg, sampling_result):
    assert run_correlation_isi(cfg, arms=("sampling",)).rows == sampling_result.rows


# ---------------------------------------------------------------------------
# ISI / decision-feedback arm


def test_isi_rows_cover_grid_and_variants(isi_result, cfg):
    rows = isi_result.select(arm="isi")
    for mem in cfg.isi.memory_grid:
        for det in ("dispersion", "mean", "glrt"):
            variants = {r["dfe"] for r in isi_result.select(arm="isi", memory=mem, detector=det)}
            assert variants == {0, 1}
        assert len(isi_result.select(arm="isi", memory=mem, detector="lrt")) == 1
    for r in rows:
        assert 0.0 <= r["ber"] <= 1.0
        assert r["genie"] == 0


def test_isi_memory_one_dfe_is_identity(isi_result):
    # with no interfering symbol the cancelled pass must reproduce the raw one
    for det in ("dispersion", "mean", "glrt"):
        rows = isi_result.select(arm="isi", memory=1, detector=det)
        by_dfe = {r["dfe"]: r["ber"] for r in rows}
        assert by_dfe[0] == by_dfe[1]


def test_isi_budgets(isi_result, cfg):
    n_sym = cfg.isi.eval_packets * cfg.run.packet_symbols
    n_sub = (cfg.isi.glrt_symbols // cfg.run.packet_symbols) * cfg.run.packet_symbols
    for r in isi_result.select(arm="isi"):
        assert r["n"] == (n_sym if r["detector"] in ("dispersion", "mean") else n_sub)


def test_isi_genie_feedback_path(cfg):
    res = run_correlation_isi(
        cfg.replace_section("sweep.isi", memory_grid=(3,), glrt_symbols=0),
        arms=("isi",), genie=True,
    )
    rows = res.select(arm="isi")
    assert {r["genie"] for r in rows if r["dfe"] == 1} == {1}
    assert {r["genie"] for r in rows if r["dfe"] == 0} == {0}
    assert dict(res.metadata)["meta.genie"] == "1"


def test_isi_is_deterministic(cfg, isi_result):
    again = run_correlation_isi(
        cfg, arms=("isi",), detectors=("dispersion", "mean", "glrt", "lrt")
    )
    assert again.rows == isi_result.rows


# ---------------------------------------------------------------------------
# SweepResult plumbing


def test_sweep_result_select_and_column(gain_result):
    mean_rows = gain_result.select(detector="mean", kind="empirical")
    assert all(r["detector"] == "mean" for r in mean_rows)
    col = gain_result.column("rate")
    assert isinstance(col, np.ndarray)
    assert col.size == len(gain_result.rows)


def test_sweep_result_csv_layout(tmp_path, mobility_result):
    path = tmp_path / "mob.csv"
    mobility_result.to_csv(path)
    lines = path.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    assert header[0].startswith("# dispmc sweep=mobility axis=v1")
    assert any(ln.startswith("# axis.values=") for ln in header)
    assert body[0] == ",".join(mobility_result.columns)
    assert len(body) == 1 + len(mobility_result.rows)
