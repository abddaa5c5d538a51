"""Command-line front end.

Subcommands cover the full workflow: ``simulate`` writes a packet archive,
``calibrate`` learns the template, gate, and thresholds, ``detect`` scores an
archive against a calibration, ``analyze`` fits the Gaussian working model,
``sweep`` runs the experiment drivers, and ``selftest`` replays fast property
checks.  Exit codes: 0 success, 1 usage, 2 runtime failure, 3 selftest
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines
from .analysis import (
    GaussianWorkingModel,
    correlation_diagnostics,
    estimate_lrv,
    fit_gaussian_model,
    q_func,
    q_inv,
    roc_ber,
    separability,
)
from .config import ConfigError, ExperimentConfig
from .counting import (
    generate_packet_batch,
    overdispersion_decomposition,
    params_snapshot,
    read_packet_archive,
    write_packet_archive,
)
from .detector import DispersionThreshold, GateConfig, detect_batch, write_verdicts_csv
from .harness import (
    _pool_counts,
    _stage_rng,
    _stage_seed,
    _symbol_stats,
    calibrate_link,
    run_correlation_isi,
    run_gain_stability,
    run_mobility_contrast,
    run_roc,
)
from .mobility import MobilityParams, _separations_batch, effective_diffusivity
from .physics import ChannelParams, default_g0, kernel
from .profiling import Template

_SWEEPS = ("gain", "roc", "mobility", "sampling", "isi")
_DETECTOR_CHOICES = ("dispersion", "mean", "glrt", "lrt")


class _Parser(argparse.ArgumentParser):
    # the contract reserves status 2 for runtime failures; argparse
    # defaults to 2 for usage problems, so remap those to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._usage_exit(message))

    def _usage_exit(self, message: str) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def _build_parser() -> _Parser:
    parser = _Parser(prog="dispmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name: str, help_: str, sweep: bool = False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", metavar="PATH", help="experiment config file")
        p.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        if name in ("detect", "sweep"):
            p.add_argument(
                "--detectors", metavar="LIST",
                help="comma-separated detector subset",
            )
        if sweep:
            p.add_argument("name", choices=_SWEEPS, help="which sweep to run")
            p.add_argument(
                "--genie-isi", action="store_true",
                help="feed true bits to the ISI canceller instead of decisions",
            )
        return p

    add("simulate", "simulate packets and write a JSON-lines archive")
    add("calibrate", "learn template, gate, and thresholds; write calibration.json")
    add("detect", "score an archive against a calibration; write verdicts.csv")
    add("analyze", "fit the Gaussian working model; write model.json")
    add("sweep", "run an experiment driver and write its CSV", sweep=True)
    add("selftest", "run fast property checks")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            print(f"dispmc: error: config file not found: {path}", file=sys.stderr)
            raise SystemExit(1)
        cfg = ExperimentConfig.load(path)
    else:
        cfg = ExperimentConfig.default()
    if args.seed is not None:
        if args.seed < 0:
            print("dispmc: error: --seed must be nonnegative", file=sys.stderr)
            raise SystemExit(1)
        cfg = cfg.with_run(master_seed=args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out is not None else Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_detectors(arg, allowed) -> tuple:
    names = tuple(s.strip() for s in arg.split(",") if s.strip())
    if not names:
        raise SystemExit(_usage(f"--detectors needs at least one of {', '.join(allowed)}"))
    bad = [d for d in names if d not in allowed]
    if bad:
        raise SystemExit(_usage(f"unknown detectors {bad}; choose from {', '.join(allowed)}"))
    return names


def _usage(message: str) -> int:
    print(f"dispmc: error: {message}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    n, k = cfg.run.n_packets, cfg.run.packet_symbols
    bits = _stage_rng(cfg.run.master_seed, "sim_bits").integers(0, 2, size=(n, k))
    records = generate_packet_batch(
        bits, 1.0, cfg.channel, cfg.mobility,
        _stage_seed(cfg.run.master_seed, "sim_eval"),
    )
    path = out / "packets.jsonl"
    write_packet_archive(records, path)
    print(f"wrote {path} ({n} packets x {k} symbols)")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    product = calibrate_link(cfg)

    def thr(t: DispersionThreshold) -> dict:
        return {
            "tau_t": t.tau_t, "pfa_target": t.pfa_target,
            "kappa": t.kappa, "n_calibration": t.n_calibration,
        }

    payload = {
        "master_seed": cfg.run.master_seed,
        "template": json.loads(product.template.to_json()),
        "gate": {"tau_y": product.gate.tau_y, "alpha_gate": product.gate.alpha_gate},
        "dispersion": thr(product.dispersion),
        "ybar": thr(product.ybar),
        "fit_p": product.fit_p,
        "gate_pass_h0": product.gate_pass_h0,
        "n_h0_stats": product.n_h0_stats,
        "n_h1_stats": product.n_h1_stats,
        "params": params_snapshot(cfg.channel, cfg.mobility),
    }
    path = out / "calibration.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path} (gate tau_y={product.gate.tau_y:.6g}, "
          f"threshold tau_t={product.dispersion.tau_t:.6g})")
    return 0


def _load_workspace(out: Path):
    archive = out / "packets.jsonl"
    calibration = out / "calibration.json"
    for path in (archive, calibration):
        if not path.exists():
            raise FileNotFoundError(f"{path} (run 'simulate' and 'calibrate' first)")
    records = read_packet_archive(archive)
    raw = json.loads(calibration.read_text())
    template = Template.from_json(json.dumps(raw["template"]))
    gate = GateConfig(tau_y=raw["gate"]["tau_y"], alpha_gate=raw["gate"]["alpha_gate"])
    thresholds = {
        name: DispersionThreshold(
            tau_t=raw[name]["tau_t"], pfa_target=raw[name]["pfa_target"],
            kappa=raw[name]["kappa"], n_calibration=raw[name]["n_calibration"],
        )
        for name in ("dispersion", "ybar")
    }
    return records, template, gate, thresholds


def _cmd_detect(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    detectors = ("dispersion", "mean")
    if args.detectors is not None:
        detectors = _parse_detectors(args.detectors, ("dispersion", "mean"))
    records, template, gate, thresholds = _load_workspace(out)

    pool = _pool_counts(records)
    labels = np.concatenate([r.bits for r in records])
    packet_ids = np.repeat(np.arange(len(records)), [r.n_symbols for r in records])
    symbol_ids = np.concatenate([np.arange(r.n_symbols) for r in records])

    all_ids, all_syms, all_truth, all_verdicts, all_names = [], [], [], [], []
    if "dispersion" in detectors:
        verdicts = detect_batch(pool, template, gate, thresholds["dispersion"])
        all_ids.append(packet_ids)
        all_syms.append(symbol_ids)
        all_truth.append(labels)
        all_verdicts.extend(verdicts)
        all_names.extend(["dispersion"] * len(verdicts))
    if "mean" in detectors:
        verdicts = [
            baselines.mean_detector(row, template, thresholds["ybar"].tau_t, gate=gate)
            for row in pool
        ]
        all_ids.append(packet_ids)
        all_syms.append(symbol_ids)
        all_truth.append(labels)
        all_verdicts.extend(verdicts)
        all_names.extend(["mean"] * len(verdicts))

    path = out / "verdicts.csv"
    write_verdicts_csv(
        path,
        np.concatenate(all_ids), np.concatenate(all_syms), np.concatenate(all_truth),
        all_verdicts, detector=all_names,
    )
    n = labels.size
    for det in detectors:
        dec = [v.decision for v, name in zip(all_verdicts, all_names) if name == det]
        err = float(np.mean(np.asarray(dec) != labels))
        print(f"{det}: {n} symbols, BER {err:.4f}")
    print(f"wrote {path}")
    return 0


def _cmd_analyze(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    records, template, gate, _ = _load_workspace(out)

    pool = _pool_counts(records)
    labels = np.concatenate([r.bits for r in records])
    st = _symbol_stats(pool, template, gate.tau_y)
    sel0 = st.valid & (labels == 0)
    sel1 = st.valid & (labels == 1)
    l_max = min(10, template.m_eff - 1)
    model = fit_gaussian_model(
        st.t[sel0], st.t[sel1], st.psi_rows[sel0], st.psi_rows[sel1], st.p, l_max=l_max
    )
    report = separability(model)
    pass0 = float(np.mean(st.valid[labels == 0]))
    pass1 = float(np.mean(st.valid[labels == 1]))
    point = roc_ber(
        model, pfa_target=cfg.detection.pfa_target,
        gate_pass_h0=pass0, gate_pass_h1=pass1,
    )

    payload = {
        "model": {
            "delta0": model.delta0, "delta1": model.delta1,
            "omega2_0": model.omega2_0, "omega2_1": model.omega2_1,
            "m_eff": model.m_eff, "p": model.p,
            "mt0": model.mt0, "mt1": model.mt1,
            "vt0": model.vt0, "vt1": model.vt1,
            "kappa": model.kappa,
        },
        "separability": {
            "d_c": report.d_c, "a_star": report.a_star,
            "d_b": report.d_b, "d_kl": report.d_kl, "rho_isi": report.rho_isi,
        },
        "operating_point": {
            "pfa_target": cfg.detection.pfa_target,
            "tau": point.tau, "p_fa": point.pfa, "p_d": point.pd, "p_b": point.pb,
            "gate_pass_h0": pass0, "gate_pass_h1": pass1,
        },
        "samples": {"n0": int(sel0.sum()), "n1": int(sel1.sum())},
    }
    psi1 = st.psi_rows[sel1]
    if psi1.size >= 1000:
        diag = correlation_diagnostics(
            psi1, cfg.channel.t_sym / cfg.channel.m_samples, l_max=l_max
        )
        payload["correlation"] = {
            "tau_psi": diag.tau_psi, "m_corr": diag.m_corr,
            "ratio": diag.ratio, "omega": diag.omega, "l_s": diag.l_s,
        }
    path = out / "model.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path} (D_B={report.d_b:.4g}, predicted P_b={point.pb:.4g})")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    detectors = None
    if args.detectors is not None:
        detectors = _parse_detectors(args.detectors, _DETECTOR_CHOICES)

    name = args.name
    if name == "gain":
        result = run_gain_stability(cfg, detectors or ("dispersion", "mean", "glrt"))
    elif name == "roc":
        result = run_roc(cfg, detectors or ("dispersion", "mean", "glrt", "lrt"))
    elif name == "mobility":
        result = run_mobility_contrast(cfg, detectors or ("dispersion", "mean"))
    elif name == "sampling":
        result = run_correlation_isi(cfg, arms=("sampling",))
    else:
        result = run_correlation_isi(
            cfg, arms=("isi",), detectors=detectors, genie=args.genie_isi
        )
    path = out / f"{name}.csv"
    result.to_csv(path)
    print(f"wrote {path} ({len(result.rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# selftest


def _check_kernel_peak() -> None:
    ch = ChannelParams(g0=default_g0(5e-6))
    r = 10e-6
    t_star = r * r / (6.0 * ch.dm)
    expect = ch.g0 * (4.0 * math.pi * ch.dm * t_star) ** -1.5 * math.exp(
        -r * r / (4.0 * ch.dm * t_star)
    )
    got = float(kernel(r, t_star, ch))
    if abs(got - expect) > 1e-9 * expect:
        raise AssertionError(f"kernel value {got} != {expect}")
    ts = np.linspace(0.5 * t_star, 2.0 * t_star, 4001)
    t_hat = float(ts[np.argmax(kernel(r, ts, ch))])
    if abs(t_hat - t_star) > 2e-3 * t_star:
        raise AssertionError(f"kernel peak at {t_hat}, expected {t_star}")


def _check_mixed_poisson() -> None:
    rng = np.random.default_rng(2024)
    lam = rng.gamma(shape=4.0, scale=0.5, size=300_000)
    y = rng.poisson(lam)
    mean_y, excess = overdispersion_decomposition(y)
    if abs(mean_y - 2.0) > 0.02 or abs((mean_y + excess) - 3.0) > 0.05 or abs(excess - 1.0) > 0.05:
        raise AssertionError(f"mixed-Poisson identity off: mean {mean_y}, excess {excess}")


def _check_effective_diffusivity() -> None:
    ch = ChannelParams(g0=1.0, t_sym=4.0, m_samples=8)
    mob = MobilityParams(dt_traj=2e-3, x0=(0.0, 0.0, 0.0))
    bits = np.ones((1500, 1), dtype=int)
    rngs = [np.random.default_rng((808, p)) for p in range(1500)]
    r = _separations_batch(bits, mob, ch, rngs)[:, 0, :]
    offsets = ch.sample_offsets()
    window = offsets >= 1.0
    slope = np.polyfit(offsets[window], np.mean(r * r, axis=0)[window], 1)[0]
    d_ref = effective_diffusivity(1, mob)
    if abs(slope / 6.0 - d_ref) > 0.15 * d_ref:
        raise AssertionError(f"MSD slope gives {slope / 6.0}, expected {d_ref}")


def _check_gaussian_machinery() -> None:
    if abs(q_inv(0.05) - 1.6448536269514722) > 1e-3:
        raise AssertionError("q_inv(0.05) misses the normal quantile")
    for x in (0.2, 0.5, 0.8):
        if abs(q_func(q_inv(x)) - x) > 1e-12:
            raise AssertionError("q_func and q_inv do not invert each other")
    model = GaussianWorkingModel(
        delta0=0.0, delta1=1.0, omega2_0=0.5, omega2_1=0.5,
        m_eff=1, p=0, mt0=0.0, mt1=1.0, vt0=0.5, vt1=0.5,
    )
    rep = separability(model)
    if abs(rep.d_b - 0.25) > 1e-9 or abs(rep.d_c - 0.25) > 1e-9 or abs(rep.d_kl - 1.0) > 1e-9:
        raise AssertionError("equal-variance separability closed forms off")


def _check_white_noise_lrv() -> None:
    rng = np.random.default_rng(7)
    est = estimate_lrv(rng.standard_normal((100, 1000)), l_max=10)
    if abs(est.omega - 1.0) > 0.1:
        raise AssertionError(f"white-noise LRV inflation {est.omega} far from 1")


def _selftest_config() -> ExperimentConfig:
    from .config import (
        BaselineSettings, DetectionSettings, GainSweepSettings, RunSettings,
    )

    cfg = ExperimentConfig.default()
    return ExperimentConfig(
        run=RunSettings(master_seed=7, n_packets=20, packet_symbols=8),
        channel=ChannelParams(
            default_g0(5e-6), memory=1, t_sym=0.48, m_samples=12,
            a0=400.0, a1=800.0, lambda_bg=2.0,
        ),
        mobility=MobilityParams(v1=6e-6, dt_traj=0.004),
        detection=DetectionSettings(
            template_packets=20, h1_pilot_packets=20, h0_pilot_packets=30
        ),
        baseline=BaselineSettings(n_paths=128),
        gain=GainSweepSettings(psi_grid=(1.0, 2.0), eval_packets=25, glrt_symbols=0),
        roc=cfg.roc, contrast=cfg.contrast, sampling=cfg.sampling, isi=cfg.isi,
    )


def _check_sweep_determinism() -> None:
    cfg = _selftest_config()
    first = run_gain_stability(cfg, detectors=("dispersion", "mean"))
    second = run_gain_stability(cfg, detectors=("dispersion", "mean"))
    if first.rows != second.rows or first.metadata != second.metadata:
        raise AssertionError("gain sweep is not reproducible under a fixed seed")
    rates = [r["rate"] for r in first.select(detector="mean", kind="empirical")]
    if not rates[-1] > rates[0]:
        raise AssertionError("mean-detector false alarms did not grow with gain")


def _cmd_selftest(args) -> int:
    checks = (
        ("release kernel peak", _check_kernel_peak),
        ("mixed-Poisson variance split", _check_mixed_poisson),
        ("effective diffusivity MSD slope", _check_effective_diffusivity),
        ("Gaussian quantiles and separability", _check_gaussian_machinery),
        ("white-noise long-run variance", _check_white_noise_lrv),
        ("sweep reproducibility", _check_sweep_determinism),
    )
    failed = 0
    for name, fn in checks:
        start = time.time()
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report, do not abort the suite
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name} ({time.time() - start:.1f}s)")
    if failed:
        print(f"selftest: {failed} of {len(checks)} checks failed")
        return 3
    print(f"selftest: all {len(checks)} checks passed")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return _usage("a command is required")
    handlers = {
        "simulate": _cmd_simulate,
        "calibrate": _cmd_calibrate,
        "detect": _cmd_detect,
        "analyze": _cmd_analyze,
        "sweep": _cmd_sweep,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    except ConfigError as exc:
        print(f"dispmc: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError, KeyError) as exc:
        print(f"dispmc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
