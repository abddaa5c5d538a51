"""End-to-end single-link detection: template, gate, threshold, decisions.

The receiver learns a window template from pilot traffic, sets an activity
gate on the windowed mean, and calibrates the dispersion threshold on null
pilots.  This script runs that calibration at a reduced budget, then scores
a fresh random bit stream and prints the confusion counts for the
dispersion rule next to the windowed-mean rule.

Writes demos/out/decisions.csv with per-symbol statistics and decisions.
"""

from pathlib import Path

import numpy as np

from dispmc.config import ExperimentConfig
from dispmc.counting import generate_packet_batch
from dispmc.detector import detect_batch, windowed_mean
from dispmc.harness import calibrate_link

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# short packets and a moderate bit-1 speed keep every symbol of the
# packet inside the live range of the link (see demo 02 for the wander)
cfg = (
    ExperimentConfig.default()
    .replace_section("run", packet_symbols=8)
    .replace_section("mobility", v1=3e-6)
    .replace_section("detection", template_packets=60, h0_pilot_packets=80,
                     h1_pilot_packets=80)
)

cal = calibrate_link(cfg)
print(f"template: m_eff={cal.template.m_eff} of {cfg.channel.m_samples} samples")
print(f"gate: tau_y={cal.gate.tau_y:.3f} (null pass rate {cal.gate_pass_h0:.3f})")
print(f"dispersion threshold: tau={cal.dispersion.tau_t:.4g} kappa={cal.dispersion.kappa:+d} "
      f"(target tail {cal.dispersion.pfa_target:.3f}, {cal.dispersion.n_calibration} pilot stats)")

bits = np.random.default_rng(11).integers(0, 2, size=(40, 8))
recs = generate_packet_batch(bits, 1.0, cfg.channel, cfg.mobility, 12)
pool = np.concatenate([r.counts for r in recs], axis=0).astype(float)
labels = bits.reshape(-1)

verdicts = detect_batch(pool, cal.template, cal.gate, cal.dispersion)
disp = np.array([v.decision for v in verdicts])
gated = np.array([v.gated for v in verdicts])
means = windowed_mean(pool, cal.template)
mean_dec = (cal.ybar.kappa * means > cal.ybar.kappa * cal.ybar.tau_t) & (means > cal.gate.tau_y)

print(f"\n{labels.size} eval symbols, {int((~gated).sum())} closed gates")
for name, dec in (("dispersion", disp), ("windowed mean", mean_dec.astype(int))):
    n00 = int(np.sum((labels == 0) & (dec == 0)))
    n01 = int(np.sum((labels == 0) & (dec == 1)))
    n10 = int(np.sum((labels == 1) & (dec == 0)))
    n11 = int(np.sum((labels == 1) & (dec == 1)))
    ber = (n01 + n10) / labels.size
    print(f"  {name:14s} 0->0 {n00:3d}  0->1 {n01:3d}  1->0 {n10:3d}  1->1 {n11:3d}  BER {ber:.3f}")

print("\nwith distinct release amplitudes and mild motion contrast the mean"
      "\nrule wins; demo 07 neutralizes the means so only motion statistics"
      "\nseparate the bits, which is the dispersion detector's regime.")

with open(OUT / "decisions.csv", "w") as fh:
    fh.write("symbol,bit,windowed_mean,gate_open,dispersion_decision,mean_decision\n")
    for j in range(labels.size):
        fh.write(f"{j},{labels[j]},{means[j]:.6g},{int(gated[j])},"
                 f"{disp[j]},{int(mean_dec[j])}\n")
print("wrote", OUT / "decisions.csv")
