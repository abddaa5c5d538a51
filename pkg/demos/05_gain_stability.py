"""False-alarm stability under geometry-gain mismatch.

The link is calibrated once at unit gain, then evaluated on null traffic
whose gain is scaled over a grid.  A mean-threshold rule inherits the gain
directly, so its false-alarm rate swings over the grid.  The dispersion
statistic normalizes by the fitted profile, so its gate-integrated
false-alarm rate stays near the calibrated target everywhere.

Reduced budget; the full-size run is `dispmc sweep gain`.
Writes demos/out/gain_stability.csv.
"""

import time
from pathlib import Path

from dispmc.config import ExperimentConfig
from dispmc.harness import run_gain_stability

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

cfg = (
    ExperimentConfig.default()
    .replace_section("run", packet_symbols=16)
    .replace_section("detection", template_packets=60, h0_pilot_packets=120,
                     h1_pilot_packets=60)
    .replace_section("gain", psi_grid=(0.5, 1.0, 2.0), eval_packets=60)
)

t0 = time.time()
result = run_gain_stability(cfg, detectors=("dispersion", "mean"))
print(f"gain sweep ({time.time() - t0:.1f} s), "
      f"{cfg.gain.eval_packets * cfg.run.packet_symbols} null symbols per point")
print(f"{'gain':>6} {'dispersion FA':>14} {'mean FA':>10} {'gate pass':>10}")
for psi in cfg.gain.psi_grid:
    disp = result.select(psi=psi, detector="dispersion", kind="empirical")[0]
    mean = result.select(psi=psi, detector="mean", kind="empirical")[0]
    print(f"{psi:6.2f} {disp['rate']:14.4f} {mean['rate']:10.4f} {disp['pass_rate']:10.3f}")

print("\ncalibrated target: gate pass x threshold tail = 0.95 x 0.05 = 0.0475;"
      "\nthe dispersion column stays near it while the mean column swings.")
result.to_csv(OUT / "gain_stability.csv")
print("wrote", OUT / "gain_stability.csv")
