"""Reading motion statistics when the means carry nothing.

Bit-1 symbols are released by a faster transmitter, which roughens the
within-window counts.  The sweep's neutral arm rescales the bit-1 release
until both bit values have the same windowed mean, so a mean rule is blind
by construction; the dispersion detector still separates the bits once the
effective-diffusivity contrast is large.  The fixed arm keeps the nominal
amplitudes as a reference.

Reduced budget; the full-size run is `dispmc sweep mobility`.
Writes demos/out/mobility_contrast.csv.
"""

import time
from dataclasses import replace
from pathlib import Path

from dispmc.config import ExperimentConfig
from dispmc.harness import run_mobility_contrast
from dispmc.mobility import effective_diffusivity

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

cfg = (
    ExperimentConfig.default()
    .replace_section("contrast", v1_grid=(0.0, 3e-6, 3e-5), eval_packets=500,
                     pilot_packets=260, template_packets=120)
)

t0 = time.time()
result = run_mobility_contrast(cfg)
print(f"mobility sweep ({time.time() - t0:.1f} s), "
      f"{cfg.contrast.eval_packets} isolated symbols per arm and point")

d0 = effective_diffusivity(0, cfg.mobility)
print(f"\n{'v1 um/s':>8} {'D contrast':>11} {'arm':>8} {'disp BER':>9} {'mean BER':>9}")
for v1 in cfg.contrast.v1_grid:
    c = effective_diffusivity(1, replace(cfg.mobility, v1=v1)) / d0
    for arm in ("fixed", "neutral"):
        disp = result.select(v1=v1, arm=arm, detector="dispersion")[0]
        mean = result.select(v1=v1, arm=arm, detector="mean")[0]
        print(f"{v1 * 1e6:8.1f} {c:11.1f} {arm:>8} {disp['ber']:9.3f} {mean['ber']:9.3f}")

print("\nneutral arm at contrast 1 is chance for everything; at high contrast"
      "\nthe dispersion rule keeps working while the neutralized mean cannot.")
result.to_csv(OUT / "mobility_contrast.csv")
print("wrote", OUT / "mobility_contrast.csv")
