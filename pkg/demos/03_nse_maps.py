"""Pointwise error maps in the z = 0 plane at 1 kHz.

Writes the CSV grids (ground-truth real part plus one NSE grid per array and
method) under ``demo_output/nse`` and prints a coarse text rendering of each
map, darker characters meaning lower error.

    python3 demos/03_nse_maps.py [seed]
"""
import sys

import numpy as np

from exterior_gp.experiment import ExperimentConfig, run_nse

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = ExperimentConfig.from_dict({"output_dir": "demo_output"})
grids = run_nse(cfg, seeds=[seed])
SHADES = "@%#*+=-:. "


def render(values, step=5, lo=-40.0, hi=0.0):
    rows = []
    for row in values[::-step]:
        chars = []
        for v in row[::step]:
            if np.isnan(v):
                chars.append("o")
            else:
                t = np.clip((v - lo) / (hi - lo), 0, 1)
                chars.append(SHADES[int(t * (len(SHADES) - 1))])
        rows.append("".join(chars))
    return "\n".join(rows)


for (array, method, s), grid in sorted(grids.items(), key=lambda kv: str(kv[0])):
    if array is None:
        continue
    print(f"\n{array} / {method}: median NSE {np.median(grid.unmasked()):.2f} dB (o = source disk)")
    print(render(grid.values))
print(f"\nCSV grids written to {cfg.output_dir}/nse")
