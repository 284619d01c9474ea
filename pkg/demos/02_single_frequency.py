"""Fit every estimator on one simulated measurement and compare NMSE.

One scene (27 monopoles), one array, one frequency, 20 dB SNR, 500 test
points. SWF-ideal tunes its regularization on the test points, so it is an
oracle rather than a usable method.

    python3 demos/02_single_frequency.py [frequency_hz] [array: tdesign|random] [seed]
"""
import sys
import time

from exterior_gp.experiment import METHODS, ExperimentConfig, cell_setup, fit_method
from exterior_gp.metrics import nmse

freq = float(sys.argv[1]) if len(sys.argv) > 1 else 800.0
array = sys.argv[2] if len(sys.argv) > 2 else "random"
seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0

cfg = ExperimentConfig.from_dict({})
index = [a.label for a in cfg.arrays].index(array)
setup = cell_setup(cfg, seed, index, freq)
print(f"{array} array, {setup.mics.shape[0]} mics, {freq:g} Hz, seed {seed}")
for method in METHODS:
    t0 = time.perf_counter()
    model, hyper = fit_method(cfg, method, setup, seed, index)
    err = nmse(setup.truth, model.predict(setup.test_points))
    extras = ", ".join(f"{k}={v:.3g}" for k, v in hyper.items())
    print(f"  {method:10s} NMSE {err:7.2f} dB   ({extras}; {time.perf_counter() - t0:.1f} s)")
