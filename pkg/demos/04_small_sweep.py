"""A reduced frequency sweep with the same pipeline as the full experiment.

Six frequencies, two seeds, both arrays. Results go to ``demo_output/sweep``
(nmse.csv, timings.csv, run.json) and the summary table is printed. Rerunning
resumes from the records already on disk.

    python3 demos/04_small_sweep.py
"""
from exterior_gp.experiment import ExperimentConfig, run_sweep, summarize

cfg = ExperimentConfig.from_dict({
    "frequency": {"start": 200.0, "stop": 2200.0, "step": 400.0},
    "seeds": [0, 1],
    "output_dir": "demo_output/sweep",
})
result = run_sweep(cfg, progress=lambda done, total: print(f"\r{done}/{total} cells", end="", flush=True))
print()
summary = summarize(result)
print(summary.to_text())
print("KRR-GPR lead over PNN: %+.2f dB overall, %+.2f dB below 1.6 kHz"
      % (summary.gap("KRR-GPR", "PNN"), summary.gap("KRR-GPR", "PNN", band="below")))
