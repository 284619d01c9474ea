"""Frequency sweeps, NSE maps and summaries comparing the four estimators.

A run is described by an :class:`ExperimentConfig` loaded from a JSON file.
Every random draw comes from its own stream, keyed by the seed, a purpose
tag, the array and the frequency, so a work cell reproduces exactly no matter
which other cells run, in which order, or in how many processes.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import copy
import csv
import hashlib
import io
import json
import math
import os
import platform
import time
import traceback

import jsonschema
import numpy as np
import scipy

from . import __version__
from .baselines import (SwfModel, pnn_fit, swf_design_matrices, swf_fit, swf_ideal_lambda, swf_loo_lambda,
                        swf_truncation)
from .errors import DomainError, IngestionError
from .field_model import WaveContext, psi_matrix, scene_field
from .kernel_gpr import AttenuationParams, fit_gpr_model, log_xi_table
from .metrics import NseGridSpec, nmse, nse_map, write_grid_csv
from .simulation import (ArraySpec, RegionSpec, load_tdesign, make_array, make_source_scene, measure,
                         sample_test_points)

METHODS = ("KRR-GPR", "SWF-LOO", "SWF-ideal", "PNN")
ORACLE_METHODS = frozenset({"SWF-ideal"})

# Tags separating the random streams of one seed.
_SCENE, _ARRAY, _TEST, _NOISE, _KRR, _PNN = range(6)

_BOX_SCHEMA = {
    "type": "object",
    "properties": {
        "delta_min": {"type": "number", "exclusiveMinimum": 0},
        "delta_max": {"type": "number", "exclusiveMinimum": 0},
        "beta_min": {"type": "number", "exclusiveMinimum": 0},
        "beta_max": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "region": {
            "type": "object",
            "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in ("R_s", "R_in", "R_out")},
            "additionalProperties": False,
        },
        "arrays": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "kind": {"enum": ["t-design", "random-volumetric"]},
                    "name": {"type": "string"},
                    "order": {"type": "integer", "minimum": 1},
                    "num_points": {"type": "integer", "minimum": 1},
                    "radius": {"type": "number", "exclusiveMinimum": 0},
                    "source_file": {"type": ["string", "null"]},
                },
                "required": ["kind"],
                "additionalProperties": False,
            },
        },
        "frequency": {
            "type": "object",
            "properties": {
                "start": {"type": "number", "exclusiveMinimum": 0},
                "stop": {"type": "number", "exclusiveMinimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["start", "stop", "step"],
            "additionalProperties": False,
        },
        "speed_of_sound": {"type": "number", "exclusiveMinimum": 0},
        "snr_db": {"type": "number"},
        "num_test_points": {"type": "integer", "minimum": 1},
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1, "uniqueItems": True},
        "lambda_grid": {
            "type": "object",
            "properties": {
                "log10_start": {"type": "number"},
                "log10_stop": {"type": "number"},
                "log10_step": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "krr": {
            "type": "object",
            "properties": {
                "nu": {"type": "integer", "minimum": 0, "maximum": 25},
                "lambda_cond": {"type": "number", "minimum": 0},
                "box": _BOX_SCHEMA,
                "log10_lambda_init": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "fit_lambda": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "pnn": {
            "type": "object",
            "properties": {
                "n_neurons": {"type": "integer", "minimum": 1},
                "lambda": {"type": "number", "minimum": 0},
                "n_iter": {"type": "integer", "minimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "uniqueItems": True},
        "nse": {
            "type": "object",
            "properties": {
                "frequency": {"type": "number", "exclusiveMinimum": 0},
                "side": {"type": "number", "exclusiveMinimum": 0},
                "resolution": {"type": "integer", "minimum": 2},
                "plane_z": {"type": "number"},
                "mask_radius": {"type": "number", "minimum": 0},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
    },
    "additionalProperties": False,
}


def _default_dict():
    return {
        "region": {"R_s": 0.2, "R_in": 0.4, "R_out": 1.0},
        "arrays": [
            {"kind": "t-design", "name": "tdesign", "order": 9, "num_points": 48, "radius": 0.81},
            {"kind": "random-volumetric", "name": "random", "num_points": 50},
        ],
        "frequency": {"start": 100.0, "stop": 2500.0, "step": 50.0},
        "speed_of_sound": 343.0,
        "snr_db": 20.0,
        "num_test_points": 500,
        "methods": list(METHODS),
        "lambda_grid": {"log10_start": -10.0, "log10_stop": 2.0, "log10_step": 0.25},
        "krr": {"nu": 20, "lambda_cond": 0.0075,
                "box": {"delta_min": 1.0, "delta_max": 100.0, "beta_min": 1e-4, "beta_max": 5.0},
                "log10_lambda_init": [-3.0, 1.0], "fit_lambda": True},
        "pnn": {"n_neurons": 100, "lambda": 1e-2, "n_iter": 3000, "learning_rate": 1e-2},
        "seeds": list(range(10)),
        "nse": {"frequency": 1000.0, "side": 2.0, "resolution": 100, "plane_z": 0.0,
                "mask_radius": 0.2, "seeds": [0, 1, 2, 3, 4]},
        "output_dir": "results",
    }


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _json_path(error):
    path = "$"
    for part in error.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated run description; build with :meth:`from_dict` or :meth:`load`.

    ``raw`` holds the fully merged settings and is what the config hash
    covers, so two configs hash equal exactly when they describe the same run.
    """

    raw: dict = field(repr=False)
    source: str = "<dict>"

    @classmethod
    def from_dict(cls, data, source="<dict>"):
        """Merge ``data`` over the defaults and validate.

        Raises
        ------
        IngestionError
            With the JSON path of the first offending value.
        """
        if not isinstance(data, dict):
            raise IngestionError(f"{source}: top level must be an object")
        errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(data),
                        key=lambda e: list(map(str, e.absolute_path)))
        if errors:
            e = errors[0]
            raise IngestionError(f"{source}: {_json_path(e)}: {e.message}")
        raw = _merge(_default_dict(), data)
        cfg = cls(raw, source)
        cfg._check_semantics()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise IngestionError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        return cls.from_dict(data, source=str(path))

    def _check_semantics(self):
        src = self.source
        try:
            region = self.region
        except DomainError as exc:
            raise IngestionError(f"{src}: $.region: {exc}") from None
        f = self.raw["frequency"]
        if f["stop"] < f["start"]:
            raise IngestionError(f"{src}: $.frequency: stop must not be below start")
        spec = self.nse_grid
        spacing = spec.side / (spec.resolution - 1)
        limit = self.raw["speed_of_sound"] / (2.0 * spacing)
        if max(f["stop"], self.raw["nse"]["frequency"]) >= limit:
            raise IngestionError(f"{src}: $.frequency: must stay below {limit:.6g} Hz, "
                                 f"the half-wavelength limit of the NSE grid spacing")
        box = self.raw["krr"]["box"]
        if not (box["delta_min"] < box["delta_max"] and box["beta_min"] < box["beta_max"]):
            raise IngestionError(f"{src}: $.krr.box: lower bounds must be below upper bounds")
        lo, hi = self.raw["krr"]["log10_lambda_init"]
        if lo > hi:
            raise IngestionError(f"{src}: $.krr.log10_lambda_init: bounds out of order")
        g = self.raw["lambda_grid"]
        if g["log10_stop"] < g["log10_start"]:
            raise IngestionError(f"{src}: $.lambda_grid: stop must not be below start")
        labels = [a.label for a in self.arrays]
        if len(set(labels)) != len(labels):
            raise IngestionError(f"{src}: $.arrays: array names must be unique")
        for i, (spec_a, entry) in enumerate(zip(self.arrays, self.raw["arrays"])):
            if spec_a.kind == "t-design":
                if not region.R_in <= spec_a.radius <= region.R_out:
                    raise IngestionError(f"{src}: $.arrays[{i}].radius: must lie in the target shell")
                try:
                    load_tdesign(spec_a.order, spec_a.num_points, entry.get("source_file"))
                except IngestionError as exc:
                    raise IngestionError(f"{src}: $.arrays[{i}]: {exc}") from None

    # Typed views of ``raw``.

    @property
    def region(self):
        return RegionSpec(**self.raw["region"])

    @property
    def arrays(self):
        out = []
        for a in self.raw["arrays"]:
            kw = {k: v for k, v in a.items() if k != "source_file"}
            if a["kind"] == "random-volumetric":
                kw.setdefault("num_points", 50)
            out.append(ArraySpec(**kw))
        return out

    def array_source_file(self, index):
        return self.raw["arrays"][index].get("source_file")

    @property
    def frequencies(self):
        f = self.raw["frequency"]
        n = int(math.floor((f["stop"] - f["start"]) / f["step"] + 1e-9)) + 1
        return [float(f["start"] + i * f["step"]) for i in range(n)]

    @property
    def lambda_grid(self):
        g = self.raw["lambda_grid"]
        n = int(round((g["log10_stop"] - g["log10_start"]) / g["log10_step"])) + 1
        return 10.0 ** (g["log10_start"] + g["log10_step"] * np.arange(n))

    @property
    def box(self):
        b = self.raw["krr"]["box"]
        return (b["delta_min"], b["delta_max"], b["beta_min"], b["beta_max"])

    @property
    def methods(self):
        return [m for m in METHODS if m in self.raw["methods"]]

    @property
    def seeds(self):
        return list(self.raw["seeds"])

    @property
    def nse_grid(self):
        n = self.raw["nse"]
        return NseGridSpec(n["side"], n["resolution"], n["plane_z"], n["mask_radius"])

    @property
    def output_dir(self):
        return self.raw["output_dir"]

    def context(self, frequency):
        return WaveContext(frequency, self.raw["speed_of_sound"])

    def with_overrides(self, seeds=None, methods=None, output_dir=None):
        data = copy.deepcopy(self.raw)
        if seeds is not None:
            data["seeds"] = list(seeds)
        if methods is not None:
            data["methods"] = list(methods)
        if output_dir is not None:
            data["output_dir"] = str(output_dir)
        return ExperimentConfig.from_dict(data, self.source)

    def to_json(self):
        return json.dumps(self.raw, sort_keys=True, indent=2)

    @property
    def hash(self):
        """SHA-256 of the canonical settings, excluding seeds and output location."""
        payload = {k: v for k, v in self.raw.items() if k not in ("seeds", "output_dir")}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _freq_key(frequency):
    return int(round(frequency * 1000))


# ----------------------------------------------------------------------------
# One work cell: a seed, an array and a frequency
# ----------------------------------------------------------------------------

@dataclass
class CellSetup:
    """Everything shared by the methods within one work cell."""

    ctx: WaveContext
    scene: object
    mics: np.ndarray
    s: np.ndarray
    test_points: np.ndarray
    truth: np.ndarray


def cell_setup(config, seed, array_index, frequency):
    """Scene, microphones, measurement and test points for one cell."""
    region = config.region
    scene = make_source_scene(region, load_tdesign(6, 26), _rng(seed, _SCENE))
    spec = config.arrays[array_index]
    mics = make_array(spec, region, _rng(seed, _ARRAY, array_index),
                      config.array_source_file(array_index))
    test = sample_test_points(region, config.raw["num_test_points"], mics, _rng(seed, _TEST, array_index))
    ctx = config.context(frequency)
    s = measure(ctx, scene, mics, config.raw["snr_db"], _rng(seed, _NOISE, array_index, _freq_key(frequency)))
    return CellSetup(ctx, scene, mics, s, test, scene_field(ctx, scene, test))


def fit_method(config, method, setup, seed, array_index):
    """Fit one estimator. Returns ``(predictor, hyperparameters)``."""
    ctx, mics, s = setup.ctx, setup.mics, setup.s
    fkey = _freq_key(ctx.frequency)
    if method == "KRR-GPR":
        k = config.raw["krr"]
        model, info = fit_gpr_model(
            ctx, mics, s, _rng(seed, _KRR, array_index, fkey), nu_krr=k["nu"],
            lambda_cond=k["lambda_cond"], box=config.box, lambda_grid=config.lambda_grid,
            log10_lambda_init=tuple(k["log10_lambda_init"]), fit_lambda=k["fit_lambda"])
        return model, {"alpha": model.params.alpha, "beta": model.params.beta, "lambda": model.lambda_krr}
    if method in ("SWF-LOO", "SWF-ideal"):
        nu = swf_truncation(mics.shape[0])
        Psi, W, D = swf_design_matrices(ctx, mics, nu)
        grid = config.lambda_grid
        if method == "SWF-LOO":
            lam, _ = swf_loo_lambda(Psi, W, D, s, grid)
        else:
            lam, _ = swf_ideal_lambda(Psi, W, D, s, grid, psi_matrix(ctx, setup.test_points, nu), setup.truth)
        coef = swf_fit(Psi, W, D, s, lam)
        return SwfModel(nu, coef, lam, ctx), {"lambda": lam}
    if method == "PNN":
        p = config.raw["pnn"]
        model = pnn_fit(ctx, mics, s, _rng(seed, _PNN, array_index, fkey), n_neurons=p["n_neurons"],
                        lambda_pnn=p["lambda"], radius_bound=config.region.R_in,
                        init_radius=config.region.R_s, n_iter=p["n_iter"], learning_rate=p["learning_rate"])
        return model, {"lambda": p["lambda"]}
    raise DomainError(f"unknown method {method!r}")


def run_cell(config, seed, array_index, frequency, methods=None):
    """All requested methods on one cell. Returns ``(records, timings)``."""
    methods = methods or config.methods
    label = config.arrays[array_index].label
    base = {"array": label, "frequency_hz": frequency, "seed": seed, "config_hash": config.hash}
    setup = cell_setup(config, seed, array_index, frequency)
    records, timings = [], []
    for method in methods:
        rec = dict(base, method=method, nmse_db=math.nan, alpha=math.nan, beta=math.nan,
                   **{"lambda": math.nan}, oracle=method in ORACLE_METHODS, status="ok", error="")
        t0 = time.perf_counter()
        try:
            model, hyper = fit_method(config, method, setup, seed, array_index)
            rec.update(hyper)
            rec["nmse_db"] = nmse(setup.truth, model.predict(setup.test_points))
        except Exception as exc:  # a failed fit is data, not a crash
            rec["status"] = "error"
            rec["error"] = f"{type(exc).__name__}: {exc}"
        timings.append(dict(base, method=method, wall_seconds=time.perf_counter() - t0))
        records.append(rec)
    return records, timings


def _run_cell_star(args):
    config_raw, source, seed, array_index, frequency = args
    config = ExperimentConfig(config_raw, source)
    try:
        return run_cell(config, seed, array_index, frequency)
    except Exception:
        return None, traceback.format_exc()


# ----------------------------------------------------------------------------
# Sweep
# ----------------------------------------------------------------------------

RECORD_FIELDS = ("array", "frequency_hz", "method", "seed", "nmse_db", "alpha", "beta", "lambda",
                 "oracle", "status", "error", "config_hash")


@dataclass
class RunResult:
    config_hash: str
    records: list
    nse_grids: dict = field(default_factory=dict)

    def frame(self, status="ok"):
        """Records as a list of dicts, optionally filtered by status."""
        return [r for r in self.records if status is None or r["status"] == status]


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _sort_key(rec):
    return (rec["array"], rec["frequency_hz"], METHODS.index(rec["method"]), rec["seed"])


def write_records_csv(path, records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for rec in sorted(records, key=_sort_key):
        writer.writerow([_fmt(rec[k]) for k in RECORD_FIELDS])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_records_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            for k in ("frequency_hz", "nmse_db", "alpha", "beta", "lambda"):
                rec[k] = float(rec[k])
            rec["seed"] = int(rec["seed"])
            rec["oracle"] = rec["oracle"] == "true"
            out.append(rec)
    return out


def _manifest(config, extra=None):
    out = {
        "config_hash": config.hash,
        "config_source": config.source,
        "seeds": config.seeds,
        "methods": config.methods,
        "versions": {"exterior_gp": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "config": config.raw,
    }
    out.update(extra or {})
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_done(jsonl_path, config_hash):
    """Records already present from an interrupted run with the same config."""
    done = []
    if not os.path.exists(jsonl_path):
        return done
    with open(jsonl_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break  # a torn final line from an interruption
            if rec.get("config_hash") == config_hash:
                done.append(rec)
    return done


def run_sweep(config, jobs=1, progress=None, resume=True):
    """NMSE of every method on every (array, frequency, seed) cell.

    Records are appended to ``records.jsonl`` in the output directory as each
    cell finishes, so an interrupted run resumes where it stopped. At the end
    ``nmse.csv`` (sorted, byte-stable), ``timings.csv`` and ``run.json`` are
    written. A failed fit becomes a record with ``status=error``; it does not
    stop the run.

    Parameters
    ----------
    jobs : int
        Worker processes. Results do not depend on this value.
    progress : callable, optional
        Called with ``(done, total)`` after each cell.
    """
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    jsonl = os.path.join(out, "records.jsonl")
    timing_path = os.path.join(out, "timings.jsonl")
    methods = config.methods
    records = _load_done(jsonl, config.hash) if resume else []
    if not resume:
        for p in (jsonl, timing_path):
            if os.path.exists(p):
                os.remove(p)
    have = {(r["array"], r["frequency_hz"], r["seed"], r["method"]) for r in records}
    labels = [a.label for a in config.arrays]
    cells = [(seed, ai, f) for seed in config.seeds for ai in range(len(labels)) for f in config.frequencies
             if any((labels[ai], f, seed, m) not in have for m in methods)]
    total = len(cells)

    def collect(result, done):
        recs, timings = result
        if recs is None:
            raise RuntimeError(f"work cell crashed:\n{timings}")
        with open(jsonl, "a") as fh:
            for r in recs:
                fh.write(json.dumps(r) + "\n")
        with open(timing_path, "a") as fh:
            for t in timings:
                fh.write(json.dumps(t) + "\n")
        records.extend(recs)
        if progress:
            progress(done, total)

    if jobs <= 1:
        for i, (seed, ai, f) in enumerate(cells, 1):
            collect(run_cell(config, seed, ai, f), i)
    else:
        args = [(config.raw, config.source, seed, ai, f) for seed, ai, f in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, result in enumerate(pool.map(_run_cell_star, args), 1):
                collect(result, i)

    wanted = {(l, f, s, m) for s in config.seeds for l in labels for f in config.frequencies for m in methods}
    final = {}
    for r in records:
        key = (r["array"], r["frequency_hz"], r["seed"], r["method"])
        if key in wanted:
            final[key] = r
    result = RunResult(config.hash, sorted(final.values(), key=_sort_key))
    write_records_csv(os.path.join(out, "nmse.csv"), result.records)
    _write_timings(timing_path, os.path.join(out, "timings.csv"))
    _write_json(os.path.join(out, "run.json"), _manifest(config, {"kind": "sweep", "cells": len(wanted) // len(methods)}))
    return result


def _write_timings(jsonl_path, csv_path):
    rows = []
    if os.path.exists(jsonl_path):
        with open(jsonl_path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["array", "frequency_hz", "method", "seed", "wall_seconds"])
        for r in sorted(rows, key=_sort_key):
            w.writerow([r["array"], _fmt(r["frequency_hz"]), r["method"], r["seed"], f"{r['wall_seconds']:.3f}"])


# ----------------------------------------------------------------------------
# NSE maps
# ----------------------------------------------------------------------------

def run_nse(config, frequency=None, seeds=None, write=True):
    """NSE grids of every method in the ``z = 0`` plane, per array and seed.

    The measurement and every fit are those of the sweep cell at the same
    frequency, so a map explains the matching NMSE record. Ground truth is
    written once per seed as its real part on the same grid.

    Returns a dict keyed by ``(array, method, seed)`` holding
    :class:`~exterior_gp.metrics.NseGrid` objects, plus keys
    ``(None, "truth-real", seed)`` with the ground-truth real-part arrays.
    """
    frequency = float(config.raw["nse"]["frequency"] if frequency is None else frequency)
    seeds = list(config.raw["nse"]["seeds"] if seeds is None else seeds)
    spec = config.nse_grid
    out = os.path.join(config.output_dir, "nse")
    if write:
        os.makedirs(out, exist_ok=True)
    grids = {}
    tag = f"{frequency:g}Hz"
    for seed in seeds:
        for ai, arr in enumerate(config.arrays):
            setup = cell_setup(config, seed, ai, frequency)
            truth_fn = lambda p, setup=setup: scene_field(setup.ctx, setup.scene, p)
            if ai == 0:
                pts = spec.points()
                mask = spec.mask()
                real = np.full(mask.shape, np.nan)
                real[~mask] = np.real(truth_fn(pts[~mask]))
                grids[(None, "truth-real", seed)] = real
                if write:
                    write_grid_csv(os.path.join(out, f"truth_real_{tag}_seed{seed}.csv"), real, spec,
                                   {"frequency": frequency, "seed": seed, "quantity": "real(u)"})
            for method in config.methods:
                try:
                    model, _ = fit_method(config, method, setup, seed, ai)
                except Exception as exc:
                    grids[(arr.label, method, seed)] = exc
                    continue
                grid = nse_map(setup.ctx, truth_fn, model.predict, spec)
                grid = type(grid)(spec, grid.values, label=method,
                                  metadata={"frequency": frequency, "seed": seed, "array": arr.label,
                                            "method": method, "oracle": method in ORACLE_METHODS})
                grids[(arr.label, method, seed)] = grid
                if write:
                    grid.to_csv(os.path.join(out, f"nse_{arr.label}_{method}_{tag}_seed{seed}.csv"))
    if write:
        _write_json(os.path.join(out, "run.json"),
                    _manifest(config, {"kind": "nse", "frequency": frequency, "nse_seeds": seeds}))
    return grids


# ----------------------------------------------------------------------------
# Summaries
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    """Mean NMSE per method and pairwise gaps, overall and per array.

    ``means`` maps ``(scope, band, method)`` to ``(mean_db, seed_std_db, n)``
    where ``scope`` is ``"all"`` or an array label and ``band`` is ``"all"`` or
    ``"below"`` (frequencies under ``split_hz``). ``gaps`` maps ``(scope,
    band, a, b)`` to ``mean(b) - mean(a)`` over cells where both succeeded,
    so a positive gap means ``a`` has the lower error.
    """

    means: dict
    gaps: dict
    split_hz: float
    failures: dict

    def gap(self, a, b, scope="all", band="all"):
        return self.gaps[(scope, band, a, b)][0]

    def mean(self, method, scope="all", band="all"):
        return self.means[(scope, band, method)][0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "scope", "band", "method_a", "method_b", "value_db", "seed_std_db", "n"])
            for (scope, band, m), (mean, std, n) in sorted(self.means.items()):
                w.writerow(["mean", scope, band, m, "", _fmt(mean), _fmt(std), n])
            for (scope, band, a, b), (gap, n) in sorted(self.gaps.items()):
                w.writerow(["gap", scope, band, a, b, _fmt(gap), "", n])

    def to_text(self):
        lines = []
        scopes = sorted({k[0] for k in self.means}, key=lambda s: (s != "all", s))
        for scope in scopes:
            for band in ("all", "below"):
                rows = [(m, v) for (sc, bd, m), v in self.means.items() if sc == scope and bd == band]
                if not rows:
                    continue
                title = "full band" if band == "all" else f"below {self.split_hz:g} Hz"
                lines.append(f"[{scope}] {title}")
                for m, (mean, std, n) in sorted(rows, key=lambda r: r[1][0]):
                    lines.append(f"  {m:<10s} {mean:8.2f} dB  (seed std {std:.2f}, n={n})")
                gaps = [(a, b, v) for (sc, bd, a, b), v in self.gaps.items()
                        if sc == scope and bd == band and METHODS.index(a) < METHODS.index(b)]
                for a, b, (g, n) in sorted(gaps, key=lambda x: (METHODS.index(x[0]), METHODS.index(x[1]))):
                    lines.append(f"  gap {a} vs {b}: {g:+.2f} dB (n={n})")
        if any(self.failures.values()):
            lines.append("failed fits: " + ", ".join(f"{m}={n}" for m, n in sorted(self.failures.items()) if n))
        return "\n".join(lines) + "\n"


def summarize(records, split_hz=1600.0):
    """Aggregate sweep records into a :class:`Summary`.

    Parameters
    ----------
    records : list of dict or RunResult
    """
    if isinstance(records, RunResult):
        records = records.records
    records = list(records)
    if not records:
        raise DomainError("no records to summarize")
    failures = {}
    table = {}
    for r in records:
        ok = r["status"] == "ok" and np.isfinite(r["nmse_db"])
        failures[r["method"]] = failures.get(r["method"], 0) + (not ok)
        if ok:
            table[(r["array"], r["frequency_hz"], r["seed"], r["method"])] = r["nmse_db"]
    methods = [m for m in METHODS if any(k[3] == m for k in table)]
    arrays = sorted({k[0] for k in table})
    means, gaps = {}, {}
    for scope in ["all"] + arrays:
        for band in ("all", "below"):
            def keep(k):
                return (scope == "all" or k[0] == scope) and (band == "all" or k[1] < split_hz)
            for m in methods:
                vals = [(k[2], v) for k, v in table.items() if k[3] == m and keep(k)]
                if not vals:
                    continue
                per_seed = {}
                for seed, v in vals:
                    per_seed.setdefault(seed, []).append(v)
                seed_means = [float(np.mean(v)) for v in per_seed.values()]
                std = float(np.std(seed_means, ddof=1)) if len(seed_means) > 1 else 0.0
                means[(scope, band, m)] = (float(np.mean([v for _, v in vals])), std, len(vals))
            for a in methods:
                for b in methods:
                    if a == b:
                        continue
                    diffs = [table[k[:3] + (b,)] - v for k, v in table.items()
                             if k[3] == a and keep(k) and k[:3] + (b,) in table]
                    if diffs:
                        gaps[(scope, band, a, b)] = (float(np.mean(diffs)), len(diffs))
    return Summary(means, gaps, split_hz, failures)


def show_xi(alpha, beta, nmax=20):
    """``(nu, xi_nu, log10 xi_nu)`` rows for the given attenuation parameters."""
    log_xi = log_xi_table(nmax, AttenuationParams(alpha, beta))
    return [(n, float(np.exp(v)), float(v / math.log(10))) for n, v in enumerate(log_xi)]


__all__ = ["CONFIG_SCHEMA", "METHODS", "ExperimentConfig", "RunResult", "Summary", "cell_setup",
           "fit_method", "run_cell", "run_sweep", "run_nse", "summarize", "show_xi",
           "read_records_csv", "write_records_csv"]
