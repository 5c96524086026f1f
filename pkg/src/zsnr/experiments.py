"""Experiment runners behind the command-line interface.

Every runner takes a fully resolved JSON-style config (defaults merged in),
writes its data files into an output directory and returns a report dict
that embeds that config. Reports are deterministic apart from the
``wall_clock_s`` field.
"""

from __future__ import annotations

import copy
import csv
import json
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import dataset as ds
from .denoiser import MLPDenoiser, TrainConfig, load_checkpoint, save_checkpoint, train
from .diffusion import NoiseMode, Parameterization
from .errors import ConfigError, InvalidArgumentError
from .estimator import check_parameterization
from .sampler import GuidanceConfig, SamplerConfig, sample
from .schedule import build_schedule, terminal_stats
from .timesteps import select_timesteps
from .utils import make_rng

SCHEMA_VERSION = "1"

# Criteria for the brightness-bias comparison; see README for the reference run.
BIAS_THRESHOLDS = {
    "flawed_max_std": 0.3,
    "flawed_max_abs_mean": 0.15,
    "fixed_min_std_ratio": 2.0,
    "fixed_min_abs_mode": 0.4,
}

DEFAULT_SCHEDULE = {"kind": "scaled-linear", "T": 1000, "rescaled": True, "clip_beta": True}
DEFAULT_DATASET = {
    "dim": 4096,
    "brightness": "bimodal",
    "params": [-0.8, 0.8, 0.5],
    "texture_std": 0.1,
    "n_classes": 0,
    "seed": 0,
    "n": 20000,
}
DEFAULT_MODEL = {"hidden": 256, "t_dim": 32, "c_dim": 16, "init_seed": 1}
DEFAULT_TRAIN = {
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "batch_size": 128,
    "iterations": 1200,
    "seed": 2,
    "noise": {"kind": "iid", "strength": 0.1},
    "cond_dropout": 0.1,
}

DEFAULT_TRAIN_CONFIG = {
    "schedule": DEFAULT_SCHEDULE,
    "param": "v",
    "dataset": DEFAULT_DATASET,
    "model": DEFAULT_MODEL,
    "train": DEFAULT_TRAIN,
}

DEFAULT_BIAS_CONFIG = {
    "schedule": {"kind": "scaled-linear", "T": 1000, "clip_beta": True},
    "dataset": DEFAULT_DATASET,
    "model": DEFAULT_MODEL,
    "train": {**DEFAULT_TRAIN, "cond_dropout": 0.0},
    "sampling": {"method": "ddim", "n": 512, "S": 25, "seed": 3},
    "configs": {
        "A": {"rescaled": False, "param": "epsilon", "strategy": "leading"},
        "B": {"rescaled": True, "param": "v", "strategy": "leading"},
        "C": {"rescaled": False, "param": "epsilon", "strategy": "trailing"},
        "D": {"rescaled": True, "param": "v", "strategy": "trailing"},
    },
    "thresholds": BIAS_THRESHOLDS,
}


def merge(defaults: dict, override: dict | None) -> dict:
    """Recursive dict merge; ``override`` wins, unknown keys are rejected."""
    out = copy.deepcopy(defaults)
    for key, value in (override or {}).items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key != "configs":
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def dump_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _tolist(v) for k, v in x.items()}
    return x


def summarize(samples) -> dict:
    """Brightness statistics and histogram modes in JSON-ready form."""
    stats = ds.brightness_stats(samples)
    x = np.asarray(samples).reshape(len(samples), -1)
    return {
        "mean": stats["mean"],
        "std": stats["std"],
        "histogram": stats["histogram"].tolist(),
        "modes": ds.histogram_modes(stats["histogram"]),
        "mean_within_sample_std": float(x.std(axis=1).mean()),
    }


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(losses, start=1):
            w.writerow([i, repr(float(loss))])


def write_means_csv(path, samples) -> None:
    means = np.asarray(samples).reshape(len(samples), -1).mean(axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "mean"])
        for i, m in enumerate(means):
            w.writerow([i, repr(float(m))])


def schedule_from_config(sc: dict, rescaled: bool | None = None):
    return build_schedule(
        sc["kind"],
        sc["T"],
        rescaled=sc.get("rescaled", False) if rescaled is None else rescaled,
        clip_beta=sc.get("clip_beta", True),
    )


def schedule_from_checkpoint(model: MLPDenoiser):
    sc = model.meta.get("schedule")
    if not sc:
        raise ConfigError("checkpoint carries no schedule recipe; rebuild it explicitly")
    sched = schedule_from_config(sc)
    if model.schedule_hash and sched.digest() != model.schedule_hash:
        raise ConfigError("schedule recipe in checkpoint does not reproduce its schedule hash")
    return sched


def _train_model(cfg: dict, schedule, param, data, labels, callback=None):
    mc, tc = cfg["model"], cfg["train"]
    check_parameterization(param, schedule)
    n_classes = cfg["dataset"]["n_classes"]
    model = MLPDenoiser(
        data_dim=data.shape[1],
        hidden=mc["hidden"],
        t_dim=mc["t_dim"],
        c_dim=mc["c_dim"],
        n_classes=n_classes,
        T=schedule.T,
        param=param,
        schedule_hash=schedule.digest(),
        rng=make_rng(mc["init_seed"]),
    )
    train_cfg = TrainConfig(
        lr=tc["lr"],
        beta1=tc["beta1"],
        beta2=tc["beta2"],
        batch_size=tc["batch_size"],
        iterations=tc["iterations"],
        seed=tc["seed"],
        noise=NoiseMode(tc["noise"]["kind"], tc["noise"]["strength"]),
        cond_dropout=tc["cond_dropout"] if n_classes else 0.0,
    )
    losses = train(model, data, labels if n_classes else None, schedule, train_cfg, callback=callback)
    return model, losses


def _dataset(cfg: dict):
    dc = dict(cfg["dataset"])
    n = dc.pop("n")
    spec = ds.DatasetSpec.from_dict(dc)
    return spec, *ds.generate(spec, n)


def run_train(config: dict | None, out_dir, log=None) -> dict:
    """Train one model; writes ``model.ckpt``, ``loss.csv`` and ``train_report.json``."""
    cfg = merge(DEFAULT_TRAIN_CONFIG, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    schedule = schedule_from_config(cfg["schedule"])
    param = Parameterization.parse(cfg["param"])
    check_parameterization(param, schedule)
    _, data, labels = _dataset(cfg)
    model, losses = _train_model(cfg, schedule, param, data, labels, callback=log)
    model.meta["schedule"] = cfg["schedule"]
    save_checkpoint(model, out / "model.ckpt")
    write_loss_csv(out / "loss.csv", losses)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "train",
        "config": cfg,
        "results": {
            "schedule_hash": schedule.digest(),
            "terminal": terminal_stats(schedule),
            "loss_first": losses[0] if losses else None,
            "loss_last": float(np.mean(losses[-100:])) if losses else None,
            "data": summarize(data),
            "files": {"checkpoint": "model.ckpt", "loss_curve": "loss.csv"},
        },
        "wall_clock_s": time.perf_counter() - start,
    }
    report = _tolist(report)
    validate_report(report)
    dump_json(out / "train_report.json", report)
    return report


def _sample_with(model, schedule, strategy, S, method, n, seed, cond=None, guidance=None):
    plan = select_timesteps(strategy, schedule.T, S)
    return sample(model, schedule, SamplerConfig(plan, method, guidance), cond, n, make_rng(seed))


def run_bias_experiment(config: dict | None, out_dir, log=None) -> dict:
    """Train the flawed and fixed pipelines on one dataset and compare their brightness.

    Configurations sharing (rescaled, param) share a single trained model;
    they differ only in how sample steps are chosen.
    """
    cfg = merge(DEFAULT_BIAS_CONFIG, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    spec, data, labels = _dataset(cfg)
    sc = cfg["sampling"]

    trained = {}
    trainings = {}
    results = {}
    for name in sorted(cfg["configs"]):
        c = cfg["configs"][name]
        param = Parameterization.parse(c["param"])
        key = f"{'ztsnr' if c['rescaled'] else 'orig'}-{param.value}"
        schedule = schedule_from_config(cfg["schedule"], rescaled=c["rescaled"])
        if key not in trained:
            if log:
                log(f"training {key}")
            model, losses = _train_model(cfg, schedule, param, data, labels)
            model.meta["schedule"] = {**cfg["schedule"], "rescaled": bool(c["rescaled"])}
            save_checkpoint(model, out / f"model_{key}.ckpt")
            write_loss_csv(out / f"loss_{key}.csv", losses)
            trained[key] = model
            trainings[key] = {
                "checkpoint": f"model_{key}.ckpt",
                "loss_curve": f"loss_{key}.csv",
                "loss_first": losses[0] if losses else None,
                "loss_last": float(np.mean(losses[-100:])) if losses else None,
                "schedule_hash": schedule.digest(),
                "terminal": terminal_stats(schedule),
            }
        x = _sample_with(trained[key], schedule, c["strategy"], sc["S"], sc["method"], sc["n"], sc["seed"])
        ds.dump_grid(out / f"samples_{name}.pgm", x[:64])
        write_means_csv(out / f"means_{name}.csv", x)
        results[name] = {
            "rescaled": bool(c["rescaled"]),
            "param": param.value,
            "strategy": c["strategy"],
            "S": sc["S"],
            "training": key,
            "brightness": summarize(x),
        }
        if log:
            b = results[name]["brightness"]
            log(f"config {name}: mean={b['mean']:+.4f} std={b['std']:.4f}")

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "bias-experiment",
        "config": cfg,
        "results": {
            "data": summarize(data),
            "trainings": trainings,
            "configs": results,
            "criteria": bias_criteria(results, cfg["thresholds"]),
        },
        "wall_clock_s": time.perf_counter() - start,
    }
    report = _tolist(report)
    validate_report(report)
    dump_json(out / "report.json", report)
    return report


def bias_criteria(results: dict, thr: dict) -> dict:
    """Compare the flawed config A against the fully fixed config D."""
    if "A" not in results or "D" not in results:
        return {}
    a = results["A"]["brightness"]
    d = results["D"]["brightness"]
    modes = d["modes"]
    checks = {
        "flawed_std": a["std"] <= thr["flawed_max_std"],
        "flawed_mean": abs(a["mean"]) <= thr["flawed_max_abs_mean"],
        "fixed_std_ratio": d["std"] >= thr["fixed_min_std_ratio"] * a["std"],
        "fixed_bimodal": bool(
            modes["bimodal"]
            and modes["neg_mode"] < -thr["fixed_min_abs_mode"]
            and modes["pos_mode"] > thr["fixed_min_abs_mode"]
        ),
    }
    return {
        "std_ratio": d["std"] / a["std"] if a["std"] > 0 else None,
        "checks": checks,
        "passed": all(checks.values()),
    }


def run_ablate_steps(checkpoint, strategies, steps, out_dir, n=512, seed=3, method="ddim") -> dict:
    """Sample one checkpoint under every (strategy, S) pair with the same initial noise."""
    if not strategies or not steps:
        raise InvalidArgumentError("need at least one strategy and one step count")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    model = load_checkpoint(checkpoint)
    schedule = schedule_from_checkpoint(model)
    cells = []
    for S in steps:
        for strategy in strategies:
            plan = select_timesteps(strategy, schedule.T, S)
            x = _sample_with(model, schedule, strategy, S, method, n, seed)
            stem = f"steps_{plan.strategy.value}_S{S}"
            ds.dump_grid(out / f"{stem}.pgm", x[:64])
            cells.append(
                {"strategy": plan.strategy.value, "S": S, "plan": plan.to_list(), "brightness": summarize(x)}
            )
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "ablate-steps",
        "config": {
            "checkpoint": Path(checkpoint).name,
            "schedule_hash": schedule.digest(),
            "strategies": [c["strategy"] for c in cells[: len(strategies)]],
            "steps": list(steps),
            "n": n,
            "seed": seed,
            "method": method,
        },
        "results": {"cells": cells},
        "wall_clock_s": time.perf_counter() - start,
    }
    report = _tolist(report)
    validate_report(report)
    dump_json(out / "ablate_steps.json", report)
    return report


def run_ablate_phi(
    checkpoint,
    phis,
    out_dir,
    w=7.5,
    cond=0,
    strategy="trailing",
    S=25,
    n=256,
    seed=3,
    method="ddim",
) -> dict:
    """Sample a conditional checkpoint at guidance weight ``w`` for each rescale factor."""
    if not phis:
        raise InvalidArgumentError("phi list is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    model = load_checkpoint(checkpoint)
    if model.n_classes < 1:
        raise InvalidArgumentError("guidance ablation needs a class-conditional checkpoint")
    schedule = schedule_from_checkpoint(model)
    cells = []
    for phi in phis:
        guidance = GuidanceConfig(w, float(phi))
        x = _sample_with(model, schedule, strategy, S, method, n, seed, cond=cond, guidance=guidance)
        ds.dump_grid(out / f"phi_{float(phi):g}.pgm", x[:64])
        cells.append({"phi": float(phi), "brightness": summarize(x)})
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "ablate-phi",
        "config": {
            "checkpoint": Path(checkpoint).name,
            "schedule_hash": schedule.digest(),
            "phis": [float(p) for p in phis],
            "w": w,
            "cond": cond,
            "strategy": strategy,
            "S": S,
            "n": n,
            "seed": seed,
            "method": method,
        },
        "results": {"cells": cells},
        "wall_clock_s": time.perf_counter() - start,
    }
    report = _tolist(report)
    validate_report(report)
    dump_json(out / "ablate_phi.json", report)
    return report


def run_sample(
    checkpoint,
    out_dir,
    strategy="trailing",
    S=25,
    method="ddim",
    n=64,
    seed=0,
    cond=None,
    w=None,
    phi=0.0,
) -> dict:
    """Sample a checkpoint; writes a PGM grid, per-sample means and a JSON report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    model = load_checkpoint(checkpoint)
    schedule = schedule_from_checkpoint(model)
    guidance = None
    if w is not None:
        if cond is None:
            raise InvalidArgumentError("guidance needs a class label (--cond)")
        guidance = GuidanceConfig(w, phi)
    x = _sample_with(model, schedule, strategy, S, method, n, seed, cond=cond, guidance=guidance)
    ds.dump_grid(out / "samples.pgm", x[:64])
    write_means_csv(out / "means.csv", x)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "sample",
        "config": {
            "checkpoint": Path(checkpoint).name,
            "schedule_hash": schedule.digest(),
            "strategy": strategy,
            "S": S,
            "method": method,
            "n": n,
            "seed": seed,
            "cond": cond,
            "w": w,
            "phi": phi,
        },
        "results": {"brightness": summarize(x), "plan": select_timesteps(strategy, schedule.T, S).to_list()},
        "wall_clock_s": time.perf_counter() - start,
    }
    report = _tolist(report)
    validate_report(report)
    dump_json(out / "sample_report.json", report)
    return report


_BRIGHTNESS = {
    "type": "object",
    "required": ["mean", "std", "histogram", "modes", "mean_within_sample_std"],
    "properties": {
        "mean": {"type": "number"},
        "std": {"type": "number", "minimum": 0},
        "histogram": {
            "type": "array",
            "items": {"type": "integer", "minimum": 0},
            "minItems": ds.HIST_BINS,
            "maxItems": ds.HIST_BINS,
        },
        "modes": {"type": "object", "required": ["neg_mode", "pos_mode", "bimodal"]},
        "mean_within_sample_std": {"type": "number", "minimum": 0},
    },
}

_CELL_LIST = {
    "type": "object",
    "required": ["cells"],
    "properties": {
        "cells": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["brightness"], "properties": {"brightness": _BRIGHTNESS}},
        }
    },
}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "command", "config", "results", "wall_clock_s"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["train", "bias-experiment", "ablate-steps", "ablate-phi", "sample"]},
        "config": {"type": "object"},
        "results": {"type": "object"},
        "wall_clock_s": {"type": "number", "minimum": 0},
    },
    "allOf": [
        {
            "if": {"properties": {"command": {"const": "bias-experiment"}}},
            "then": {
                "properties": {
                    "results": {
                        "type": "object",
                        "required": ["data", "trainings", "configs", "criteria"],
                        "properties": {
                            "configs": {
                                "type": "object",
                                "minProperties": 1,
                                "additionalProperties": {
                                    "type": "object",
                                    "required": ["rescaled", "param", "strategy", "S", "training", "brightness"],
                                    "properties": {
                                        "param": {"enum": ["epsilon", "v"]},
                                        "strategy": {"enum": ["leading", "linspace", "trailing"]},
                                        "brightness": _BRIGHTNESS,
                                    },
                                },
                            }
                        },
                    }
                }
            },
        },
        {
            "if": {"properties": {"command": {"enum": ["ablate-steps", "ablate-phi"]}}},
            "then": {"properties": {"results": _CELL_LIST}},
        },
        {
            "if": {"properties": {"command": {"const": "sample"}}},
            "then": {"properties": {"results": {"required": ["brightness"], "properties": {"brightness": _BRIGHTNESS}}}},
        },
    ],
}


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def strip_wall_clock(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "wall_clock_s"}
