"""Command-line entry point (``zsnr``).

Subcommands: inspect, timesteps, train, sample, bias-experiment,
ablate-steps, ablate-phi. Errors exit non-zero and print one JSON object
``{"error": <code>, "message": <text>}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import experiments
from .errors import ZsnrError
from .schedule import make_schedule, rescale_zero_terminal_snr, terminal_stats
from .timesteps import select_timesteps

SCHEDULE_COLUMNS = ["kind", "T", "t", "beta", "alpha_bar", "sqrt_alpha_bar", "snr"]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def schedule_rows(schedule) -> list[list]:
    rows = []
    for t in range(1, schedule.T + 1):
        rows.append(
            [
                schedule.name,
                schedule.T,
                t,
                repr(schedule.beta(t)),
                repr(schedule.alpha_bar(t)),
                repr(float(schedule.sqrt_alphas_bar[t - 1])),
                repr(schedule.snr(t)),
            ]
        )
    return rows


def inspect_schedule(kind, T, rescaled=False, clip_beta=True, float32_betas=False):
    """Schedule table rows plus the summary dict printed by ``inspect``."""
    base = make_schedule(kind, T, clip_beta=clip_beta, float32_betas=float32_betas)
    schedules = [base]
    summary = {
        "kind": base.name,
        "T": base.T,
        "float32_betas": float32_betas,
        "schedule_hash": base.digest(),
        **terminal_stats(base),
    }
    if rescaled:
        fixed = rescale_zero_terminal_snr(base)
        schedules.append(fixed)
        summary = {
            "kind": fixed.name,
            "T": fixed.T,
            "float32_betas": float32_betas,
            "schedule_hash": fixed.digest(),
            **terminal_stats(fixed),
            "original": summary,
        }
    rows = [row for s in schedules for row in schedule_rows(s)]
    return rows, summary


def cmd_inspect(args) -> int:
    rows, summary = inspect_schedule(
        args.kind, args.T, args.rescaled, clip_beta=not args.no_clip, float32_betas=args.float32_betas
    )
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCHEDULE_COLUMNS)
            w.writerows(rows)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return 0


def cmd_timesteps(args) -> int:
    plan = select_timesteps(args.strategy, args.T, args.S)
    print(json.dumps(plan.to_list()))
    return 0


def _progress(every: int):
    def log(it, loss):
        if (it + 1) % every == 0:
            print(f"step {it + 1} loss {loss:.5f}", file=sys.stderr)

    return log


def cmd_train(args) -> int:
    config = experiments.load_config(args.config) if args.config else {}
    report = experiments.run_train(config, args.out, log=_progress(args.log_every) if args.verbose else None)
    res = report["results"]
    keys = ("schedule_hash", "terminal", "loss_first", "loss_last")
    print(json.dumps({k: res[k] for k in keys}, indent=2, sort_keys=True))
    return 0


def cmd_sample(args) -> int:
    report = experiments.run_sample(
        args.checkpoint,
        args.out,
        strategy=args.strategy,
        S=args.steps,
        method=args.method,
        n=args.n,
        seed=args.seed,
        cond=args.cond,
        w=args.w,
        phi=args.phi,
    )
    b = report["results"]["brightness"]
    print(json.dumps({"mean": b["mean"], "std": b["std"], "modes": b["modes"]}, indent=2, sort_keys=True))
    return 0


def cmd_bias_experiment(args) -> int:
    config = experiments.load_config(args.config) if args.config else {}
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    report = experiments.run_bias_experiment(config, args.out, log=log)
    res = report["results"]
    summary = {
        name: {"mean": r["brightness"]["mean"], "std": r["brightness"]["std"]}
        for name, r in res["configs"].items()
    }
    print(json.dumps({"configs": summary, "criteria": res["criteria"]}, indent=2, sort_keys=True))
    return 0


def cmd_ablate_steps(args) -> int:
    report = experiments.run_ablate_steps(
        args.checkpoint, args.strategies, args.steps, args.out, n=args.n, seed=args.seed
    )
    rows = [
        {"strategy": c["strategy"], "S": c["S"], "std": c["brightness"]["std"], "mean": c["brightness"]["mean"]}
        for c in report["results"]["cells"]
    ]
    print(json.dumps(rows, indent=2))
    return 0


def cmd_ablate_phi(args) -> int:
    report = experiments.run_ablate_phi(
        args.checkpoint,
        args.phis,
        args.out,
        w=args.w,
        cond=args.cond,
        strategy=args.strategy,
        S=args.steps,
        n=args.n,
        seed=args.seed,
    )
    rows = [
        {"phi": c["phi"], "mean_within_sample_std": c["brightness"]["mean_within_sample_std"]}
        for c in report["results"]["cells"]
    ]
    print(json.dumps(rows, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsnr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print terminal statistics of a noise schedule")
    p.add_argument("kind", help="linear | scaled-linear | cosine")
    p.add_argument("T", type=int)
    p.add_argument("--rescaled", action="store_true", help="also rescale to zero terminal SNR")
    p.add_argument("--no-clip", action="store_true", help="cosine: do not clip betas at 0.999")
    p.add_argument("--float32-betas", action="store_true", help="round betas through float32")
    p.add_argument("--csv", help="write the full schedule table here")
    p.add_argument("--json", help="write the summary here as well as to stdout")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("timesteps", help="print a sample-step plan as a JSON array")
    p.add_argument("strategy", help="leading | linspace | trailing")
    p.add_argument("T", type=int)
    p.add_argument("S", type=int)
    p.set_defaults(func=cmd_timesteps)

    p = sub.add_parser("train", help="train a denoiser from a JSON config")
    p.add_argument("config", nargs="?", help="JSON config; omitted keys take documented defaults")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", default="runs/sample")
    p.add_argument("--strategy", default="trailing")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--method", default="ddim", choices=["ddim", "ddpm"])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cond", type=int, default=None, help="class label; omit for unconditional")
    p.add_argument("--w", type=float, default=None, help="guidance weight")
    p.add_argument("--phi", type=float, default=0.0, help="guidance rescale factor")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bias-experiment", help="compare flawed and fixed pipelines on brightness")
    p.add_argument("config", nargs="?")
    p.add_argument("--out", default="runs/bias")
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_bias_experiment)

    p = sub.add_parser("ablate-steps", help="grid over step-selection strategy and S")
    p.add_argument("checkpoint")
    p.add_argument("--strategies", type=_str_list, default="leading,linspace,trailing")
    p.add_argument("--steps", type=_int_list, default="5,25")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--out", default="runs/ablate_steps")
    p.set_defaults(func=cmd_ablate_steps)

    p = sub.add_parser("ablate-phi", help="grid over the guidance rescale factor")
    p.add_argument("checkpoint")
    p.add_argument("--phis", type=_float_list, default="0,0.25,0.5,0.75,1")
    p.add_argument("--w", type=float, default=7.5)
    p.add_argument("--cond", type=int, default=0)
    p.add_argument("--strategy", default="trailing")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--out", default="runs/ablate_phi")
    p.set_defaults(func=cmd_ablate_phi)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ZsnrError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
