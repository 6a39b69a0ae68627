"""Command-line interface: train, eval, portrait, compare.

Exit codes: 0 success; 1 a run started and failed (e.g. training diverged);
2 bad usage — unknown flags, malformed config or curve files, missing inputs.
Evaluation honors the LOADGAIT_THREADS environment variable for its trial
pool (default 1; results are identical for any thread count).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import evals, trainer
from .biped import JOINT_NAMES
from .config import (
    LOAD_KINDS,
    ConfigError,
    RunConfig,
    load_config,
    save_config,
    validate,
)
from .policy import load_checkpoint
from .rewards import REWARD_MODES


class UsageError(Exception):
    """Input problem detected before any work started (exit code 2)."""


def _load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except ConfigError as e:
        raise UsageError(f"bad config {path}: {e}")


def _resolve_models(load: str | None, cfg: RunConfig) -> tuple[str, ...]:
    if load is None:
        return tuple(cfg.train.models)
    if load == "all":
        return LOAD_KINDS
    if load not in LOAD_KINDS:
        raise UsageError(f"unknown load kind {load!r}; valid: "
                         f"{', '.join(LOAD_KINDS)} or 'all'")
    return (load,)


def _load_policy(path: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(p)
    except ValueError as e:
        raise UsageError(f"cannot load checkpoint {path}: {e}")


# --- train ----------------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    train_kw = {"models": _resolve_models(args.load, cfg)}
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.iterations is not None:
        train_kw["iterations"] = args.iterations
    if args.steps is not None:
        train_kw["steps_per_iteration"] = args.steps
    if args.reward_mode is not None:
        if args.reward_mode not in REWARD_MODES:
            raise UsageError(f"unknown reward mode {args.reward_mode!r}; "
                             f"valid: {', '.join(REWARD_MODES)}")
        train_kw["reward_mode"] = args.reward_mode
    if args.init is not None:
        if args.init != "scratch" and not Path(args.init).exists():
            raise UsageError(f"init checkpoint not found: {args.init}")
        train_kw["init"] = args.init
    cfg = dataclasses.replace(
        cfg, train=dataclasses.replace(cfg.train, **train_kw))
    try:
        validate(cfg)
    except ConfigError as e:
        raise UsageError(str(e))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")   # resolved-config writeback

    def progress(pt):
        if not args.quiet:
            print(f"iteration {pt.iteration:4d}  timesteps {pt.timesteps:9d}  "
                  f"mean_reward {pt.mean_reward:9.3f}  "
                  f"mean_ep_len {pt.mean_ep_len:6.1f}", flush=True)

    try:
        result = trainer.train(cfg, out, target_reward=args.target_reward,
                               progress=progress)
    except trainer.TrainingDivergedError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1
    print(f"finished: {result.total_steps} steps, "
          f"final checkpoint {result.final_checkpoint}")
    if result.stopped_early:
        print("stopped early: target reward reached")
    return 0


# --- eval ----------------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _load_run_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.load == "all":
        raise UsageError("eval runs one load kind at a time; pick one")
    (kind,) = _resolve_models(args.load or "unloaded", cfg)
    policy = _load_policy(args.ckpt)
    protocols = evals.PROTOCOLS if args.protocol == "all" else (args.protocol,)
    report = evals.evaluate(policy, cfg, kind, protocols=protocols,
                            n_trials=args.trials, master_seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "summary.csv").write_text(report.summary_csv())
    print(report.summary_csv().rstrip())
    if report.push_non_monotone:
        print("warning: push line search was non-monotone in at least one "
              "direction", file=sys.stderr)
    return 0


# --- portrait ---------------------------------------------------------------------------------


def cmd_portrait(args) -> int:
    cfg = _load_run_config(args.config)
    (kind,) = _resolve_models(args.load or "unloaded", cfg)
    if args.joint not in JOINT_NAMES:
        raise UsageError(f"unknown joint {args.joint!r}; valid: "
                         f"{', '.join(JOINT_NAMES)}")
    policy = _load_policy(args.ckpt)
    portrait = evals.run_portrait(policy, cfg, kind, args.joint,
                                  seconds=args.seconds, command=args.speed)
    evals.write_portrait_csv(portrait, args.out)
    print(f"wrote {len(portrait.times)} samples to {args.out}")
    return 0


# --- compare ---------------------------------------------------------------------------------


def read_curve(path: str) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"curve file not found: {path}")
    lines = p.read_text().strip().split("\n")
    if not lines or lines[0] != "iteration,timesteps,mean_reward,mean_ep_len":
        raise UsageError(f"{path} is not a learning-curve CSV "
                         "(expected header iteration,timesteps,mean_reward,mean_ep_len)")
    rows = []
    for ln in lines[1:]:
        it, ts, mr, ln_ = ln.split(",")
        rows.append({"iteration": int(it), "timesteps": int(ts),
                     "mean_reward": float(mr), "mean_ep_len": float(ln_)})
    return rows


def steps_to_threshold(rows: list[dict], threshold: float,
                       smooth: int = 5) -> int | None:
    """Timesteps at the first point where the trailing moving average of
    mean reward (window `smooth`, shorter at the start) clears threshold."""
    if smooth < 1:
        raise UsageError(f"smoothing window must be >= 1, got {smooth}")
    for i, r in enumerate(rows):
        window = rows[max(0, i + 1 - smooth): i + 1]
        avg = sum(w["mean_reward"] for w in window) / len(window)
        if avg >= threshold:
            return r["timesteps"]
    return None


def cmd_compare(args) -> int:
    results = []
    for path in args.curves:
        rows = read_curve(path)
        if not rows:
            raise UsageError(f"{path} has no data rows")
        results.append({
            "curve": path,
            "steps_to_threshold": steps_to_threshold(rows, args.threshold,
                                                     args.smooth),
            "final_reward": rows[-1]["mean_reward"],
            "total_steps": rows[-1]["timesteps"],
        })
    width = max(len(r["curve"]) for r in results)
    print(f"threshold: mean reward >= {args.threshold}")
    for r in results:
        hit = ("never" if r["steps_to_threshold"] is None
               else f"{r['steps_to_threshold']} steps")
        print(f"{r['curve']:<{width}}  reaches at {hit:>14}  "
              f"final {r['final_reward']:.3f}")
    if args.out:
        Path(args.out).write_text(
            json.dumps({"threshold": args.threshold, "curves": results},
                       indent=2) + "\n")
    return 0


# --- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="loadgait",
        description="Train, evaluate, and inspect walking policies under "
                    "dynamic loads.",
        epilog="LOADGAIT_THREADS sets the evaluation trial pool size "
               "(default 1; reports are identical for any value).",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run PPO training")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="run-config JSON (defaults used if omitted)")
    t.add_argument("--load", help=f"load kind ({', '.join(LOAD_KINDS)}) or 'all'")
    t.add_argument("--init", help="checkpoint to start from, or 'scratch'")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--steps", type=int, help="timesteps per iteration")
    t.add_argument("--reward-mode", help="specialized or general")
    t.add_argument("--target-reward", type=float,
                   help="stop early once the 3-iteration moving average "
                        "reaches this")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--config")
    e.add_argument("--load", help="load kind (default unloaded)")
    e.add_argument("--trials", type=int, help="command-set trials")
    e.add_argument("--protocol", default="all",
                   choices=list(evals.PROTOCOLS) + ["all"])
    e.add_argument("--seed", type=int)
    e.set_defaults(fn=cmd_eval)

    p = sub.add_parser("portrait", help="record a joint phase portrait")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--joint", required=True,
                   help=f"one of: {', '.join(JOINT_NAMES)}")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--speed", type=float, default=1.0,
                   help="constant speed command, m/s")
    p.add_argument("--config")
    p.add_argument("--load", help="load kind (default unloaded)")
    p.set_defaults(fn=cmd_portrait)

    c = sub.add_parser("compare", help="compare learning curves")
    c.add_argument("--curves", nargs="+", required=True,
                   help="learning_curve.csv files")
    c.add_argument("--threshold", type=float, required=True,
                   help="mean-reward bar for steps-to-threshold")
    c.add_argument("--smooth", type=int, default=5,
                   help="trailing moving-average window (1 = raw rows)")
    c.add_argument("--out", help="optional JSON output path")
    c.set_defaults(fn=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
