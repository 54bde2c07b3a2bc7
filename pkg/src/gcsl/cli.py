"""Command-line entry point: ``gcsl {train,eval,ablate,sweep,verify,demos}``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .buffer import write_trajectory_log
from .config import RunConfig, load_config, parse_value
from .env import ENV_NAMES
from .errors import ConfigError, ContractViolation
from .evaluation import evaluate, write_episodes_csv
from .policy import MAGIC, MlpPolicy, TabularPolicy
from .rng import derive_rng
from .trainer import (ABLATIONS, SWEEP_GRAD_STEPS, SWEEP_HIDDEN, generate_demos, make_policy, run, run_sweep,
                      success_iqr, write_metrics_csv, write_sweep_csv)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _prepare_dir(path, force: bool, outputs) -> Path:
    """Create ``path``; refuse to overwrite any of ``outputs`` inside it unless ``force``."""
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    clash = [name for name in outputs if (out / name).exists()]
    if clash and not force:
        raise UsageError(f"{out} already holds {', '.join(clash)}; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_sets(items) -> dict:
    values = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = parse_value(value)
    return values


def _run_config(args, default_env: str = "grid-rooms") -> RunConfig:
    """Config file first, then ``--set`` overrides, then dedicated flags."""
    values = load_config(args.config) if getattr(args, "config", None) else {}
    values.setdefault("env.name", default_env)
    values.update(_parse_sets(getattr(args, "set", None)))
    flags = {
        "env.name": getattr(args, "env", None),
        "seed": getattr(args, "seed", None),
        "train.total_env_steps": getattr(args, "steps", None),
        "train.eval_every": getattr(args, "eval_every", None),
        "train.ablation": getattr(args, "ablation", None),
        "train.demo_path": getattr(args, "demos", None),
        "train.epsilon": getattr(args, "epsilon", None),
        "policy.kind": getattr(args, "policy", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    cfg = RunConfig.from_mapping(values)
    demo = cfg.train.demo_path
    if demo is not None and not Path(demo).is_file():
        raise ConfigError(f"demonstration file not found: {demo}")
    return cfg


def _checkpoint_name(policy) -> str:
    return "policy.gcsl" if isinstance(policy, MlpPolicy) else "policy.npz"


def load_policy(path, env):
    """Load an MLP (``GCSL1``) or tabular checkpoint, telling them apart by their magic bytes."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint not found: {p}")
    with open(p, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return MlpPolicy.load(p, encoder=env.features if env.is_finite else None)
    return TabularPolicy.load(p)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _prepare_dir(args.out, args.force, ("metrics.csv", "run.json", "policy.gcsl", "policy.npz"))
    env = cfg.make_env()
    train_cfg = cfg.train.resolve(env)
    policy = make_policy(env, train_cfg)
    rows, state = run(env, train_cfg, policy=policy)
    write_metrics_csv(rows, out / "metrics.csv")
    policy.save(out / _checkpoint_name(policy))
    manifest = {
        "command": "train",
        "config": cfg.to_mapping(),
        "resolved": {"policy.kind": train_cfg.policy_kind, "policy.time_varying": train_cfg.time_varying,
                     "train.epsilon": train_cfg.epsilon},
        "seed": cfg.seed,
        "env_steps": state.env_steps,
        "demos_loaded": state.demos_loaded,
        "git_describe": _git_describe(),
        "version": __version__,
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    last = rows[-1]
    print(f"env_steps={last.env_steps} median_final_distance={last.median_final_distance:.4f} "
          f"success_ratio={last.success_ratio:.3f} -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    return cmd_train(args)


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    env = cfg.make_env()
    policy = load_policy(args.checkpoint, env)
    if args.goals < 1:
        raise UsageError("--goals must be positive")
    goals = env.sample_goals(derive_rng(cfg.seed, "eval"), args.goals)
    report = evaluate(policy, env, goals, env.goal_threshold)
    if args.out:
        out = _prepare_dir(args.out, args.force, ("eval_episodes.csv",))
        write_episodes_csv(report, out / "eval_episodes.csv")
    print(f"episodes={report.n_episodes} median_final_distance={report.median_final_distance:.4f} "
          f"mean_final_distance={report.mean_final_distance:.4f} success_ratio={report.success_ratio:.3f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _run_config(args, default_env="four-rooms")
    out = _prepare_dir(args.out, args.force, ("sweep.csv",))
    env = cfg.make_env()
    hidden = [int(h) for h in args.hidden.split(",")]
    grads = [int(k) for k in args.grad_steps.split(",")]
    rows = run_sweep(env, cfg.train, hidden, grads, log=lambda msg: print(msg, file=sys.stderr))
    write_sweep_csv(rows, out / "sweep.csv")
    for r in rows:
        print(f"hidden={r.hidden_size:<5d} grad_steps={r.grad_steps} success={r.final_success_ratio:.3f} "
              f"median_distance={r.final_median_distance:.4f}")
    print(f"success IQR = {success_iqr(rows):.3f}")
    return EXIT_OK


BOUND_FIELDS = ("instance", "J", "J_surr", "J_gcsl", "relabeled_loglik", "C2", "alpha", "penalty", "slack_i",
                "slack_ii", "slack_iii", "P_wrong", "gap", "gap_bound", "wrong_term", "passed")


def cmd_verify(args) -> int:
    from .oracle import theorem_4_1_suite, theorem_4_2_suite

    if args.instances < 1:
        raise UsageError("--instances must be positive")
    reports = theorem_4_1_suite(args.instances, seed=args.seed, corrupt_instance=args.corrupt_instance)
    print(f"{'inst':>4} {'J':>9} {'J_surr':>9} {'C2':>6} {'slack_i':>10} {'slack_ii':>10} {'slack_iii':>10} "
          f"{'gap':>10} {'bound':>10}  ok")
    for r in reports:
        print(f"{r.instance:>4d} {r.J:9.5f} {r.J_surr:9.4f} {r.C2:6.3f} {r.slack_i:10.3e} {r.slack_ii:10.3e} "
              f"{r.slack_iii:10.3e} {r.gap:10.3e} {r.gap_bound:10.3e}  {'yes' if r.passed else 'NO'}")
    if args.out:
        path = Path(args.out)
        if path.exists() and not args.force:
            raise UsageError(f"{path} exists; pass --force to overwrite")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BOUND_FIELDS)
            for r in reports:
                row = r.as_row()
                w.writerow([repr(row[f]) if isinstance(row[f], float) else row[f] for f in BOUND_FIELDS])
    ok = True
    failed = [r.instance for r in reports if not r.passed]
    if failed:
        ok = False
        print(f"bound violated on instance(s) {failed} (suite seed {args.seed})")
    if not args.skip_optimality:
        for name, rep in theorem_4_2_suite().items():
            print(f"{name}: J* = {rep.J_star:.6f}  J(relabel-optimal) = {rep.J_relabel_optimal:.6f}  "
                  f"gap = {rep.optimal_gap:.2e}")
            for c in rep.checks:
                print(f"  eps={c.eps:<5} J={c.J:.6f} gap={c.gap:.4f} <= {c.bound:.3f}  {'yes' if c.holds else 'NO'}")
            ok = ok and rep.passed
    print(f"{len(reports)} instances, {len(reports) - len(failed)} passed")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_demos_generate(args) -> int:
    cfg = _run_config(args)
    env = cfg.make_env()
    if not env.is_finite or not env.deterministic:
        raise ConfigError(f"expert demonstrations need a deterministic finite environment, not {cfg.env_name!r}")
    if args.n < 1:
        raise UsageError("--n must be positive")
    path = Path(args.out)
    if path.exists() and not args.force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    demos = generate_demos(env, args.n, seed=cfg.seed)
    write_trajectory_log(path, demos)
    reached = int(np.sum([d.states[-1] == d.commanded_goal for d in demos]))
    print(f"wrote {len(demos)} trajectories to {path}; {reached} end on their commanded goal")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _ablation(text: str) -> str:
    name = text.replace("-", "_")
    if name not in ABLATIONS:
        raise argparse.ArgumentTypeError(f"unknown ablation {text!r}")
    return name


def _add_config_args(p, env_default_help: str = "grid-rooms") -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--env", choices=ENV_NAMES, help=f"environment (default {env_default_help})")
    p.add_argument("--seed", type=int)


def _add_train_args(p, ablation_required: bool = False) -> None:
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--ablation", type=_ablation, required=ablation_required,
                   help="none, time-varying, limited-relabel, on-policy or fixed-collection")
    p.add_argument("--demos", help="trajectory log to preload into the buffer")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--epsilon", type=float, help="epsilon-greedy collection rate")
    p.add_argument("--policy", choices=("auto", "tabular", "mlp"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcsl", description="Goal-conditioned supervised learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run GCSL and write metrics.csv, a checkpoint and run.json")
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train with a required --ablation")
    _add_train_args(p, ablation_required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint on seeded uniform goals")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--goals", type=int, default=200)
    p.add_argument("--out", help="directory for eval_episodes.csv")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hidden size x gradient steps grid for the MLP")
    _add_config_args(p, env_default_help="four-rooms")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--hidden", default=",".join(map(str, SWEEP_HIDDEN)))
    p.add_argument("--grad-steps", default=",".join(map(str, SWEEP_GRAD_STEPS)))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="exact-oracle checks of the GCSL bounds")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write bound_report.csv here")
    p.add_argument("--force", action="store_true")
    p.add_argument("--skip-optimality", action="store_true", help="only run the random-instance suite")
    p.add_argument("--corrupt-instance", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("demos", help="expert demonstrations")
    dsub = p.add_subparsers(dest="demos_command", required=True)
    g = dsub.add_parser("generate", help="write DP-expert trajectories to a trajectory log")
    _add_config_args(g)
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--out", required=True, help="trajectory log path")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_demos_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, ContractViolation) as exc:
        print(f"gcsl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gcsl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
