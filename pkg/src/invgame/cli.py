"""Command-line entry point: ``invgame <command> [--config FILE] [--out DIR]``.

Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .config import BenchConfig, ConfigError, load_config, write_resolved
from .evaluation import POLICY_KINDS, closed_loop_rollout, eval_trial_configs, evaluate_benchmark, render_trial_svg
from .game import JointCostNet
from .inverse import InverseTrainingError, train_game
from .policy import GenerativePolicy, TrainingDiverged, train_policy

log = logging.getLogger("invgame")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (defaults apply to missing keys)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for trials (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="invgame", description="Imitation of interactive policies through inverse games.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-demos", help="simulate expert demonstrations")
    _common(p)
    p.add_argument("--n", type=int, help="number of demonstrations (config: dataset.n_demos)")
    p.add_argument("--seed", type=int, help="master seed (config: dataset.seed)")

    p = sub.add_parser("train-policy", help="fit the non-interactive CVAE policy")
    _common(p)
    p.add_argument("--demos", type=Path, help="dataset file (default: OUT/demos.jsonl)")

    p = sub.add_parser("train-game", help="learn the joint cost by the inverse game")
    _common(p)
    p.add_argument("--demos", type=Path, help="dataset file (default: OUT/demos.jsonl)")
    p.add_argument("--policy", type=Path, help="policy checkpoint (default: OUT/policy.json)")

    p = sub.add_parser("evaluate", help="closed-loop benchmark of all policy kinds")
    _common(p)
    p.add_argument("--policy", type=Path, help="policy checkpoint (default: OUT/policy.json)")
    p.add_argument("--net", type=Path, help="joint cost checkpoint (default: OUT/joint_cost.json)")
    p.add_argument("--n", type=int, help="number of paired trials (config: eval.n_trials, 100)")

    p = sub.add_parser("render", help="draw one evaluation trial as SVG")
    _common(p)
    p.add_argument("--trial", type=int, required=True, help="trial index")
    p.add_argument("--kind", choices=POLICY_KINDS, default="interactive")
    p.add_argument("--policy", type=Path, help="policy checkpoint (default: OUT/policy.json)")
    p.add_argument("--net", type=Path, help="joint cost checkpoint (default: OUT/joint_cost.json)")

    p = sub.add_parser("run-all", help="generate, train both models and evaluate")
    _common(p)
    p.add_argument("--n-trials", type=int, help="number of paired evaluation trials")
    return parser


def _override(cfg: BenchConfig, section: str, **values) -> BenchConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    new = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **values)})
    new.validate()
    return new


def _existing(path: Path | None, default: Path, flag: str) -> Path:
    p = path if path is not None else default
    if not p.is_file():
        raise ValidationError(f"{flag}: file not found: {p} (pass {flag} PATH or produce it first)")
    return p


def _load_policy(path: Path) -> GenerativePolicy:
    try:
        return GenerativePolicy.load(path)
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"--policy: {path}: {exc}") from None


def _load_net(path: Path) -> JointCostNet:
    try:
        return JointCostNet.load(path)
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"--net: {path}: {exc}") from None


def _generate(cfg, out, threads):
    data = ds_mod.generate_dataset(cfg.dataset.n_demos, cfg.dataset.seed, cfg, threads)
    path = out / "demos.jsonl"
    ds_mod.save(data, path)
    print(f"wrote {len(data)} demonstrations to {path}")
    return data


def _train_policy(cfg, out, data):
    windows = ds_mod.extract_windows(data, cfg.policy.horizon, cfg.policy.window_stride)
    pc = cfg.policy
    policy = train_policy(windows, pc.epochs, pc.batch_size, pc.learning_rate, pc.seed, pc)
    path = out / "policy.json"
    policy.save(path)
    print(f"wrote policy to {path} (final mean ELBO {policy.curve[-1]:.4f})")
    return policy


def _train_game(cfg, out, data, policy):
    net, report = train_game(data, policy, cfg.inverse, cfg.game, out / "checkpoints", cfg.dynamics.dt)
    net.save(out / "joint_cost.json")
    report.write_csv(out / "train_report.csv")
    print(f"wrote joint cost to {out / 'joint_cost.json'} (NLL {report.nll[0]:.4f} -> {report.nll[-1]:.4f})")
    return net


def _evaluate(cfg, out, policy, net, n, threads):
    report = evaluate_benchmark(cfg, policy, net, n, threads=threads)
    report.write(out)
    print((out / "report.txt").read_text(), end="")
    return report


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out: Path = args.out
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    if args.command == "generate-demos":
        cfg = _override(cfg, "dataset", n_demos=args.n, seed=args.seed)
    elif args.command == "evaluate":
        cfg = _override(cfg, "eval", n_trials=args.n)
    elif args.command == "run-all":
        cfg = _override(cfg, "eval", n_trials=args.n_trials)
    print(f"config hash: {cfg.hash()}")
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)

    if args.command == "generate-demos":
        _generate(cfg, out, args.threads)
    elif args.command == "train-policy":
        data = ds_mod.load(_existing(args.demos, out / "demos.jsonl", "--demos"))
        _train_policy(cfg, out, data)
    elif args.command == "train-game":
        data = ds_mod.load(_existing(args.demos, out / "demos.jsonl", "--demos"))
        policy = _load_policy(_existing(args.policy, out / "policy.json", "--policy"))
        _train_game(cfg, out, data, policy)
    elif args.command == "evaluate":
        policy = _load_policy(_existing(args.policy, out / "policy.json", "--policy"))
        net = _load_net(_existing(args.net, out / "joint_cost.json", "--net"))
        _evaluate(cfg, out, policy, net, cfg.eval.n_trials, args.threads)
    elif args.command == "render":
        if args.trial < 0:
            raise UsageError("--trial must be non-negative")
        policy = net = None
        if args.kind != "ground_truth":
            policy = _load_policy(_existing(args.policy, out / "policy.json", "--policy"))
        if args.kind == "interactive":
            net = _load_net(_existing(args.net, out / "joint_cost.json", "--net"))
        config = eval_trial_configs(cfg, args.trial + 1)[args.trial]
        result = closed_loop_rollout(args.kind, config, cfg, policy, net, cfg.eval.seed, args.trial)
        path = render_trial_svg(result, out / f"trial{args.trial:03d}_{args.kind}.svg")
        print(f"wrote {path}")
    elif args.command == "run-all":
        data = _generate(cfg, out, args.threads)
        policy = _train_policy(cfg, out, data)
        net = _train_game(cfg, out, data, policy)
        _evaluate(cfg, out, policy, net, cfg.eval.n_trials, args.threads)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return run(args)
    except UsageError as exc:
        print(f"invgame: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValidationError, ds_mod.DatasetFormatError, FileNotFoundError) as exc:
        print(f"invgame: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ds_mod.DatasetError, TrainingDiverged, InverseTrainingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"invgame: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
