"""Command line entry point: ``klper train | eval | compare``.

Exit codes: 0 success, 2 usage error, 3 divergence abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from .agents import load_agent
from .envs import ENVIRONMENTS, make_env
from .errors import ConfigError, DivergenceError, SnapshotError
from .harness import (
    ALGORITHMS,
    STRATEGIES,
    RunConfig,
    compare,
    evaluate,
    load_config_file,
    parse_seeds,
    return_std,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3

# flag -> RunConfig field
_RUN_FLAGS = {
    "algo": "algo",
    "replay": "replay",
    "env": "env",
    "seed": "seed",
    "steps": "total_steps",
    "warmup": "warmup",
    "batch": "batch_size",
    "candidates": "n_candidates",
    "kl_sigma": "kl_sigma",
    "per_alpha": "per_alpha",
    "per_beta": "per_beta",
    "per_eps": "per_eps",
    "is_weights": "per_is_weights",
    "actor_lr": "actor_lr",
    "critic_lr": "critic_lr",
    "tau": "tau",
    "gamma": "gamma",
    "expl_noise": "expl_noise",
    "policy_noise": "policy_noise",
    "noise_clip": "noise_clip",
    "policy_delay": "policy_delay",
    "hidden": "hidden",
    "buffer_size": "buffer_capacity",
    "eval_interval": "eval_interval",
    "eval_episodes": "eval_episodes",
    "out": "out_dir",
    "log_wallclock": "log_wallclock",
    "save_buffer": "save_buffer",
}


def _hidden(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(h) for h in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return sizes


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override its keys")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--replay", choices=STRATEGIES)
    p.add_argument("--env", choices=sorted(ENVIRONMENTS))
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--warmup", type=int, help="random-action steps before learning starts")
    p.add_argument("--batch", type=int, help="mini-batch size")
    p.add_argument("--candidates", type=int, help="candidate batches per step (klper)")
    p.add_argument("--kl-sigma", type=float, help="variance of the isotropic KL target")
    p.add_argument("--per-alpha", type=float)
    p.add_argument("--per-beta", type=float)
    p.add_argument("--per-eps", type=float)
    p.add_argument("--is-weights", action=argparse.BooleanOptionalAction, default=None,
                   help="apply PER importance-sampling weights")
    p.add_argument("--actor-lr", type=float)
    p.add_argument("--critic-lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--expl-noise", type=float)
    p.add_argument("--policy-noise", type=float, help="TD3 target smoothing noise std")
    p.add_argument("--noise-clip", type=float)
    p.add_argument("--policy-delay", type=int)
    p.add_argument("--hidden", type=_hidden, help="hidden layer sizes, e.g. 400,300")
    p.add_argument("--buffer-size", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--log-wallclock", action="store_true", default=None,
                   help="record elapsed time (makes metrics files non-reproducible)")
    p.add_argument("--save-buffer", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="klper", description="DDPG/TD3 with uniform, PER and KL-scored replay")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration")
    p_train.add_argument("--seed", type=int)
    _add_run_options(p_train)

    p_cmp = sub.add_parser("compare", help="run a replay-strategy x seed matrix")
    p_cmp.add_argument("--seeds", default="0..4", help="'0..4' or '0,1,2'")
    p_cmp.add_argument("--strategies", default=",".join(STRATEGIES))
    p_cmp.add_argument("--jobs", type=int, default=1, help="worker processes (cells share nothing)")
    _add_run_options(p_cmp)

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--env", choices=sorted(ENVIRONMENTS), default="pendulum")
    p_eval.add_argument("--episodes", type=int, default=5)
    p_eval.add_argument("--seed", type=int, default=0)
    return parser


def _config_from(args: argparse.Namespace, parser: argparse.ArgumentParser) -> RunConfig:
    values = {}
    try:
        if args.config:
            values.update(load_config_file(args.config))
        for flag, key in _RUN_FLAGS.items():
            v = getattr(args, flag, None)
            if v is not None:
                values[key] = v
        return RunConfig(**values).resolved()
    except ConfigError as exc:
        parser.error(str(exc))


def cli_parse(argv=None) -> RunConfig:
    """Parse a ``train`` or ``compare`` command line into a resolved :class:`RunConfig`."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval":
        parser.error("eval does not produce a run configuration")
    return _config_from(args, parser)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    if args.command == "eval":
        if args.episodes < 1:
            parser.error("--episodes must be >= 1")
        try:
            agent, _ = load_agent(args.checkpoint)
        except (SnapshotError, OSError) as exc:
            parser.error(str(exc))
        env = make_env(args.env)
        if (env.spec.state_dim, env.spec.action_dim) != (agent.state_dim, agent.action_dim):
            parser.error(f"checkpoint dimensions do not match environment {args.env}")
        rng = np.random.default_rng(args.seed)
        mean, returns = evaluate(agent, env, args.episodes, rng)
        print(f"mean_return={mean!r} std={return_std(returns)!r} episodes={args.episodes}")
        return EXIT_OK

    cfg = _config_from(args, parser)
    try:
        if args.command == "train":
            result = train(cfg)
            print(result.metrics_path)
        else:
            strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
            bad = [s for s in strategies if s not in STRATEGIES]
            if bad:
                parser.error(f"unknown strategies {bad}")
            try:
                seeds = parse_seeds(args.seeds)
            except ConfigError as exc:
                parser.error(str(exc))
            for path in compare(cfg, seeds, strategies, jobs=args.jobs):
                print(path)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
