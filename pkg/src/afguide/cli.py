"""Command-line entry point.

    afguide gen-data  --env corridor --policy medium --episodes 100 --seed 0 --out data.afd
    afguide pretrain  --data data.afd --config planner.json --out planner.ckpt
    afguide train     --env corridor --mode guided --afdt planner.ckpt \
                      --beta 3.0 --rtg 150 --steps 30000 --seed 0 --out runs/
    afguide report    --in runs/*.csv --out summary.csv
    afguide experiment --config experiment.json

Exit code 0 on success; 1 with a one-line diagnostic on stderr otherwise.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afguide")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll a scripted policy and save the "
                                        "action-free trajectories")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", required=True, choices=("expert", "medium", "random"))
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="train the next-state planner offline")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON with planner-config overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="online training for one mode and seed")
    p.add_argument("--env", required=True)
    p.add_argument("--mode", required=True,
                   choices=("guided", "sac", "reward-mix", "imitation-guided"))
    p.add_argument("--afdt", help="planner checkpoint (guided modes)")
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--rtg", type=float, help="initial return-to-go "
                                             "(default: per-env value)")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--agent-config", help="JSON with agent-config overrides")

    p = sub.add_parser("report", help="aggregate learning curves across seeds")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="multi-mode, multi-seed run from one "
                                          "config file")
    p.add_argument("--config", required=True)
    return parser


def _cmd_gen_data(args) -> None:
    from .data import generate_behavior_dataset, save_dataset

    ds = generate_behavior_dataset(args.env, args.policy, args.episodes, args.seed)
    save_dataset(ds, args.out)
    returns = ds.episode_returns()
    print(f"wrote {args.out}: {len(ds)} episodes, {ds.n_states} states, "
          f"return mean {returns.mean():.3f} min {returns.min():.3f} "
          f"max {returns.max():.3f}")


def _cmd_pretrain(args) -> None:
    from .data import load_dataset
    from .harness import _strict_kwargs
    from .planner import PlannerConfig, pretrain, write_planner_checkpoint

    dataset = load_dataset(args.data)
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        _strict_kwargs(PlannerConfig, overrides, args.config)
    config = PlannerConfig(**overrides)
    result = pretrain(dataset, config, seed=args.seed, log_every=1)
    write_planner_checkpoint(args.out, result.model, dataset.norm_stats, result)
    print(f"wrote {args.out}: selected step {result.selected_step}, "
          f"val L1 {result.val_losses[result.selected_step]:.6f}")


def _cmd_train(args) -> None:
    from .agent import GuidedSacAgent, save_agent, train, write_learning_curve
    from .envs import make_env
    from .harness import DEFAULT_INITIAL_RTG, _strict_kwargs
    from .agent import AgentConfig
    from .planner import load_planner

    mode = args.mode.replace("-", "_")
    overrides = {}
    if args.agent_config:
        overrides = json.loads(Path(args.agent_config).read_text())
        _strict_kwargs(AgentConfig, {**overrides, "mode": mode}, args.agent_config)
    config = AgentConfig(mode=mode, beta=args.beta, **overrides)
    env = make_env(args.env)
    planner = None
    if config.uses_planner:
        if not args.afdt:
            raise SystemExit(f"mode {args.mode} needs --afdt <planner checkpoint>")
        planner = load_planner(args.afdt)
    rtg = args.rtg if args.rtg is not None else DEFAULT_INITIAL_RTG[args.env]
    agent = GuidedSacAgent(env.spec.state_dim, env.spec.action_dim, config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = train(agent, env, planner, args.steps, args.seed, initial_rtg=rtg)
    curve = out_dir / f"{mode}_seed{args.seed}.csv"
    write_learning_curve(curve, rows)
    ckpt = out_dir / f"{mode}_seed{args.seed}_agent.ckpt"
    save_agent(agent, ckpt)
    last = rows[-1] if rows else {"eval_return": float("nan"), "success_rate": float("nan")}
    print(f"wrote {curve} and {ckpt}: final eval return "
          f"{last['eval_return']:.3f}, success {last['success_rate']:.2f}")


def _cmd_report(args) -> None:
    from .harness import aggregate_report

    paths: list[str] = []
    for pattern in args.inputs:
        hits = sorted(glob.glob(pattern))
        paths.extend(hits if hits else [pattern])
    rows = aggregate_report(paths, out_path=args.out)
    print(f"wrote {args.out}: {len(rows)} evaluation steps aggregated from "
          f"{len(paths)} curves")


def _cmd_experiment(args) -> None:
    from .harness import ExperimentConfig, run_experiment

    config = ExperimentConfig.from_json(args.config)
    manifest = run_experiment(config)
    failed = [r for r in manifest["runs"] if r["status"] != "ok"]
    print(f"wrote {Path(config.out_dir) / 'manifest.json'}: "
          f"{len(manifest['runs'])} runs, {len(failed)} failed")
    if failed:
        raise SystemExit(f"{len(failed)} run(s) failed; see manifest")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "pretrain": _cmd_pretrain,
        "train": _cmd_train,
        "report": _cmd_report,
        "experiment": _cmd_experiment,
    }
    try:
        handlers[args.command](args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"afguide {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
