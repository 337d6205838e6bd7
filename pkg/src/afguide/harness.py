"""Experiment orchestration: datasets in, pretraining, per-seed training
runs, learning-curve aggregation, and a manifest tying it together.

Configs are strict: unknown keys anywhere in the JSON are a hard error so
a typo cannot silently fall back to a default. Every run goes through the
planner checkpoint on disk (even single-process runs) so results are
byte-identical whether seeds run inline or as parallel workers.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import platform
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, get_backend
from .agent import (
    AgentConfig,
    GuidedSacAgent,
    evaluate_policy,
    load_agent,
    read_learning_curve,
    save_agent,
    train,
    write_learning_curve,
)
from .data import load_dataset
from .envs import ENV_NAMES, make_env
from .planner import PlannerConfig, load_planner, pretrain, write_planner_checkpoint

DEFAULT_INITIAL_RTG = {
    "corridor": 150.0,
    "pointmaze-sparse": 1.0,
    "pointmaze-dense": -50.0,
}


class ConfigError(Exception):
    pass


def default_planner_config(env_name: str, **overrides) -> PlannerConfig:
    """Spec-flavored planner defaults: one transformer block for the small
    maze tasks, three elsewhere."""
    from .nn import TransformerSpec

    n_blocks = 1 if env_name.startswith("pointmaze") else 3
    base = dict(transformer=TransformerSpec(n_blocks=n_blocks),
                max_timestep=make_env(env_name).spec.max_episode_steps)
    base.update(overrides)
    return PlannerConfig(**base)


def _strict_kwargs(cls, d: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return dict(d)


@dataclass
class ExperimentConfig:
    env: str
    total_steps: int
    seeds: list[int]
    out_dir: str
    dataset: str | None = None
    initial_rtg: float | None = None  # None: per-env default
    modes: list[str] = field(default_factory=lambda: ["guided"])
    planner: dict = field(default_factory=dict)  # PlannerConfig overrides
    agent: dict = field(default_factory=dict)  # AgentConfig overrides (minus mode)
    planner_checkpoint: str | None = None
    n_workers: int = 1

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if "mode" in self.agent:
            raise ConfigError("put modes in the top-level 'modes' list, not agent.mode")
        from .agent import MODES

        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = _strict_kwargs(cls, d, "experiment config")
        cfg = cls(**kwargs)
        # validate nested blocks eagerly so typos fail at load time
        _strict_kwargs(PlannerConfig, cfg.planner, "planner config")
        _strict_kwargs(AgentConfig, {**cfg.agent, "mode": "sac"}, "agent config")
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def resolved_rtg(self) -> float:
        if self.initial_rtg is not None:
            return float(self.initial_rtg)
        return DEFAULT_INITIAL_RTG[self.env]

    def agent_config(self, mode: str) -> AgentConfig:
        kwargs = _strict_kwargs(AgentConfig, {**self.agent, "mode": mode}, "agent config")
        return AgentConfig(**kwargs)

    def planner_config(self) -> PlannerConfig:
        base = default_planner_config(self.env)
        merged = {**base.to_dict(), **self.planner}
        return PlannerConfig(**merged)


def content_hash(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _planner_mode_for(mode: str) -> str | None:
    if mode in ("guided", "reward_mix"):
        return "udrl"
    if mode == "imitation_guided":
        return "imitation"
    return None


def _run_one(args) -> dict:
    """One (mode, seed) training run; executed inline or in a worker."""
    cfg_dict, mode, seed, planner_path, rtg0 = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    out_dir = Path(cfg.out_dir)
    record = {"mode": mode, "seed": seed, "status": "ok", "error": None, "files": []}
    try:
        env = make_env(cfg.env)
        planner = load_planner(planner_path) if planner_path else None
        agent = GuidedSacAgent(env.spec.state_dim, env.spec.action_dim,
                               cfg.agent_config(mode), seed)
        rows = train(agent, env, planner, cfg.total_steps, seed, initial_rtg=rtg0)
        curve = out_dir / f"{mode}_seed{seed}.csv"
        write_learning_curve(curve, rows)
        ckpt = out_dir / f"{mode}_seed{seed}_agent.ckpt"
        save_agent(agent, ckpt)
        record["files"] = [curve.name, ckpt.name, ckpt.name + ".json"]
    except Exception as exc:  # a failed seed must not sink the others
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def run_experiment(config: ExperimentConfig) -> dict:
    """Pretrain (when a mode needs a planner), train every (mode, seed),
    aggregate nothing: emit per-run CSVs plus a manifest."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rtg0 = config.resolved_rtg()

    manifest: dict = {
        "config": _config_echo(config),
        "resolved_initial_rtg": rtg0,
        "inputs": {},
        "planners": {},
        "runs": [],
        "outputs": [],
        "versions": {
            "afguide": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernel_backend": get_backend(),
        },
    }

    planner_modes_needed = sorted({m for m in
                                   (_planner_mode_for(mode) for mode in config.modes)
                                   if m is not None})
    planner_paths: dict[str, str] = {}
    supplied_mode = None
    if config.planner_checkpoint:
        sidecar = json.loads(Path(config.planner_checkpoint + ".json").read_text())
        supplied_mode = sidecar["config"]["mode"]
        manifest["inputs"]["planner_checkpoint"] = {
            "path": config.planner_checkpoint,
            "sha256": content_hash(config.planner_checkpoint),
        }

    dataset = None
    for pmode in planner_modes_needed:
        if supplied_mode == pmode:
            planner_paths[pmode] = config.planner_checkpoint
            continue
        if config.dataset is None:
            raise ConfigError(
                f"modes {config.modes} need a {pmode} planner but no dataset or "
                f"matching checkpoint was supplied"
            )
        if dataset is None:
            dataset = load_dataset(config.dataset)
            manifest["inputs"]["dataset"] = {
                "path": config.dataset,
                "sha256": content_hash(config.dataset),
            }
        pcfg_kwargs = {**config.planner_config().to_dict(), "mode": pmode}
        pcfg = PlannerConfig(**pcfg_kwargs)
        result = pretrain(dataset, pcfg, seed=config.seeds[0])
        path = out_dir / f"planner_{pmode}.ckpt"
        write_planner_checkpoint(path, result.model, dataset.norm_stats, result)
        planner_paths[pmode] = str(path)
        manifest["planners"][pmode] = {
            "path": path.name,
            "selected_step": result.selected_step,
            "val_losses": {str(k): v for k, v in result.val_losses.items()},
        }
        manifest["outputs"] += [path.name, path.name + ".json", path.name + ".log.csv"]
    if not planner_modes_needed:
        manifest["planners"] = {"planner": "none"}

    jobs = [
        (_config_echo(config), mode, seed,
         planner_paths.get(_planner_mode_for(mode)), rtg0)
        for mode in config.modes
        for seed in config.seeds
    ]
    if config.n_workers > 1:
        # fork: workers rebuild everything from the job tuple; BLAS is
        # single-threaded so no thread state crosses the fork
        with multiprocessing.get_context("fork").Pool(config.n_workers) as pool:
            records = pool.map(_run_one, jobs)
    else:
        records = [_run_one(j) for j in jobs]

    manifest["runs"] = records
    for rec in records:
        manifest["outputs"] += rec["files"]
    manifest["outputs"].append("manifest.json")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _config_echo(config: ExperimentConfig) -> dict:
    return {
        "env": config.env,
        "total_steps": config.total_steps,
        "seeds": list(config.seeds),
        "out_dir": str(config.out_dir),
        "dataset": config.dataset,
        "initial_rtg": config.initial_rtg,
        "modes": list(config.modes),
        "planner": dict(config.planner),
        "agent": dict(config.agent),
        "planner_checkpoint": config.planner_checkpoint,
        "n_workers": config.n_workers,
    }


# -- reporting -----------------------------------------------------------------------


SUMMARY_HEADER = ("step,n,return_mean,return_std,return_median,"
                  "success_mean,success_std,success_median")


def aggregate_report(csv_paths, out_path=None) -> list[dict]:
    """Cross-seed aggregation: per evaluation step, the mean, population
    std, and median of eval_return and success_rate."""
    if not csv_paths:
        raise ValueError("no learning-curve files given")
    curves = []
    for p in csv_paths:
        try:
            curves.append(read_learning_curve(p))
        except ValueError as exc:
            raise ValueError(f"cannot aggregate {p}: {exc}") from exc
    steps = sorted({row["step"] for curve in curves for row in curve})
    by_step = {s: {"returns": [], "successes": []} for s in steps}
    for curve in curves:
        for row in curve:
            by_step[row["step"]]["returns"].append(row["eval_return"])
            by_step[row["step"]]["successes"].append(row["success_rate"])
    out = []
    for s in steps:
        r = np.array(by_step[s]["returns"])
        k = np.array(by_step[s]["successes"])
        out.append({
            "step": s,
            "n": len(r),
            "return_mean": float(r.mean()),
            "return_std": float(r.std()),  # population
            "return_median": float(np.median(r)),
            "success_mean": float(k.mean()),
            "success_std": float(k.std()),
            "success_median": float(np.median(k)),
        })
    if out_path is not None:
        lines = [SUMMARY_HEADER]
        for row in out:
            lines.append(
                f"{row['step']},{row['n']},"
                f"{row['return_mean']:.6f},{row['return_std']:.6f},"
                f"{row['return_median']:.6f},{row['success_mean']:.6f},"
                f"{row['success_std']:.6f},{row['success_median']:.6f}"
            )
        Path(out_path).write_text("\n".join(lines) + "\n")
    return out


def evaluate_checkpoint(ckpt_path, env_name: str, n_episodes: int,
                        seed: int) -> tuple[float, float]:
    """Deterministic evaluation of a saved agent; returns
    (mean return, success rate)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = make_env(env_name)
    agent = load_agent(ckpt_path)
    if agent.state_dim != env.spec.state_dim or agent.action_dim != env.spec.action_dim:
        raise ValueError(
            f"checkpoint dims (s={agent.state_dim}, a={agent.action_dim}) do not "
            f"match env {env_name!r} (s={env.spec.state_dim}, a={env.spec.action_dim})"
        )
    return evaluate_policy(agent.policy, env_name, n_episodes, seed)
