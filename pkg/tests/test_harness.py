"""Harness: strict configs, aggregation oracle, checkpoint evaluation,
multi-run orchestration with manifest, CLI surface."""

import json
from pathlib import Path

import numpy as np
import pytest

from afguide.agent import CSV_HEADER
from afguide.cli import main as cli_main
from afguide.harness import (
    ConfigError,
    ExperimentConfig,
    aggregate_report,
    content_hash,
    evaluate_checkpoint,
    run_experiment,
)


def _write_curve(path, rows):
    lines = [CSV_HEADER]
    for step, ret, succ in rows:
        lines.append(f"{step},1,{ret:.6f},{succ:.6f},0.1,0.1,0.1,1.0,-0.5")
    Path(path).write_text("\n".join(lines) + "\n")


# -- config -------------------------------------------------------------------


def _base_config(tmp_path, **kw):
    d = dict(env="corridor", total_steps=100, seeds=[0, 1], out_dir=str(tmp_path / "out"),
             modes=["sac"])
    d.update(kw)
    return d


def test_unknown_top_level_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        ExperimentConfig.from_dict(_base_config(tmp_path, learning_rate=1e-3))


def test_unknown_nested_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        ExperimentConfig.from_dict(_base_config(tmp_path, agent={"lr": 1e-3, "lrr": 2}))
    with pytest.raises(ConfigError, match="unknown keys"):
        ExperimentConfig.from_dict(_base_config(tmp_path, planner={"ctx": 4}))


def test_duplicate_seeds_rejected(tmp_path):
    with pytest.raises(ConfigError, match="distinct"):
        ExperimentConfig.from_dict(_base_config(tmp_path, seeds=[3, 3]))


def test_unknown_mode_and_env_rejected(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_base_config(tmp_path, modes=["ppo"]))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_base_config(tmp_path, env="hopper"))


def test_default_rtg_resolution(tmp_path):
    cfg = ExperimentConfig.from_dict(_base_config(tmp_path))
    assert cfg.resolved_rtg() == 150.0
    cfg = ExperimentConfig.from_dict(_base_config(tmp_path, env="pointmaze-sparse"))
    assert cfg.resolved_rtg() == 1.0
    cfg = ExperimentConfig.from_dict(_base_config(tmp_path, initial_rtg=7.0))
    assert cfg.resolved_rtg() == 7.0


# -- aggregation -----------------------------------------------------------------


def test_aggregate_single_file_mean_is_value_std_zero(tmp_path):
    p = tmp_path / "a.csv"
    _write_curve(p, [(1000, 5.0, 0.5), (2000, 7.0, 1.0)])
    rows = aggregate_report([p])
    assert rows[0]["return_mean"] == 5.0 and rows[0]["return_std"] == 0.0
    assert rows[1]["success_median"] == 1.0 and rows[1]["n"] == 1


def test_aggregate_two_values_population_std(tmp_path):
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    _write_curve(pa, [(1000, 2.0, 0.0)])
    _write_curve(pb, [(1000, 4.0, 1.0)])
    rows = aggregate_report([pa, pb])
    assert rows[0]["return_mean"] == 3.0
    assert rows[0]["return_std"] == 1.0  # population std of {2, 4}
    assert rows[0]["success_mean"] == 0.5


def test_aggregate_matches_hand_computed_values(tmp_path, rng):
    data = rng.normal(size=(4, 3))  # 4 seeds, 3 eval steps
    succ = rng.random(size=(4, 3))
    paths = []
    for i in range(4):
        p = tmp_path / f"s{i}.csv"
        _write_curve(p, [(1000 * (j + 1), data[i, j], succ[i, j]) for j in range(3)])
        paths.append(p)
    rows = aggregate_report(paths, out_path=tmp_path / "summary.csv")
    # written values round-trip through the 6-decimal csv format
    data6 = np.round(data, 6)
    succ6 = np.round(succ, 6)
    for j, row in enumerate(rows):
        assert abs(row["return_mean"] - data6[:, j].mean()) < 1e-12
        assert abs(row["return_std"] - data6[:, j].std()) < 1e-12
        assert abs(row["return_median"] - np.median(data6[:, j])) < 1e-12
        assert abs(row["success_mean"] - succ6[:, j].mean()) < 1e-12
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("step,n,return_mean")
    assert len(summary) == 4


def test_aggregate_rejects_header_mismatch(tmp_path):
    good = tmp_path / "good.csv"
    _write_curve(good, [(1000, 1.0, 0.0)])
    bad = tmp_path / "bad.csv"
    bad.write_text("step,reward\n1,2\n")
    with pytest.raises(ValueError, match="bad.csv"):
        aggregate_report([good, bad])


def test_aggregate_requires_input():
    with pytest.raises(ValueError):
        aggregate_report([])


# -- checkpoint evaluation ----------------------------------------------------------


@pytest.fixture(scope="module")
def sac_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sacrun")
    cfg = ExperimentConfig.from_dict({
        "env": "corridor",
        "total_steps": 150,
        "seeds": [0, 1],
        "out_dir": str(out),
        "modes": ["sac"],
        "agent": {"hidden_dim": 16, "n_hidden_layers": 1, "batch_size": 8,
                  "warmup_steps": 20, "eval_every": 50, "eval_episodes": 2},
    })
    manifest = run_experiment(cfg)
    return out, manifest


def test_run_experiment_outputs(sac_run):
    out, manifest = sac_run
    assert (out / "manifest.json").exists()
    assert len(manifest["runs"]) == 2
    assert all(r["status"] == "ok" for r in manifest["runs"])
    for seed in (0, 1):
        assert (out / f"sac_seed{seed}.csv").exists()
        assert (out / f"sac_seed{seed}_agent.ckpt").exists()
    listed = set(manifest["outputs"])
    on_disk = {p.name for p in out.iterdir()}
    assert on_disk == listed  # manifest lists exactly what the run wrote
    assert manifest["planners"] == {"planner": "none"}


def test_evaluate_checkpoint_deterministic(sac_run):
    out, _ = sac_run
    ckpt = out / "sac_seed0_agent.ckpt"
    a = evaluate_checkpoint(ckpt, "corridor", n_episodes=3, seed=9)
    b = evaluate_checkpoint(ckpt, "corridor", n_episodes=3, seed=9)
    assert a == b
    with pytest.raises(ValueError):
        evaluate_checkpoint(ckpt, "corridor", n_episodes=0, seed=9)
    with pytest.raises(ValueError):
        evaluate_checkpoint(ckpt, "pointmaze-sparse", n_episodes=2, seed=9)


def test_rerun_identical_bytes(tmp_path):
    outs = []
    for run in range(2):
        out = tmp_path / f"run{run}"
        cfg = ExperimentConfig.from_dict({
            "env": "corridor",
            "total_steps": 120,
            "seeds": [3],
            "out_dir": str(out),
            "modes": ["sac"],
            "agent": {"hidden_dim": 16, "n_hidden_layers": 1, "batch_size": 8,
                      "warmup_steps": 20, "eval_every": 40, "eval_episodes": 2},
        })
        run_experiment(cfg)
        outs.append(out)
    a = (outs[0] / "sac_seed3.csv").read_bytes()
    b = (outs[1] / "sac_seed3.csv").read_bytes()
    assert a == b


def test_failed_seed_recorded_others_run(tmp_path, monkeypatch):
    out = tmp_path / "out"
    cfg = ExperimentConfig.from_dict({
        "env": "corridor",
        "total_steps": 60,
        "seeds": [0, 1],
        "out_dir": str(out),
        "modes": ["sac"],
        "agent": {"hidden_dim": 16, "n_hidden_layers": 1, "batch_size": 8,
                  "warmup_steps": 10, "eval_every": 30, "eval_episodes": 1},
    })
    import afguide.harness as hz

    real_train = hz.train

    def flaky(agent, env, planner, total_steps, seed, **kw):
        if seed == 0:
            raise RuntimeError("boom")
        return real_train(agent, env, planner, total_steps, seed, **kw)

    monkeypatch.setattr(hz, "train", flaky)
    manifest = run_experiment(cfg)
    status = {r["seed"]: r["status"] for r in manifest["runs"]}
    assert status == {0: "failed", 1: "ok"}
    assert "boom" in [r["error"] for r in manifest["runs"] if r["seed"] == 0][0]
    assert (out / "sac_seed1.csv").exists()


def test_guided_mode_without_dataset_rejected(tmp_path):
    cfg = ExperimentConfig.from_dict(_base_config(tmp_path, modes=["guided"]))
    with pytest.raises(ConfigError, match="dataset"):
        run_experiment(cfg)


def test_content_hash_stable(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(b"hello")
    assert content_hash(p) == content_hash(p)
    q = tmp_path / "g.bin"
    q.write_bytes(b"hellp")
    assert content_hash(p) != content_hash(q)


# -- cli ----------------------------------------------------------------------------


def test_cli_gen_data_and_report_round_trip(tmp_path, capsys):
    data = tmp_path / "d.afd"
    rc = cli_main(["gen-data", "--env", "corridor", "--policy", "random",
                   "--episodes", "3", "--seed", "0", "--out", str(data)])
    assert rc == 0
    assert data.exists()

    curve = tmp_path / "c.csv"
    _write_curve(curve, [(1000, 2.0, 0.0), (2000, 4.0, 0.5)])
    summary = tmp_path / "summary.csv"
    rc = cli_main(["report", "--in", str(curve), "--out", str(summary)])
    assert rc == 0
    assert summary.read_text().splitlines()[0].startswith("step,n,")


def test_cli_train_sac_smoke(tmp_path):
    out = tmp_path / "run"
    agent_cfg = tmp_path / "agent.json"
    agent_cfg.write_text(json.dumps({
        "hidden_dim": 16, "n_hidden_layers": 1, "batch_size": 8,
        "warmup_steps": 10, "eval_every": 30, "eval_episodes": 1,
    }))
    rc = cli_main(["train", "--env", "corridor", "--mode", "sac", "--steps", "60",
                   "--seed", "0", "--out", str(out), "--agent-config", str(agent_cfg)])
    assert rc == 0
    assert (out / "sac_seed0.csv").exists()
    assert (out / "sac_seed0_agent.ckpt").exists()


def test_cli_failure_is_nonzero_with_diagnostic(tmp_path, capsys):
    rc = cli_main(["report", "--in", str(tmp_path / "missing.csv"),
                   "--out", str(tmp_path / "s.csv")])
    assert rc == 1
    assert "report" in capsys.readouterr().err


def test_cli_guided_requires_planner(tmp_path):
    with pytest.raises(SystemExit):
        cli_main(["train", "--env", "corridor", "--mode", "guided", "--steps", "10",
                  "--seed", "0", "--out", str(tmp_path)])
