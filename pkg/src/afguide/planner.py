"""Return-conditioned next-state planner.

A causal transformer is trained on action-free windows to predict each
step's state change; at rollout time it plans the next state from the last
K observed states and the remaining desired return. Two training modes:

  udrl       condition on returns-to-go (plans can be steered by the
             desired return)
  imitation  the return channel is fed a constant zero, so the model is a
             pure next-state regressor on past states

Token stream per step t is (state_t, return_t); the prediction for step
t+1 is decoded from the return token of step t, which has seen everything
up to and including step t. The head outputs a state delta that is added
back onto the current state.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    ActionFreeDataset,
    NormStats,
    WindowBatch,
    enumerate_windows,
    sample_windows,
)
from .nn import Embedding, LayerNorm, Linear, Module, Trunk, TransformerSpec, adamw
from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint

MODES = ("udrl", "imitation")
DEFAULT_CHECKPOINT_STEPS = (3000, 5000, 10000, 15000, 30000, 50000)


@dataclass
class PlannerConfig:
    context_steps: int = 20  # K: steps of (state, return) context
    transformer: TransformerSpec = field(default_factory=TransformerSpec)
    rtg_scale: float = 1.0  # divisor on returns before embedding; use 1000
    # when dataset returns run in the thousands
    mode: str = "udrl"
    train_steps: int = 50_000
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-4
    checkpoint_steps: tuple = DEFAULT_CHECKPOINT_STEPS
    max_timestep: int = 300
    val_fraction: float = 0.1
    val_window_cap: int = 2048

    def __post_init__(self):
        if isinstance(self.transformer, dict):
            self.transformer = TransformerSpec(**self.transformer)
        if isinstance(self.checkpoint_steps, list):
            self.checkpoint_steps = tuple(self.checkpoint_steps)
        if self.context_steps < 1:
            raise ValueError("context_steps must be >= 1")
        if self.rtg_scale <= 0:
            raise ValueError("rtg_scale must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.transformer.max_tokens < 2 * self.context_steps:
            self.transformer = replace(self.transformer, max_tokens=2 * self.context_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoint_steps"] = list(self.checkpoint_steps)
        return d


class StatePlanner(Module):
    """Embedders + trunk + delta head."""

    def __init__(self, state_dim: int, config: PlannerConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.state_dim = state_dim
        d = config.transformer.d_embed
        self.embed_state = Linear(state_dim, d, rng, dtype, init="trunc_normal")
        self.embed_return = Linear(1, d, rng, dtype, init="trunc_normal")
        self.embed_step = Embedding(config.max_timestep + 1, d, rng, dtype)
        self.embed_norm = LayerNorm(d, dtype)
        self.trunk = Trunk(config.transformer, rng, dtype)
        self.head = Linear(d, state_dim, rng, dtype, init="trunc_normal")

    @property
    def dtype(self):
        return self.head.w.data.dtype

    def forward(self, states, rtgs, timesteps, valid_mask=None,
                train: bool = False, rng: np.random.Generator | None = None):
        """Predicted next states (B, K, S); see forward_delta."""
        return self.forward_delta(states, rtgs, timesteps, valid_mask, train, rng)[0]

    def forward_delta(self, states, rtgs, timesteps, valid_mask=None,
                      train: bool = False, rng: np.random.Generator | None = None):
        """Returns (predictions, deltas); predictions = states + deltas."""
        dtype = self.dtype
        states = np.asarray(states, dtype=dtype)
        rtgs = np.asarray(rtgs, dtype=np.float64)
        timesteps = np.asarray(timesteps, dtype=np.int64)
        B, K, S = states.shape
        if S != self.state_dim:
            raise ValueError(f"state dim {S} != model dim {self.state_dim}")
        if rtgs.shape != (B, K) or timesteps.shape != (B, K):
            raise ValueError("states/rtgs/timesteps shapes disagree")
        if timesteps.min() < 0 or timesteps.max() > self.config.max_timestep:
            raise ValueError(
                f"timesteps outside embedding range [0, {self.config.max_timestep}]"
            )
        if valid_mask is None:
            valid_mask = np.ones((B, K), dtype=bool)

        if self.config.mode == "imitation":
            rtg_in = np.zeros((B, K, 1), dtype=dtype)
        else:
            rtg_in = (rtgs / self.config.rtg_scale)[:, :, None].astype(dtype)

        ts = T.embedding(self.embed_step.table, timesteps)
        s_tok = T.add(self.embed_state(T.Tensor(states)), ts)
        r_tok = T.add(self.embed_return(T.Tensor(rtg_in)), ts)
        tokens = self.embed_norm(T.interleave_steps(s_tok, r_tok))
        pad = np.repeat(valid_mask, 2, axis=1)
        h = self.trunk(tokens, pad_mask=pad, train=train, rng=rng)
        delta = self.head(h[:, 1::2, :])
        return T.add(T.Tensor(states), delta), delta


def delta_loss(model: StatePlanner, batch: WindowBatch, train: bool = False,
               rng: np.random.Generator | None = None):
    """Masked L1 on predicted state changes.

    Mean over in-episode positions (the last step of an episode has no
    successor and is excluded) of the per-dimension absolute error."""
    _, delta = model.forward_delta(
        batch.states, batch.rtgs, batch.timesteps, batch.valid_mask, train, rng
    )
    dtype = model.dtype
    target = batch.target_delta.astype(dtype)
    mask = batch.loss_mask[:, :, None].astype(dtype)
    n = int(batch.loss_mask.sum())
    if n == 0:
        raise ValueError("batch has no positions with successors")
    resid = T.sub(delta, T.Tensor(target))
    loss = T.scale(T.tsum(T.mul(T.absolute(resid), T.Tensor(mask))),
                   1.0 / (n * model.state_dim))
    min_abs_resid = float(np.abs(resid.data[batch.loss_mask]).min())
    return loss, min_abs_resid


def train_step(model: StatePlanner, batch: WindowBatch, optimizer,
               rng: np.random.Generator) -> float:
    model.zero_grad()
    loss, _ = delta_loss(model, batch, train=True, rng=rng)
    value = float(loss.data)
    loss.backward()  # raises on non-finite loss, aborting the step
    optimizer.step()
    return value


def evaluate_l1(model: StatePlanner, batch: WindowBatch) -> float:
    with T.no_grad():
        loss, _ = delta_loss(model, batch, train=False)
    return float(loss.data)


# -- pretraining --------------------------------------------------------------


@dataclass
class PretrainResult:
    model: StatePlanner
    selected_step: int
    val_losses: dict[int, float]
    log_rows: list[tuple[int, float, float]]  # (step, train_loss, val_loss)


def _holdout_split(n: int, fraction: float, rng: np.random.Generator):
    if n < 2:
        return np.arange(n), np.arange(n)
    n_val = max(1, round(fraction * n))
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def pretrain(dataset: ActionFreeDataset, config: PlannerConfig, seed: int,
             log_every: int = 0) -> PretrainResult:
    """Train for config.train_steps, snapshot at the checkpoint steps, and
    return the snapshot with the lowest held-out L1 (ties: earliest)."""
    ss = np.random.SeedSequence([seed, 0xAFD])
    init_rng, sample_rng, drop_rng, val_rng = (
        np.random.default_rng(c) for c in ss.spawn(4)
    )
    train_idx, val_idx = _holdout_split(len(dataset), config.val_fraction, init_rng)
    train_sub = ActionFreeDataset([dataset.trajectories[i] for i in train_idx])
    val_batch = enumerate_windows(dataset, val_idx, config.context_steps,
                                  config.val_window_cap, val_rng)

    model = StatePlanner(dataset.state_dim, config, init_rng)
    optimizer = adamw(model.params(), lr=config.lr, weight_decay=config.weight_decay)

    marks = sorted({s for s in config.checkpoint_steps if s <= config.train_steps}
                   | {config.train_steps})
    snapshots: dict[int, dict[str, np.ndarray]] = {}
    val_losses: dict[int, float] = {}
    log_rows: list[tuple[int, float, float]] = []
    running, n_running = 0.0, 0

    for step in range(1, config.train_steps + 1):
        batch = sample_windows(train_sub, config.batch_size, config.context_steps,
                               sample_rng)
        running += train_step(model, batch, optimizer, drop_rng)
        n_running += 1
        if step in marks:
            val = evaluate_l1(model, val_batch)
            val_losses[step] = val
            snapshots[step] = {k: v.copy() for k, v in model.state_arrays().items()}
            log_rows.append((step, running / n_running, val))
            running, n_running = 0.0, 0
            if log_every:
                print(f"[pretrain] step {step}: val L1 {val:.6f}")

    selected = min(marks, key=lambda s: (val_losses[s], s))
    for name, param in model.named_params().items():
        param.data = snapshots[selected][name]
        param.grad = None
    return PretrainResult(model, selected, val_losses, log_rows)


def write_training_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "val_loss"])
        for step, train_loss, val_loss in rows:
            writer.writerow([step, f"{train_loss:.8f}", f"{val_loss:.8f}"])


# -- rollout-time pieces --------------------------------------------------------


class PlannerContext:
    """Rolling window of the last K observed steps plus the remaining
    desired return. The return decrements by the observed environment
    reward on every update."""

    def __init__(self, context_steps: int):
        self.K = context_steps
        self.states: deque = deque(maxlen=context_steps)
        self.rtgs: deque = deque(maxlen=context_steps)
        self.timesteps: deque = deque(maxlen=context_steps)
        self.rtg = 0.0
        self.t = 0

    def reset(self, state, initial_rtg: float):
        self.states.clear()
        self.rtgs.clear()
        self.timesteps.clear()
        self.rtg = float(initial_rtg)
        self.t = 0
        self.states.append(np.asarray(state, dtype=np.float64))
        self.rtgs.append(self.rtg)
        self.timesteps.append(0)

    def update(self, next_state, env_reward: float):
        if not self.states:
            raise RuntimeError("reset() before update()")
        self.rtg = self.rtg - float(env_reward)
        self.t += 1
        self.states.append(np.asarray(next_state, dtype=np.float64))
        self.rtgs.append(self.rtg)
        self.timesteps.append(self.t)

    def __len__(self) -> int:
        return len(self.states)


class GuidePlanner:
    """Frozen planner + the dataset statistics the guiding signal needs."""

    def __init__(self, model: StatePlanner, norm_stats: NormStats):
        self.model = model
        self.norm_stats = norm_stats

    @property
    def sigma_divisor(self) -> np.ndarray:
        return self.norm_stats.divisor

    def plan_next_state(self, ctx: PlannerContext) -> np.ndarray:
        """Prediction for the step after the latest context entry."""
        if len(ctx) == 0:
            raise ValueError("planner context is empty")
        K = self.model.config.context_steps
        n = len(ctx)
        S = self.model.state_dim
        states = np.zeros((1, K, S), dtype=np.float32)
        rtgs = np.zeros((1, K), dtype=np.float64)
        ts = np.zeros((1, K), dtype=np.int64)
        valid = np.zeros((1, K), dtype=bool)
        states[0, K - n :] = np.stack(list(ctx.states))
        rtgs[0, K - n :] = list(ctx.rtgs)
        ts[0, K - n :] = list(ctx.timesteps)
        valid[0, K - n :] = True
        with T.no_grad():
            pred = self.model.forward(states, rtgs, ts, valid)
        return pred.data[0, -1].astype(np.float64)


# -- planner checkpoint io --------------------------------------------------------


def write_planner_checkpoint(path, model: StatePlanner, norm_stats: NormStats,
                             result: PretrainResult | None = None) -> None:
    arrays = dict(model.state_arrays())
    arrays["norm.sigma"] = norm_stats.sigma
    arrays["norm.mean"] = norm_stats.mean
    arrays["norm.flagged"] = norm_stats.flagged.astype(np.float32)
    save_checkpoint(arrays, path)
    sidecar = {
        "kind": "planner",
        "state_dim": model.state_dim,
        "config": model.config.to_dict(),
    }
    if result is not None:
        sidecar["selected_step"] = result.selected_step
        sidecar["val_losses"] = {str(k): v for k, v in result.val_losses.items()}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))
    if result is not None:
        write_training_log(str(path) + ".log.csv", result.log_rows)


def load_planner(path) -> GuidePlanner:
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    if sidecar.get("kind") != "planner":
        raise ValueError(f"{path}: sidecar does not describe a planner checkpoint")
    config = PlannerConfig(**sidecar["config"])
    model = StatePlanner(sidecar["state_dim"], config, np.random.default_rng(0))
    expected = {k: v.shape for k, v in model.state_arrays().items()}
    expected["norm.sigma"] = (model.state_dim,)
    expected["norm.mean"] = (model.state_dim,)
    expected["norm.flagged"] = (model.state_dim,)
    arrays = load_checkpoint(path, expected_shapes=expected)
    for name, param in model.named_params().items():
        param.data = arrays[name]
        param.grad = None
    stats = NormStats(
        sigma=arrays["norm.sigma"].astype(np.float64),
        mean=arrays["norm.mean"].astype(np.float64),
        flagged=arrays["norm.flagged"] > 0.5,
    )
    return GuidePlanner(model, stats)
