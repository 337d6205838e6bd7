"""Action-free trajectory datasets.

A trajectory is a (states, rewards) pair with one reward slot per state;
`rewards[t]` is the reward of the transition leaving `states[t]`, and the
final slot is 0 (no transition leaves the last state). Returns-to-go are
suffix sums of the rewards, precomputed per trajectory and cached.

File format (little-endian):

    magic   4 bytes  b"AFD1"
    version u16      currently 1
    state_dim u32, n_trajectories u32
    per trajectory: T u32, states T*state_dim f32 row-major, rewards T f32

Datasets are immutable after construction; window sampling takes the
caller's own Generator so concurrent readers never share RNG state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import ScriptedPolicy, make_env

MAGIC = b"AFD1"
VERSION = 1
SIGMA_FLOOR = 1e-6


class DatasetFormatError(Exception):
    pass


class BadDatasetMagicError(DatasetFormatError):
    pass


class BadDatasetVersionError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


class NonFinitePayloadError(DatasetFormatError):
    pass


@dataclass
class Trajectory:
    states: np.ndarray  # (T, state_dim) float32
    rewards: np.ndarray  # (T,) float32

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        self.rewards = np.asarray(self.rewards, dtype=np.float32)
        if self.states.ndim != 2:
            raise ValueError("states must be (T, state_dim)")
        if self.rewards.shape != (self.states.shape[0],):
            raise ValueError("states and rewards lengths differ")
        if len(self) < 2:
            raise ValueError("trajectory needs at least 2 steps")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.rewards))):
            raise ValueError("non-finite trajectory payload")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum(dtype=np.float64))


@dataclass
class NormStats:
    """Per-dimension population statistics over every state in a dataset.

    Dimensions whose standard deviation is below SIGMA_FLOOR are flagged;
    the plan-tracking reward uses divisor 1 for them instead of the raw
    near-zero sigma."""

    sigma: np.ndarray
    mean: np.ndarray
    flagged: np.ndarray

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.flagged, 1.0, self.sigma)


def compute_rtg(rewards) -> np.ndarray:
    """Suffix sums: out[t] = rewards[t] + out[t+1], in float64."""
    r = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite rewards")
    return np.cumsum(r[::-1])[::-1]


class ActionFreeDataset:
    def __init__(self, trajectories: list[Trajectory]):
        if not trajectories:
            raise ValueError("empty dataset")
        dims = {t.states.shape[1] for t in trajectories}
        if len(dims) != 1:
            raise ValueError(f"trajectories disagree on state_dim: {sorted(dims)}")
        self.trajectories = list(trajectories)
        self.state_dim = dims.pop()
        self.rtg_cache = [compute_rtg(t.rewards) for t in self.trajectories]
        self.norm_stats = compute_state_std(self)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_states(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def episode_returns(self) -> np.ndarray:
        return np.array([t.episode_return for t in self.trajectories])


def compute_state_std(dataset: ActionFreeDataset | list[Trajectory]) -> NormStats:
    trajectories = dataset.trajectories if isinstance(dataset, ActionFreeDataset) else dataset
    if not trajectories:
        raise ValueError("empty dataset")
    states = np.concatenate([t.states for t in trajectories]).astype(np.float64)
    if states.shape[0] < 2:
        raise ValueError("need at least 2 states for normalization statistics")
    mean = states.mean(axis=0)
    centered = states - mean
    sigma = np.sqrt(np.mean(centered * centered, axis=0))
    return NormStats(sigma=sigma, mean=mean, flagged=sigma < SIGMA_FLOOR)


# -- window sampling ----------------------------------------------------------


@dataclass
class Window:
    """One left-padded training window of K steps."""

    states: np.ndarray  # (K, state_dim)
    rtgs: np.ndarray  # (K,)
    timesteps: np.ndarray  # (K,) absolute episode indices
    valid_mask: np.ndarray  # (K,) bool, False on padded slots


@dataclass
class WindowBatch:
    states: np.ndarray  # (B, K, S) float32
    rtgs: np.ndarray  # (B, K) float64
    timesteps: np.ndarray  # (B, K) int64
    valid_mask: np.ndarray  # (B, K) bool
    target_delta: np.ndarray  # (B, K, S) float32; next-state minus state
    loss_mask: np.ndarray  # (B, K) bool; valid slots that have a successor

    def __len__(self) -> int:
        return self.states.shape[0]

    def window(self, i: int) -> Window:
        return Window(self.states[i], self.rtgs[i], self.timesteps[i], self.valid_mask[i])


def _empty_batch(batch: int, K: int, S: int) -> WindowBatch:
    return WindowBatch(
        states=np.zeros((batch, K, S), dtype=np.float32),
        rtgs=np.zeros((batch, K), dtype=np.float64),
        timesteps=np.zeros((batch, K), dtype=np.int64),
        valid_mask=np.zeros((batch, K), dtype=bool),
        target_delta=np.zeros((batch, K, S), dtype=np.float32),
        loss_mask=np.zeros((batch, K), dtype=bool),
    )


def _fill_window(out: WindowBatch, b: int, dataset: ActionFreeDataset,
                 ti: int, end: int, K: int) -> None:
    traj = dataset.trajectories[ti]
    start = max(0, end - K + 1)
    n = end - start + 1
    sl = slice(K - n, K)
    out.states[b, sl] = traj.states[start : end + 1]
    out.rtgs[b, sl] = dataset.rtg_cache[ti][start : end + 1]
    out.timesteps[b, sl] = np.arange(start, end + 1)
    out.valid_mask[b, sl] = True
    n_tgt = min(n, len(traj) - 1 - start)
    if n_tgt > 0:
        tsl = slice(K - n, K - n + n_tgt)
        out.target_delta[b, tsl] = (
            traj.states[start + 1 : start + 1 + n_tgt] - traj.states[start : start + n_tgt]
        )
        out.loss_mask[b, tsl] = True


def sample_windows(dataset: ActionFreeDataset, batch: int = 64, K: int = 20,
                   rng: np.random.Generator | int = 0) -> WindowBatch:
    """Batch of windows, uniform over (trajectory, end-index) pairs.

    A window ends at its sampled index and extends K-1 steps into the past;
    slots before the episode start are zero and masked out."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    cum = np.cumsum([len(t) for t in dataset.trajectories])
    out = _empty_batch(batch, K, dataset.state_dim)
    flat = rng.integers(0, cum[-1], size=batch)
    for b, f in enumerate(flat):
        ti = int(np.searchsorted(cum, f, side="right"))
        end = int(f - (cum[ti - 1] if ti else 0))
        _fill_window(out, b, dataset, ti, end, K)
    return out


def enumerate_windows(dataset: ActionFreeDataset, trajectory_indices, K: int,
                      cap: int, rng: np.random.Generator) -> WindowBatch:
    """Every (trajectory, end) window over the given trajectories, or a
    seeded subsample of `cap` of them. Deterministic given the rng state."""
    pairs = [
        (ti, end)
        for ti in trajectory_indices
        for end in range(len(dataset.trajectories[ti]))
    ]
    if not pairs:
        raise ValueError("no windows to enumerate")
    if len(pairs) > cap:
        chosen = rng.choice(len(pairs), size=cap, replace=False)
        pairs = [pairs[i] for i in sorted(chosen)]
    out = _empty_batch(len(pairs), K, dataset.state_dim)
    for b, (ti, end) in enumerate(pairs):
        _fill_window(out, b, dataset, ti, end, K)
    return out


# -- generation ----------------------------------------------------------------


def episode_seeds(seed: int, episode: int) -> tuple[int, int]:
    """Deterministic (env_seed, policy_seed) pair for one episode."""
    vals = np.random.SeedSequence([seed, episode]).generate_state(2, np.uint64)
    return int(vals[0]), int(vals[1])


def generate_behavior_dataset(env_name: str, policy_kind: str, n_episodes: int,
                              seed: int) -> ActionFreeDataset:
    """Roll a scripted policy and keep only states and rewards."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = make_env(env_name)
    trajectories = []
    for ep in range(n_episodes):
        env_seed, pol_seed = episode_seeds(seed, ep)
        policy = ScriptedPolicy(policy_kind, pol_seed)
        s = env.reset(env_seed)
        states, rewards = [s], []
        done = False
        while not done:
            s, r, done, _ = env.step(policy(env, s))
            states.append(s)
            rewards.append(r)
        rewards.append(0.0)  # no transition leaves the final state
        trajectories.append(Trajectory(np.array(states), np.array(rewards)))
    return ActionFreeDataset(trajectories)


# -- file io --------------------------------------------------------------------


def save_dataset(dataset: ActionFreeDataset, path) -> None:
    chunks = [MAGIC, struct.pack("<HII", VERSION, dataset.state_dim, len(dataset))]
    for traj in dataset.trajectories:
        chunks.append(struct.pack("<I", len(traj)))
        chunks.append(np.ascontiguousarray(traj.states, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(traj.rewards, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_dataset(path) -> ActionFreeDataset:
    blob = Path(path).read_bytes()
    off = 0

    def need(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise TruncatedPayloadError(f"{path}: truncated while reading {what}")
        piece = blob[off : off + n]
        off += n
        return piece

    if need(4, "magic") != MAGIC:
        raise BadDatasetMagicError(f"{path}: bad magic, not a dataset file")
    version, state_dim, n_traj = struct.unpack("<HII", need(10, "header"))
    if version != VERSION:
        raise BadDatasetVersionError(f"{path}: unsupported dataset version {version}")
    trajectories = []
    for i in range(n_traj):
        (T,) = struct.unpack("<I", need(4, f"trajectory {i} length"))
        if T < 2:
            raise DatasetFormatError(f"{path}: trajectory {i} has T={T} < 2")
        states = np.frombuffer(
            need(4 * T * state_dim, f"trajectory {i} states"), dtype="<f4"
        ).reshape(T, state_dim)
        rewards = np.frombuffer(need(4 * T, f"trajectory {i} rewards"), dtype="<f4")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(rewards))):
            raise NonFinitePayloadError(f"{path}: trajectory {i} contains non-finite values")
        trajectories.append(Trajectory(states.copy(), rewards.copy()))
    if off != len(blob):
        raise TruncatedPayloadError(f"{path}: {len(blob) - off} trailing bytes")
    return ActionFreeDataset(trajectories)
