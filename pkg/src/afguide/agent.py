"""Soft actor-critic with an optional plan-tracking critic.

The agent keeps the usual twin environment critics (discounted, with
polyak targets and entropy-regularized bootstrapping) plus, in guided
modes, one extra critic trained at zero discount: its regression target is
exactly the stored per-step guide reward, nothing bootstrapped. The policy
maximizes min(Q_e1, Q_e2) + beta * Q_g. Four modes:

  guided            planner runs, guide critic on, combined policy objective
  imitation_guided  same, but driven by an imitation-mode planner
  sac               no planner, no guide critic (beta irrelevant)
  reward_mix        planner runs but the guide reward is folded into the
                    environment reward (r_e + beta * r_g) under the normal
                    discounted critics; no guide critic exists

The guide reward for a transition is computed once, at collection time,
from the plan made before acting; replay never recomputes it.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .envs import make_env
from .nn import Mlp, MlpSpec, adam, polyak_update
from .nn import tensor as T
from .nn.layers import Module
from .nn.tensor import Tensor

MODES = ("guided", "sac", "reward_mix", "imitation_guided")
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))
CSV_HEADER = "step,episode,eval_return,success_rate,loss_qe,loss_qg,loss_pi,alpha,mean_rg"


@dataclass
class AgentConfig:
    gamma: float = 0.99
    beta: float = 3.0
    batch_size: int = 256
    lr: float = 3e-4
    tau: float = 0.005
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    gradient_steps: int = 1
    target_entropy: float | None = None  # default: -action_dim
    mode: str = "guided"
    hidden_dim: int = 256
    n_hidden_layers: int = 3
    eval_every: int = 1000
    eval_episodes: int = 10

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_planner(self) -> bool:
        return self.mode in ("guided", "imitation_guided", "reward_mix")

    @property
    def has_guide_critic(self) -> bool:
        return self.mode in ("guided", "imitation_guided")


def guiding_reward(planned, achieved, sigma) -> float:
    """Negative sigma-normalized Euclidean gap between plan and outcome."""
    planned = np.asarray(planned, dtype=np.float64)
    achieved = np.asarray(achieved, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if planned.shape != achieved.shape or planned.shape != sigma.shape:
        raise ValueError(
            f"shape mismatch: planned {planned.shape}, achieved {achieved.shape}, "
            f"sigma {sigma.shape}"
        )
    d = (planned - achieved) / sigma
    return -float(np.sqrt(np.dot(d, d)))


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r_e: float
    r_g: float
    s_next: np.ndarray
    done: bool  # true terminals only; step-limit truncation keeps bootstrapping


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r_e: np.ndarray
    r_g: np.ndarray
    s_next: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim), dtype=np.float32)
        self.a = np.zeros((self.capacity, action_dim), dtype=np.float32)
        self.r_e = np.zeros(self.capacity, dtype=np.float32)
        self.r_g = np.zeros(self.capacity, dtype=np.float32)
        self.s_next = np.zeros((self.capacity, state_dim), dtype=np.float32)
        self.done = np.zeros(self.capacity, dtype=np.float32)
        self.ptr = 0
        self.size = 0

    def add(self, tr: Transition) -> None:
        i = self.ptr
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r_e[i] = tr.r_e
        self.r_g[i] = tr.r_g
        self.s_next[i] = tr.s_next
        self.done[i] = 1.0 if tr.done else 0.0
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self) -> int:
        return self.size

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r_e[idx], self.r_g[idx],
                     self.s_next[idx], self.done[idx])


class TanhGaussianPolicy(Module):
    """Squashed-Gaussian policy head over an MLP trunk."""

    def __init__(self, state_dim: int, action_dim: int, hidden_dim: int,
                 n_hidden_layers: int, rng: np.random.Generator, dtype=np.float32):
        self.action_dim = action_dim
        self.mlp = Mlp(
            MlpSpec(state_dim, 2 * action_dim, hidden_dim, n_hidden_layers), rng, dtype
        )

    def sample(self, s, rng: np.random.Generator | None,
               deterministic: bool = False, on_nonfinite=None):
        """Returns (action, log_prob) with the tanh change-of-variables
        correction. Reparameterized: gradients flow through mean/std."""
        out = self.mlp(s)
        if not np.all(np.isfinite(out.data)):
            if on_nonfinite is not None:
                on_nonfinite()
            out = Tensor(np.nan_to_num(out.data, nan=0.0, posinf=1e6, neginf=-1e6))
        A = self.action_dim
        mean = out[:, :A]
        log_std = T.clamp(out[:, A:], LOG_STD_MIN, LOG_STD_MAX)
        dtype = out.data.dtype
        if deterministic:
            eps = np.zeros((out.data.shape[0], A), dtype=dtype)
        else:
            eps = rng.standard_normal((out.data.shape[0], A)).astype(dtype)
        z = T.add(mean, T.mul(T.exp(log_std), Tensor(eps)))
        action = T.tanh(z)
        # log N(z; mean, std) with (z - mean)/std == eps held constant
        const = (-0.5 * eps * eps - LOG_SQRT_2PI).sum(axis=1).astype(dtype)
        gauss = T.sub(Tensor(const), log_std.sum(axis=1))
        # log(1 - tanh(z)^2) = 2 * (log 2 - z - softplus(-2z)), per dimension
        log2 = np.full(eps.shape[0], A * np.log(2.0), dtype=dtype)
        squash = T.scale(
            T.sub(T.sub(Tensor(log2), z.sum(axis=1)),
                  T.softplus(T.scale(z, -2.0)).sum(axis=1)),
            2.0,
        )
        return action, T.sub(gauss, squash)

    def act(self, s: np.ndarray, rng: np.random.Generator | None,
            deterministic: bool = False, on_nonfinite=None) -> np.ndarray:
        with T.no_grad():
            a, _ = self.sample(s[None, :].astype(self.mlp.out.w.data.dtype),
                               rng, deterministic, on_nonfinite)
        return a.data[0].astype(np.float64)


def _critic(state_dim, action_dim, cfg, rng, dtype):
    return Mlp(MlpSpec(state_dim + action_dim, 1, cfg.hidden_dim, cfg.n_hidden_layers),
               rng, dtype)


def _q_value(critic: Mlp, s, a):
    return critic(T.concat([s, a], axis=1))[:, 0]


class GuidedSacAgent:
    """Owns the networks, optimizers, replay buffer, and RNG streams."""

    def __init__(self, state_dim: int, action_dim: int, config: AgentConfig,
                 seed: int, dtype=np.float32):
        self.config = config
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.dtype = dtype
        ss = np.random.SeedSequence([seed, 0x5AC])
        init_rng, self.action_rng, self.update_rng, self.batch_rng = (
            np.random.default_rng(c) for c in ss.spawn(4)
        )
        cfg = config
        self.policy = TanhGaussianPolicy(state_dim, action_dim, cfg.hidden_dim,
                                         cfg.n_hidden_layers, init_rng, dtype)
        self.qe1 = _critic(state_dim, action_dim, cfg, init_rng, dtype)
        self.qe2 = _critic(state_dim, action_dim, cfg, init_rng, dtype)
        self.qt1 = _critic(state_dim, action_dim, cfg, init_rng, dtype)
        self.qt2 = _critic(state_dim, action_dim, cfg, init_rng, dtype)
        self.qt1.copy_from(self.qe1)
        self.qt2.copy_from(self.qe2)
        self.qg = _critic(state_dim, action_dim, cfg, init_rng, dtype) \
            if cfg.has_guide_critic else None
        self.log_alpha = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        self.target_entropy = (
            cfg.target_entropy if cfg.target_entropy is not None else -float(action_dim)
        )
        self.policy_opt = adam(self.policy.params(), cfg.lr)
        self.critic_opt = adam(self.qe1.params() + self.qe2.params(), cfg.lr)
        self.guide_opt = adam(self.qg.params(), cfg.lr) if self.qg else None
        self.alpha_opt = adam([self.log_alpha], cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, state_dim, action_dim)
        self.incidents = {"policy_output": 0, "planner": 0, "aborted_updates": 0}

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    def _zero_grads(self):
        for net in (self.policy, self.qe1, self.qe2, self.qg):
            if net is not None:
                net.zero_grad()
        self.log_alpha.grad = None

    def _policy_nonfinite(self):
        self.incidents["policy_output"] += 1

    # -- updates -------------------------------------------------------------

    def critic_targets(self, batch: Batch) -> np.ndarray:
        """y = r + gamma * (1 - done) * (min target Q - alpha * log pi)."""
        cfg = self.config
        with T.no_grad():
            s2 = Tensor(batch.s_next)
            a2, logp2 = self.policy.sample(s2, self.update_rng,
                                           on_nonfinite=self._policy_nonfinite)
            q1 = _q_value(self.qt1, s2, a2).data
            q2 = _q_value(self.qt2, s2, a2).data
        soft = np.minimum(q1, q2) - self.dtype(self.alpha) * logp2.data
        reward = batch.r_e
        if cfg.mode == "reward_mix":
            reward = batch.r_e + self.dtype(cfg.beta) * batch.r_g
        return reward + self.dtype(cfg.gamma) * (1.0 - batch.done) * soft

    def critic_update_env(self, batch: Batch) -> float:
        y = self.critic_targets(batch)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("non-finite critic target")
        self._zero_grads()
        s, a, yt = Tensor(batch.s), Tensor(batch.a), Tensor(y)
        q1 = _q_value(self.qe1, s, a)
        q2 = _q_value(self.qe2, s, a)
        loss = T.add(T.tmean(T.square(T.sub(q1, yt))),
                     T.tmean(T.square(T.sub(q2, yt))))
        value = float(loss.data)
        loss.backward()
        self.critic_opt.step()
        polyak_update(self.qt1.params(), self.qe1.params(), self.config.tau)
        polyak_update(self.qt2.params(), self.qe2.params(), self.config.tau)
        return value

    def critic_update_guide(self, batch: Batch) -> float:
        """Zero-discount regression: the target is the stored guide reward,
        independent of s', done, and anything that follows."""
        if self.qg is None:
            raise RuntimeError(f"mode {self.config.mode!r} has no guide critic")
        self._zero_grads()
        q = _q_value(self.qg, Tensor(batch.s), Tensor(batch.a))
        loss = T.tmean(T.square(T.sub(q, Tensor(batch.r_g))))
        value = float(loss.data)
        loss.backward()
        self.guide_opt.step()
        return value

    def actor_and_temperature_update(self, batch: Batch) -> tuple[float, float]:
        self._zero_grads()
        cfg = self.config
        s = Tensor(batch.s)
        a, logp = self.policy.sample(s, self.update_rng,
                                     on_nonfinite=self._policy_nonfinite)
        qmin = T.minimum(_q_value(self.qe1, s, a), _q_value(self.qe2, s, a))
        use_guide = self.qg is not None and cfg.beta != 0.0
        q = T.add(qmin, T.scale(_q_value(self.qg, s, a), cfg.beta)) if use_guide else qmin
        loss_pi = T.tmean(T.sub(T.scale(logp, self.alpha), q))
        value_pi = float(loss_pi.data)
        if not np.isfinite(value_pi):
            raise FloatingPointError("non-finite actor loss")
        loss_pi.backward()
        self.policy_opt.step()

        self._zero_grads()
        target = Tensor((logp.data + self.dtype(self.target_entropy)))
        loss_alpha = T.scale(T.tmean(T.mul(self.log_alpha, target)), -1.0)
        value_alpha = float(loss_alpha.data)
        loss_alpha.backward()
        self.alpha_opt.step()
        return value_pi, value_alpha

    def update(self, batch: Batch) -> dict:
        """One full gradient step on every learnable piece for this mode."""
        out = {"loss_qe": self.critic_update_env(batch)}
        if self.qg is not None:
            out["loss_qg"] = self.critic_update_guide(batch)
        out["loss_pi"], out["loss_alpha"] = self.actor_and_temperature_update(batch)
        return out

    # -- interaction ----------------------------------------------------------

    def collect_step(self, env, planner, ctx, state: np.ndarray,
                     warmup: bool) -> tuple[Transition, np.ndarray, bool, dict]:
        """Plan (before acting), act, step the env, store the transition."""
        planned = None
        if planner is not None:
            try:
                planned = planner.plan_next_state(ctx)
            except Exception:
                self.incidents["planner"] += 1
        if warmup:
            a = self.action_rng.uniform(-1.0, 1.0, size=self.action_dim)
        else:
            a = self.policy.act(state, self.action_rng,
                                on_nonfinite=self._policy_nonfinite)
        s_next, r_e, done, info = env.step(a)
        r_g = 0.0
        if planned is not None:
            r_g = guiding_reward(planned, s_next, planner.sigma_divisor)
        tr = Transition(state.copy(), a, r_e, r_g, s_next.copy(), info["terminal"])
        self.buffer.add(tr)
        if ctx is not None:
            ctx.update(s_next, r_e)
        return tr, s_next, done, info

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("policy", self.policy), ("qe1", self.qe1),
                            ("qe2", self.qe2), ("qt1", self.qt1),
                            ("qt2", self.qt2), ("qg", self.qg)):
            if net is not None:
                for k, v in net.state_arrays().items():
                    out[f"{prefix}.{k}"] = v
        out["log_alpha"] = self.log_alpha.data
        return out


# -- evaluation and the training loop ----------------------------------------------


def evaluate_policy(policy: TanhGaussianPolicy, env_name: str, n_episodes: int,
                    seed: int) -> tuple[float, float]:
    """Deterministic-policy rollouts; returns (mean return, success rate)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = make_env(env_name)
    returns, successes = [], []
    for ep in range(n_episodes):
        ep_seed = int(np.random.SeedSequence([seed, 0xE7A1, ep]).generate_state(1)[0])
        s = env.reset(ep_seed)
        total, success, done = 0.0, False, False
        while not done:
            a = policy.act(s, None, deterministic=True)
            s, r, done, info = env.step(a)
            total += r
            success = success or info["goal"]
        returns.append(total)
        successes.append(float(success))
    return float(np.mean(returns)), float(np.mean(successes))


def train(agent: GuidedSacAgent, env, planner, total_steps: int, seed: int,
          initial_rtg: float = 0.0, log_path=None) -> list[dict]:
    """Online training loop; returns (and optionally writes) the eval rows."""
    cfg = agent.config
    if cfg.uses_planner and planner is None:
        raise ValueError(f"mode {cfg.mode!r} needs a planner")
    if not cfg.uses_planner:
        planner = None
    from .planner import PlannerContext  # local import to avoid a cycle

    ctx = PlannerContext(planner.model.config.context_steps) if planner else None

    def episode_seed(i: int) -> int:
        return int(np.random.SeedSequence([seed, 0xEB, i]).generate_state(1)[0])

    s = env.reset(episode_seed(0))
    if ctx is not None:
        ctx.reset(s, initial_rtg)
    episode = 0
    rows: list[dict] = []
    acc = {"loss_qe": [], "loss_qg": [], "loss_pi": [], "r_g": []}

    for step in range(1, total_steps + 1):
        warmup = step <= cfg.warmup_steps
        tr, s, done, _ = agent.collect_step(env, planner, ctx, s, warmup)
        acc["r_g"].append(tr.r_g)
        if done:
            episode += 1
            s = env.reset(episode_seed(episode))
            if ctx is not None:
                ctx.reset(s, initial_rtg)
        if not warmup:
            for _ in range(cfg.gradient_steps):
                batch = agent.buffer.sample(cfg.batch_size, agent.batch_rng)
                try:
                    out = agent.update(batch)
                except FloatingPointError:
                    agent.incidents["aborted_updates"] += 1
                    continue
                acc["loss_qe"].append(out["loss_qe"])
                acc["loss_pi"].append(out["loss_pi"])
                if "loss_qg" in out:
                    acc["loss_qg"].append(out["loss_qg"])
        if step % cfg.eval_every == 0:
            eval_return, success = evaluate_policy(
                agent.policy, env.spec.name, cfg.eval_episodes, seed + step
            )
            rows.append({
                "step": step,
                "episode": episode,
                "eval_return": eval_return,
                "success_rate": success,
                "loss_qe": _mean_or_nan(acc["loss_qe"]),
                "loss_qg": _mean_or_nan(acc["loss_qg"]),
                "loss_pi": _mean_or_nan(acc["loss_pi"]),
                "alpha": agent.alpha,
                "mean_rg": _mean_or_nan(acc["r_g"]),
            })
            acc = {k: [] for k in acc}
    if log_path is not None:
        write_learning_curve(log_path, rows)
    return rows


def _mean_or_nan(values) -> float:
    return float(np.mean(values)) if values else float("nan")


def write_learning_curve(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER.split(","))
        for r in rows:
            writer.writerow([
                r["step"], r["episode"],
                f"{r['eval_return']:.6f}", f"{r['success_rate']:.6f}",
                f"{r['loss_qe']:.6f}", f"{r['loss_qg']:.6f}",
                f"{r['loss_pi']:.6f}", f"{r['alpha']:.6f}", f"{r['mean_rg']:.6f}",
            ])


def read_learning_curve(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise ValueError(f"{path}: unexpected learning-curve header")
        for raw in reader:
            rows.append({
                "step": int(raw["step"]),
                "episode": int(raw["episode"]),
                **{k: float(raw[k]) for k in CSV_HEADER.split(",")[2:]},
            })
    return rows


# -- agent checkpoints ---------------------------------------------------------------


def save_agent(agent: GuidedSacAgent, path) -> None:
    import json

    from .nn.checkpoint import save_checkpoint

    save_checkpoint(agent.state_arrays(), path)
    sidecar = {
        "kind": "agent",
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "config": agent.config.to_dict(),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def load_agent(path) -> GuidedSacAgent:
    import json

    from .nn.checkpoint import load_checkpoint

    sidecar = json.loads(Path(str(path) + ".json").read_text())
    if sidecar.get("kind") != "agent":
        raise ValueError(f"{path}: sidecar does not describe an agent checkpoint")
    config = AgentConfig(**sidecar["config"])
    agent = GuidedSacAgent(sidecar["state_dim"], sidecar["action_dim"], config, seed=0)
    expected = {k: v.shape for k, v in agent.state_arrays().items()}
    arrays = load_checkpoint(path, expected_shapes=expected)
    for prefix, net in (("policy", agent.policy), ("qe1", agent.qe1),
                        ("qe2", agent.qe2), ("qt1", agent.qt1),
                        ("qt2", agent.qt2), ("qg", agent.qg)):
        if net is None:
            continue
        for k, p in net.named_params().items():
            p.data = arrays[f"{prefix}.{k}"]
            p.grad = None
    agent.log_alpha.data = arrays["log_alpha"]
    return agent
