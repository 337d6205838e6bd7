"""Timing comparison of the compiled kernel backend against the numpy
reference, at the kernel level and through full model steps.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from afguide._core import _BACKENDS, available_backends, get_backend, set_backend


def _time(fn, repeats: int) -> float:
    """Median of five timing batches; resists frequency jitter."""
    fn()  # warm
    batches = []
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        batches.append((time.perf_counter() - t0) / repeats)
    return sorted(batches)[2]


def bench_kernels(repeats: int) -> None:
    rng = np.random.default_rng(0)
    x = rng.normal(size=(256, 512)).astype(np.float32)
    gy = rng.normal(size=(256, 512)).astype(np.float32)
    w = np.ones(512, dtype=np.float32)
    b = np.zeros(512, dtype=np.float32)
    mask = np.tril(np.ones((256, 512), dtype=bool))
    p = rng.normal(size=x.shape).astype(np.float32)
    m = np.zeros_like(x)
    v = np.zeros_like(x)

    cases = {
        "relu_fwd": lambda k: k.relu_fwd(x),
        "relu_bwd": lambda k: k.relu_bwd(x, gy),
        "gelu_fwd": lambda k: k.gelu_fwd(x),
        "gelu_bwd": lambda k: k.gelu_bwd(x, gy),
        "tanh_fwd": lambda k: k.tanh_fwd(x),
        "softplus_fwd": lambda k: k.softplus_fwd(x),
        "layernorm_fwd": lambda k: k.layernorm_fwd(x, w, b, 1e-5),
        "masked_softmax_fwd": lambda k: k.masked_softmax_fwd(x, mask),
        "adam_step": lambda k: k.adam_step(p, gy, m, v, 3, 1e-3, 0.9, 0.999, 1e-8, 0.0, False),
        "polyak_update": lambda k: k.polyak_update(p, x, 0.005),
    }
    print(f"{'kernel':<22}" + "".join(f"{n:>14}" for n in available_backends()) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for backend_name, mod in _BACKENDS.items():
            times[backend_name] = _time(lambda: fn(mod), repeats)
        row = f"{name:<22}" + "".join(
            f"{times[n] * 1e6:>12.1f}us" for n in available_backends()
        )
        if "cython" in times:
            row += f"{times['numpy'] / times['cython']:>9.2f}x"
        print(row)


def bench_models(repeats: int) -> None:
    from afguide.agent import AgentConfig, GuidedSacAgent
    from afguide.data import ActionFreeDataset, Trajectory, sample_windows
    from afguide.nn import TransformerSpec, adamw
    from afguide.planner import PlannerConfig, StatePlanner, train_step

    rng = np.random.default_rng(0)
    ds = ActionFreeDataset([
        Trajectory(rng.normal(size=(60, 4)), rng.normal(size=60)) for _ in range(10)
    ])
    pcfg = PlannerConfig(context_steps=20,
                         transformer=TransformerSpec(n_blocks=1, d_embed=64),
                         max_timestep=300)

    def planner_step(backend):
        set_backend(backend)
        model = StatePlanner(4, pcfg, np.random.default_rng(0))
        opt = adamw(model.params(), lr=1e-4)
        drop = np.random.default_rng(0)
        batch = sample_windows(ds, 64, 20, 1)
        return _time(lambda: train_step(model, batch, opt, drop), repeats)

    def agent_step(backend):
        set_backend(backend)
        cfg = AgentConfig(mode="guided", hidden_dim=64, n_hidden_layers=2,
                          batch_size=64, buffer_capacity=10_000)
        agent = GuidedSacAgent(4, 2, cfg, seed=0)
        from afguide.agent import Batch

        batch = Batch(
            s=rng.normal(size=(64, 4)).astype(np.float32),
            a=rng.uniform(-1, 1, (64, 2)).astype(np.float32),
            r_e=rng.normal(size=64).astype(np.float32),
            r_g=-np.abs(rng.normal(size=64)).astype(np.float32),
            s_next=rng.normal(size=(64, 4)).astype(np.float32),
            done=np.zeros(64, dtype=np.float32),
        )
        return _time(lambda: agent.update(batch), repeats)

    prev = get_backend()
    try:
        print(f"\n{'model step':<22}" + "".join(f"{n:>14}" for n in available_backends()))
        for name, fn in (("planner train_step", planner_step), ("agent update", agent_step)):
            times = {n: fn(n) for n in available_backends()}
            row = f"{name:<22}" + "".join(
                f"{times[n] * 1e3:>12.2f}ms" for n in available_backends()
            )
            if "cython" in times:
                row += f"{times['numpy'] / times['cython']:>9.2f}x"
            print(row)
    finally:
        set_backend(prev)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    print(f"available backends: {available_backends()} (active: {get_backend()})")
    bench_kernels(args.repeats)
    bench_models(max(5, args.repeats // 5))


if __name__ == "__main__":
    main()
