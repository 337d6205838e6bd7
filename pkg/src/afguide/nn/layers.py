"""Parameter containers and the dense building blocks.

A `Module` collects its `Tensor` attributes (and submodules) in insertion
order, which gives stable parameter naming for checkpoints. Weight init
follows the conventions of the nets this package builds: fan-in uniform
for MLP layers, truncated normal (std 0.02) for transformer weights, zero
biases everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) with draws outside 2 std redrawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def fan_in_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base with recursive named-parameter collection."""

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_params(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{key}.{i}."))
        return out

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.params():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def copy_from(self, other: "Module"):
        mine, theirs = self.named_params(), other.named_params()
        if mine.keys() != theirs.keys():
            raise ValueError("parameter sets differ")
        for k, p in mine.items():
            p.data = theirs[k].data.copy()
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_params().items()}


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32, init: str = "fan_in"):
        if init == "fan_in":
            w = fan_in_uniform(rng, (in_dim, out_dim), dtype)
        elif init == "trunc_normal":
            w = truncated_normal(rng, (in_dim, out_dim), 0.02, dtype)
        elif init == "zeros":
            w = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.w = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.w, self.b, self.eps)


class Embedding(Module):
    def __init__(self, n_rows: int, dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.table = Tensor(
            truncated_normal(rng, (n_rows, dim), 0.02, dtype), requires_grad=True
        )

    def __call__(self, idx):
        return T.embedding(self.table, idx)


@dataclass
class MlpSpec:
    """Shape of a rectified-linear MLP: n_hidden_layers of hidden_dim each.
    Zero hidden layers degenerates to a single linear map."""

    input_dim: int
    output_dim: int
    hidden_dim: int = 256
    n_hidden_layers: int = 3

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_hidden_layers < 0:
            raise ValueError("n_hidden_layers must be >= 0")


class Mlp(Module):
    """ReLU MLP per MlpSpec. Records the smallest |pre-activation| seen in
    the last forward pass so gradient checks can resample away from kinks."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        dims = [spec.input_dim] + [spec.hidden_dim] * spec.n_hidden_layers
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, dtype) for i in range(len(dims) - 1)
        ]
        self.out = Linear(dims[-1], spec.output_dim, rng, dtype)
        self.last_min_preact = np.inf

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.data.shape[-1] != self.spec.input_dim:
            raise ValueError(
                f"input dim {x.data.shape[-1]} != expected {self.spec.input_dim}"
            )
        min_pre = np.inf
        for layer in self.layers:
            x = layer(x)
            abs_min = float(np.abs(x.data).min()) if x.data.size else np.inf
            min_pre = min(min_pre, abs_min)
            x = T.relu(x)
        self.last_min_preact = min_pre
        return self.out(x)
