"""Adam and AdamW with bias correction.

One `step()` applies the update to every tracked parameter and zeroes the
gradients. If any gradient is non-finite the whole step is skipped (and
counted) so a single bad batch cannot poison the moments; gradients are
still cleared. AdamW uses decoupled decay: p *= (1 - lr*wd) before the
gradient update.
"""

from __future__ import annotations

import numpy as np

from .._core import kernels as K
from .tensor import Tensor

DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float, kind: str,
                 betas=DEFAULT_BETAS, eps: float = DEFAULT_EPS,
                 weight_decay: float = 0.0):
        if kind not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if kind == "adam" and weight_decay != 0.0:
            raise ValueError("plain adam does not take weight decay; use adamw")
        self.params = list(params)
        self.lr = lr
        self.kind = kind
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0
        self.skipped_steps = 0

    def step(self) -> bool:
        """Apply one update. Returns False when skipped on non-finite grads."""
        grads = []
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                self.zero_grad()
                return False
            grads.append(g)
        self.step_count += 1
        decoupled = self.kind == "adamw"
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            K.adam_step(p.data, g, m, v, self.step_count, self.lr,
                        self.betas[0], self.betas[1], self.eps,
                        self.weight_decay, decoupled)
        self.zero_grad()
        return True

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def adam(params, lr, betas=DEFAULT_BETAS, eps=DEFAULT_EPS) -> Optimizer:
    return Optimizer(params, lr, "adam", betas, eps)


def adamw(params, lr, betas=DEFAULT_BETAS, eps=DEFAULT_EPS,
          weight_decay: float = 1e-4) -> Optimizer:
    return Optimizer(params, lr, "adamw", betas, eps, weight_decay)


def polyak_update(target_params: list[Tensor], online_params: list[Tensor],
                  tau: float):
    """target <- tau * online + (1 - tau) * target, parameter by parameter."""
    if len(target_params) != len(online_params):
        raise ValueError("parameter lists differ in length")
    for t, o in zip(target_params, online_params):
        K.polyak_update(t.data, o.data, tau)
