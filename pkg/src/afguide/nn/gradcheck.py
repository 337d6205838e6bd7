"""Central-difference verification of the analytic gradients.

Meant to run with float64 parameters: float32 central differences drown in
rounding noise long before the 1e-5 epsilon used here.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_check(forward_fn, params: list[Tensor],
                            epsilon: float = 1e-5,
                            n_coords: int = 5,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `forward_fn()` must rebuild the loss from the current parameter values
    and return a scalar Tensor. For each parameter, up to `n_coords`
    coordinates are sampled; each is perturbed by ±epsilon. The relative
    error is |analytic - fd| / max(1, |analytic|).
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("finite_difference_check requires float64 parameters")
        p.grad = None
    loss = forward_fn()
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        if a is None:
            continue
        size = p.data.size
        coords = rng.choice(size, size=min(n_coords, size), replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + epsilon
            up = float(forward_fn().data)
            flat[c] = keep - epsilon
            down = float(forward_fn().data)
            flat[c] = keep
            fd = (up - down) / (2.0 * epsilon)
            ref = a.reshape(-1)[c]
            err = abs(ref - fd) / max(1.0, abs(ref))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
