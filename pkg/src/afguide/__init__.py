"""Planner-guided online reinforcement learning from action-free trajectories.

Pretrains a return-conditioned causal transformer on (state, reward)
trajectories to plan target next states, then trains a soft actor-critic
agent online whose policy is steered through an extra zero-discount critic
fed by a plan-tracking reward.
"""

import os as _os

# Single-threaded BLAS: keeps forward results bit-reproducible run to run
# and avoids oversubscription when seeds run as parallel workers. Only
# effective if numpy has not been imported yet; harmless otherwise.
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from ._core import available_backends, get_backend, set_backend  # noqa: E402

__version__ = "0.1.0"

__all__ = ["available_backends", "get_backend", "set_backend", "__version__"]


def __getattr__(name):
    # lazy submodule access: afguide.envs, afguide.data, ... without paying
    # the import cost for tools that only query the backend
    import importlib

    if name in ("nn", "envs", "data", "planner", "agent", "harness", "cli"):
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
