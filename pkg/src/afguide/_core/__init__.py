"""Kernel backend selection.

The numeric hot paths (activations, layernorm, masked softmax, optimizer
updates) exist twice: a Cython extension and a numpy reference. The
extension is preferred when it importable; set AFGUIDE_KERNELS=numpy or
=cython to force one. ``kernels`` is a proxy whose attribute lookups hit
the active backend, so the choice can also be swapped at runtime (used by
the backend cross-checks and the benchmark).
"""

from __future__ import annotations

import os

from . import kernels_np

try:
    from . import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None

_BACKENDS = {"numpy": kernels_np}
if _kernels_cy is not None:
    _BACKENDS["cython"] = _kernels_cy


class _KernelProxy:
    """Forwards attribute access to the active kernel module."""

    __slots__ = ("_mod",)

    def __init__(self, mod):
        object.__setattr__(self, "_mod", mod)

    def __getattr__(self, name):
        return getattr(object.__getattribute__(self, "_mod"), name)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend() -> str:
    return object.__getattribute__(kernels, "_mod").NAME


def set_backend(name: str) -> None:
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    object.__setattr__(kernels, "_mod", _BACKENDS[name])


def _initial_backend() -> str:
    forced = os.environ.get("AFGUIDE_KERNELS")
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"AFGUIDE_KERNELS={forced!r} but available backends are {available_backends()}"
            )
        return forced
    return "cython" if "cython" in _BACKENDS else "numpy"


kernels = _KernelProxy(_BACKENDS[_initial_backend()])
