from . import tensor
from .checkpoint import (
    BadMagicError,
    BadVersionError,
    CheckpointError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .gradcheck import finite_difference_check
from .layers import Embedding, LayerNorm, Linear, Mlp, MlpSpec, Module
from .optim import Optimizer, adam, adamw, polyak_update
from .tensor import Tensor, no_grad
from .transformer import Trunk, TransformerSpec

__all__ = [
    "tensor",
    "Tensor",
    "no_grad",
    "Module",
    "Linear",
    "LayerNorm",
    "Embedding",
    "Mlp",
    "MlpSpec",
    "Trunk",
    "TransformerSpec",
    "Optimizer",
    "adam",
    "adamw",
    "polyak_update",
    "finite_difference_check",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "BadMagicError",
    "BadVersionError",
    "TruncatedCheckpointError",
    "ShapeMismatchError",
]
