"""Pre-norm causal transformer trunk.

Standard GPT-style decoder blocks: x += attn(ln(x)); x += ff(ln(x)), with
single- or multi-head masked self-attention and a 4x GELU feed-forward.
The trunk carries no positional table (position content is added to the
tokens by the caller) and no final layer norm, so with zero projection
weights it is the identity on its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, LayerNorm, Module


@dataclass
class TransformerSpec:
    n_blocks: int = 3
    n_heads: int = 1
    d_embed: int = 128
    dropout: float = 0.1
    max_tokens: int = 40

    def __post_init__(self):
        if self.d_embed % self.n_heads != 0:
            raise ValueError("d_embed must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if min(self.n_blocks, self.n_heads, self.d_embed, self.max_tokens) < 1:
            raise ValueError("all spec sizes must be >= 1")


class CausalSelfAttention(Module):
    def __init__(self, spec: TransformerSpec, rng: np.random.Generator, dtype):
        d = spec.d_embed
        self.qkv = Linear(d, 3 * d, rng, dtype, init="trunc_normal")
        self.proj = Linear(d, d, rng, dtype, init="trunc_normal")
        self.n_heads = spec.n_heads
        self.dropout_p = spec.dropout

    def __call__(self, x, attn_mask, train, rng):
        B, S, d = x.data.shape
        H = self.n_heads
        hd = d // H
        qkv = self.qkv(x)
        q = _split_heads(qkv[:, :, 0 * d : 1 * d], B, S, H, hd)
        k = _split_heads(qkv[:, :, 1 * d : 2 * d], B, S, H, hd)
        v = _split_heads(qkv[:, :, 2 * d : 3 * d], B, S, H, hd)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / float(np.sqrt(hd)))
        probs = T.masked_softmax(scores, attn_mask[:, None, :, :])
        if train and self.dropout_p > 0.0:
            probs = T.dropout(probs, self.dropout_p, rng)
        out = T.matmul(probs, v)  # (B, H, S, hd)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, S, d))
        out = self.proj(out)
        if train and self.dropout_p > 0.0:
            out = T.dropout(out, self.dropout_p, rng)
        return out


def _split_heads(x, B, S, H, hd):
    return T.transpose(T.reshape(x, (B, S, H, hd)), (0, 2, 1, 3))


class FeedForward(Module):
    def __init__(self, spec: TransformerSpec, rng: np.random.Generator, dtype):
        d = spec.d_embed
        self.fc = Linear(d, 4 * d, rng, dtype, init="trunc_normal")
        self.proj = Linear(4 * d, d, rng, dtype, init="trunc_normal")
        self.dropout_p = spec.dropout

    def __call__(self, x, train, rng):
        x = self.proj(T.gelu(self.fc(x)))
        if train and self.dropout_p > 0.0:
            x = T.dropout(x, self.dropout_p, rng)
        return x


class Block(Module):
    def __init__(self, spec: TransformerSpec, rng: np.random.Generator, dtype):
        self.ln1 = LayerNorm(spec.d_embed, dtype)
        self.attn = CausalSelfAttention(spec, rng, dtype)
        self.ln2 = LayerNorm(spec.d_embed, dtype)
        self.ff = FeedForward(spec, rng, dtype)

    def __call__(self, x, attn_mask, train, rng):
        x = T.add(x, self.attn(self.ln1(x), attn_mask, train, rng))
        x = T.add(x, self.ff(self.ln2(x), train, rng))
        return x


class Trunk(Module):
    """Stack of causal blocks operating on ready-made token embeddings."""

    def __init__(self, spec: TransformerSpec, rng: np.random.Generator,
                 dtype=np.float32):
        self.spec = spec
        self.blocks = [Block(spec, rng, dtype) for _ in range(spec.n_blocks)]

    def __call__(self, tokens, pad_mask=None, train: bool = False,
                 rng: np.random.Generator | None = None):
        """tokens: (B, S, d_embed); pad_mask: (B, S) bool, True where the
        position is real. Position i attends to positions j <= i that are
        not padding. Outputs at padded positions are unspecified."""
        x = T.as_tensor(tokens)
        B, S, d = x.data.shape
        if d != self.spec.d_embed:
            raise ValueError(f"token dim {d} != d_embed {self.spec.d_embed}")
        if S > self.spec.max_tokens:
            raise ValueError(f"sequence length {S} exceeds max_tokens {self.spec.max_tokens}")
        if train and self.spec.dropout > 0.0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")
        attn_mask = self.attention_mask(S, pad_mask, B)
        for block in self.blocks:
            x = block(x, attn_mask, train, rng)
        return x

    def attention_mask(self, S: int, pad_mask, B: int) -> np.ndarray:
        causal = np.tril(np.ones((S, S), dtype=bool))
        if pad_mask is None:
            return np.broadcast_to(causal, (B, S, S))
        keys_ok = np.asarray(pad_mask, dtype=bool)[:, None, :]  # (B, 1, S)
        return causal[None, :, :] & keys_ok
