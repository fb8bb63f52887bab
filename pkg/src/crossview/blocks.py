"""Multi-head attention and the three transformer block types.

All blocks are pre-norm residual:

    encoder:  X' = X + SelfAttn(LN(X));            out = X' + MLP(LN(X'))
    cross:    X' = X + SelfAttn(LN(X));
              X'' = X' + CrossAttn(LN(X'), LN_y(Y)); out = X'' + MLP(LN(X''))
    cat:      Z = [X + v1, Y + v2], then encoder blocks over Z, keep the X rows.

Token arrays may carry any number of leading batch axes: (..., N, D).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, EmptyInputError
from .nn import MLP, LayerNorm, Linear, Module, Parameter, trunc_normal


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, n, d = x.shape
    return ad.swapaxes(x.reshape(tuple(lead) + (n, h, d // h)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = ad.swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return x.reshape(tuple(lead) + (n, h * dh))


def attention_weights(q, k, h: int) -> Tensor:
    """Per-head softmax(Q K^T / sqrt(D/h)); shape (..., h, Nq, Nk)."""
    q, k = ad.tensor(q), ad.tensor(k)
    if k.shape[-2] == 0:
        raise EmptyInputError("attention over an empty key set")
    d = q.shape[-1]
    if d % h or k.shape[-1] != d:
        raise DimensionError(f"query/key width {d}/{k.shape[-1]} incompatible with {h} heads")
    scores = _split_heads(q, h) @ ad.swapaxes(_split_heads(k, h), -1, -2)
    return ad.softmax(scores * (1.0 / np.sqrt(d // h)), axis=-1)


def scaled_attention(q, k, v, h: int, proj: Linear | None = None) -> Tensor:
    """Multi-head attention on already-projected Q, K, V followed by the output projection."""
    v = ad.tensor(v)
    if v.shape[-2] != ad.tensor(k).shape[-2]:
        raise DimensionError("keys and values must have the same number of tokens")
    out = _merge_heads(attention_weights(q, k, h) @ _split_heads(v, h))
    return proj(out) if proj is not None else out


class Attention(Module):
    """Q/K/V projections (with bias) + multi-head attention + output projection."""

    def __init__(self, dim: int, heads: int, rng=None):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, x, context=None) -> Tensor:
        context = x if context is None else context
        return scaled_attention(self.q(x), self.k(context), self.v(context), self.heads, self.proj)


class EncoderBlock(Module):
    def __init__(self, dim: int, heads: int, rng=None, eps: float = 1e-6):
        self.norm1 = LayerNorm(dim, eps)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim, eps)
        self.mlp = MLP(dim, rng)

    def forward(self, x) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class CrossBlock(Module):
    def __init__(self, dim: int, heads: int, rng=None, eps: float = 1e-6):
        self.norm1 = LayerNorm(dim, eps)
        self.attn = Attention(dim, heads, rng)
        self.norm_y = LayerNorm(dim, eps)
        self.norm2 = LayerNorm(dim, eps)
        self.cross_attn = Attention(dim, heads, rng)
        self.norm3 = LayerNorm(dim, eps)
        self.mlp = MLP(dim, rng)

    def forward(self, x, y) -> Tensor:
        if ad.tensor(y).shape[-2] == 0:
            raise EmptyInputError("cross-attention context is empty")
        y_bar = self.norm_y(y)
        x = x + self.attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), y_bar)
        return x + self.mlp(self.norm3(x))


class ViewEmbeddings(Module):
    def __init__(self, dim: int, rng=None):
        self.v1 = Parameter(trunc_normal(rng, (dim,)))
        self.v2 = Parameter(trunc_normal(rng, (dim,)))


def cat_block(x, y, v: ViewEmbeddings, blocks, full: bool = False) -> Tensor:
    """Run encoder blocks over [X + v1, Y + v2]; return the X rows (or all rows if ``full``)."""
    x, y = ad.tensor(x), ad.tensor(y)
    if x.shape[-1] != y.shape[-1] or x.shape[:-2] != y.shape[:-2]:
        raise DimensionError(f"cannot concatenate token sets {x.shape} and {y.shape}")
    z = ad.concat([x + v.v1, y + v.v2], axis=-2)
    for blk in blocks:
        z = blk(z)
    if full:
        return z
    nx = x.shape[-2]
    return z[(Ellipsis, slice(0, nx), slice(None))]


def encoder_block(x, params: EncoderBlock) -> Tensor:
    return params(x)


def cross_block(x, y, params: CrossBlock) -> Tensor:
    return params(x, y)
