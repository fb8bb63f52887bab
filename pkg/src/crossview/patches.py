"""Image <-> patch-token conversion, random masking and position codes.

Images are float arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass
class PatchSet:
    tokens: np.ndarray  # (N, P*P*C), grid in row-major order
    grid: tuple[int, int]
    patch_size: int

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.ndim != 2 or self.tokens.shape[0] != rows * cols:
            raise DimensionError(f"{self.tokens.shape[0]} tokens do not fill a {rows}x{cols} grid")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1] // (self.patch_size * self.patch_size)


@dataclass
class MaskSpec:
    mask: np.ndarray  # bool (N,), True = masked
    ratio: float

    @property
    def num_masked(self) -> int:
        return int(self.mask.sum())

    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def patchify(img: np.ndarray, P: int) -> PatchSet:
    """Split an (H, W, C) image into row-major P x P patches, each flattened y, x, c."""
    if img.ndim != 3:
        raise DimensionError(f"expected an (H, W, C) image, got shape {img.shape}")
    H, W, C = img.shape
    if H % P or W % P:
        raise DimensionError(f"image {H}x{W} not divisible by patch size {P}")
    rows, cols = H // P, W // P
    tokens = img.reshape(rows, P, cols, P, C).transpose(0, 2, 1, 3, 4).reshape(rows * cols, P * P * C)
    return PatchSet(tokens, (rows, cols), P)


def unpatchify(ps: PatchSet) -> np.ndarray:
    P = ps.patch_size
    rows, cols = ps.grid
    if ps.tokens.shape[1] % (P * P):
        raise DimensionError(f"token length {ps.tokens.shape[1]} is not a multiple of {P}*{P}")
    C = ps.channels
    return ps.tokens.reshape(rows, cols, P, P, C).transpose(0, 2, 1, 3, 4).reshape(rows * P, cols * P, C)


def num_masked(N: int, r: float) -> int:
    # guard against r*N landing a hair below an integer, e.g. 0.29*100
    return int(math.floor(r * N + 1e-9))


def sample_mask(N: int, r: float, seed: int) -> MaskSpec:
    """Mask exactly floor(r*N) tokens chosen uniformly (partial Fisher-Yates)."""
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"masking ratio must lie in [0, 1], got {r}")
    n = num_masked(N, r)
    rng = np.random.default_rng(seed)
    perm = np.arange(N)
    picks = rng.integers(np.arange(n), N) if n else np.empty(0, dtype=np.int64)
    for i, j in enumerate(picks):
        perm[i], perm[j] = perm[j], perm[i]
    mask = np.zeros(N, dtype=bool)
    mask[perm[:n]] = True
    return MaskSpec(mask, r)


def pos_embed_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sin/cos code: columns 2k, 2k+1 hold sin, cos of pos / 10000^(2k/dim)."""
    freqs = 1.0 / 10000.0 ** (np.arange(dim // 2, dtype=np.float64) * 2.0 / dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    out = np.empty((angles.shape[0], dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def pos_embed_2d(rows: int, cols: int, D: int) -> np.ndarray:
    """2D sin-cos position code of shape (rows*cols, D), float64.

    The first D/2 dims encode the column index and the last D/2 the row index.
    """
    if D % 4:
        raise ConfigError(f"position embedding width must be divisible by 4, got {D}")
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.concatenate([pos_embed_1d(c, D // 2), pos_embed_1d(r, D // 2)], axis=1)


def normalize_tokens(tokens: np.ndarray, eps: float = 1e-6):
    """Per-token standardization; returns (normalized, mean, std)."""
    mu = tokens.mean(axis=-1, keepdims=True)
    sd = tokens.std(axis=-1, keepdims=True)
    centered = tokens - mu
    # a constant token maps to exact zeros despite rounding in its mean
    centered[np.ptp(tokens, axis=-1) == 0] = 0.0
    return centered / (sd + eps), mu, sd


def normalize_targets(ps: PatchSet, eps: float = 1e-6) -> PatchSet:
    out, _, _ = normalize_tokens(ps.tokens, eps)
    return PatchSet(out, ps.grid, ps.patch_size)


def unnormalize_tokens(pred: np.ndarray, reference: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Map normalized predictions back to pixels using the statistics of ``reference`` tokens."""
    mu = reference.mean(axis=-1, keepdims=True)
    sd = reference.std(axis=-1, keepdims=True)
    return pred * (sd + eps) + mu
