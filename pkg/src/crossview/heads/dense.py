"""Per-pixel regression head (flow, disparity) and tile-and-stitch inference."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError, EmptyInputError
from ..model import CrossViewNet
from ..nn import Linear, Module
from ..patches import patchify


def tokens_to_map(x: Tensor, grid: tuple[int, int], P: int, C: int) -> Tensor:
    """(B, N, P*P*C) per-token predictions -> (B, H, W, C) pixel map."""
    rows, cols = grid
    B = x.shape[0]
    x = ad.reshape(x, (B, rows, cols, P, P, C))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (B, rows * P, cols * P, C))


class DenseHead(Module):
    """Linear map from decoder features to a P x P x C block per token."""

    def __init__(self, dim: int, patch_size: int, channels: int, rng=None):
        self.patch_size = patch_size
        self.channels = channels
        self.proj = Linear(dim, patch_size * patch_size * channels, rng)

    def forward(self, features, grid: tuple[int, int]) -> Tensor:
        features = ad.tensor(features)
        if features.shape[-1] != self.proj.d_in:
            raise DimensionError(f"feature width {features.shape[-1]} != head input {self.proj.d_in}")
        if features.shape[-2] != grid[0] * grid[1]:
            raise DimensionError(f"{features.shape[-2]} tokens do not fill grid {grid}")
        return tokens_to_map(self.proj(features), grid, self.patch_size, self.channels)


def dense_head(features, head: DenseHead, grid: tuple[int, int]) -> Tensor:
    return head(features, grid)


class DenseRegressor(Module):
    """Backbone on an unmasked image pair followed by a fresh dense head."""

    def __init__(self, net: CrossViewNet, channels: int, seed: int = 0):
        self.net = net
        cfg = net.cfg
        self.head = DenseHead(cfg.dec_dim, cfg.patch_size, channels, np.random.default_rng(seed))

    def forward(self, img1: np.ndarray, img2: np.ndarray) -> Tensor:
        """Batched (B, H, W, 3) image pairs -> (B, H, W, C)."""
        P = self.net.cfg.patch_size
        img1, img2 = np.asarray(img1), np.asarray(img2)
        if img1.ndim == 3:
            img1, img2 = img1[None], img2[None]
        tok1 = np.stack([patchify(im, P).tokens for im in img1])
        tok2 = np.stack([patchify(im, P).tokens for im in img2])
        feats = self.net.decoder_features(self.net.encode(tok1), None, self.net.encode(tok2))
        return self.head(feats, (img1.shape[1] // P, img1.shape[2] // P))

    def predict(self, img1: np.ndarray, img2: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.forward(img1, img2).data[0].astype(np.float64)


def tile_positions(length: int, tile: int, stride: int) -> list[int]:
    """0, stride, 2*stride, ... with the last tile clamped to end at ``length``."""
    if length < tile:
        raise DimensionError(f"image side {length} smaller than tile {tile}")
    if stride <= 0:
        raise DimensionError(f"stride must be positive, got {stride}")
    pos = list(range(0, length - tile + 1, stride))
    if pos[-1] != length - tile:
        pos.append(length - tile)
    return pos


def tile_layout(height: int, width: int, tile: int, stride: int) -> list[tuple[int, int]]:
    """Tile origins (y, x) in row-major placement order."""
    return [(y, x) for y in tile_positions(height, tile, stride) for x in tile_positions(width, tile, stride)]


def tile_assignment(height: int, width: int, tile: int, stride: int) -> np.ndarray:
    """Index of the tile whose centre is nearest to each pixel centre; ties go to the lower index."""
    layout = np.asarray(tile_layout(height, width, tile, stride), dtype=np.float64)
    centers = layout + tile / 2.0
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    d2 = ((ys[:, None, None] - centers[None, None, :, 0]) ** 2
          + (xs[None, :, None] - centers[None, None, :, 1]) ** 2)
    return np.argmin(d2, axis=-1)


def flow_infer_tiled(img1: np.ndarray, img2: np.ndarray,
                     regress: Callable[[np.ndarray, np.ndarray], np.ndarray],
                     tile: int = 224, stride: int = 112) -> np.ndarray:
    """Run ``regress`` on co-located tiles of both images and stitch by nearest tile centre."""
    if img1.shape != img2.shape:
        raise DimensionError(f"image shapes differ: {img1.shape} vs {img2.shape}")
    H, W = img1.shape[:2]
    layout = tile_layout(H, W, tile, stride)
    owner = tile_assignment(H, W, tile, stride)
    out = None
    for k, (y, x) in enumerate(layout):
        sel = owner[y:y + tile, x:x + tile] == k
        if not sel.any():
            continue
        pred = np.asarray(regress(img1[y:y + tile, x:x + tile], img2[y:y + tile, x:x + tile]))
        if out is None:
            out = np.zeros((H, W) + pred.shape[2:], dtype=pred.dtype)
        out[y:y + tile, x:x + tile][sel] = pred[sel]
    return out


def stereo_mse_log_loss(pred_disp, gt_disp: np.ndarray, eps: float = 1e-3) -> Tensor:
    """Mean of (log max(pred, eps) - log max(gt, eps))^2 over pixels with finite ground truth."""
    pred = ad.tensor(pred_disp)
    gt = np.asarray(gt_disp, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = np.isfinite(gt)
    count = int(valid.sum())
    if count == 0:
        raise EmptyInputError("no valid ground-truth disparities")
    log_gt = np.log(np.maximum(np.where(valid, gt, 1.0), eps))
    diff = ad.log(ad.clamp_min(pred, eps)) - log_gt
    return ad.sum_(diff * diff * (valid / count))
