"""Evaluation metrics for flow, depth and disparity maps.

Flow fields are (H, W, 2) arrays holding the (u, v) displacement of each
pixel from the first image to the second.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, EmptyInputError


def _valid(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError(f"valid mask {mask.shape} does not match {shape}")
    return mask


def _check(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def metric_aepe(pred, gt, valid=None) -> float:
    """Average endpoint error over valid pixels."""
    pred, gt = _check(pred, gt)
    if pred.ndim != 3 or pred.shape[-1] != 2:
        raise DimensionError(f"flow must be (H, W, 2), got {pred.shape}")
    valid = _valid(valid, pred.shape[:2])
    if not valid.any():
        raise EmptyInputError("AEPE over an empty valid set")
    epe = np.sqrt(((pred - gt) ** 2).sum(axis=-1))
    return float(epe[valid].mean())


def metric_delta1(pred_depth, gt_depth, threshold: float = 1.25) -> float:
    """Fraction of pixels with gt > 0 whose max(pred/gt, gt/pred) is below ``threshold``."""
    pred, gt = _check(pred_depth, gt_depth)
    valid = np.isfinite(gt) & (gt > 0)
    if not valid.any():
        raise EmptyInputError("delta1 needs pixels with positive ground truth")
    p, g = pred[valid], gt[valid]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    return float(np.mean(np.where(p > 0, ratio, np.inf) < threshold))


def metric_bad3(pred_disp, gt_disp, valid=None) -> float:
    """Error rate: share of valid pixels with |err| > 3 px and |err| > 5% of the ground truth."""
    pred, gt = _check(pred_disp, gt_disp)
    valid = _valid(valid, gt.shape) & np.isfinite(gt)
    if not valid.any():
        raise EmptyInputError("bad3 over an empty valid set")
    err = np.abs(pred[valid] - gt[valid])
    return float(np.mean((err > 3.0) & (err > 0.05 * np.abs(gt[valid]))))


def metric_l1x1000(pred, gt, valid=None) -> float:
    pred, gt = _check(pred, gt)
    valid = _valid(valid, gt.shape)
    if not valid.any():
        raise EmptyInputError("L1 over an empty valid set")
    return float(np.abs(pred - gt)[valid].mean() * 1000.0)
