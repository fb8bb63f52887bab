"""Central finite-difference gradient checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5,
                 entries: np.ndarray | None = None) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place and restoring it.

    With ``entries`` (flat indices) only those coordinates are differenced and
    the rest of the result stays zero.
    """
    g = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 0.0) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor); 0 when all vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    floor: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> dict:
    """Relative error between the analytic and numeric gradient of each tensor.

    ``loss_fn`` rebuilds the graph from the current ``tensors`` data and
    returns a scalar. Run under :func:`autodiff.float64_mode`. A tensor whose
    gradient norm is below ``floor`` times the largest one in the check is
    measured against that level instead, so a gradient that vanishes
    analytically (a key bias shifts a whole softmax row) is not judged on
    round-off alone. ``max_entries`` compares a seeded random subset of each
    larger tensor's coordinates.
    """
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    loss_fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]

    def value() -> float:
        with ad.no_grad():
            return float(loss_fn().data)

    rng = np.random.default_rng(seed)
    pairs = []
    for t, a in zip(tensors, analytic):
        idx = np.arange(t.data.size)
        if max_entries is not None and t.data.size > max_entries:
            idx = np.sort(rng.choice(t.data.size, max_entries, replace=False))
        pairs.append((a.reshape(-1)[idx], numeric_grad(value, t.data, h, idx).reshape(-1)[idx]))
    top = max(max(np.linalg.norm(a), np.linalg.norm(n)) for a, n in pairs)
    return {t.name or f"input{k}": rel_error(a, n, floor * top)
            for k, (t, (a, n)) in enumerate(zip(tensors, pairs))}
