"""Posed RGB-D views and depth-reprojection co-visibility.

Camera convention: x right, y down, z forward; poses are world-from-camera,
``X_world = R @ X_cam + t``. Pixel (u, v) has its center at integer
coordinates, and depth is the camera-frame z of the surface seen there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError, EmptyInputError


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass
class CameraView:
    image: np.ndarray       # (H, W, 3) in [0, 1]
    depth: np.ndarray       # (H, W) metres, non-finite where nothing was hit
    intrinsics: Intrinsics
    R: np.ndarray           # world-from-camera rotation
    t: np.ndarray           # camera centre in world coordinates
    name: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2 or self.image.shape[:2] != self.depth.shape:
            raise DimensionError(f"image {self.image.shape} and depth {self.depth.shape} disagree")
        if not is_rotation(self.R):
            raise ConfigError("camera rotation is not in SO(3)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def is_rotation(R: np.ndarray, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=np.float64)
    return (R.shape == (3, 3) and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol)


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """World-from-camera rotation for a camera at ``eye`` looking at ``target`` (y down)."""
    eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(-up, z)
    if np.linalg.norm(x) < 1e-9:
        raise ConfigError("look_at: up vector parallel to the viewing direction")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _visible_mask(a: CameraView, b: CameraView, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel visibility of ``a`` in ``b``; returns (valid, visible) boolean maps of a."""
    H, W = a.shape
    Hb, Wb = b.shape
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    z = a.depth
    valid = np.isfinite(z)
    z = np.where(valid, z, 1.0)
    ka, kb = a.intrinsics, b.intrinsics
    Ra, ta, Rb, tb = a.R, a.t, b.R, b.t
    # same arithmetic, term for term, as the per-pixel reference below
    xc = (u - ka.cx) / ka.fx * z
    yc = (v - ka.cy) / ka.fy * z
    zc = z
    wx = Ra[0, 0] * xc + Ra[0, 1] * yc + Ra[0, 2] * zc + ta[0]
    wy = Ra[1, 0] * xc + Ra[1, 1] * yc + Ra[1, 2] * zc + ta[1]
    wz = Ra[2, 0] * xc + Ra[2, 1] * yc + Ra[2, 2] * zc + ta[2]
    dx, dy, dz = wx - tb[0], wy - tb[1], wz - tb[2]
    xb = Rb[0, 0] * dx + Rb[1, 0] * dy + Rb[2, 0] * dz
    yb = Rb[0, 1] * dx + Rb[1, 1] * dy + Rb[2, 1] * dz
    zb = Rb[0, 2] * dx + Rb[1, 2] * dy + Rb[2, 2] * dz
    front = zb > 0.0
    zs = np.where(front, zb, 1.0)
    ub = kb.fx * xb / zs + kb.cx
    vb = kb.fy * yb / zs + kb.cy
    iu = np.floor(ub + 0.5)
    iv = np.floor(vb + 0.5)
    inside = front & (iu >= 0) & (iu < Wb) & (iv >= 0) & (iv < Hb)
    iu_c = np.clip(iu, 0, Wb - 1).astype(np.intp)
    iv_c = np.clip(iv, 0, Hb - 1).astype(np.intp)
    db = b.depth[iv_c, iu_c]
    db_ok = np.isfinite(db)
    db_s = np.where(db_ok, db, 1.0)
    agree = np.abs(zb - db_s) <= tau * db_s
    return valid, valid & inside & db_ok & agree


def visibility_ratio(a: CameraView, b: CameraView, tau: float = 0.02) -> float:
    """Fraction of geometry-bearing pixels of ``a`` that are seen unoccluded in ``b``."""
    if not tau > 0:
        raise ConfigError(f"depth tolerance must be positive, got {tau}")
    valid, visible = _visible_mask(a, b, tau)
    n = int(valid.sum())
    if n == 0:
        raise EmptyInputError(f"view {a.name or '?'} has no finite-depth pixels")
    return int(visible.sum()) / n


def covisibility_ratio(a: CameraView, b: CameraView, tau: float = 0.02) -> tuple[float, float, float]:
    v_ab = visibility_ratio(a, b, tau)
    v_ba = visibility_ratio(b, a, tau)
    return v_ab, v_ba, min(v_ab, v_ba)


def visibility_ratio_naive(a: CameraView, b: CameraView, tau: float = 0.02) -> float:
    """Per-pixel double loop in plain Python floats; reference for ``visibility_ratio``."""
    H, W = a.shape
    Hb, Wb = b.shape
    ka, kb = a.intrinsics, b.intrinsics
    Ra, ta = a.R.tolist(), a.t.tolist()
    Rb, tb = b.R.tolist(), b.t.tolist()
    depth_b = b.depth.tolist()
    total = seen = 0
    for v in range(H):
        for u in range(W):
            z = float(a.depth[v, u])
            if not math.isfinite(z):
                continue
            total += 1
            xc = (float(u) - ka.cx) / ka.fx * z
            yc = (float(v) - ka.cy) / ka.fy * z
            w = [Ra[i][0] * xc + Ra[i][1] * yc + Ra[i][2] * z + ta[i] for i in range(3)]
            d = [w[i] - tb[i] for i in range(3)]
            cam = [Rb[0][j] * d[0] + Rb[1][j] * d[1] + Rb[2][j] * d[2] for j in range(3)]
            if not cam[2] > 0.0:
                continue
            iu = math.floor(kb.fx * cam[0] / cam[2] + kb.cx + 0.5)
            iv = math.floor(kb.fy * cam[1] / cam[2] + kb.cy + 0.5)
            if not (0 <= iu < Wb and 0 <= iv < Hb):
                continue
            db = depth_b[iv][iu]
            if math.isfinite(db) and abs(cam[2] - db) <= tau * db:
                seen += 1
    if total == 0:
        raise EmptyInputError("no finite-depth pixels")
    return seen / total


def covisibility_naive(a: CameraView, b: CameraView, tau: float = 0.02) -> tuple[float, float, float]:
    v_ab = visibility_ratio_naive(a, b, tau)
    v_ba = visibility_ratio_naive(b, a, tau)
    return v_ab, v_ba, min(v_ab, v_ba)


def relative_pose_stats(a: CameraView, b: CameraView) -> tuple[float, float]:
    """Camera-centre distance (m) and relative rotation angle (degrees)."""
    dist = float(np.linalg.norm(a.t - b.t))
    cos = (np.trace(a.R.T @ b.R) - 1.0) / 2.0
    return dist, float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
