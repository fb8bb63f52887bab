"""A small ray-casting renderer for scenes made of textured axis-aligned rectangles.

This replaces a full indoor simulator: it only has to produce consistent
RGB + metric depth with controllable overlap and occlusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .geometry import CameraView, Intrinsics, look_at

NEAR = 0.01


@dataclass
class Rect:
    """Rectangle in the plane ``X[axis] == offset``.

    ``lo``/``hi`` bound the two remaining world axes, in increasing axis order;
    texture coordinate s runs along the first of those axes and t along the second.
    """

    axis: int
    offset: float
    lo: tuple[float, float]
    hi: tuple[float, float]
    texture: np.ndarray  # (h, w, 3)

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ConfigError(f"axis must be 0, 1 or 2, got {self.axis}")
        if not (self.hi[0] > self.lo[0] and self.hi[1] > self.lo[1]):
            raise ConfigError("rectangle bounds must have positive extent")


@dataclass
class Scene:
    rects: list[Rect]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)


def checkerboard(cells: int = 8, res: int = 64, c0=(0.1, 0.1, 0.1), c1=(0.9, 0.9, 0.9)) -> np.ndarray:
    idx = (np.arange(res) * cells // res)
    board = (idx[:, None] + idx[None, :]) % 2
    return np.where(board[..., None] == 1, np.asarray(c1), np.asarray(c0)).astype(np.float64)


def smooth_texture(rng: np.random.Generator, res: int = 64, knots: int = 4) -> np.ndarray:
    """Random low-frequency colour field: a ``knots`` x ``knots`` grid bilinearly upsampled."""
    coarse = rng.uniform(0.05, 0.95, size=(knots, knots, 3))
    pos = np.linspace(0.0, knots - 1.0, res)
    return _bilinear(coarse, pos[:, None] * np.ones((1, res)), np.ones((res, 1)) * pos[None, :])


def _bilinear(tex: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = tex.shape[:2]
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[..., None]
    fc = (cols - c0)[..., None]
    top = tex[r0, c0] * (1 - fc) + tex[r0, c1] * fc
    bot = tex[r1, c0] * (1 - fc) + tex[r1, c1] * fc
    return top * (1 - fr) + bot * fr


def render_toy_scene(scene: Scene, intrinsics: Intrinsics, R, t, width: int, height: int,
                     name: str = "") -> CameraView:
    """Ray-cast every pixel centre; the nearest hit beyond the near plane wins."""
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    # camera-frame ray with unit z, so the hit parameter is the z-depth
    dc = np.stack([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy,
                   np.ones_like(u)], axis=-1)
    dw = dc @ R.T
    depth = np.full((height, width), np.inf)
    image = np.empty((height, width, 3))
    image[:] = scene.background
    for rect in scene.rects:
        a = rect.axis
        b0, b1 = [i for i in range(3) if i != a]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (rect.offset - t[a]) / dw[..., a]
        p0 = t[b0] + lam * dw[..., b0]
        p1 = t[b1] + lam * dw[..., b1]
        hit = (np.isfinite(lam) & (lam > NEAR) & (lam < depth)
               & (p0 >= rect.lo[0]) & (p0 <= rect.hi[0]) & (p1 >= rect.lo[1]) & (p1 <= rect.hi[1]))
        if not hit.any():
            continue
        s = (p0[hit] - rect.lo[0]) / (rect.hi[0] - rect.lo[0])
        tt = (p1[hit] - rect.lo[1]) / (rect.hi[1] - rect.lo[1])
        th, tw = rect.texture.shape[:2]
        image[hit] = _bilinear(rect.texture, tt * (th - 1), s * (tw - 1))
        depth[hit] = lam[hit]
    return CameraView(np.clip(image, 0.0, 1.0), depth, intrinsics, R, t, name=name)


def wall_scene(rng: np.random.Generator, depth: float = 3.0, half: float = 3.0,
               n_boxes: int = 2, checker: bool = False) -> Scene:
    """A textured back wall at ``z = depth`` with a few smaller panels in front of it."""
    tex = checkerboard(8, 64) if checker else smooth_texture(rng, 64, 5)
    rects = [Rect(2, depth, (-half, -half), (half, half), tex)]
    for _ in range(n_boxes):
        z = rng.uniform(1.2, depth - 0.5)
        cx, cy = rng.uniform(-0.6, 0.6, size=2)
        w, h = rng.uniform(0.25, 0.6, size=2)
        rects.append(Rect(2, z, (cx - w, cy - h), (cx + w, cy + h), smooth_texture(rng, 32, 3)))
    return Scene(rects)


def translated_pair(scene: Scene, size: int, baseline, fov_deg: float = 60.0,
                    origin=(0.0, 0.0, 0.0)) -> tuple[CameraView, CameraView]:
    """Two views facing +z whose centres differ by the ``baseline`` vector."""
    K = Intrinsics.from_fov(size, size, fov_deg)
    R = np.eye(3)
    o = np.asarray(origin, dtype=np.float64)
    a = render_toy_scene(scene, K, R, o, size, size, name="a")
    b = render_toy_scene(scene, K, R, o + np.asarray(baseline, dtype=np.float64), size, size, name="b")
    return a, b


def toy_pairs(n: int, seed: int, size: int = 64, max_shift: float = 0.6,
              boxes: int = 2) -> list[tuple[CameraView, CameraView]]:
    """``n`` random two-view scenes with a sideways/vertical camera translation."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        scene = wall_scene(rng, n_boxes=boxes)
        shift = rng.uniform(-max_shift, max_shift, size=2)
        origin = (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0)
        out.append(translated_pair(scene, size, (shift[0], shift[1], 0.0), origin=origin))
    return out


def orbit_views(scene: Scene, n: int, size: int, radius: float = 0.8, fov_deg: float = 60.0,
                target=(0.0, 0.0, 3.0), seed: int = 0) -> list[CameraView]:
    """Views on a horizontal arc in front of the scene, all looking at ``target``."""
    rng = np.random.default_rng(seed)
    K = Intrinsics.from_fov(size, size, fov_deg)
    views = []
    for i in range(n):
        eye = np.array([rng.uniform(-radius, radius), rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3)])
        R = look_at(eye, np.asarray(target) + rng.uniform(-0.5, 0.5, size=3) * [1, 0.3, 0])
        views.append(render_toy_scene(scene, K, R, eye, size, size, name=f"view{i:03d}"))
    return views


def shift_pairs(n: int, seed: int, size: int = 64, max_shift: int = 4,
                knots: int = 10) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Image pairs related by one integer translation, with the constant (H, W, 2) flow.

    The second image satisfies ``img2[y + v, x + u] = img1[y, x]`` for flow (u, v).
    """
    rng = np.random.default_rng(seed)
    m = max_shift
    out = []
    for _ in range(n):
        tex = smooth_texture(rng, size + 2 * m, knots)
        u, v = (int(s) for s in rng.integers(-m, m + 1, size=2))
        img1 = tex[m:m + size, m:m + size]
        img2 = tex[m - v:m - v + size, m - u:m - u + size]
        flow = np.broadcast_to(np.array([u, v], dtype=np.float64), (size, size, 2)).copy()
        out.append((img1.copy(), img2.copy(), flow))
    return out
