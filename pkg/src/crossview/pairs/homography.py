"""Synthetic pairs from a single image: random homography warp plus colour jitter."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, SingularInputError


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def dlt_homography(src, dst) -> np.ndarray:
    """Homography H with ``dst ~ H @ src`` from >= 4 point correspondences, scaled so H[2, 2] = 1.

    Points are Hartley-normalized before the SVD solve.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2 or src.shape[0] < 4:
        raise DimensionError("need matching (n >= 4, 2) point arrays")
    Ts, Td = _normalizing_transform(src), _normalizing_transform(dst)
    sh = np.c_[src, np.ones(len(src))] @ Ts.T
    dh = np.c_[dst, np.ones(len(dst))] @ Td.T
    rows = []
    for (x, y, w), (u, v, z) in zip(sh, dh):
        rows.append([0, 0, 0, -z * x, -z * y, -z * w, v * x, v * y, v * w])
        rows.append([z * x, z * y, z * w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, s, vt = np.linalg.svd(np.asarray(rows))
    if s[-2] < 1e-12 * s[0]:
        raise SingularInputError("degenerate point configuration")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-12:
        raise SingularInputError("homography sends the origin to infinity")
    return H / H[2, 2]


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.c_[pts, np.ones(len(pts))] @ np.asarray(H).T
    return ph[:, :2] / ph[:, 2:3]


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous pixel coordinates, clamping to the edge."""
    H, W = img.shape[:2]
    x = np.clip(x, 0.0, W - 1.0)
    y = np.clip(y, 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_image(img: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Output pixel p takes the value of ``img`` at ``H^-1 p``; H maps input to output."""
    h, w = img.shape[:2]
    Hinv = np.linalg.inv(H)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    src = apply_homography(Hinv, np.c_[xx.ravel(), yy.ravel()])
    return sample_bilinear(img, src[:, 0].reshape(h, w), src[:, 1].reshape(h, w))


def random_homography(height: int, width: int, strength: float, rng: np.random.Generator,
                      max_tries: int = 100) -> np.ndarray:
    """Perturb the four image corners by up to ``strength`` times the image size."""
    if strength == 0:
        return np.eye(3)
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
    scale = np.array([width, height], dtype=np.float64) * strength
    for _ in range(max_tries):
        moved = corners + rng.uniform(-1.0, 1.0, size=(4, 2)) * scale
        if not _is_convex(moved):
            continue
        try:
            H = dlt_homography(corners, moved)
        except SingularInputError:
            continue
        if np.linalg.cond(H) < 1e8:
            return H
    raise SingularInputError("could not sample a well-conditioned homography")


def _is_convex(quad: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        a, b, c = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        signs.append(np.sign((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])))
    return all(s > 0 for s in signs) or all(s < 0 for s in signs)


def color_jitter(img: np.ndarray, amount: float, rng: np.random.Generator) -> np.ndarray:
    """Random brightness, contrast and saturation factors in [1 - amount, 1 + amount]."""
    if amount == 0:
        return img.copy()
    b, c, s = rng.uniform(1.0 - amount, 1.0 + amount, size=3)
    out = img * b
    gray = out @ np.array([0.299, 0.587, 0.114])
    out = (out - gray.mean()) * c + gray.mean()
    gray = (out @ np.array([0.299, 0.587, 0.114]))[..., None]
    out = gray + (out - gray) * s
    return np.clip(out, 0.0, 1.0)


def homography_pair(img: np.ndarray, strength: float = 0.15, seed: int = 0,
                    jitter: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    H = random_homography(img.shape[0], img.shape[1], strength, rng)
    second = img.copy() if strength == 0 else warp_image(img, H)
    return img, color_jitter(second, jitter, rng)
