"""Binary PPM (P6) images and CRDP raw float32 maps."""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataError

CRDP_MAGIC = b"CRDP"
CRDP_HEADER = struct.Struct("<4sIII")


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"{path}: PPM needs an (H, W, 3) image, got {img.shape}")
    data = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def _ppm_tokens(buf: bytes, count: int):
    """Yield (token, end offset) for the first ``count`` header tokens, skipping comments."""
    pos, out = 0, []
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"truncated PPM header at byte {pos}")
        out.append(buf[start:pos])
    return out, pos


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit P6 file into float64 values in [0, 1]."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from e
    tokens, pos = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM (magic {tokens[0]!r} at byte 0)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DataError(f"{path}: malformed PPM header") from e
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = w * h * 3
    if len(buf) - pos < need:
        raise DataError(f"{path}: expected {need} pixel bytes at offset {pos}, found {len(buf) - pos}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return data.astype(np.float64) / 255.0


def write_crdp(path, arr: np.ndarray) -> None:
    """(H, W) or (H, W, C) float map; the channel count goes into the reserved header field."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise DataError(f"{path}: CRDP needs an (H, W[, C]) array, got {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(CRDP_HEADER.pack(CRDP_MAGIC, h, w, c))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_crdp(path, channels: int | None = None) -> np.ndarray:
    """Read a CRDP map: (H, W) for one channel, (H, W, C) otherwise.

    ``channels`` asserts the expected channel count.
    """
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from e
    if len(buf) < CRDP_HEADER.size:
        raise DataError(f"{path}: header truncated at offset {len(buf)} (need {CRDP_HEADER.size} bytes)")
    magic, h, w, c = CRDP_HEADER.unpack_from(buf, 0)
    if magic != CRDP_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0")
    c = c or 1
    if channels is not None and c != channels:
        raise DataError(f"{path}: expected {channels} channel(s), header at offset 12 says {c}")
    need = h * w * c * 4
    if len(buf) - CRDP_HEADER.size != need:
        raise DataError(f"{path}: payload at offset {CRDP_HEADER.size} has "
                        f"{len(buf) - CRDP_HEADER.size} bytes, header implies {need}")
    data = np.frombuffer(buf, dtype="<f4", offset=CRDP_HEADER.size).reshape(h, w, c)
    return data[..., 0].copy() if c == 1 else data.copy()


def ensure_dir(path, force: bool = False) -> None:
    """Create ``path``; an existing non-empty directory is only reused with ``force``."""
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise FileExistsError(f"{path} exists and is not empty (pass --force to reuse it)")
    os.makedirs(path, exist_ok=True)
