"""Co-visibility-filtered pair sampling, pair manifests and on-disk scene directories.

A scene directory holds one triple per view: ``<name>.ppm`` (RGB),
``<name>.depth`` (CRDP, metres) and ``<name>.json`` (intrinsics and pose).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from ..errors import ConfigError, DataError
from ..io import read_crdp, read_ppm, write_crdp, write_ppm
from .geometry import CameraView, Intrinsics, covisibility_ratio, relative_pose_stats


@dataclass
class PairManifestEntry:
    path_view1: str
    path_view2: str
    covis: float


def all_pair_covis(views: list[CameraView], tau: float = 0.02) -> dict[tuple[int, int], float]:
    return {(i, j): covisibility_ratio(views[i], views[j], tau)[2]
            for i, j in combinations(range(len(views)), 2)}


def sample_pairs(views: list[CameraView], lo: float = 0.5, hi: float = 1.0, per_scene_cap: int = 1000,
                 seed: int = 0, tau: float = 0.02, covis: dict | None = None) -> list[PairManifestEntry]:
    """Unordered pairs with ``lo <= covis <= hi``, a uniform random subset of at most ``per_scene_cap``."""
    if not 0.0 <= lo < hi <= 1.0:
        raise ConfigError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    covis = all_pair_covis(views, tau) if covis is None else covis
    keep = [(i, j) for (i, j), c in sorted(covis.items()) if lo <= c <= hi]
    rng = np.random.default_rng(seed)
    if len(keep) > per_scene_cap:
        pick = rng.choice(len(keep), size=per_scene_cap, replace=False)
        keep = [keep[k] for k in sorted(pick)]
    return [PairManifestEntry(views[i].name or str(i), views[j].name or str(j), covis[(i, j)])
            for i, j in keep]


def write_manifest(path, entries: list[PairManifestEntry]) -> None:
    entries = sorted(entries, key=lambda e: (e.path_view1, e.path_view2))
    with open(path, "w") as f:
        for e in entries:
            f.write(json.dumps(asdict(e)) + "\n")


def read_manifest(path) -> list[PairManifestEntry]:
    try:
        with open(path) as f:
            lines = [ln for ln in f if ln.strip()]
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from e
    out = []
    for k, line in enumerate(lines, 1):
        try:
            d = json.loads(line)
            out.append(PairManifestEntry(str(d["path_view1"]), str(d["path_view2"]), float(d["covis"])))
        except (ValueError, KeyError, TypeError) as e:
            raise DataError(f"{path}:{k}: malformed manifest line") from e
    return out


def resolve(manifest_path, entry_path: str) -> str:
    if os.path.isabs(entry_path):
        return entry_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), entry_path)


def write_stats_csv(path, rows: list[tuple[PairManifestEntry, CameraView, CameraView]]) -> None:
    """Per-pair camera distance, relative rotation angle and co-visibility."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["view1", "view2", "distance_m", "angle_deg", "covis"])
        for e, a, b in sorted(rows, key=lambda r: (r[0].path_view1, r[0].path_view2)):
            dist, ang = relative_pose_stats(a, b)
            w.writerow([e.path_view1, e.path_view2, f"{dist:.6f}", f"{ang:.6f}", repr(e.covis)])


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def save_view(directory, view: CameraView) -> str:
    """Write the view triple; returns the image path."""
    base = os.path.join(directory, view.name)
    write_ppm(base + ".ppm", view.image)
    write_crdp(base + ".depth", view.depth.astype(np.float32))
    k = view.intrinsics
    with open(base + ".json", "w") as f:
        json.dump({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                   "R": view.R.tolist(), "t": view.t.tolist()}, f, indent=1)
    return base + ".ppm"


def load_view(directory, name: str) -> CameraView:
    base = os.path.join(directory, name)
    try:
        with open(base + ".json") as f:
            meta = json.load(f)
    except OSError as e:
        raise DataError(f"{base}.json: {e.strerror}") from e
    except ValueError as e:
        raise DataError(f"{base}.json: malformed camera file") from e
    image = read_ppm(base + ".ppm")
    depth = read_crdp(base + ".depth", channels=1).astype(np.float64)
    K = Intrinsics(meta["fx"], meta["fy"], meta["cx"], meta["cy"])
    return CameraView(image, depth, K, np.asarray(meta["R"]), np.asarray(meta["t"]), name=name)


def load_scene(directory) -> list[CameraView]:
    if not os.path.isdir(directory):
        raise DataError(f"{directory}: scene directory not found")
    names = sorted(_stem(f) for f in os.listdir(directory) if f.endswith(".json"))
    if not names:
        raise DataError(f"{directory}: no views (expected <name>.json/.ppm/.depth triples)")
    return [load_view(directory, n) for n in names]
