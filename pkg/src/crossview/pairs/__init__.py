"""Two-view geometry, toy rendering and training-pair generation."""

from .geometry import (CameraView, Intrinsics, covisibility_naive, covisibility_ratio, look_at,
                       visibility_ratio, visibility_ratio_naive)
from .homography import dlt_homography, homography_pair, warp_image
from .render import Rect, Scene, render_toy_scene, toy_pairs, translated_pair
from .sampling import PairManifestEntry, read_manifest, sample_pairs, write_manifest

__all__ = [
    "CameraView", "Intrinsics", "covisibility_naive", "covisibility_ratio", "look_at",
    "visibility_ratio", "visibility_ratio_naive", "dlt_homography", "homography_pair",
    "warp_image", "Rect", "Scene", "render_toy_scene", "toy_pairs", "translated_pair",
    "PairManifestEntry", "read_manifest", "sample_pairs", "write_manifest",
]
