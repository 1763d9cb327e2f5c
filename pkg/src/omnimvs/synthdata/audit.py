"""Renderer/GT consistency audit: warp camera images onto the GT depth surface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..classic.zncc import camera_pairs, masked_zncc
from ..geometry import Rig, SweepGrid, footprint_inside
from ..sweeping import bilinear
from .render import visible_from
from .scene import Scene

TEXTURE_STD = 0.02  # window std (intensity in [0, 1]) below which a cell counts as untextured


@dataclass
class AuditResult:
    """Per camera pair: ZNCC at the GT surface and the cells it was evaluated on."""

    pairs: list[tuple[int, int]]
    zncc: np.ndarray      # (P, H, W)
    evaluated: np.ndarray  # (P, H, W) textured, co-visible and ZNCC-valid
    occluded_fraction: float

    def pass_fraction(self, threshold: float = 0.9) -> float:
        n = int(self.evaluated.sum())
        return float(np.count_nonzero(self.zncc[self.evaluated] >= threshold)) / n if n else 0.0

    @property
    def cells(self) -> np.ndarray:
        """(H, W) cells evaluated for at least one pair."""
        return self.evaluated.any(axis=0)


def warp_to_depth(images, rig: Rig, grid: SweepGrid, depth, scene: Scene | None = None):
    """Sample every camera at the GT surface point of each grid cell.

    Returns (values (C, H, W), usable (C, H, W)) where usable requires a
    finite depth, an in-view full bilinear footprint and, when ``scene`` is
    given, an unoccluded segment from the camera to the point.
    """
    depth = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(depth)
    pts = grid.rays() * np.where(finite, depth, 1.0)[..., None]
    vals, usable = [], []
    for cam, img in zip(rig, images):
        u, v, ok = cam.project_points(pts)
        ok &= finite & footprint_inside(u, v, *cam.image_size)
        if scene is not None:
            seen = np.zeros_like(ok)
            seen[ok] = visible_from(scene, cam.center, pts[ok], tol=1e-4)
            ok &= seen
        vals.append(bilinear(np.asarray(img, dtype=np.float64), u, v, ok))
        usable.append(ok)
    return np.stack(vals), np.stack(usable)


def _window_std(x, mask, patch):
    m = mask.astype(np.float64)
    box = lambda a: uniform_filter(a, size=patch, mode=("constant", "wrap"))  # noqa: E731
    with np.errstate(invalid="ignore", divide="ignore"):
        n = box(m)
        mean = box(np.where(mask, x, 0.0)) / n
        var = box(np.where(mask, x * x, 0.0)) / n - mean * mean
    return np.sqrt(np.clip(np.nan_to_num(var), 0.0, None))


def gt_consistency(scene: Scene, rig: Rig, grid: SweepGrid, images, depth,
                   patch: int = 9, texture_std: float = TEXTURE_STD) -> AuditResult:
    """Pairwise ZNCC of the images warped to the GT surface (intensities in [0, 1])."""
    vals, usable = warp_to_depth(images, rig, grid, depth, scene)
    in_view = warp_to_depth(images, rig, grid, depth)[1]
    blocked = (in_view & ~usable).any(axis=0)
    pairs = camera_pairs(len(rig))
    zs, evaluated = [], []
    for i, j in pairs:
        mask = usable[i] & usable[j]
        z, ok = masked_zncc(vals[i][..., None], vals[j][..., None], mask[..., None], patch)
        textured = (_window_std(vals[i], mask, patch) >= texture_std) & \
            (_window_std(vals[j], mask, patch) >= texture_std)
        zs.append(z[..., 0])
        evaluated.append(ok[..., 0] & textured)
    return AuditResult(pairs, np.stack(zs), np.stack(evaluated),
                       float(blocked.sum()) / max(int(in_view.any(axis=0).sum()), 1))
