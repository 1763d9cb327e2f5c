"""Ray-cast rendering of fisheye images and omnidirectional GT depth."""

from __future__ import annotations

import numpy as np

from ..geometry import FisheyeCamera, SweepGrid
from .scene import Scene


def camera_rays(cam: FisheyeCamera, image_size=None):
    """Rig-frame unit rays for every pixel plus the in-fov mask."""
    h, w = image_size or cam.image_size
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    rays, inside = cam.pixel_rays(u, v)
    return rays @ cam.rotation, inside


def render_fisheye(scene: Scene, cam: FisheyeCamera, image_size=None) -> np.ndarray:
    """Grayscale float raster in [0, 1]; pixels beyond the fov are 0."""
    dirs, inside = camera_rays(cam, image_size)
    out = np.zeros(dirs.shape[:-1])
    out[inside] = scene.shade(cam.center, dirs[inside])
    return out


def render_gt_depth(scene: Scene, grid: SweepGrid) -> np.ndarray:
    """Distance from the rig origin to the nearest surface per grid cell (inf for sky)."""
    t, _ = scene.intersect(np.zeros(3), grid.rays())
    return t


def visible_from(scene: Scene, origin, points, tol: float = 1e-6) -> np.ndarray:
    """True where the segment origin -> point is unobstructed (relative tolerance ``tol``)."""
    origin = np.asarray(origin, dtype=np.float64)
    delta = points - origin
    dist = np.linalg.norm(delta, axis=-1)
    dirs = delta / np.where(dist > 0, dist, 1.0)[..., None]
    t, _ = scene.intersect(origin, dirs)
    return t >= dist * (1 - tol) - tol
