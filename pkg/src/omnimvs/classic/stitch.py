"""Rectify-and-stitch baseline: pinhole stereo pairs merged into one spherical map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..geometry import GeometryError, Rig, SweepGrid, footprint_inside, ray_to_spherical
from ..network import gt_index_map
from ..sweeping import bilinear
from .zncc import ZERO_VARIANCE_EPS

UP = np.array([0.0, 1.0, 0.0])


class CoverageError(GeometryError):
    """A virtual pinhole frustum reaches outside a fisheye field of view."""


@dataclass(frozen=True, eq=False)
class PinholeView:
    """Virtual pinhole camera sharing its center with a fisheye camera.

    ``rotation`` rows are the view axes (x right, y, z forward) in the rig frame.
    """

    size: int
    fov: float
    rotation: np.ndarray
    center: np.ndarray
    camera: int
    role: str  # "left" or "right"

    @property
    def focal(self) -> float:
        return (self.size / 2) / math.tan(self.fov / 2)

    @property
    def principal(self) -> float:
        return (self.size - 1) / 2

    def rays(self) -> np.ndarray:
        """Rig-frame unit rays (size, size, 3) through every pixel center."""
        v, u = np.mgrid[0:self.size, 0:self.size].astype(np.float64)
        d = np.stack([(u - self.principal) / self.focal, (v - self.principal) / self.focal,
                      np.ones_like(u)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation

    def project(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rig-frame points (..., 3) to (u, v, in_front)."""
        pc = (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation.T
        z = pc[..., 2]
        safe = np.where(z > 0, z, 1.0)
        return (self.principal + self.focal * pc[..., 0] / safe,
                self.principal + self.focal * pc[..., 1] / safe, z > 0)


@dataclass
class StereoPair:
    cameras: tuple[int, int]
    left: PinholeView
    right: PinholeView
    left_image: np.ndarray
    right_image: np.ndarray

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.right.center - self.left.center))


def pair_rotation(rig: Rig, i: int, j: int) -> np.ndarray:
    """Shared rectified orientation for cameras i and j.

    x runs along the baseline, z faces the horizontal bisector of the two
    optical axes, and y is chosen so the frame is right handed with y up.
    """
    ci, cj = rig[i].center, rig[j].center
    base = cj - ci
    norm = np.linalg.norm(base)
    if norm == 0:
        raise GeometryError(f"cameras {i} and {j} share a center")
    x = base / norm
    fwd = rig[i].rotation[2] + rig[j].rotation[2]
    fwd = fwd - (fwd @ UP) * UP
    z = fwd - (fwd @ x) * x
    if np.linalg.norm(z) < 1e-9:
        raise GeometryError(f"cameras {i} and {j}: bisector is parallel to the baseline")
    z /= np.linalg.norm(z)
    y = np.cross(z, x)
    if y @ UP < 0:
        x, y = -x, -y
    return np.stack([x, y, z])


def _resample(rig: Rig, cam: int, view: PinholeView, image, pair) -> np.ndarray:
    fish = rig[cam]
    u, v, ok = fish.project_points(view.rays(), at_infinity=True)
    ok &= footprint_inside(u, v, *fish.image_size)
    if not ok.all():
        raise CoverageError(f"pair {pair}: {view.fov:.3f} rad pinhole frustum is not covered "
                            f"by camera {cam} ({(~ok).sum()} pixels outside)")
    return bilinear(np.asarray(image, dtype=np.float64), u, v, ok)


def rectify_pairs(rig: Rig, images, size: int = 128, fov_deg: float = 120.0,
                  pairs=None) -> list[StereoPair]:
    """Rectified pinhole pairs for adjacent cameras (i, i+1 mod n) by default.

    The virtual views keep the fisheye centers, so each raster is a pure
    rotation resample of its fisheye image.
    """
    n = len(rig)
    if len(images) != n:
        raise ValueError(f"expected {n} images, got {len(images)}")
    if pairs is None:
        pairs = [(i, (i + 1) % n) for i in range(n)]
    fov = math.radians(fov_deg)
    out = []
    for i, j in pairs:
        rot = pair_rotation(rig, i, j)
        # the camera further along -x is the left one
        a, b = (i, j) if (rig[j].center - rig[i].center) @ rot[0] > 0 else (j, i)
        left = PinholeView(size, fov, rot, rig[a].center, a, "left")
        right = PinholeView(size, fov, rot, rig[b].center, b, "right")
        out.append(StereoPair((a, b), left, right,
                              _resample(rig, a, left, images[a], (i, j)),
                              _resample(rig, b, right, images[b], (i, j))))
    return out


def block_matching(left, right, max_disparity: int, patch: int = 9,
                   eps: float = ZERO_VARIANCE_EPS) -> tuple[np.ndarray, np.ndarray]:
    """ZNCC block matching along rows; left(u) matches right(u - d).

    Returns (disparity with parabolic sub-pixel refinement, valid mask).
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    h, w = left.shape
    box = lambda x: uniform_filter(x, size=patch, mode="nearest")  # noqa: E731
    ml = box(left)
    vl = box(left * left) - ml * ml
    scores = np.full((max_disparity + 1, h, w), -np.inf)
    for d in range(max_disparity + 1):
        shifted = np.empty_like(right)
        shifted[:, d:] = right[:, :w - d]
        shifted[:, :d] = right[:, :1]
        mr = box(shifted)
        vr = box(shifted * shifted) - mr * mr
        cov = box(left * shifted) - ml * mr
        ok = (vl > eps) & (vr > eps)
        ok[:, :d] = False
        with np.errstate(invalid="ignore"):
            scores[d] = np.where(ok, cov / np.sqrt(np.where(ok, vl * vr, 1.0)), -np.inf)
    best = np.argmax(scores, axis=0)
    top = np.take_along_axis(scores, best[None], 0)[0]
    valid = np.isfinite(top)
    disp = best.astype(np.float64)
    inner = valid & (best > 0) & (best < max_disparity)
    r, c = np.nonzero(inner)
    b = best[r, c]
    s0, s1, s2 = scores[b - 1, r, c], scores[b, r, c], scores[b + 1, r, c]
    denom = s0 - 2 * s1 + s2
    good = np.isfinite(denom) & (denom < 0)
    offset = np.where(good, 0.5 * (s0 - s2) / np.where(good, denom, 1.0), 0.0)
    disp[r, c] += np.clip(offset, -0.5, 0.5)
    return np.where(valid, disp, np.nan), valid


def max_disparity_for(pair: StereoPair, inv_depth_max: float, margin: int = 2) -> int:
    return int(math.ceil(pair.left.focal * pair.baseline * inv_depth_max)) + margin


def triangulate(pair: StereoPair, disparity, valid) -> tuple[np.ndarray, np.ndarray]:
    """Rig-frame points from left-view disparities (z = f b / d).

    Zero disparity yields points at infinity; their returned rows are unit
    directions and the second output flags them.
    """
    view = pair.left
    v, u = np.nonzero(valid)
    d = disparity[v, u]
    dirs = np.stack([(u - view.principal) / view.focal, (v - view.principal) / view.focal,
                     np.ones_like(d)], axis=-1)
    at_inf = d <= 0
    z = pair.left.focal * pair.baseline / np.where(at_inf, 1.0, d)
    pts = view.center + (dirs * z[:, None]) @ view.rotation
    unit = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    pts[at_inf] = (unit @ view.rotation)[at_inf]
    return pts, at_inf


def stitch_points(points, at_infinity, grid: SweepGrid, radius: float = 1.0):
    """Merge rig-frame points into a (H, W) distance map.

    Each cell keeps the closest point whose projection lies strictly within
    ``radius`` cells of its center (the column axis wraps). Returns
    (distance, covered) with inf where a covered cell only saw points at
    infinity and NaN where no point landed.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    at_infinity = np.asarray(at_infinity, dtype=bool).reshape(-1)
    rho = np.where(at_infinity, np.inf, np.linalg.norm(points, axis=-1))
    keep = at_infinity | (rho > 0)
    points, rho = points[keep], rho[keep]
    theta, phi = ray_to_spherical(points)
    dtheta = 2 * math.pi / grid.width
    dphi = (grid.phi_max - grid.phi_min) / grid.height
    col = (theta + math.pi) / dtheta - 0.5
    row = (phi - grid.phi_min) / dphi - 0.5
    best = np.full(grid.height * grid.width, np.inf)
    hit = np.zeros(grid.height * grid.width, dtype=bool)
    span = int(math.ceil(radius))
    base_r, base_c = np.floor(row).astype(np.int64), np.floor(col).astype(np.int64)
    for dr in range(-span + 1, span + 1):
        for dc in range(-span + 1, span + 1):
            r, c = base_r + dr, base_c + dc
            # the margin keeps a neighbour exactly one cell away out despite rounding
            near = (r - row) ** 2 + (c - col) ** 2 < radius * radius * (1 - 1e-9)
            near &= (r >= 0) & (r < grid.height)
            flat = r[near] * grid.width + np.mod(c[near], grid.width)
            np.minimum.at(best, flat, rho[near])
            hit[flat] = True
    dist = np.where(hit, best, np.nan).reshape(grid.height, grid.width)
    return dist, hit.reshape(grid.height, grid.width)


def stitch_index(points, at_infinity, grid: SweepGrid, radius: float = 1.0):
    """Closest-point merge converted to inverse-depth indices.

    Returns (index map with NaN in ignored cells, ignored mask).
    """
    dist, covered = stitch_points(points, at_infinity, grid, radius)
    index = np.full(dist.shape, np.nan)
    index[covered] = gt_index_map(dist[covered], grid)
    return index, ~covered


def stitch_disparities(pairs, disparities, grid: SweepGrid, radius: float = 1.0):
    """Omnidirectional index map from per-pair (disparity, valid) maps.

    Returns (index map with NaN in ignored cells, ignored mask).
    """
    pts, inf = [], []
    for pair, (disp, valid) in zip(pairs, disparities):
        p, a = triangulate(pair, disp, valid)
        pts.append(p)
        inf.append(a)
    return stitch_index(np.concatenate(pts), np.concatenate(inf), grid, radius)


def stitch_estimate(rig: Rig, images, grid: SweepGrid, size: int = 128,
                    fov_deg: float = 120.0, patch: int = 9):
    """Full baseline: rectify, block-match, triangulate and stitch."""
    pairs = rectify_pairs(rig, images, size, fov_deg)
    disps = [block_matching(p.left_image, p.right_image,
                            max_disparity_for(p, grid.inv_depth_max), patch) for p in pairs]
    return stitch_disparities(pairs, disps, grid)
