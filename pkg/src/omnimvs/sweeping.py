"""Spherical sweeping: lookup tables and bilinear warps onto the sweep spheres."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, as_tensor, concat
from .autodiff.conv import ShapeError
from .geometry import Rig, SweepGrid, footprint_inside, sphere_points
from .io import FormatError, read_blob, write_blob

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class LookupTable:
    """Source pixel coordinates for every (camera, swept sphere, row, col).

    ``coords`` has shape (num_cameras, num_swept, H, W, 2) holding (u, v) in
    source-raster pixels (already divided by ``source_scale``); ``valid``
    is the matching boolean mask. Invalid entries hold zeros.
    """

    coords: np.ndarray
    valid: np.ndarray
    source_shape: tuple[int, int]
    source_scale: int
    sphere_indices: np.ndarray
    rig_hash: str
    grid: SweepGrid
    _weights: dict = field(default_factory=dict, repr=False)

    @property
    def num_cameras(self) -> int:
        return self.coords.shape[0]

    def masks(self, cam: int) -> np.ndarray:
        """(H, W, num_swept) validity for one camera."""
        return np.moveaxis(self.valid[cam], 0, -1)

    def sampling_matrix(self, cam: int) -> sp.csr_matrix:
        """Sparse bilinear operator from the flattened source raster to (H*W*num_swept)."""
        if cam not in self._weights:
            self._weights[cam] = _sampling_matrix(self, cam)
        return self._weights[cam]


@dataclass
class SphericalVolume:
    """Warped volume (H, W, num_swept, C) plus its (H, W, num_swept) validity mask."""

    data: Tensor | np.ndarray
    mask: np.ndarray


def source_shape_for(image_size, source_scale: int) -> tuple[int, int]:
    h, w = image_size
    return -(-h // source_scale), -(-w // source_scale)


def build_lookup(rig: Rig, grid: SweepGrid, source_scale: int = 1) -> LookupTable:
    if source_scale < 1 or int(source_scale) != source_scale:
        raise ValueError(f"source_scale must be a positive integer, got {source_scale}")
    sizes = {cam.image_size for cam in rig}
    if len(sizes) != 1:
        raise ValueError("all cameras must share one raster size")
    src_h, src_w = source_shape_for(sizes.pop(), source_scale)
    indices = grid.sphere_indices
    coords = np.zeros((len(rig), len(indices), grid.height, grid.width, 2), dtype=np.float32)
    valid = np.zeros((len(rig), len(indices), grid.height, grid.width), dtype=bool)
    for i, cam in enumerate(rig):
        for j, n in enumerate(indices):
            pts, at_inf = sphere_points(grid, int(n))
            u, v, ok = cam.project_points(pts, at_infinity=at_inf)
            u32 = (u / source_scale).astype(np.float32)
            v32 = (v / source_scale).astype(np.float32)
            ok &= footprint_inside(u32, v32, src_h, src_w)
            coords[i, j, ..., 0] = np.where(ok, u32, 0)
            coords[i, j, ..., 1] = np.where(ok, v32, 0)
            valid[i, j] = ok
    return LookupTable(coords, valid, (src_h, src_w), int(source_scale), indices,
                       rig.hash(), grid)


def _corners(u, v, h, w):
    u = u.astype(np.float64)
    v = v.astype(np.float64)
    x0 = np.minimum(np.floor(u), w - 2).astype(np.int64)
    y0 = np.minimum(np.floor(v), h - 2).astype(np.int64)
    return x0, y0, u - x0, v - y0


def bilinear(raster, u, v, valid) -> np.ndarray:
    """Bilinear samples of an (h, w) or (h, w, C) raster in float64; zero where invalid.

    Weights are applied as (1-fy)((1-fx) I00 + fx I01) + fy((1-fx) I10 + fx I11).
    """
    raster = np.asarray(raster, dtype=np.float64)
    h, w = raster.shape[:2]
    u = np.where(valid, u, 0)
    v = np.where(valid, v, 0)
    x0, y0, fx, fy = _corners(u, v, h, w)
    if raster.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = (1 - fx) * raster[y0, x0] + fx * raster[y0, x0 + 1]
    bottom = (1 - fx) * raster[y0 + 1, x0] + fx * raster[y0 + 1, x0 + 1]
    out = (1 - fy) * top + fy * bottom
    keep = valid[..., None] if raster.ndim == 3 else valid
    return np.where(keep, out, 0.0)


def _check_camera(table: LookupTable, cam: int):
    if not 0 <= cam < table.num_cameras:
        raise IndexError(f"camera {cam} not in table with {table.num_cameras} cameras")


def warp_image(img, table: LookupTable, cam: int, dtype=np.float32) -> SphericalVolume:
    """Sample a single-channel raster onto every swept sphere for camera ``cam``."""
    _check_camera(table, cam)
    img = np.asarray(img)
    if img.shape != table.source_shape:
        raise ShapeError(f"image {img.shape} does not match table source {table.source_shape}")
    coords, valid = table.coords[cam], table.valid[cam]
    vals = bilinear(img, coords[..., 0], coords[..., 1], valid).astype(dtype)
    data = np.moveaxis(vals, 0, -1)[..., None]
    return SphericalVolume(data, table.masks(cam))


def _sampling_matrix(table: LookupTable, cam: int) -> sp.csr_matrix:
    h, w = table.source_shape
    coords = np.moveaxis(table.coords[cam], 0, 2)  # (H, W, Ns, 2)
    valid = table.masks(cam).reshape(-1)
    u = coords[..., 0].reshape(-1)[valid]
    v = coords[..., 1].reshape(-1)[valid]
    x0, y0, fx, fy = _corners(u, v, h, w)
    rows = np.flatnonzero(valid)
    r = np.concatenate([rows] * 4)
    c = np.concatenate([y0 * w + x0, y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1])
    vals = np.concatenate([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx])
    return sp.csr_matrix((vals, (r, c)), shape=(valid.size, h * w))


def warp_features(feat, table: LookupTable, cam: int) -> SphericalVolume:
    """Differentiable channel-wise warp of an (h, w, C) feature map.

    The backward pass scatters each output gradient to its four source
    texels with the forward bilinear weights; invalid cells contribute
    nothing.
    """
    _check_camera(table, cam)
    feat = as_tensor(feat)
    if feat.shape[:2] != table.source_shape or feat.data.ndim != 3:
        raise ShapeError(f"feature map {feat.shape} does not match table source "
                         f"{table.source_shape}")
    coords, valid = table.coords[cam], table.valid[cam]
    vals = bilinear(feat.data, coords[..., 0], coords[..., 1], valid)
    data = np.moveaxis(vals, 0, 2).astype(np.float32)  # (H, W, Ns, C)
    c = feat.shape[-1]

    def backward(g):
        a = table.sampling_matrix(cam)
        back = a.T @ g.reshape(-1, c).astype(np.float64)
        return back.reshape(feat.shape).astype(np.float32),

    return SphericalVolume(Tensor.from_op(data, (feat,), backward), table.masks(cam))


def concat_volumes(volumes, permutation=None) -> Tensor:
    """Channel-axis concatenation of per-camera volumes in ``permutation`` order."""
    datas = [v.data if isinstance(v, SphericalVolume) else v for v in volumes]
    if permutation is None:
        permutation = range(len(datas))
    permutation = [int(p) for p in permutation]
    if sorted(permutation) != list(range(len(datas))):
        raise ValueError(f"{permutation} is not a permutation of {len(datas)} cameras")
    shapes = {tuple(as_tensor(d).shape[:-1]) for d in datas}
    if len(shapes) != 1:
        raise ShapeError(f"volumes disagree in shape: {sorted(shapes)}")
    return concat([datas[p] for p in permutation], axis=-1)


# -- on-disk cache ----------------------------------------------------------------------

def save_lookup(path, table: LookupTable) -> None:
    header = {
        "kind": "lookup-table",
        "rig_hash": table.rig_hash,
        "grid": table.grid.to_dict(),
        "source_scale": table.source_scale,
        "source_shape": list(table.source_shape),
    }
    write_blob(path, header, [table.coords, table.valid.astype(np.float32)])


def load_lookup(path, rig: Rig, grid: SweepGrid, source_scale: int) -> LookupTable | None:
    """Read a cached table; ``None`` when missing or built for another rig/grid/scale."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        header, (coords, valid) = read_blob(path)
    except (FormatError, ValueError, KeyError):
        logger.warning("ignoring unreadable lookup cache %s", path)
        return None
    if (header.get("kind") != "lookup-table" or header["rig_hash"] != rig.hash()
            or header["grid"] != grid.to_dict() or header["source_scale"] != source_scale):
        logger.info("lookup cache %s is stale", path)
        return None
    return LookupTable(coords, valid.astype(bool), tuple(header["source_shape"]),
                       source_scale, grid.sphere_indices, rig.hash(), grid)


def cached_lookup(path, rig: Rig, grid: SweepGrid, source_scale: int) -> LookupTable:
    table = load_lookup(path, rig, grid, source_scale)
    if table is None:
        table = build_lookup(rig, grid, source_scale)
        save_lookup(path, table)
    return table
