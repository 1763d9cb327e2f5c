"""ZNCC matching costs on spherical volumes and winner-take-all readout."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..sweeping import LookupTable, SphericalVolume, warp_image

ZERO_VARIANCE_EPS = 1e-8


@dataclass
class CostVolume:
    """Matching costs (H, W, num_swept), lower is better, plus validity."""

    data: np.ndarray
    valid: np.ndarray
    sphere_indices: np.ndarray

    @property
    def shape(self):
        return self.data.shape


def _box(x, size):
    return uniform_filter(x, size=(size, size, 1), mode=("constant", "wrap", "constant"))


def _volume_values(vol: SphericalVolume) -> np.ndarray:
    data = getattr(vol.data, "data", vol.data)
    data = np.asarray(data, dtype=np.float64)
    if data.shape[-1] != 1:
        raise ValueError("ZNCC expects single-channel volumes")
    return data[..., 0]


def masked_zncc(a, b, mask, patch: int = 9, min_fraction: float = 0.5,
                eps: float = ZERO_VARIANCE_EPS):
    """Windowed ZNCC over the pixels where ``mask`` holds.

    Windows run over (row, col) of each (H, W, D) slice, wrap around in col
    and are truncated at the top and bottom rows. Returns (zncc, ok) where
    ``ok`` requires a valid centre, at least ``min_fraction`` of the window
    valid and variance above ``eps`` in both inputs.
    """
    m = mask.astype(np.float64)
    a = np.where(mask, a, 0.0)
    b = np.where(mask, b, 0.0)
    n = _box(m, patch)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = 1.0 / n
        ma = _box(a, patch) * inv
        mb = _box(b, patch) * inv
        va = _box(a * a, patch) * inv - ma * ma
        vb = _box(b * b, patch) * inv - mb * mb
        cov = _box(a * b, patch) * inv - ma * mb
        ok = mask & (n >= min_fraction - 1e-12) & (va > eps) & (vb > eps)
        z = np.where(ok, cov / np.sqrt(np.where(ok, va * vb, 1.0)), 0.0)
    return np.clip(z, -1.0, 1.0), ok


def zncc_cost(vol_a: SphericalVolume, vol_b: SphericalVolume, patch: int = 9,
              sphere_indices=None, min_fraction: float = 0.5) -> CostVolume:
    """Cost (1 - ZNCC) / 2 in [0, 1] between two warped single-channel volumes."""
    a, b = _volume_values(vol_a), _volume_values(vol_b)
    if a.shape != b.shape:
        raise ValueError(f"volumes on different grids: {a.shape} vs {b.shape}")
    z, ok = masked_zncc(a, b, vol_a.mask & vol_b.mask, patch, min_fraction)
    cost = np.where(ok, (1.0 - z) / 2.0, 0.0)
    if sphere_indices is None:
        sphere_indices = np.arange(a.shape[-1])
    return CostVolume(cost, ok, np.asarray(sphere_indices))


def multiview_cost(volumes: list[CostVolume]) -> CostVolume:
    """Mean of the valid pairwise costs per cell; cells with no valid pair are invalid."""
    if not volumes:
        raise ValueError("need at least one pairwise cost volume")
    total = np.zeros(volumes[0].shape)
    count = np.zeros(volumes[0].shape)
    for v in volumes:
        total += np.where(v.valid, v.data, 0.0)
        count += v.valid
    valid = count > 0
    data = np.where(valid, total / np.maximum(count, 1), 0.0)
    return CostVolume(data, valid, volumes[0].sphere_indices)


def winner_take_all(cost: CostVolume) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell argmin mapped back to full-ladder indices; ties pick the smallest.

    Returns (index map as float, valid cells).
    """
    data = np.where(cost.valid, cost.data, np.inf)
    j = np.argmin(data, axis=-1)
    valid = cost.valid.any(axis=-1)
    idx = np.asarray(cost.sphere_indices)[j].astype(np.float64)
    return np.where(valid, idx, np.nan), valid


def sweep_images(images, table: LookupTable) -> list[SphericalVolume]:
    """Warp every camera image onto the swept spheres (float64, single channel)."""
    return [warp_image(np.asarray(img, dtype=np.float64), table, i, dtype=np.float64)
            for i, img in enumerate(images)]


def camera_pairs(num_cameras: int):
    return list(itertools.combinations(range(num_cameras), 2))


def omni_zncc_cost(images, table: LookupTable, patch: int = 9) -> CostVolume:
    """Masking-aware mean of the ZNCC costs of every camera pair."""
    vols = sweep_images(images, table)
    pair_costs = [zncc_cost(vols[i], vols[j], patch, table.sphere_indices)
                  for i, j in camera_pairs(len(vols))]
    return multiview_cost(pair_costs)
