"""Semi-global cost aggregation on the equirectangular grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .zncc import CostVolume

# (d_row, d_col) scan directions; the first four are the axis-aligned ones
DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class SgmParams:
    p1: float = 0.1
    p2: float = 12.0
    num_paths: int = 8
    wrap_theta: bool = True
    invalid_cost: float = 1.0

    def __post_init__(self):
        if not 0 <= self.p1 <= self.p2:
            raise ValueError(f"need 0 <= p1 <= p2, got p1={self.p1}, p2={self.p2}")
        if self.num_paths not in (1, 2, 4, 8):
            raise ValueError("num_paths must be 1, 2, 4 or 8")


def _step(cost, prev, p1, p2):
    """One recurrence step over a line of cells: cost, prev are (M, D)."""
    min_prev = prev.min(axis=-1, keepdims=True)
    best = prev.copy()
    if prev.shape[-1] > 1:
        np.minimum(best[:, 1:], prev[:, :-1] + p1, out=best[:, 1:])
        np.minimum(best[:, :-1], prev[:, 1:] + p1, out=best[:, :-1])
    np.minimum(best, min_prev + p2, out=best)
    return cost + (best - min_prev)


def _scan_horizontal(c, dc, p1, p2, wrap):
    h, w, _ = c.shape
    cols = range(w) if dc > 0 else range(w - 1, -1, -1)
    out = np.empty_like(c)
    prev = None
    laps = 2 if wrap else 1
    for _ in range(laps):
        for col in cols:
            cur = c[:, col] if prev is None else _step(c[:, col], prev, p1, p2)
            out[:, col] = cur
            prev = cur
    return out


def _scan_rows(c, dr, dc, p1, p2, wrap):
    """Vertical (dc == 0) or diagonal paths, advancing one row per step."""
    h, w, _ = c.shape
    rows = range(h) if dr > 0 else range(h - 1, -1, -1)
    out = np.empty_like(c)
    prev = None
    for row in rows:
        if prev is None:
            cur = c[row].copy()
        elif dc == 0:
            cur = _step(c[row], prev, p1, p2)
        else:
            # the predecessor of column j is column j - dc of the previous row
            shifted = np.roll(prev, dc, axis=0)
            cur = _step(c[row], shifted, p1, p2)
            if not wrap:
                enter = 0 if dc > 0 else w - 1
                cur[enter] = c[row, enter]
        out[row] = cur
        prev = cur
    return out


def aggregate_path(cost: np.ndarray, direction, params: SgmParams) -> np.ndarray:
    """Path cost L_r for one scan direction over an (H, W, D) array."""
    dr, dc = direction
    if dr == 0:
        return _scan_horizontal(cost, dc, params.p1, params.p2, params.wrap_theta)
    return _scan_rows(cost, dr, dc, params.p1, params.p2, params.wrap_theta)


def _pairwise_sum(parts):
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def sgm(cost: CostVolume, params: SgmParams = SgmParams()) -> CostVolume:
    """Sum of path costs over ``params.num_paths`` directions.

    Invalid cells enter the scans as ``params.invalid_cost`` and stay masked
    in the result. Paths are summed pairwise in a fixed order.
    """
    c = np.where(cost.valid, cost.data, params.invalid_cost).astype(np.float64)
    paths = [aggregate_path(c, d, params) for d in DIRECTIONS[:params.num_paths]]
    total = _pairwise_sum(paths)
    return CostVolume(np.where(cost.valid, total, 0.0), cost.valid.copy(), cost.sphere_indices)
