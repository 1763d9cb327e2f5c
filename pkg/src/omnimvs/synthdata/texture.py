"""Solid value-noise textures evaluated at 3-D surface points."""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_PRIMES = (np.uint64(0x9E3779B185EBCA87), np.uint64(0xC2B2AE3D27D4EB4F),
           np.uint64(0x165667B19E3779F9))


def _mix(h):
    h = h ^ (h >> np.uint64(30))
    h = h * _M1
    h = h ^ (h >> np.uint64(27))
    h = h * _M2
    return h ^ (h >> np.uint64(31))


def _lattice(ix, iy, iz, seed):
    h = _mix(np.full(np.shape(ix), seed, dtype=np.uint64))
    for coord, prime in zip((ix, iy, iz), _PRIMES):
        h = _mix(h ^ (coord.astype(np.int64).view(np.uint64) * prime))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(points, seed: int, cell: float) -> np.ndarray:
    """Smooth lattice noise in [0, 1] with lattice spacing ``cell`` (meters)."""
    p = np.asarray(points, dtype=np.float64) / cell
    base = np.floor(p)
    f = _fade(p - base)
    i = base.astype(np.int64)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1 - f[..., 2]
                out += wx * wy * wz * _lattice(i[..., 0] + dx, i[..., 1] + dy,
                                               i[..., 2] + dz, seed)
    return out


def fractal_noise(points, seed: int, cell: float, octaves: int = 2, gain: float = 0.4):
    """Sum of value-noise octaves at halving cell sizes, renormalized to [0, 1]."""
    total, amp, norm = 0.0, 1.0, 0.0
    for k in range(octaves):
        total = total + amp * value_noise(points, seed + 7919 * k, cell / 2 ** k)
        norm += amp
        amp *= gain
    return total / norm
