"""Procedural scenes: textured spheres and boxes scattered around the rig, inside a room or under a sky."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .texture import fractal_noise

_EPS = 1e-9
LIGHT_DIR = np.array([0.3, -0.8, 0.5]) / np.linalg.norm([0.3, -0.8, 0.5])
AMBIENT = 0.35


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Placement:
    v1: float
    v2: float
    direction: tuple[float, float, float]
    distance: float = 1.0

    @property
    def position(self) -> np.ndarray:
        return self.distance * np.asarray(self.direction)


def marsaglia_from(v1: float, v2: float) -> tuple[float, float, float]:
    s = v1 * v1 + v2 * v2
    if not s < 1:
        raise SceneError("Marsaglia deviates must satisfy v1^2 + v2^2 < 1")
    root = math.sqrt(1 - s)
    return (2 * v1 * root, 2 * v2 * root, 1 - 2 * s)


def marsaglia_direction(rng: np.random.Generator) -> Placement:
    """Uniform direction on the unit sphere by rejection sampling in the unit disk."""
    while True:
        v1, v2 = rng.uniform(-1.0, 1.0, size=2)
        if v1 * v1 + v2 * v2 < 1:
            return Placement(float(v1), float(v2), marsaglia_from(v1, v2))


@dataclass(frozen=True)
class Material:
    texture_seed: int
    cell: float  # lattice spacing of the solid texture, meters
    low: float = 0.1
    high: float = 0.95
    octaves: int = 1

    def albedo(self, points):
        return self.low + (self.high - self.low) * fractal_noise(points, self.texture_seed,
                                                                 self.cell, self.octaves)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    material: Material
    kind: str = "sphere"

    @property
    def bounding_radius(self) -> float:
        return self.radius

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = np.einsum("...i,...i", oc, dirs)
        c = np.einsum("...i,...i", oc, oc) - self.radius ** 2
        disc = b * b - c
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0))
        t0, t1 = -b - root, -b + root
        t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
        return np.where(hit, t, np.inf)

    def normals(self, points):
        n = points - self.center
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def to_dict(self):
        return {"kind": "sphere", "center": list(map(float, self.center)),
                "radius": self.radius, "texture_seed": self.material.texture_seed,
                "texture_cell": self.material.cell}


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box."""

    center: np.ndarray
    half_extents: np.ndarray
    material: Material
    kind: str = "box"

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.half_extents))

    def intersect(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.center - self.half_extents - origins) * inv
            t2 = (self.center + self.half_extents - origins) * inv
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        tmin = np.minimum(t1, t2).max(axis=-1)
        tmax = np.maximum(t1, t2).min(axis=-1)
        hit = tmax >= np.maximum(tmin, _EPS)
        t = np.where(tmin > _EPS, tmin, tmax)
        return np.where(hit, t, np.inf)

    def normals(self, points):
        rel = (points - self.center) / self.half_extents
        axis = np.abs(rel).argmax(axis=-1)
        n = np.zeros_like(points)
        np.put_along_axis(n, axis[..., None],
                          np.sign(np.take_along_axis(rel, axis[..., None], -1)), -1)
        return n

    def to_dict(self):
        return {"kind": "box", "center": list(map(float, self.center)),
                "half_extents": list(map(float, self.half_extents)),
                "texture_seed": self.material.texture_seed, "texture_cell": self.material.cell}


@dataclass(frozen=True, eq=False)
class Room:
    """Axis-aligned cuboid seen from the inside."""

    center: np.ndarray
    half_extents: np.ndarray
    material: Material
    kind: str = "room"

    def intersect(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.center - self.half_extents - origins) * inv
            t2 = (self.center + self.half_extents - origins) * inv
        far = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
        return far.min(axis=-1)

    def normals(self, points):
        rel = (points - self.center) / self.half_extents
        axis = np.abs(rel).argmax(axis=-1)
        n = np.zeros_like(points)
        np.put_along_axis(n, axis[..., None],
                          -np.sign(np.take_along_axis(rel, axis[..., None], -1)), -1)
        return n

    def to_dict(self):
        return {"kind": "room", "center": list(map(float, self.center)),
                "half_extents": list(map(float, self.half_extents)),
                "texture_seed": self.material.texture_seed, "texture_cell": self.material.cell}


@dataclass(frozen=True)
class Sky:
    """Infinitely distant dome with a smooth elevation gradient."""

    horizon: float = 0.55
    slope: float = 0.3
    kind: str = "sky"

    def radiance(self, dirs):
        # rig +y is image-down for the default rig, so brighten towards -y
        return self.horizon - self.slope * dirs[..., 1]

    def to_dict(self):
        return {"kind": "sky", "horizon": self.horizon, "slope": self.slope}


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple
    background: Room | Sky
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def intersect(self, origins, dirs):
        """Nearest hit distance along unit ``dirs`` and the id of the surface hit.

        Ids index ``objects``; ``len(objects)`` is the room, -1 the sky.
        """
        origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
        best = np.full(dirs.shape[:-1], np.inf)
        ids = np.full(dirs.shape[:-1], -1, dtype=np.int64)
        for k, obj in enumerate(self.objects):
            t = obj.intersect(origins, dirs)
            closer = t < best
            best = np.where(closer, t, best)
            ids = np.where(closer, k, ids)
        if isinstance(self.background, Room):
            t = self.background.intersect(origins, dirs)
            closer = t < best
            best = np.where(closer, t, best)
            ids = np.where(closer, len(self.objects), ids)
        return best, ids

    def surfaces(self):
        out = list(self.objects)
        if isinstance(self.background, Room):
            out.append(self.background)
        return out

    def shade(self, origins, dirs):
        """Lambertian radiance in [0, 1] along each ray (sky radiance where nothing is hit)."""
        t, ids = self.intersect(origins, dirs)
        out = np.zeros(dirs.shape[:-1])
        if isinstance(self.background, Sky):
            sky = ids < 0
            out[sky] = self.background.radiance(dirs[sky])
        origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
        for k, surf in enumerate(self.surfaces()):
            sel = ids == k
            if not sel.any():
                continue
            pts = origins[sel] + t[sel, None] * dirs[sel]
            lam = np.clip(-(surf.normals(pts) @ LIGHT_DIR), 0, None)
            out[sel] = surf.material.albedo(pts) * (AMBIENT + (1 - AMBIENT) * lam)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self):
        return {"seed": self.seed, "objects": [o.to_dict() for o in self.objects],
                "background": self.background.to_dict(), **self.meta}


@dataclass(frozen=True)
class SceneParams:
    num_objects: int = 16
    distance_range: tuple[float, float] = (1.2, 8.0)
    clearance: float = 0.7
    angular_radius: tuple[float, float] = (0.15, 0.4)
    room_probability: float = 0.75
    texture_cell_ratio: float = 0.15  # lattice spacing / distance, keeps features ~constant in angle


def _stream(seed: int, k: int) -> np.random.Generator:
    """Independent rng stream ``k`` of a scene seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), k]))


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> Scene:
    """Scatter primitives at Marsaglia directions and inverse-uniform distances.

    Streams: 0 placement, 1 shape, 2 textures, 3 background.
    """
    near, far = params.distance_range
    if not 0 < near <= far:
        raise SceneError(f"bad distance range {params.distance_range}")
    if near <= params.clearance:
        raise SceneError(f"clearance {params.clearance} m is infeasible for objects "
                         f"placed from {near} m")
    place, shape, tex, bg = (_stream(seed, k) for k in range(4))
    objects = []
    for _ in range(params.num_objects):
        p = marsaglia_direction(place)
        distance = 1.0 / place.uniform(1.0 / far, 1.0 / near)
        center = distance * np.asarray(p.direction)
        ang = shape.uniform(*params.angular_radius)
        limit = distance - params.clearance
        material = Material(int(tex.integers(1, 2 ** 31)), params.texture_cell_ratio * distance)
        if shape.uniform() < 0.5:
            radius = min(distance * math.sin(ang), limit)
            objects.append(Sphere(center, radius, material))
        else:
            half = distance * math.sin(ang) * shape.uniform(0.5, 1.0, size=3)
            norm = np.linalg.norm(half)
            if norm > limit:
                half = half * (limit / norm)
            objects.append(Box(center, half, material))
    if bg.uniform() < params.room_probability:
        scale = bg.uniform(4.0, 9.0)
        half = scale * np.array([bg.uniform(0.7, 1.3), bg.uniform(0.35, 0.6), bg.uniform(0.7, 1.3)])
        offset = half * bg.uniform(-0.3, 0.3, size=3)
        background = Room(offset, half, Material(int(tex.integers(1, 2 ** 31)),
                                                 params.texture_cell_ratio * scale))
    else:
        background = Sky(horizon=float(bg.uniform(0.45, 0.65)), slope=float(bg.uniform(0.1, 0.3)))
    return Scene(tuple(objects), background, int(seed))
