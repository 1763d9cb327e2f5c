"""Camera models, spherical coordinates and the rig coordinate system.

Conventions:
  - Rig frame: y is perpendicular to the plane of the camera centers; the
    unit ray for azimuth theta and elevation phi is
    (cos(phi) cos(theta), sin(phi), cos(phi) sin(theta)).
  - Camera frame: optical axis is +z. Pixel centers sit at integer
    coordinates, u along image columns and v along rows.
  - Fisheye model: ideal equidistant, image radius = focal * alpha where
    alpha is the angle from the optical axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Raised on invalid camera, rig or grid parameters."""


@dataclass(frozen=True)
class SphericalCoord:
    """Azimuth ``theta`` in [-pi, pi] and elevation ``phi`` in [-pi/2, pi/2].

    Out-of-range input is normalized on construction: an elevation past a
    pole is reflected (and the azimuth turned by pi), then the azimuth is
    wrapped.
    """

    theta: float
    phi: float

    def __post_init__(self):
        theta, phi = float(self.theta), float(self.phi)
        if not (math.isfinite(theta) and math.isfinite(phi)):
            raise GeometryError("spherical coordinates must be finite")
        phi = math.remainder(phi, TWO_PI)
        if phi > math.pi / 2:
            phi, theta = math.pi - phi, theta + math.pi
        elif phi < -math.pi / 2:
            phi, theta = -math.pi - phi, theta + math.pi
        if not -math.pi <= theta <= math.pi:
            theta = math.remainder(theta, TWO_PI)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class UnitRay:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class PointAtInfinity:
    """A point infinitely far along ``direction`` (rig frame)."""

    direction: np.ndarray


def unit_ray(c: SphericalCoord) -> UnitRay:
    cp = math.cos(c.phi)
    return UnitRay(cp * math.cos(c.theta), math.sin(c.phi), cp * math.sin(c.theta))


def unit_rays(theta, phi) -> np.ndarray:
    """Vectorized :func:`unit_ray`; broadcasts ``theta`` and ``phi``, returns (..., 3)."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=np.float64),
                                     np.asarray(phi, dtype=np.float64))
    cp = np.cos(phi)
    return np.stack([cp * np.cos(theta), np.sin(phi), cp * np.sin(theta)], axis=-1)


def ray_to_spherical(ray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`unit_rays` for arbitrary nonzero directions (..., 3)."""
    ray = np.asarray(ray, dtype=np.float64)
    x, y, z = ray[..., 0], ray[..., 1], ray[..., 2]
    theta = np.arctan2(z, x)
    phi = np.arctan2(y, np.hypot(x, z))
    return theta, phi


def rotation_y(angle: float) -> np.ndarray:
    """Rotation about the rig y axis: maps direction (theta, phi) to (theta - angle, phi)."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def look_rotation(forward, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rig-to-camera rotation whose camera +z is ``forward`` and camera +y follows ``up``."""
    z = np.asarray(forward, dtype=np.float64)
    z = z / np.linalg.norm(z)
    y = np.asarray(up, dtype=np.float64)
    y = y - np.dot(y, z) * z
    norm = np.linalg.norm(y)
    if norm < 1e-12:
        raise GeometryError("up vector is parallel to the optical axis")
    y = y / norm
    x = np.cross(y, z)
    return np.stack([x, y, z])


@dataclass(frozen=True, eq=False)
class FisheyeCamera:
    """Equidistant fisheye camera with a rig-to-camera pose.

    A rig point X maps to the camera frame as ``rotation @ X + translation``.
    """

    focal: float
    principal_point: tuple[float, float]
    image_size: tuple[int, int]  # (height, width)
    fov: float
    rotation: np.ndarray
    translation: np.ndarray
    name: str = "cam"

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "principal_point",
                           (float(self.principal_point[0]), float(self.principal_point[1])))
        object.__setattr__(self, "image_size",
                           (int(self.image_size[0]), int(self.image_size[1])))
        rot.setflags(write=False)
        trans.setflags(write=False)
        if not self.focal > 0:
            raise GeometryError(f"{self.name}: focal must be positive, got {self.focal}")
        if not 0 < self.fov <= TWO_PI:
            raise GeometryError(f"{self.name}: fov must be in (0, 2pi], got {self.fov}")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise GeometryError(f"{self.name}: rotation is not a proper orthonormal matrix")
        if min(self.image_size) < 2:
            raise GeometryError(f"{self.name}: image must be at least 2x2")

    @property
    def center(self) -> np.ndarray:
        """Camera center in the rig frame."""
        return -self.rotation.T @ self.translation

    def project(self, X) -> tuple[float, float] | None:
        """Project one rig-frame point (or :class:`PointAtInfinity`).

        Returns the (u, v) pixel, or ``None`` when the point is out of view.
        """
        if isinstance(X, PointAtInfinity):
            pc = self.rotation @ np.asarray(X.direction, dtype=np.float64)
        else:
            X = np.asarray(X, dtype=np.float64)
            if not np.all(np.isfinite(X)):
                raise GeometryError("cannot project a non-finite point")
            pc = self.rotation @ X + self.translation
        u, v, ok = self._project_camera(pc[None])
        if not ok[0]:
            return None
        return float(u[0]), float(v[0])

    def project_points(self, X, at_infinity: bool = False):
        """Vectorized projection of rig-frame points (..., 3).

        With ``at_infinity`` the inputs are directions and the translation is
        ignored. Returns ``(u, v, in_view)``.
        """
        X = np.asarray(X, dtype=np.float64)
        pc = X @ self.rotation.T
        if not at_infinity:
            pc = pc + self.translation
        return self._project_camera(pc)

    def _project_camera(self, pc):
        dx, dy, dz = pc[..., 0], pc[..., 1], pc[..., 2]
        rho = np.hypot(dx, dy)
        alpha = np.arctan2(rho, dz)
        in_view = (alpha <= self.fov / 2) & ((rho > 0) | (dz > 0))
        safe = np.where(rho > 0, rho, 1.0)
        scale = self.focal * alpha / safe
        u = self.principal_point[0] + scale * dx
        v = self.principal_point[1] + scale * dy
        return u, v, in_view

    def pixel_rays(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        """Invert the equidistant model: camera-frame unit rays for pixels, plus in-fov flags."""
        du = np.asarray(u, dtype=np.float64) - self.principal_point[0]
        dv = np.asarray(v, dtype=np.float64) - self.principal_point[1]
        r = np.hypot(du, dv)
        alpha = r / self.focal
        safe = np.where(r > 0, r, 1.0)
        s = np.sin(alpha) / safe
        rays = np.stack([du * s, dv * s, np.cos(alpha)], axis=-1)
        return rays, alpha <= self.fov / 2

    def fov_mask(self) -> np.ndarray:
        """Boolean (H_I, W_I) mask of pixels inside the field of view."""
        h, w = self.image_size
        v, u = np.mgrid[0:h, 0:w]
        return np.hypot(u - self.principal_point[0], v - self.principal_point[1]) \
            <= self.focal * self.fov / 2

    def with_rotation(self, rotation) -> FisheyeCamera:
        """Same camera center and intrinsics, different orientation."""
        center = self.center
        rotation = np.asarray(rotation, dtype=np.float64)
        return FisheyeCamera(self.focal, self.principal_point, self.image_size, self.fov,
                             rotation, -rotation @ center, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "focal": self.focal,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
            "fov": self.fov,
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }


@dataclass(frozen=True, eq=False)
class Rig:
    cameras: tuple[FisheyeCamera, ...]

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.cameras) < 2:
            raise GeometryError("a rig needs at least two cameras")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise GeometryError(f"camera names must be distinct: {names}")

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, i) -> FisheyeCamera:
        return self.cameras[i]

    def __iter__(self):
        return iter(self.cameras)

    def rotated(self, yaw: float) -> Rig:
        """Re-express the rig in a coordinate system turned by ``yaw`` about y.

        Directions at azimuth theta in the old frame appear at theta - yaw in
        the new one.
        """
        ry = rotation_y(yaw)
        cams = []
        for cam in self.cameras:
            cams.append(FisheyeCamera(cam.focal, cam.principal_point, cam.image_size, cam.fov,
                                      cam.rotation @ ry.T, cam.translation, cam.name))
        return Rig(tuple(cams))

    def to_dict(self) -> dict:
        return {"cameras": [c.to_dict() for c in self.cameras]}

    def hash(self) -> str:
        return _digest(self.to_dict())


@dataclass(frozen=True)
class SweepGrid:
    """Equirectangular output grid plus the uniform inverse-depth ladder."""

    height: int
    width: int
    phi_min: float
    phi_max: float
    num_spheres: int
    inv_depth_max: float
    stride: int = 2

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise GeometryError("grid must be at least 1x1")
        if self.num_spheres < 2:
            raise GeometryError("need at least two spheres")
        if not self.inv_depth_max > 0:
            raise GeometryError("inv_depth_max must be positive")
        if self.stride < 1:
            raise GeometryError("stride must be >= 1")
        if not -math.pi / 2 <= self.phi_min < self.phi_max <= math.pi / 2:
            raise GeometryError("need -pi/2 <= phi_min < phi_max <= pi/2")

    @classmethod
    def parse(cls, text: str, inv_depth_max: float, phi_range: float | None = None,
              stride: int = 2) -> SweepGrid:
        """Build from an ``HxWxN`` string; the phi span defaults to square cells."""
        try:
            h, w, n = (int(p) for p in text.lower().split("x"))
        except ValueError:
            raise GeometryError(f"grid must look like HxWxN, got {text!r}") from None
        half = phi_range if phi_range is not None else min(math.pi * h / w, math.pi / 2)
        return cls(h, w, -half, half, n, inv_depth_max, stride)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def inv_depths(self) -> np.ndarray:
        n = np.arange(self.num_spheres)
        return n * (self.inv_depth_max / (self.num_spheres - 1))

    def inv_depth(self, n: int) -> float:
        return n * (self.inv_depth_max / (self.num_spheres - 1))

    @property
    def sphere_indices(self) -> np.ndarray:
        """Subsampled sphere set {0, stride, 2*stride, ...}."""
        return np.arange(0, self.num_spheres, self.stride)

    @property
    def num_swept(self) -> int:
        return -(-self.num_spheres // self.stride)

    @property
    def thetas(self) -> np.ndarray:
        return -math.pi + (np.arange(self.width) + 0.5) * (TWO_PI / self.width)

    @property
    def phis(self) -> np.ndarray:
        return self.phi_min + (np.arange(self.height) + 0.5) * \
            ((self.phi_max - self.phi_min) / self.height)

    def cell_coord(self, row: int, col: int) -> SphericalCoord:
        theta = -math.pi + (col + 0.5) * (TWO_PI / self.width)
        phi = self.phi_min + (row + 0.5) * ((self.phi_max - self.phi_min) / self.height)
        return SphericalCoord(theta, phi)

    def rays(self) -> np.ndarray:
        """(H, W, 3) unit rays at the cell centers."""
        phi, theta = np.meshgrid(self.phis, self.thetas, indexing="ij")
        return unit_rays(theta, phi)

    def to_dict(self) -> dict:
        return {
            "height": self.height, "width": self.width,
            "phi_min": self.phi_min, "phi_max": self.phi_max,
            "num_spheres": self.num_spheres, "inv_depth_max": self.inv_depth_max,
            "stride": self.stride,
        }


def sphere_point(grid: SweepGrid, row: int, col: int, n: int):
    """Rig-frame point on sphere ``n`` at a grid cell, or :class:`PointAtInfinity` for n = 0."""
    if not (0 <= row < grid.height and 0 <= col < grid.width and 0 <= n < grid.num_spheres):
        raise IndexError(f"cell ({row}, {col}, {n}) outside grid")
    r = unit_ray(grid.cell_coord(row, col)).as_array()
    d = grid.inv_depth(n)
    if d == 0:
        return PointAtInfinity(r)
    return r / d


def sphere_points(grid: SweepGrid, n: int) -> tuple[np.ndarray, bool]:
    """All (H, W, 3) sphere points for index ``n``; second value flags infinity."""
    d = grid.inv_depth(n)
    rays = grid.rays()
    if d == 0:
        return rays, True
    return rays / d, False


def footprint_inside(u, v, height: int, width: int) -> np.ndarray:
    """True where the 2x2 bilinear footprint around (u, v) lies in a height x width raster."""
    return (u >= 0) & (v >= 0) & (u <= width - 1) & (v <= height - 1)


def validity_mask(cam: FisheyeCamera, grid: SweepGrid, n: int) -> np.ndarray:
    pts, at_inf = sphere_points(grid, n)
    u, v, ok = cam.project_points(pts, at_infinity=at_inf)
    return ok & footprint_inside(u, v, *cam.image_size)


def default_rig(image_size=128, fov_deg: float = 220.0, side: float = 0.4,
                margin: float = 2.0) -> Rig:
    """Four outward-looking fisheye cameras at the corners of a square in the y=0 plane.

    ``image_size`` is a side length or (height, width). The focal length is
    chosen so the fov disk fits inside the raster with ``margin`` pixels to spare.
    """
    if np.ndim(image_size) == 0:
        image_size = (image_size, image_size)
    height, width = (int(x) for x in image_size)
    fov = math.radians(fov_deg)
    focal = ((min(height, width) - 1) / 2 - margin) / (fov / 2)
    pp = ((width - 1) / 2, (height - 1) / 2)
    h = side / 2
    # counter-clockwise seen from +y: front-right, back-right, back-left, front-left
    corners = [(h, h), (h, -h), (-h, -h), (-h, h)]
    cams = []
    for i, (x, z) in enumerate(corners):
        center = np.array([x, 0.0, z])
        rot = look_rotation([x, 0.0, z])
        cams.append(FisheyeCamera(focal, pp, (height, width), fov, rot,
                                  -rot @ center, f"cam{i}"))
    return Rig(tuple(cams))


_CAMERA_KEYS = {"name", "focal", "principal_point", "image_size", "fov", "rotation",
                "translation"}
_GRID_KEYS = {"height", "width", "phi_min", "phi_max", "num_spheres", "inv_depth_max",
              "stride"}


def _digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def rig_from_dict(data: dict) -> Rig:
    unknown = set(data) - {"cameras", "grid"}
    if unknown:
        raise GeometryError(f"unknown rig fields: {sorted(unknown)}")
    cams = []
    for i, c in enumerate(data.get("cameras", [])):
        extra = set(c) - _CAMERA_KEYS
        missing = _CAMERA_KEYS - set(c) - {"name"}
        if extra:
            raise GeometryError(f"camera {i}: unknown fields {sorted(extra)}")
        if missing:
            raise GeometryError(f"camera {i}: missing fields {sorted(missing)}")
        if len(c["rotation"]) != 9 or len(c["translation"]) != 3:
            raise GeometryError(f"camera {i}: rotation needs 9 numbers, translation 3")
        cams.append(FisheyeCamera(
            focal=float(c["focal"]),
            principal_point=tuple(c["principal_point"]),
            image_size=tuple(c["image_size"]),
            fov=float(c["fov"]),
            rotation=np.array(c["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.array(c["translation"], dtype=np.float64),
            name=str(c.get("name", f"cam{i}")),
        ))
    return Rig(tuple(cams))


def grid_from_dict(data: dict) -> SweepGrid:
    extra = set(data) - _GRID_KEYS
    if extra:
        raise GeometryError(f"unknown grid fields: {sorted(extra)}")
    return SweepGrid(**data)


def save_rig(path, rig: Rig, grid: SweepGrid | None = None) -> None:
    doc = rig.to_dict()
    if grid is not None:
        doc["grid"] = grid.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_rig(path) -> tuple[Rig, SweepGrid | None]:
    """Read a rig calibration file; returns the rig and its grid (if present)."""
    data = json.loads(Path(path).read_text())
    grid = grid_from_dict(data["grid"]) if "grid" in data else None
    return rig_from_dict(data), grid


def config_hash(*parts) -> str:
    """Stable short hash of JSON-serializable pieces (rig dicts, grid dicts, ...)."""
    return _digest(list(parts))

