"""End-to-end omnidirectional depth network built on the autodiff ops.

Per camera: a residual 2-D feature extractor at half resolution, a warp onto
every other sweep sphere and a shared 3x3x1 transference conv. The camera
volumes are concatenated, fused by a 3x3x3 conv and refined by a 3-D
encoder-decoder with additive skips. A final transposed conv restores the
full (H, W, N) cost volume and softargmin reads out the inverse-depth index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import GeometryError, Rig, SweepGrid, config_hash, grid_from_dict
from .sweeping import LookupTable, build_lookup, concat_volumes, warp_features

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    image_size: tuple[int, int]
    grid: SweepGrid
    base_channels: int = 32
    num_residual_pairs: int = 5
    dilations: tuple[int, ...] = (2, 3, 4)
    fusion_channels: int = 64
    encoder_channels: tuple[int, ...] = (64, 128, 128, 128, 256)
    num_cameras: int = 4
    source_scale: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(x) for x in self.image_size))
        object.__setattr__(self, "dilations", tuple(int(x) for x in self.dilations))
        object.__setattr__(self, "encoder_channels",
                           tuple(int(x) for x in self.encoder_channels))
        if self.grid.stride != 2:
            raise ConfigError("the network sweeps every other sphere (stride 2)")
        if len(self.encoder_channels) < 1:
            raise ConfigError("encoder needs at least one level")
        factor = 2 ** self.encoder_depth
        for name, extent in (("H", self.grid.height), ("W", self.grid.width),
                             ("N", self.grid.num_spheres)):
            if extent % factor:
                raise ConfigError(f"grid {name}={extent} is not divisible by 2^{self.encoder_depth}")
        min_feat = 2 * max(self.dilations + (1,)) + 1
        if min(self.image_size) // self.source_scale < min_feat:
            raise ConfigError(f"image {self.image_size} is smaller than the extractor's "
                              f"receptive-field minimum ({min_feat * self.source_scale} px)")

    @property
    def encoder_depth(self) -> int:
        """Number of halvings from the warped volume to the bottleneck (transference included)."""
        return len(self.encoder_channels)

    @classmethod
    def paper(cls, inv_depth_max: float = 2.0) -> NetworkConfig:
        grid = SweepGrid(160, 640, -math.pi / 4, math.pi / 4, 192, inv_depth_max)
        return cls((768, 800), grid)

    @classmethod
    def desk(cls, inv_depth_max: float = 1.5, seed: int = 0) -> NetworkConfig:
        grid = SweepGrid(32, 128, -math.pi / 4, math.pi / 4, 16, inv_depth_max)
        return cls((128, 128), grid, base_channels=8, fusion_channels=16,
                   encoder_channels=(16, 32, 32, 64), seed=seed)

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size), "grid": self.grid.to_dict(),
            "base_channels": self.base_channels, "num_residual_pairs": self.num_residual_pairs,
            "dilations": list(self.dilations), "fusion_channels": self.fusion_channels,
            "encoder_channels": list(self.encoder_channels), "num_cameras": self.num_cameras,
            "source_scale": self.source_scale, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> NetworkConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown network config fields: {sorted(extra)}")
        data = dict(data)
        data["grid"] = grid_from_dict(data["grid"])
        return cls(**data)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _init_kernel(rng, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass(eq=False)
class OmniMVSModel:
    """Parameters, batchnorm buffers and a layer-shape trace of the last forward pass."""

    config: NetworkConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    training: bool = True
    trace: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    @classmethod
    def create(cls, config: NetworkConfig) -> OmniMVSModel:
        model = cls(config)
        rng = np.random.default_rng(config.seed)
        c = config.base_channels
        model._conv("unary.conv1", (5, 5, 1, c), rng)
        for p in range(config.num_residual_pairs + len(config.dilations)):
            model._conv(f"unary.res{p}.a", (3, 3, c, c), rng)
            model._conv(f"unary.res{p}.b", (3, 3, c, c), rng)
        model._conv("transference", (3, 3, 1, c, c), rng)
        model._conv("fusion", (3, 3, 3, c * config.num_cameras, config.fusion_channels), rng)
        prev = config.fusion_channels
        for level, ch in enumerate(config.encoder_channels):
            model._conv(f"enc{level}.a", (3, 3, 3, prev, ch), rng)
            model._conv(f"enc{level}.b", (3, 3, 3, ch, ch), rng)
            model._conv(f"enc{level}.c", (3, 3, 3, ch, ch), rng)
            prev = ch
        for level in reversed(range(len(config.encoder_channels) - 1)):
            ch = config.encoder_channels[level]
            model._conv(f"dec{level}", (3, 3, 3, prev, ch), rng)
            prev = ch
        model.params["final.kernel"] = ad.parameter(_init_kernel(rng, (3, 3, 3, prev, 1)),
                                                    "final.kernel")
        model.params["final.bias"] = ad.parameter(np.zeros(1, np.float32), "final.bias")
        return model

    def _conv(self, name, shape, rng):
        ch = shape[-1]
        self.params[f"{name}.kernel"] = ad.parameter(_init_kernel(rng, shape), f"{name}.kernel")
        self.params[f"{name}.scale"] = ad.parameter(np.ones(ch, np.float32), f"{name}.scale")
        self.params[f"{name}.shift"] = ad.parameter(np.zeros(ch, np.float32), f"{name}.shift")
        self.buffers[f"{name}.mean"] = np.zeros(ch, np.float32)
        self.buffers[f"{name}.var"] = np.ones(ch, np.float32)

    def train(self, mode: bool = True) -> OmniMVSModel:
        self.training = mode
        return self

    def eval(self) -> OmniMVSModel:
        return self.train(False)

    def _bn(self, name, x, act=True):
        y = ad.batchnorm(x, self.params[f"{name}.scale"], self.params[f"{name}.shift"],
                         self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"],
                         self.training)
        return ad.relu(y) if act else y

    def _record(self, name, t):
        self.trace.append((name, tuple(t.shape)))
        return t

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, params: dict, buffers: dict) -> None:
        for k, arr in params.items():
            if k not in self.params or self.params[k].shape != arr.shape:
                raise ConfigError(f"checkpoint parameter {k} does not fit this network")
            self.params[k].data = np.array(arr, dtype=np.float32)
        for k, arr in buffers.items():
            self.buffers[k][...] = arr


def normalize_image(img, fov_mask) -> np.ndarray:
    """Zero-mean, unit-variance over pixels inside the fov; zero elsewhere."""
    img = np.asarray(img, dtype=np.float64)
    vals = img[fov_mask]
    std = vals.std()
    out = (img - vals.mean()) / (std if std > 0 else 1.0)
    return np.where(fov_mask, out, 0.0).astype(np.float32)


def extract_unary(model: OmniMVSModel, img, record: bool = False) -> Tensor:
    """(H_I, W_I) normalized raster -> (H_I/2, W_I/2, C) feature map."""
    cfg = model.config
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2 or img.shape != cfg.image_size:
        raise ConfigError(f"unary: expected a {cfg.image_size} raster, got {img.shape}")
    p = model.params
    rec = model._record if record else (lambda name, t: t)
    x = ad.conv2d(img[..., None], p["unary.conv1.kernel"], stride=cfg.source_scale)
    x = rec("conv1", model._bn("unary.conv1", x))
    dil = [1] * cfg.num_residual_pairs + list(cfg.dilations)
    for i, d in enumerate(dil):
        y = ad.conv2d(x, p[f"unary.res{i}.a.kernel"], dilation=d)
        y = model._bn(f"unary.res{i}.a", y)
        y = ad.conv2d(y, p[f"unary.res{i}.b.kernel"], dilation=d)
        y = model._bn(f"unary.res{i}.b", y, act=False)
        x = rec(f"conv{2 * i + 2}-{2 * i + 3}", ad.add(y, x))
    return x


def forward(model: OmniMVSModel, images, table: LookupTable, permutation=None):
    """Run the network; returns (predicted index map (H, W), cost volume (H, W, N))."""
    cfg = model.config
    if len(images) != cfg.num_cameras:
        raise ConfigError(f"expected {cfg.num_cameras} images, got {len(images)}")
    if table.grid != cfg.grid or table.source_scale != cfg.source_scale:
        raise ConfigError("lookup table was built for another grid or source scale")
    p = model.params
    model.trace = []
    volumes = []
    for i, img in enumerate(images):
        feat = extract_unary(model, img, record=(i == 0))
        warped = warp_features(feat, table, i).data
        if i == 0:
            model._record("warp", warped)
        t = ad.conv3d(warped, p["transference.kernel"], stride=(2, 2, 1))
        t = model._bn("transference", t)
        if i == 0:
            model._record("transference", t)
        volumes.append(t)
    x = model._record("concat", concat_volumes(volumes, permutation))
    x = model._record("fusion", model._bn("fusion", ad.conv3d(x, p["fusion.kernel"])))
    skips, level_in = [], x
    for level in range(cfg.encoder_depth):
        stride = 1 if level == 0 else 2
        a = model._bn(f"enc{level}.a", ad.conv3d(level_in, p[f"enc{level}.a.kernel"],
                                                 stride=stride))
        b = model._bn(f"enc{level}.b", ad.conv3d(a, p[f"enc{level}.b.kernel"]))
        c = model._bn(f"enc{level}.c", ad.conv3d(b, p[f"enc{level}.c.kernel"]))
        model._record(f"3Dconv{3 * level + 1}-{3 * level + 3}", c)
        skips.append(c)
        level_in = a
    x = skips[-1]
    for k, level in enumerate(reversed(range(cfg.encoder_depth - 1))):
        x = model._bn(f"dec{level}", ad.deconv3d(x, p[f"dec{level}.kernel"]))
        x = model._record(f"3Ddeconv{k + 1}", ad.add(x, skips[level]))
    x = ad.add_bias(ad.deconv3d(x, p["final.kernel"]), p["final.bias"])
    model._record(f"3Ddeconv{cfg.encoder_depth}", x)
    h, w, n = cfg.grid.height, cfg.grid.width, cfg.grid.num_spheres
    if x.shape != (h, w, n, 1):
        raise ConfigError(f"final deconv produced {x.shape}, expected {(h, w, n, 1)}")
    cost = ad.reshape(x, (h, w, n))
    pred = model._record("softargmin", ad.softargmin(cost))
    return pred, cost


def gt_index_map(depth, grid: SweepGrid, return_clamped: bool = False):
    """Metric depth (inf allowed) -> continuous inverse-depth index in [0, N-1].

    Depths nearer than 1/d_max are clamped to N-1 and counted.
    """
    depth = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(depth)
    if np.any(np.isnan(depth)) or np.any(depth[finite] <= 0) or np.any(depth == -np.inf):
        raise GeometryError("depth must be positive or +inf")
    inv = np.where(finite, 1.0 / np.where(finite, depth, 1.0), 0.0)
    idx = (grid.num_spheres - 1) * (inv - 0.0) / (grid.inv_depth_max - 0.0)
    over = idx > grid.num_spheres - 1
    clamped = int(over.sum())
    if clamped:
        logger.warning("%d GT pixels nearer than 1/d_max clamped to index N-1", clamped)
    idx = np.where(over, grid.num_spheres - 1, idx)
    return (idx, clamped) if return_clamped else idx


def coverage_masks(table: LookupTable, gt_index) -> np.ndarray:
    """Per-camera validity at the swept sphere nearest each pixel's rounded GT index."""
    stride = table.grid.stride
    j = np.clip(np.rint(np.round(gt_index) / stride), 0, len(table.sphere_indices) - 1)
    j = j.astype(np.int64)
    rows, cols = np.indices(j.shape)
    return table.valid[:, j, rows, cols]


def cyclic_permutations(num_cameras: int) -> list[tuple[int, ...]]:
    """Rotations of the identity order, e.g. 1234, 2341, 3412, 4123."""
    base = list(range(num_cameras))
    return [tuple(base[k:] + base[:k]) for k in range(num_cameras)]


@dataclass
class Frame:
    """Network-ready frame: normalized rasters and the GT index map on the grid."""

    images: list[np.ndarray]
    gt_index: np.ndarray
    frame_id: str = ""


@dataclass
class Augmentation:
    permute: bool = False
    max_yaw_cols: int = 0


class Trainer:
    """Owns the optimizer, the augmentation rng and lookup tables per yaw offset."""

    def __init__(self, model: OmniMVSModel, rig: Rig, lr: float, momentum: float = 0.9,
                 augment: Augmentation | None = None, seed: int = 0):
        self.model = model
        self.rig = rig
        self.optimizer = ad.SGD(model.params, lr, momentum)
        self.augment = augment or Augmentation()
        self.rng = np.random.default_rng(seed)
        self._tables: dict[int, LookupTable] = {}

    def table(self, yaw_cols: int = 0) -> LookupTable:
        if yaw_cols not in self._tables:
            cfg = self.model.config
            yaw = yaw_cols * 2 * math.pi / cfg.grid.width
            rig = self.rig.rotated(yaw) if yaw_cols else self.rig
            self._tables[yaw_cols] = build_lookup(rig, cfg.grid, cfg.source_scale)
        return self._tables[yaw_cols]

    def step(self, frame: Frame) -> float:
        return train_step(self.model, frame, self.optimizer, self.table, self.augment, self.rng)


def train_step(model: OmniMVSModel, frame: Frame, optimizer: ad.SGD, tables,
               augment: Augmentation, rng: np.random.Generator) -> float:
    """One SGD step on one frame; returns the loss before the update.

    ``tables`` maps a yaw offset in grid columns to the lookup table of the
    correspondingly rotated rig.
    """
    if frame.gt_index is None:
        raise ConfigError("training frame has no ground truth")
    cfg = model.config
    perm = None
    if augment.permute:
        orders = cyclic_permutations(cfg.num_cameras)
        perm = orders[int(rng.integers(len(orders)))]
    k = 0
    if augment.max_yaw_cols:
        k = int(rng.integers(-augment.max_yaw_cols, augment.max_yaw_cols + 1))
    table = tables(k)
    gt = np.roll(frame.gt_index, -k, axis=1) if k else frame.gt_index
    model.train()
    optimizer.zero_grad()
    pred, _ = forward(model, frame.images, table, perm)
    loss = ad.masked_l1_loss(pred, gt, coverage_masks(table, gt))
    loss.backward()
    optimizer.step()
    return float(loss.data)


def predict(model: OmniMVSModel, images, table: LookupTable, permutation=None) -> np.ndarray:
    was = model.training
    model.eval()
    try:
        pred, _ = forward(model, images, table, permutation)
    finally:
        model.train(was)
    return pred.data.copy()
