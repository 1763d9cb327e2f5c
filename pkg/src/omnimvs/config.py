"""Run configuration: profiles, JSON config files and environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .geometry import Rig, SweepGrid, default_rig, load_rig
from .network import ConfigError, NetworkConfig
from .synthdata import SceneParams

METHODS = ("omnimvs", "zncc-wta", "zncc-sgm", "stitch")
ENV_PREFIX = "OMNIMVS_"


@dataclass(frozen=True)
class Profile:
    image_size: tuple[int, int]
    grid: str
    inv_depth_max: float
    base_channels: int
    fusion_channels: int
    encoder_channels: tuple[int, ...]
    room_probability: float
    pinhole_size: int
    learning_rate: float


PROFILES = {
    "desk": Profile((128, 128), "32x128x16", 1.5, 8, 16, (16, 32, 32, 64), 1.0, 128, 0.03),
    "paper": Profile((768, 800), "160x640x192", 2.0, 32, 64, (64, 128, 128, 128, 256), 0.75, 512, 0.003),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs; defaults reproduce the desk acceptance runs."""

    profile: str = "desk"
    rig: str | None = None
    grid: str | None = None
    dmax: float | None = None
    method: str = "zncc-wta"
    seed: int = 0
    out: str = "out"
    # generate
    frames: int = 8
    # estimate
    checkpoint: str | None = None
    patch: int = 9
    p1: float = 0.1
    p2: float = 12.0
    dump_cost: bool = False
    # train
    lr: float | None = None  # None: the profile's learning rate
    lr_drop_epoch: int = 20
    lr_drop_factor: float = 0.1
    momentum: float = 0.9
    epochs: int = 30
    steps: int | None = None
    overfit: int | None = None
    permute: bool = True
    yaw_cols: int = 0
    checkpoint_every: int = 50
    resume: str | None = None
    plots: bool = True

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {list(METHODS)}")
        if self.dmax is not None and not self.dmax > 0:
            raise ConfigError("dmax must be positive")
        if (self.lr is not None and self.lr < 0) or not 0 <= self.momentum < 1:
            raise ConfigError("need lr >= 0 and 0 <= momentum < 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("frames", "patch", "epochs", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patch % 2 == 0:
            raise ConfigError("patch size must be odd")

    @property
    def profile_values(self) -> Profile:
        return PROFILES[self.profile]

    def inv_depth_max(self) -> float:
        return self.dmax if self.dmax is not None else self.profile_values.inv_depth_max

    def sweep_grid(self) -> SweepGrid:
        text = self.grid or self.profile_values.grid
        try:
            return SweepGrid.parse(text, self.inv_depth_max())
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def load_rig(self) -> Rig:
        """Rig from ``rig`` or the profile's default four-camera square rig."""
        if self.rig:
            rig, _ = load_rig(self.rig)
            return rig
        return default_rig(self.profile_values.image_size)

    def network_config(self, grid: SweepGrid | None = None) -> NetworkConfig:
        p = self.profile_values
        return NetworkConfig(p.image_size, grid or self.sweep_grid(),
                             base_channels=p.base_channels, fusion_channels=p.fusion_channels,
                             encoder_channels=p.encoder_channels, seed=self.seed)

    def scene_params(self) -> SceneParams:
        return SceneParams(room_probability=self.profile_values.room_probability)

    def base_lr(self) -> float:
        return self.lr if self.lr is not None else self.profile_values.learning_rate

    def lr_at(self, epoch: int) -> float:
        return self.base_lr() * (self.lr_drop_factor if epoch >= self.lr_drop_epoch else 1.0)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(field_type, raw: str):
    text = str(field_type)
    if raw.lower() in ("none", "null", ""):
        if "None" in text:
            return None
        raise ConfigError(f"value required, got {raw!r}")
    if "bool" in text:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    try:
        if "int" in text:
            return int(raw)
        if "float" in text:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad numeric value {raw!r}") from exc
    return raw


def env_overrides(environ=None) -> dict:
    """``OMNIMVS_<FIELD>`` variables, e.g. OMNIMVS_SEED=7 or OMNIMVS_DMAX=1.0."""
    environ = os.environ if environ is None else environ
    out = {}
    for f in fields(RunConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in environ:
            out[f.name] = _coerce(f.type, environ[key])
    return out


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    known = {f.name for f in fields(RunConfig)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"{path}: unknown config keys {sorted(extra)}")
    return data


def resolve(flags: dict, config_file=None, environ=None) -> RunConfig:
    """Merge layers: defaults < config file < environment < flags (None flags are unset)."""
    values: dict = {}
    if config_file:
        values.update(load_config_file(config_file))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        return replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
