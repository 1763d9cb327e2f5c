"""Dataset frames on disk: PGM fisheye images, PFM depth/index maps, JSON manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import Rig, SweepGrid, config_hash, grid_from_dict, rig_from_dict, save_rig
from ..io import read_pfm, read_pnm, to_uint8, write_pfm, write_pgm
from ..network import gt_index_map
from .render import render_fisheye, render_gt_depth
from .scene import Scene, SceneParams, generate_scene

logger = logging.getLogger(__name__)


@dataclass
class FrameData:
    frame_id: str
    images: list[np.ndarray]  # uint8 rasters
    depth: np.ndarray
    index: np.ndarray
    manifest: dict


def frame_config_hash(rig: Rig, grid: SweepGrid, params: SceneParams) -> str:
    return config_hash(rig.to_dict(), grid.to_dict(), _params_dict(params))


def _params_dict(params: SceneParams) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in vars(params).items()}


def render_frame(scene: Scene, rig: Rig, grid: SweepGrid):
    """Quantized camera images, GT depth and GT index map for one scene."""
    images = [to_uint8(render_fisheye(scene, cam)) for cam in rig]
    depth = render_gt_depth(scene, grid).astype(np.float32)
    index = gt_index_map(depth, grid).astype(np.float32)
    return images, depth, index


def write_frame(scene: Scene, rig: Rig, grid: SweepGrid, out_dir, frame_id: str,
                params: SceneParams = SceneParams()) -> Path:
    out = Path(out_dir) / frame_id
    out.mkdir(parents=True, exist_ok=True)
    images, depth, index = render_frame(scene, rig, grid)
    for cam, img in zip(rig, images):
        write_pgm(out / f"{cam.name}.pgm", img)
    write_pfm(out / "depth.pfm", depth)
    write_pfm(out / "index.pfm", index)
    manifest = {
        "frame_id": frame_id,
        "scene_seed": scene.seed,
        "rig_hash": rig.hash(),
        "config_hash": frame_config_hash(rig, grid, params),
        "grid": grid.to_dict(),
        "cameras": [cam.name for cam in rig],
        "scene": scene.to_dict(),
    }
    (out / "frame.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_frame(frame_dir) -> FrameData:
    frame_dir = Path(frame_dir)
    manifest = json.loads((frame_dir / "frame.json").read_text())
    images = [read_pnm(frame_dir / f"{name}.pgm") for name in manifest["cameras"]]
    return FrameData(manifest["frame_id"], images, read_pfm(frame_dir / "depth.pfm"),
                     read_pfm(frame_dir / "index.pfm"), manifest)


def frame_seed(master_seed: int, index: int) -> int:
    """Scene seed for frame ``index``: the first word of SeedSequence([master, index])."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def generate_corpus(out_dir, num_frames: int, seed: int, rig: Rig, grid: SweepGrid,
                    params: SceneParams = SceneParams()) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_rig(out / "rig.json", rig, grid)
    frames = []
    for i in range(num_frames):
        fid = f"frame_{i:04d}"
        s = frame_seed(seed, i)
        write_frame(generate_scene(s, params), rig, grid, out, fid, params)
        frames.append({"frame_id": fid, "scene_seed": s})
        logger.info("wrote %s", fid)
    manifest = {
        "num_frames": num_frames,
        "seed": seed,
        "rig_hash": rig.hash(),
        "config_hash": frame_config_hash(rig, grid, params),
        "grid": grid.to_dict(),
        "scene_params": _params_dict(params),
        "frames": frames,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_corpus(path):
    """Return (rig, grid, manifest, frame ids) for a generated corpus."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    data = json.loads((path / "rig.json").read_text())
    grid = grid_from_dict(data.pop("grid")) if "grid" in data else grid_from_dict(manifest["grid"])
    rig = rig_from_dict(data)
    return rig, grid, manifest, [f["frame_id"] for f in manifest["frames"]]
