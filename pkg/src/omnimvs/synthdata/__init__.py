"""Synthetic omnidirectional stereo data with exact ground truth."""

from .audit import AuditResult, gt_consistency, warp_to_depth
from .frame import (
    FrameData,
    frame_seed,
    generate_corpus,
    load_corpus,
    read_frame,
    render_frame,
    write_frame,
)
from .render import camera_rays, render_fisheye, render_gt_depth, visible_from
from .scene import (
    Box,
    Placement,
    Room,
    Scene,
    SceneError,
    SceneParams,
    Sky,
    Sphere,
    generate_scene,
    marsaglia_direction,
    marsaglia_from,
)

__all__ = [
    "AuditResult", "gt_consistency", "warp_to_depth",
    "Box", "FrameData", "Placement", "Room", "Scene", "SceneError", "SceneParams", "Sky",
    "Sphere", "camera_rays", "frame_seed", "generate_corpus", "generate_scene", "load_corpus",
    "marsaglia_direction", "marsaglia_from", "read_frame", "render_fisheye", "render_frame",
    "render_gt_depth", "visible_from", "write_frame",
]
