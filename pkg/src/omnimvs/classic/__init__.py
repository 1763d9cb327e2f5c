"""Non-learned baselines: spherical ZNCC with WTA or SGM, and rectify-and-stitch."""

from .sgm import DIRECTIONS, SgmParams, aggregate_path, sgm
from .stitch import (
    CoverageError,
    PinholeView,
    StereoPair,
    block_matching,
    max_disparity_for,
    pair_rotation,
    rectify_pairs,
    stitch_disparities,
    stitch_estimate,
    stitch_index,
    stitch_points,
    triangulate,
)
from .zncc import (
    CostVolume,
    camera_pairs,
    masked_zncc,
    multiview_cost,
    omni_zncc_cost,
    sweep_images,
    winner_take_all,
    zncc_cost,
)

__all__ = [
    "DIRECTIONS", "CostVolume", "CoverageError", "PinholeView", "SgmParams", "StereoPair",
    "aggregate_path", "block_matching", "camera_pairs", "masked_zncc", "max_disparity_for", "multiview_cost",
    "omni_zncc_cost", "pair_rotation", "rectify_pairs", "sgm", "stitch_disparities",
    "stitch_estimate", "stitch_index", "stitch_points", "sweep_images", "triangulate", "winner_take_all",
    "zncc_cost",
]
