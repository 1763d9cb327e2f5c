"""Minimal reverse-mode differentiation over float32 numpy arrays.

Only the operations the depth network and its loss need are provided.
"""

from .conv import ShapeError, conv2d, conv3d, conv_nd, conv_transpose_nd, deconv3d
from .ops import (
    LossError,
    add,
    add_bias,
    add_scalars,
    batchnorm,
    concat,
    masked_l1_loss,
    relu,
    reshape,
    softargmin,
    weighted_sum,
)
from .optim import SGD, load_checkpoint, save_checkpoint, sgd_step
from .tensor import DTYPE, Tensor, as_tensor, parameter, topological_order

__all__ = [
    "DTYPE", "SGD", "LossError", "ShapeError", "Tensor", "add", "add_bias", "add_scalars",
    "as_tensor", "batchnorm", "concat", "conv2d", "conv3d", "conv_nd", "conv_transpose_nd",
    "deconv3d", "load_checkpoint", "masked_l1_loss", "parameter", "relu", "reshape",
    "save_checkpoint", "sgd_step", "softargmin", "topological_order", "weighted_sum",
]
