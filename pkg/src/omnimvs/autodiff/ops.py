"""Elementwise, normalization, reduction and loss ops."""

from __future__ import annotations

import numpy as np

from .conv import ShapeError
from .tensor import DTYPE, Tensor, as_tensor


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return Tensor.from_op(np.where(keep, x.data, 0).astype(DTYPE), (x,),
                          lambda g: (np.where(keep, g, 0).astype(DTYPE),))


def add_bias(x, bias) -> Tensor:
    """Add a per-channel bias (last axis)."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.shape != (x.shape[-1],):
        raise ShapeError(f"bias {bias.shape} does not match {x.shape[-1]} channels")
    axes = tuple(range(x.data.ndim - 1))
    return Tensor.from_op(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=axes)))


def batchnorm(x, scale, shift, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over all non-channel axes.

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"batchnorm: parameters must have shape ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // c
        unbiased = var * (count / max(count - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(DTYPE)
    xhat = (x.data - mean) * inv_std
    y = xhat * scale.data + shift.data

    def backward(g):
        dscale = (g * xhat).sum(axis=axes)
        dshift = g.sum(axis=axes)
        gx = g * scale.data
        if training:
            dx = inv_std * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes))
        else:
            dx = gx * inv_std
        return dx.astype(DTYPE), dscale, dshift

    return Tensor.from_op(y.astype(DTYPE), (x, scale, shift), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {tuple(np.delete(t.shape, axis % t.data.ndim)) for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(y, tensors, lambda g: np.split(g, splits, axis=axis))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def weighted_sum(x, weights) -> Tensor:
    """Scalar <x, weights> with a constant weight array."""
    x = as_tensor(x)
    w = np.asarray(weights, dtype=DTYPE)
    if w.shape != x.shape:
        raise ShapeError("weighted_sum: weights must match the tensor shape")
    return Tensor.from_op(np.array((x.data.astype(np.float64) * w).sum(), dtype=DTYPE), (x,),
                          lambda g: (g * w,))


def add_scalars(*terms) -> Tensor:
    """Sum of scalar tensors."""
    terms = [as_tensor(t) for t in terms]
    total = np.array(sum(float(t.data) for t in terms), dtype=DTYPE)
    return Tensor.from_op(total, terms, lambda g: tuple(g for _ in terms))


def softargmin(cost) -> Tensor:
    """Expected index under softmax(-cost) along the last axis.

    The per-pixel minimum cost is subtracted before exponentiation, so the
    result never overflows and is unchanged by adding a constant to a
    pixel's costs.
    """
    cost = as_tensor(cost)
    n = cost.shape[-1]
    if n < 1:
        raise ShapeError("softargmin needs at least one index")
    shifted = cost.data - cost.data.min(axis=-1, keepdims=True)
    e = np.exp(-shifted.astype(np.float64))
    p = e / e.sum(axis=-1, keepdims=True)
    idx = np.arange(n, dtype=np.float64)
    expect = (p * idx).sum(axis=-1)
    out = np.clip(expect, 0, n - 1).astype(DTYPE)

    def backward(g):
        return ((p * (expect[..., None] - idx)) * g[..., None]).astype(DTYPE),

    return Tensor.from_op(out, (cost,), backward)


class LossError(ValueError):
    pass


def masked_l1_loss(pred, gt_idx, masks) -> Tensor:
    """Mean over covered pixels of |pred - round(gt)| / coverage.

    ``masks`` holds one boolean (H, W) map per camera; a pixel's coverage is
    the number of cameras whose mask is set there. Pixels with zero coverage
    or a non-finite GT are excluded.
    """
    pred = as_tensor(pred)
    gt = np.asarray(gt_idx, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if gt.shape != pred.shape or masks.shape[1:] != pred.shape:
        raise ShapeError("masked_l1_loss: prediction, GT and masks must share (H, W)")
    coverage = masks.sum(axis=0)
    include = (coverage > 0) & np.isfinite(gt)
    count = int(include.sum())
    if count == 0:
        raise LossError("no pixel is covered by any camera")
    target = np.round(np.where(include, gt, 0))
    diff = pred.data.astype(np.float64) - target
    weight = np.where(include, 1.0 / np.maximum(coverage, 1), 0.0) / count
    loss = np.array((np.abs(diff) * weight).sum(), dtype=DTYPE)

    def backward(g):
        return (g * np.sign(diff) * weight).astype(DTYPE),

    return Tensor.from_op(loss, (pred,), backward)
