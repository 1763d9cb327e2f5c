"""Channel-last 2-D/3-D convolutions and the matching transposed convolution.

Layouts: inputs are ``(*spatial, C)``, kernels ``(*k, C_in, C_out)``. Every
convolution uses "same" padding, so the output extent along an axis with
stride ``s`` is ``ceil(n / s)``. Axes listed in ``circular`` are padded by
wrapping (the azimuth axis of an equirectangular volume); the rest are padded
with zeros.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import DTYPE, Tensor, as_tensor


class ShapeError(ValueError):
    pass


def _pads(kernel, dilation):
    return [d * (k // 2) for k, d in zip(kernel, dilation)]


def _pad(x, pads, circular):
    for axis, p in enumerate(pads):
        if p == 0:
            continue
        if axis in circular:
            n = x.shape[axis]
            if p > n:
                raise ShapeError(f"circular pad {p} exceeds extent {n}")
            lo = np.take(x, range(n - p, n), axis=axis)
            hi = np.take(x, range(p), axis=axis)
            x = np.concatenate([lo, x, hi], axis=axis)
        else:
            width = [(0, 0)] * x.ndim
            width[axis] = (p, p)
            x = np.pad(x, width)
    return x


def _unpad(xp, pads, sizes, circular):
    """Adjoint of :func:`_pad`: crop, folding wrapped margins back for circular axes."""
    x = xp
    for axis, (p, n) in enumerate(zip(pads, sizes)):
        if p == 0:
            continue
        core = [slice(None)] * x.ndim
        core[axis] = slice(p, p + n)
        inner = x[tuple(core)].copy()
        if axis in circular:
            lo = [slice(None)] * x.ndim
            lo[axis] = slice(0, p)
            hi = [slice(None)] * x.ndim
            hi[axis] = slice(p + n, p + n + p)
            dst_lo = [slice(None)] * x.ndim
            dst_lo[axis] = slice(n - p, n)
            dst_hi = [slice(None)] * x.ndim
            dst_hi[axis] = slice(0, p)
            inner[tuple(dst_lo)] += x[tuple(lo)]
            inner[tuple(dst_hi)] += x[tuple(hi)]
        x = inner
    return x


def _window_slices(kernel, stride, dilation, out):
    for offset in itertools.product(*(range(k) for k in kernel)):
        yield tuple(slice(o * d, o * d + s * (m - 1) + 1, s)
                    for o, d, s, m in zip(offset, dilation, stride, out))


def _im2col(xp, kernel, stride, dilation, out):
    cols = [xp[sl] for sl in _window_slices(kernel, stride, dilation, out)]
    return np.stack(cols, axis=-2)  # (*out, K, C)


def _col2im(cols, padded_shape, kernel, stride, dilation, out):
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    for idx, sl in enumerate(_window_slices(kernel, stride, dilation, out)):
        xp[sl] += cols[..., idx, :]
    return xp


def _normalize(value, ndim, name):
    if np.isscalar(value):
        return (int(value),) * ndim
    value = tuple(int(v) for v in value)
    if len(value) != ndim:
        raise ShapeError(f"{name} needs {ndim} entries, got {value}")
    return value


def _check(x, w, ndim, op):
    if x.ndim != ndim + 1:
        raise ShapeError(f"{op}: input must have {ndim} spatial axes plus channels, got {x.shape}")
    if w.ndim != ndim + 2:
        raise ShapeError(f"{op}: kernel must be (*k, C_in, C_out), got {w.shape}")
    if any(k % 2 == 0 for k in w.shape[:ndim]):
        raise ShapeError(f"{op}: kernel extents must be odd, got {w.shape[:ndim]}")


def conv_nd(x: Tensor, w: Tensor, stride=1, dilation=1, circular=()) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    ndim = x.data.ndim - 1
    _check(x.data, w.data, ndim, "conv")
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"conv: input has {x.shape[-1]} channels, kernel expects {w.shape[-2]}")
    kernel = w.shape[:ndim]
    stride = _normalize(stride, ndim, "stride")
    dilation = _normalize(dilation, ndim, "dilation")
    circular = tuple(circular)
    sizes = x.shape[:-1]
    out = tuple((n - 1) // s + 1 for n, s in zip(sizes, stride))
    pads = _pads(kernel, dilation)
    xp = _pad(x.data, pads, circular)
    cols = _im2col(xp, kernel, stride, dilation, out)
    c_in, c_out = w.shape[-2:]
    n_k = cols.shape[-2]
    cols2 = cols.reshape(-1, n_k * c_in)
    wmat = w.data.reshape(n_k * c_in, c_out)
    y = (cols2 @ wmat).reshape(*out, c_out)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        dw = (cols2.T @ g2).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(*out, n_k, c_in)
            dxp = _col2im(dcols, xp.shape, kernel, stride, dilation, out)
            dx = _unpad(dxp, pads, sizes, circular)
        return dx, dw

    return Tensor.from_op(y, (x, w), backward)


def conv_transpose_nd(x: Tensor, w: Tensor, stride=2, circular=()) -> Tensor:
    """Adjoint of :func:`conv_nd` with the kernel's channel axes swapped.

    ``w`` has shape ``(*k, C_in, C_out)``; the output extent is
    ``stride * n`` along every axis. A unit impulse at input position j
    deposits a copy of the kernel centred on output position ``stride * j``.
    """
    x, w = as_tensor(x), as_tensor(w)
    ndim = x.data.ndim - 1
    _check(x.data, w.data, ndim, "deconv")
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"deconv: input has {x.shape[-1]} channels, kernel expects {w.shape[-2]}")
    kernel = w.shape[:ndim]
    stride = _normalize(stride, ndim, "stride")
    dilation = (1,) * ndim
    circular = tuple(circular)
    src = x.shape[:-1]
    sizes = tuple(n * s for n, s in zip(src, stride))
    pads = _pads(kernel, dilation)
    padded = tuple(n + 2 * p for n, p in zip(sizes, pads)) + (w.shape[-1],)
    c_in, c_out = w.shape[-2:]
    n_k = int(np.prod(kernel))
    x2 = x.data.reshape(-1, c_in)
    wk = w.data.reshape(n_k, c_in, c_out)
    w_fwd = wk.transpose(1, 0, 2).reshape(c_in, n_k * c_out)
    cols = (x2 @ w_fwd).reshape(*src, n_k, c_out)
    y = _unpad(_col2im(cols, padded, kernel, stride, dilation, src), pads, sizes, circular)

    def backward(g):
        gp = _pad(g, pads, circular)
        gcols = _im2col(gp, kernel, stride, dilation, src).reshape(-1, n_k * c_out)
        dx = None
        if x.requires_grad:
            w_bwd = wk.transpose(0, 2, 1).reshape(n_k * c_out, c_in)
            dx = (gcols @ w_bwd).reshape(x.shape)
        dw = None
        if w.requires_grad:
            dw = (x2.T @ gcols).reshape(c_in, n_k, c_out).transpose(1, 0, 2).reshape(w.shape)
        return dx, dw

    return Tensor.from_op(y, (x, w), backward)


def conv2d(x, w, stride=1, dilation=1) -> Tensor:
    """2-D cross-correlation of an (H, W, C_in) raster with a (kh, kw, C_in, C_out) kernel."""
    return conv_nd(x, w, stride, dilation)


def conv3d(x, w, stride=1, circular_width: bool = True) -> Tensor:
    """3-D cross-correlation of an (H, W, D, C_in) volume; W wraps when ``circular_width``."""
    return conv_nd(x, w, stride, 1, (1,) if circular_width else ())


def deconv3d(x, w, stride=2, circular_width: bool = True) -> Tensor:
    """Transposed 3-D convolution; doubles every spatial extent at the default stride."""
    return conv_transpose_nd(x, w, stride, (1,) if circular_width else ())


def zeros_like_param(w) -> np.ndarray:
    return np.zeros(np.shape(w), dtype=DTYPE)
