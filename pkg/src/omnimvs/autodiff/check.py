"""Finite-difference gradient checks and adjoint dot-product tests."""

from __future__ import annotations

import numpy as np

from .ops import weighted_sum
from .tensor import Tensor


def gradient_check(fn, inputs: list[Tensor], h: float = 1e-3, samples: int = 12,
                   seed: int = 0) -> float:
    """Compare reverse-mode gradients of ``<fn(*inputs), R>`` with central differences.

    ``R`` is a fixed random weight array. Up to ``samples`` entries of every
    input that requires a gradient are perturbed. Returns the worst
    ``max|fd - analytic| / max|analytic|`` over inputs.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape).astype(np.float32)
    for t in inputs:
        t.grad = None
    weighted_sum(out, weights).backward()
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad.astype(np.float64)
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        numeric = np.empty(len(picks))
        for j, k in enumerate(picks):
            orig = flat[k]
            flat[k] = orig + h
            plus = _scalar(fn, inputs, weights)
            flat[k] = orig - h
            minus = _scalar(fn, inputs, weights)
            flat[k] = orig
            numeric[j] = (plus - minus) / (2 * h)
        ana = analytic.reshape(-1)[picks]
        scale = max(np.abs(analytic).max(), 1e-12)
        worst = max(worst, float(np.abs(numeric - ana).max() / scale))
    return worst


def _scalar(fn, inputs, weights):
    out = fn(*[Tensor(t.data) for t in inputs])
    return float((out.data.astype(np.float64) * weights).sum())


def adjoint_residual(forward, adjoint, x_shape, y_shape, seed: int = 0) -> float:
    """Relative gap |<A x, y> - <x, A^T y>| / (|A x| |y|) for random x, y (float64 sums)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(x_shape).astype(np.float32)
    y = rng.standard_normal(y_shape).astype(np.float32)
    ax = np.asarray(forward(x), dtype=np.float64)
    aty = np.asarray(adjoint(y), dtype=np.float64)
    lhs = (ax * y).sum()
    rhs = (x.astype(np.float64) * aty).sum()
    return float(abs(lhs - rhs) / max(np.linalg.norm(ax) * np.linalg.norm(y), 1e-30))


def vjp(fn, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of ``fn`` at ``x`` by one backward pass."""
    t = Tensor(x, requires_grad=True)
    out = fn(t)
    out.backward(g.astype(np.float32))
    return t.grad
