"""SGD with momentum and the binary checkpoint format."""

from __future__ import annotations

import numpy as np

from ..io import read_blob, write_blob
from .tensor import DTYPE, Tensor


def sgd_step(params, grads, velocities, lr: float, momentum: float) -> None:
    """In place: v <- momentum * v + g; p <- p - lr * v.

    ``params`` and ``velocities`` are arrays updated in place; a ``None``
    gradient leaves its parameter and velocity untouched.
    """
    for p, g, v in zip(params, grads, velocities):
        if g is None:
            continue
        if v.shape != p.shape or g.shape != p.shape:
            raise ValueError("velocity/gradient shape differs from its parameter")
        v *= DTYPE(momentum)
        v += g
        if lr != 0:
            p -= DTYPE(lr) * v


class SGD:
    """Momentum SGD over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        names = list(self.params)
        sgd_step([self.params[k].data for k in names],
                 [self.params[k].grad for k in names],
                 [self.velocity[k] for k in names], self.lr, self.momentum)
        self.steps += 1


CHECKPOINT_FORMAT = "omnimvs-checkpoint/1"


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict, config_hash: str,
                    buffers: dict[str, np.ndarray] | None = None,
                    velocity: dict[str, np.ndarray] | None = None,
                    state: dict | None = None) -> None:
    """Write a manifest plus raw little-endian float32 blobs.

    The manifest lists every tensor's group, name and shape in file order,
    the network config and its hash, and free-form training ``state``.
    """
    groups = [("param", params), ("buffer", buffers or {}), ("velocity", velocity or {})]
    entries, arrays = [], []
    for group, table in groups:
        for name, arr in table.items():
            entries.append({"group": group, "name": name})
            arrays.append(np.asarray(arr, dtype=DTYPE))
    header = {"format": CHECKPOINT_FORMAT, "config": config, "config_hash": config_hash,
              "tensors": entries, "state": state or {}}
    write_blob(path, header, arrays)


def load_checkpoint(path) -> dict:
    header, arrays = read_blob(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an omnimvs checkpoint")
    out = {"config": header["config"], "config_hash": header["config_hash"],
           "state": header["state"], "param": {}, "buffer": {}, "velocity": {}}
    for entry, arr in zip(header["tensors"], arrays):
        out[entry["group"]][entry["name"]] = arr
    return out
