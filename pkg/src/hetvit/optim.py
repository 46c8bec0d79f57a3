"""AdamW with parameter groups and a cosine learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch

__all__ = ["AdamW", "adamw_step", "cosine_lr"]


def cosine_lr(epoch: float, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine decay from ``lr_max`` at epoch 0 to ``lr_min`` at ``total``."""
    if total <= 0:
        return lr_max
    t = min(max(epoch / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))


def adamw_step(params, grads, state, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """One in-place AdamW update of numpy arrays.

    ``state`` is a dict holding moments and the step count; pass the same
    dict on every call.
    """
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    ms = state.setdefault("m", [np.zeros_like(p) for p in params])
    vs = state.setdefault("v", [np.zeros_like(p) for p in params])
    for p, g, m, v in zip(params, grads, ms, vs):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad shape {g.shape} does not match param {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return params


class AdamW:
    """AdamW over Tensors grouped as ``[{"params": [...], "lr": .., "weight_decay": ..}]``.

    ``lr`` in a group is a multiplier on the scheduled rate.
    """

    def __init__(self, groups, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.05):
        if groups and not isinstance(groups[0], dict):
            groups = [{"params": list(groups)}]
        self.groups = []
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr_mult": g.get("lr_mult", 1.0),
                "weight_decay": g.get("weight_decay", weight_decay),
                "state": {},
            })
        self.lr = lr
        self.betas = betas
        self.eps = eps

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self, lr: float | None = None) -> None:
        base = self.lr if lr is None else lr
        for g in self.groups:
            ps = [p for p in g["params"]]
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in ps]
            adamw_step([p.data for p in ps], grads, g["state"], base * g["lr_mult"], g["weight_decay"], self.betas, self.eps)
