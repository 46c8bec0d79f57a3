"""Plaintext attention variants on numpy arrays of shape (..., n, d)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingParam, ShapeMismatch

__all__ = [
    "AttentionVariant",
    "softmax_attn",
    "rs_attn",
    "scale_attn",
    "variant_attn",
    "sparsemax",
    "softmax",
    "relusoftmax",
    "TAGS",
]

TAGS = ("Softmax", "RSAttn", "ScaleAttn", "Linformer", "ReLU", "ReLU6", "Sparsemax", "XNorm", "Square", "2Quad")


@dataclass(frozen=True)
class AttentionVariant:
    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown attention variant {self.tag!r}")
        if self.tag == "RSAttn" and self.params.get("eps", 1e-8) <= 0:
            raise ValueError("RSAttn eps must be positive")
        if self.tag == "Linformer" and "k" in self.params and self.params["k"] < 1:
            raise ValueError("Linformer k must be positive")


def _check(Q, K, V):
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.ndim < 2 or K.shape != V.shape[:-1] + (K.shape[-1],) or Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"bad attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    if Q.shape[-2] < 1 or Q.shape[-1] < 1:
        raise ShapeMismatch("need at least one token and one feature")
    return Q, K, V


def _logits(Q, K):
    return (Q @ np.swapaxes(K, -1, -2)) * (1.0 / math.sqrt(Q.shape[-1]))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def relusoftmax(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    r = np.maximum(x, 0.0)
    return r / (r.sum(axis=-1, keepdims=True) + eps)


def sparsemax(x: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    x = np.asarray(x, dtype=np.float64)
    z = np.sort(x, axis=-1)[..., ::-1]
    k = np.arange(1, x.shape[-1] + 1)
    cssv = np.cumsum(z, axis=-1) - 1.0
    support = z - cssv / k > 0
    kz = support.sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(cssv, kz - 1, axis=-1) / kz
    return np.maximum(x - tau, 0.0)


def softmax_attn(Q, K, V) -> np.ndarray:
    Q, K, V = _check(Q, K, V)
    return softmax(_logits(Q, K)) @ V


def rs_attn(Q, K, V, eps: float = 1e-8) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    Q, K, V = _check(Q, K, V)
    return relusoftmax(_logits(Q, K), eps) @ V


def scale_attn(Q, K, V, reparam: bool = False) -> np.ndarray:
    """(1/n) Q K^T V, either through the n x n map or as Q (K^T V)."""
    Q, K, V = _check(Q, K, V)
    n = K.shape[-2]
    if reparam:
        return (Q / math.sqrt(n)) @ ((np.swapaxes(K, -1, -2) / math.sqrt(n)) @ V)
    return (Q @ np.swapaxes(K, -1, -2)) @ V / n


def _xnorm(Q, K, V, eps=1e-6):
    kv = np.swapaxes(K, -1, -2) @ V
    qn = Q / (np.linalg.norm(Q, axis=-2, keepdims=True) + eps)
    kvn = kv / (np.linalg.norm(kv, axis=-1, keepdims=True) + eps)
    return qn @ kvn


def variant_attn(variant, Q, K, V, **params) -> np.ndarray:
    """Dispatch on a variant tag (or :class:`AttentionVariant`)."""
    if isinstance(variant, AttentionVariant):
        params = {**variant.params, **params}
        tag = variant.tag
    else:
        tag = variant
    Q, K, V = _check(Q, K, V)
    if tag == "Softmax":
        return softmax_attn(Q, K, V)
    if tag == "RSAttn":
        return rs_attn(Q, K, V, params.get("eps", 1e-8))
    if tag == "ScaleAttn":
        return scale_attn(Q, K, V, params.get("reparam", False))
    if tag == "Linformer":
        E, F = params.get("E"), params.get("F")
        if E is None or F is None:
            raise MissingParam("Linformer needs projections E and F (k x n)")
        E, F = np.asarray(E, dtype=np.float64), np.asarray(F, dtype=np.float64)
        n = K.shape[-2]
        if E.shape[-1] != n or F.shape[-1] != n or E.shape[-2] != F.shape[-2]:
            raise ShapeMismatch(f"Linformer projections must be k x {n}, got {E.shape} and {F.shape}")
        return softmax(_logits(Q, E @ K)) @ (F @ V)
    if tag == "ReLU":
        return np.maximum(_logits(Q, K), 0.0) @ V
    if tag == "ReLU6":
        return np.clip(_logits(Q, K), 0.0, 6.0) @ V
    if tag == "Sparsemax":
        return sparsemax(_logits(Q, K)) @ V
    if tag == "XNorm":
        return _xnorm(Q, K, V, params.get("eps", 1e-6))
    if tag == "Square":
        return _logits(Q, K) ** 2 @ V
    if tag == "2Quad":
        if "c" not in params:
            raise MissingParam("2Quad needs the shift c")
        w = (_logits(Q, K) + params["c"]) ** 2
        return w / w.sum(axis=-1, keepdims=True) @ V
    raise ValueError(f"unknown attention variant {tag!r}")
