"""Model configuration and the binarized architecture choices.

Everything here is plain data plus YAML round-tripping; the heavy lifting
lives in :mod:`hetvit.model` and :mod:`hetvit.cost`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import yaml

from .errors import InvalidConfig, ShapeMismatch

__all__ = [
    "ViTConfig",
    "AttentionAssignment",
    "MLPAssignment",
    "CIFAR_CONFIG",
    "TINY_IMAGENET_CONFIG",
    "DESK_CONFIG",
    "save_arch",
    "load_arch",
]


@dataclass(frozen=True)
class ViTConfig:
    depth: int = 2
    heads: int = 2
    dim: int = 32
    patch: int = 4
    image: int = 8
    classes: int = 4
    mlp_ratio: int = 2
    channels: int = 1
    class_token: bool = True
    rs_eps: float = 1e-8

    def __post_init__(self):
        for name in ("depth", "heads", "dim", "patch", "image", "classes", "mlp_ratio", "channels"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.dim % self.heads:
            raise InvalidConfig(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.image % self.patch:
            raise InvalidConfig(f"image {self.image} not divisible by patch {self.patch}")
        if self.classes < 2:
            raise InvalidConfig("need at least two classes")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def patches(self) -> int:
        return (self.image // self.patch) ** 2

    @property
    def tokens(self) -> int:
        return self.patches + int(self.class_token)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def hidden(self) -> int:
        return self.dim * self.mlp_ratio

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


CIFAR_CONFIG = ViTConfig(depth=7, heads=4, dim=256, patch=4, image=32, classes=10, mlp_ratio=2, channels=3)
TINY_IMAGENET_CONFIG = ViTConfig(depth=9, heads=12, dim=192, patch=4, image=64, classes=200, mlp_ratio=2, channels=3)
DESK_CONFIG = ViTConfig()


class AttentionAssignment:
    """Boolean grid of RSAttn (True) vs ScaleAttn (False) choices.

    ``granularity`` is ``layer`` (shape L), ``head`` (L x N) or ``row``
    (L x N x T).
    """

    SHAPES = {"layer": 1, "head": 2, "row": 3}

    def __init__(self, choice, granularity: str = "head"):
        if granularity not in self.SHAPES:
            raise InvalidConfig(f"unknown granularity {granularity!r}")
        choice = np.asarray(choice, dtype=bool)
        if choice.ndim != self.SHAPES[granularity]:
            raise ShapeMismatch(f"{granularity} assignment needs {self.SHAPES[granularity]} dims, got {choice.shape}")
        self.choice = choice
        self.granularity = granularity

    @classmethod
    def full(cls, cfg: ViTConfig, rs: bool) -> "AttentionAssignment":
        return cls(np.full((cfg.depth, cfg.heads), rs), "head")

    @classmethod
    def all_rs(cls, cfg: ViTConfig) -> "AttentionAssignment":
        return cls.full(cfg, True)

    @classmethod
    def all_scale(cls, cfg: ViTConfig) -> "AttentionAssignment":
        return cls.full(cfg, False)

    def check(self, cfg: ViTConfig) -> None:
        want = {"layer": (cfg.depth,), "head": (cfg.depth, cfg.heads), "row": (cfg.depth, cfg.heads, cfg.tokens)}
        if self.choice.shape != want[self.granularity]:
            raise ShapeMismatch(f"assignment shape {self.choice.shape} does not match config {want[self.granularity]}")

    def rows(self, layer: int, head: int, tokens: int) -> np.ndarray:
        """Per-row RSAttn mask for one head."""
        if self.granularity == "layer":
            return np.full(tokens, bool(self.choice[layer]))
        if self.granularity == "head":
            return np.full(tokens, bool(self.choice[layer, head]))
        return self.choice[layer, head].copy()

    def head_grid(self, cfg: ViTConfig) -> np.ndarray:
        """Fraction of RSAttn rows for every (layer, head), as floats."""
        out = np.zeros((cfg.depth, cfg.heads))
        for i in range(cfg.depth):
            for j in range(cfg.heads):
                out[i, j] = self.rows(i, j, cfg.tokens).mean()
        return out

    @property
    def realized_mu(self) -> float:
        return float(self.choice.mean())

    def __eq__(self, other):
        return (isinstance(other, AttentionAssignment) and self.granularity == other.granularity
                and np.array_equal(self.choice, other.choice))

    def __repr__(self):
        return f"AttentionAssignment({self.granularity}, mu={self.realized_mu:.3f})"

    def to_dict(self) -> dict:
        return {"granularity": self.granularity, "choice": self.choice.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionAssignment":
        return cls(np.asarray(d["choice"], dtype=bool), d.get("granularity", "head"))


class MLPAssignment:
    """Per-site MLP choices: GeLU kept, fused linear, ReLU added after fusion.

    Sites are ``layer`` (shape L x 1) or ``token`` (L x T).
    """

    def __init__(self, gelu_kept, fused=None, relu_added=None, granularity: str = "layer"):
        if granularity not in ("layer", "token"):
            raise InvalidConfig(f"unknown granularity {granularity!r}")
        g = np.asarray(gelu_kept, dtype=bool)
        if g.ndim != 2:
            raise ShapeMismatch("gelu_kept must be 2-d (layer x site)")
        f = np.zeros_like(g) if fused is None else np.asarray(fused, dtype=bool)
        r = np.zeros_like(g) if relu_added is None else np.asarray(relu_added, dtype=bool)
        if f.shape != g.shape or r.shape != g.shape:
            raise ShapeMismatch("gelu_kept, fused and relu_added must share a shape")
        if np.any(f & g):
            raise InvalidConfig("a fused site cannot keep its GeLU")
        if np.any(r & ~f):
            raise InvalidConfig("ReLU can only be added at fused sites")
        self.gelu_kept, self.fused, self.relu_added = g, f, r
        self.granularity = granularity

    @classmethod
    def all_gelu(cls, cfg: ViTConfig, granularity: str = "layer") -> "MLPAssignment":
        sites = 1 if granularity == "layer" else cfg.tokens
        return cls(np.ones((cfg.depth, sites), dtype=bool), granularity=granularity)

    def check(self, cfg: ViTConfig) -> None:
        sites = 1 if self.granularity == "layer" else cfg.tokens
        if self.gelu_kept.shape != (cfg.depth, sites):
            raise ShapeMismatch(f"MLP assignment shape {self.gelu_kept.shape} does not match ({cfg.depth}, {sites})")

    def token_mask(self, grid: np.ndarray, layer: int, tokens: int) -> np.ndarray:
        row = grid[layer]
        return np.full(tokens, bool(row[0])) if self.granularity == "layer" else row.copy()

    def gelu_tokens(self, layer: int, tokens: int) -> np.ndarray:
        return self.token_mask(self.gelu_kept, layer, tokens)

    def fused_tokens(self, layer: int, tokens: int) -> np.ndarray:
        return self.token_mask(self.fused, layer, tokens)

    def relu_tokens(self, layer: int, tokens: int) -> np.ndarray:
        return self.token_mask(self.relu_added, layer, tokens)

    def __eq__(self, other):
        return (isinstance(other, MLPAssignment) and self.granularity == other.granularity
                and all(np.array_equal(a, b) for a, b in zip(
                    (self.gelu_kept, self.fused, self.relu_added),
                    (other.gelu_kept, other.fused, other.relu_added))))

    def __repr__(self):
        return f"MLPAssignment({self.granularity}, kept={int(self.gelu_kept.sum())}/{self.gelu_kept.size})"

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "gelu_kept": self.gelu_kept.astype(int).tolist(),
            "fused": self.fused.astype(int).tolist(),
            "relu_added": self.relu_added.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPAssignment":
        return cls(d["gelu_kept"], d.get("fused"), d.get("relu_added"), d.get("granularity", "layer"))


def ceil_count(mu: float, total: int) -> int:
    # round first so 0.7 * 10 does not become 8 through float noise
    return int(math.ceil(round(mu * total, 9)))


def save_arch(path, cfg: ViTConfig, attn: AttentionAssignment | None = None, mlp: MLPAssignment | None = None) -> None:
    doc = {"vit": cfg.to_dict()}
    if attn is not None:
        doc["attention"] = attn.to_dict()
    if mlp is not None:
        doc["mlp"] = mlp.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)


def load_arch(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "vit" not in doc:
        raise InvalidConfig(f"{path}: missing 'vit' section")
    cfg = ViTConfig.from_dict(doc["vit"])
    attn = AttentionAssignment.from_dict(doc["attention"]) if "attention" in doc else None
    mlp = MLPAssignment.from_dict(doc["mlp"]) if "mlp" in doc else None
    if attn is not None:
        attn.check(cfg)
    if mlp is not None:
        mlp.check(cfg)
    return cfg, attn, mlp
