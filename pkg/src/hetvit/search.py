"""MPC-aware differentiable search over attention heads (alpha) and GeLU
sites (beta), plus the binarization rules that turn the learnt grids into
assignments.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .arch import AttentionAssignment, MLPAssignment, ViTConfig, ceil_count
from .autodiff import Tensor
from .cost import CostTable, OpCall, attention_head_ops
from .data import Dataset, batches
from .errors import InvalidConfig, ShapeMismatch, ZeroLatency
from .model import ViT, forward
from .optim import AdamW, cosine_lr
from .training import epoch_seed

__all__ = [
    "SearchConfig",
    "ArchParams",
    "SearchResult",
    "mixed_attention_forward",
    "mixed_gelu_forward",
    "latency_grids",
    "search_loss",
    "balance_eta",
    "run_search",
    "binarize_topk",
    "binarize_threshold",
    "per_layer_uniform_baseline",
    "layer_profile",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    lam: float = 0.1
    eta: float | None = None  # None: balanced against lam through the cost table
    mu: float = 0.5
    sigma: float = 0.75
    epochs: int = 20
    lr: float = 3e-3
    arch_lr: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.05
    batch_size: int = 64
    seed: int = 0
    freeze_theta: bool = False
    search_gelu: bool = True
    mlp_granularity: str = "layer"
    # "task_loss": latencies are rescaled so the total attention latency
    # equals the initial task loss; "none" uses seconds as-is.
    lat_norm: str = "task_loss"

    def __post_init__(self):
        if self.lam < 0 or (self.eta is not None and self.eta < 0):
            raise InvalidConfig("lam and eta must be non-negative")
        if not 0 <= self.mu <= 1 or not 0 <= self.sigma <= 1:
            raise InvalidConfig("mu and sigma must be in [0, 1]")
        if self.mlp_granularity not in ("layer", "token"):
            raise InvalidConfig("mlp_granularity must be 'layer' or 'token'")
        if self.lat_norm not in ("task_loss", "none"):
            raise InvalidConfig("lat_norm must be 'task_loss' or 'none'")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfig("bad epochs / batch_size")


@dataclass
class ArchParams:
    alpha: Tensor
    beta: Tensor

    @classmethod
    def init(cls, cfg: ViTConfig, mlp_granularity: str = "layer") -> "ArchParams":
        sites = 1 if mlp_granularity == "layer" else cfg.tokens
        return cls(Tensor(np.ones((cfg.depth, cfg.heads)), requires_grad=True),
                   Tensor(np.ones((cfg.depth, sites)), requires_grad=True))

    def clamp(self) -> None:
        np.clip(self.alpha.data, 0.0, 1.0, out=self.alpha.data)
        np.clip(self.beta.data, 0.0, 1.0, out=self.beta.data)


@dataclass
class SearchResult:
    model: ViT
    alpha: np.ndarray
    beta: np.ndarray
    eta: float
    lat_scale: float
    history: list = field(default_factory=list)

    def write_grids(self, prefix) -> None:
        for name, g in (("alpha", self.alpha), ("beta", self.beta)):
            np.savetxt(f"{prefix}_{name}.csv", g, delimiter=",", fmt="%.9f")


def mixed_attention_forward(Q, K, V, alpha, eps: float = 1e-8) -> Tensor:
    """alpha * RSAttn + (1 - alpha) * ScaleAttn / sqrt(d) on (..., n, d) Tensors."""
    Q, K, V = ad.tensor(Q), ad.tensor(K), ad.tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape != V.shape[:-1] + (K.shape[-1],):
        raise ShapeMismatch(f"bad attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    n, d = K.shape[-2], Q.shape[-1]
    kt = K.swapaxes(-1, -2)
    rs = ad.matmul(ad.relusoftmax_rows(ad.scale(ad.matmul(Q, kt), 1.0 / math.sqrt(d)), eps), V)
    sc = ad.scale(ad.matmul(Q, ad.matmul(kt, V)), 1.0 / (n * math.sqrt(d)))
    a = ad.tensor(alpha)
    return rs * a + sc * (1.0 - a)


def mixed_gelu_forward(x, beta, W) -> Tensor:
    """(beta * GeLU(x) + (1 - beta) * x) @ W."""
    x, W = ad.tensor(x), ad.tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"x {x.shape} does not match W {W.shape}")
    b = ad.tensor(beta)
    return ad.matmul(ad.gelu_tanh(x) * b + x * (1.0 - b), W)


def _ops_latency(ops: list[OpCall], table: CostTable) -> float:
    return sum(table.call_cost(op)[0] for op in ops)


def latency_grids(cfg: ViTConfig, table: CostTable, mlp_granularity: str = "layer") -> tuple[np.ndarray, np.ndarray]:
    """Per-head RSAttn latency (L x N) and per-site GeLU latency (L x sites), seconds."""
    T, d, H = cfg.tokens, cfg.head_dim, cfg.hidden
    attn = np.empty((cfg.depth, cfg.heads))
    for i in range(cfg.depth):
        for j in range(cfg.heads):
            attn[i, j] = _ops_latency(attention_head_ops("RSAttn", T, d, layer=f"layer{i}"), table)
    width = T * H if mlp_granularity == "layer" else H
    sites = 1 if mlp_granularity == "layer" else T
    act = np.full((cfg.depth, sites), _ops_latency([OpCall("gelu", (width,))], table))
    return attn, act


def balance_eta(lam: float, lat_attn, lat_gelu) -> float:
    """eta such that lam / eta = Lat(ATTN) / Lat(GeLU).

    ``lat_attn`` / ``lat_gelu`` are totals or grids (summed).
    """
    a = float(np.sum(lat_attn))
    g = float(np.sum(lat_gelu))
    if a <= 0:
        raise ZeroLatency("total attention latency is zero")
    return lam * g / a


def search_loss(task_loss, alpha, beta, lat_attn, lat_act, lam: float, eta: float) -> Tensor:
    """task + lam * sum|alpha * Lat(ATTN)| + eta * sum|beta * Lat(Act)|.

    alpha, beta >= 0 so the l1 norm is the latency-weighted sum.
    """
    task_loss = ad.tensor(task_loss)
    out = task_loss
    if lam:
        out = out + ad.scale(ad.tsum(ad.mul(alpha, np.asarray(lat_attn, dtype=np.float64))), lam)
    if eta and beta is not None:
        out = out + ad.scale(ad.tsum(ad.mul(beta, np.asarray(lat_act, dtype=np.float64))), eta)
    return out


def _initial_loss(model: ViT, ds: Dataset, arch: ArchParams, batch: int = 256) -> float:
    x, y = ds.images[:batch], ds.labels[:batch]
    logits, _ = forward(model, x, alpha=arch.alpha, beta=arch.beta)
    return ad.cross_entropy(logits, y).item()


def run_search(model: ViT, train: Dataset, cfg: SearchConfig, table: CostTable, eval_ds: Dataset | None = None,
               logger=None) -> SearchResult:
    """Jointly optimise weights and (alpha, beta) under the latency penalty.

    ``model`` is not modified; the searched weights come back in the result.
    """
    model = model.copy(mlp=MLPAssignment.all_gelu(model.cfg, cfg.mlp_granularity))
    vcfg = model.cfg
    arch = ArchParams.init(vcfg, cfg.mlp_granularity)
    lat_attn, lat_act = latency_grids(vcfg, table, cfg.mlp_granularity)
    eta = cfg.eta if cfg.eta is not None else balance_eta(cfg.lam, lat_attn, lat_act)
    if not cfg.search_gelu:
        eta = 0.0
    scale = 1.0
    if cfg.lat_norm == "task_loss":
        scale = _initial_loss(model, train, arch) / float(np.sum(lat_attn))
    lat_attn, lat_act = lat_attn * scale, lat_act * scale
    log.info("search: lam=%g eta=%g lat_scale=%.6g", cfg.lam, eta, scale)

    groups = [{"params": [arch.alpha] + ([arch.beta] if cfg.search_gelu else []), "lr_mult": cfg.arch_lr / cfg.lr,
               "weight_decay": 0.0}]
    if not cfg.freeze_theta:
        groups.insert(0, {"params": model.parameters(), "weight_decay": cfg.weight_decay})
    opt = AdamW(groups, lr=cfg.lr)
    steps = max(1, -(-len(train) // cfg.batch_size))
    hist = []
    for ep in range(cfg.epochs):
        tot, pen, hits = 0.0, 0.0, 0
        for k, (x, y) in enumerate(batches(train, cfg.batch_size, epoch_seed(cfg.seed, ep))):
            lr = cosine_lr(ep + k / steps, cfg.epochs, cfg.lr, cfg.lr_min)
            logits, _ = forward(model, x, alpha=arch.alpha, beta=arch.beta if cfg.search_gelu else None)
            task = ad.cross_entropy(logits, y)
            loss = search_loss(task, arch.alpha, arch.beta, lat_attn, lat_act, cfg.lam, eta)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            arch.clamp()
            tot += task.item() * len(y)
            pen += (loss.item() - task.item()) * len(y)
            hits += int(np.sum(np.argmax(logits.data, -1) == y))
        row = {"epoch": ep, "task_loss": tot / len(train), "penalty": pen / len(train), "train_acc": hits / len(train),
               "mean_alpha": float(arch.alpha.data.mean()), "mean_beta": float(arch.beta.data.mean())}
        hist.append(row)
        if logger:
            logger(row)
    return SearchResult(model, arch.alpha.data.copy(), arch.beta.data.copy(), eta, scale, hist)


def binarize_topk(alpha, mu: float, granularity: str = "head") -> AttentionAssignment:
    """Keep the ceil(mu * L * N) largest-alpha heads as RSAttn.

    Ties go to the lower (layer, head) index.
    """
    if not 0 <= mu <= 1:
        raise InvalidConfig("mu must be in [0, 1]")
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch("alpha must be a layer x head grid")
    k = ceil_count(mu, a.size)
    flat = a.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    keep = np.zeros(flat.size, dtype=bool)
    keep[order[:k]] = True
    return AttentionAssignment(keep.reshape(a.shape), "head")


def binarize_threshold(beta, sigma: float) -> MLPAssignment:
    """beta <= sigma drops the GeLU (site becomes fusable); beta > sigma keeps it."""
    if not 0 <= sigma <= 1:
        raise InvalidConfig("sigma must be in [0, 1]")
    b = np.asarray(beta, dtype=np.float64)
    if b.ndim != 2:
        raise ShapeMismatch("beta must be a layer x site grid")
    kept = b > sigma
    gran = "layer" if b.shape[1] == 1 else "token"
    return MLPAssignment(kept, granularity=gran)


def per_layer_uniform_baseline(cfg: ViTConfig, mu: float) -> AttentionAssignment:
    """round(mu * N) RSAttn heads in every layer, lowest head indices first."""
    if not 0 <= mu <= 1:
        raise InvalidConfig("mu must be in [0, 1]")
    k = int(np.floor(mu * cfg.heads + 0.5))
    grid = np.zeros((cfg.depth, cfg.heads), dtype=bool)
    grid[:, :k] = True
    return AttentionAssignment(grid, "head")


def layer_profile(alpha) -> np.ndarray:
    """Per-layer mean alpha."""
    return np.asarray(alpha, dtype=np.float64).mean(axis=1)


def write_loss_curve(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
