"""Plain supervised training and evaluation loops for the plaintext model."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset, batches
from .model import ViT, forward
from .optim import AdamW, cosine_lr

__all__ = ["TrainConfig", "evaluate", "train_teacher", "write_metrics"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 3e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.05
    batch_size: int = 64
    seed: int = 0


def evaluate(model: ViT, ds: Dataset, attn=None, mlp=None, batch: int = 256) -> float:
    if len(ds) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(ds), batch):
        logits, _ = forward(model, ds.images[s:s + batch], attn=attn, mlp=mlp)
        hits += int(np.sum(np.argmax(logits.data, -1) == ds.labels[s:s + batch]))
    return hits / len(ds)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train_teacher(model: ViT, train: Dataset, eval_ds: Dataset | None = None, cfg: TrainConfig = TrainConfig(),
                  log=None) -> list[dict]:
    """Cross-entropy training of ``model`` in place.  Returns per-epoch metrics."""
    opt = AdamW([{"params": model.parameters()}], lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps = max(1, -(-len(train) // cfg.batch_size))
    hist = []
    for ep in range(cfg.epochs):
        tot, hits = 0.0, 0
        for k, (x, y) in enumerate(batches(train, cfg.batch_size, epoch_seed(cfg.seed, ep))):
            lr = cosine_lr(ep + k / steps, cfg.epochs, cfg.lr, cfg.lr_min)
            logits, _ = forward(model, x)
            loss = ad.cross_entropy(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            tot += loss.item() * len(y)
            hits += int(np.sum(np.argmax(logits.data, -1) == y))
        row = {"epoch": ep, "ce": tot / len(train), "train_acc": hits / len(train),
               "eval_acc": evaluate(model, eval_ds) if eval_ds is not None else float("nan")}
        hist.append(row)
        if log:
            log(row)
    return hist


def write_metrics(rows: list[dict], path, fields=None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
