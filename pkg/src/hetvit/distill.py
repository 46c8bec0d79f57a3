"""Retraining a binarized student against the homogeneous teacher with
cross-entropy, logits KD and token-wise feature KD.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .errors import InvalidConfig, ShapeMismatch, TeacherMismatch
from .model import ViT, forward, load_checkpoint
from .optim import AdamW, cosine_lr
from .training import TrainConfig, epoch_seed, evaluate, write_metrics

__all__ = ["KDConfig", "kd_loss", "kd_components", "retrain", "METRIC_FIELDS"]

METRIC_FIELDS = ["epoch", "ce", "kl", "feat", "train_acc", "eval_acc"]


@dataclass(frozen=True)
class KDConfig:
    temperature: float = 1.0
    chi: float = 1.0
    kd_beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidConfig("temperature must be positive")
        if min(self.chi, self.kd_beta, self.gamma) < 0:
            raise InvalidConfig("loss weights must be non-negative")


def kd_components(student_logits, teacher_logits, student_feats, teacher_feats, labels, cfg: KDConfig = KDConfig()):
    """(ce, kl, feat) Tensors.  Teacher inputs are treated as constants."""
    s_logits, s_feats = ad.tensor(student_logits), ad.tensor(student_feats)
    t_logits = Tensor(ad.no_grad_value(teacher_logits))
    t_feats = ad.no_grad_value(teacher_feats)
    if s_logits.shape != t_logits.shape:
        raise ShapeMismatch(f"logits {s_logits.shape} vs teacher {t_logits.shape}")
    if s_feats.shape != t_feats.shape:
        raise ShapeMismatch(f"features {s_feats.shape} vs teacher {t_feats.shape}")
    ce = ad.cross_entropy(s_logits, labels)
    kl = ad.kl_div(s_logits, t_logits, cfg.temperature)
    b = s_feats.shape[0]
    diff = ad.reshape(s_feats - t_feats, b, -1)
    feat = ad.tmean(ad.l2_norm(diff, axis=1))
    return ce, kl, feat


def kd_loss(student_logits, teacher_logits, student_feats, teacher_feats, labels, cfg: KDConfig = KDConfig()) -> Tensor:
    """chi * CE + kd_beta * KL(student || teacher) + gamma * mean per-sample ||feat diff||_2."""
    ce, kl, feat = kd_components(student_logits, teacher_logits, student_feats, teacher_feats, labels, cfg)
    out = ad.scale(ce, cfg.chi)
    if cfg.kd_beta:
        out = out + ad.scale(kl, cfg.kd_beta)
    if cfg.gamma:
        out = out + ad.scale(feat, cfg.gamma)
    return out


def _teacher_outputs(teacher: ViT, ds: Dataset, batch: int = 256):
    logits, feats = [], []
    for s in range(0, len(ds), batch):
        lo, fe = forward(teacher, ds.images[s:s + batch])
        logits.append(lo.data)
        feats.append(fe.data)
    return np.concatenate(logits), np.concatenate(feats)


def retrain(student: ViT, teacher, train: Dataset, eval_ds: Dataset | None = None, kd: KDConfig = KDConfig(),
            tcfg: TrainConfig = TrainConfig(), metrics_path=None, logger=None) -> tuple[ViT, list[dict]]:
    """Train ``student`` (in place) under its fixed assignment.

    ``teacher`` is a model or a checkpoint path; it is only read.
    """
    if not isinstance(teacher, ViT):
        teacher = load_checkpoint(teacher)
    sc, tc = student.cfg, teacher.cfg
    if (sc.tokens, sc.dim, sc.classes) != (tc.tokens, tc.dim, tc.classes):
        raise TeacherMismatch(f"teacher features/logits ({tc.tokens}x{tc.dim}, {tc.classes}) do not match "
                              f"student ({sc.tokens}x{sc.dim}, {sc.classes})")
    t_logits, t_feats = _teacher_outputs(teacher, train)
    opt = AdamW([{"params": student.parameters()}], lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    steps = max(1, -(-len(train) // tcfg.batch_size))
    order = np.arange(len(train))
    hist = []
    for ep in range(tcfg.epochs):
        sums = np.zeros(3)
        hits = 0
        rng = np.random.default_rng(epoch_seed(tcfg.seed, ep))
        perm = rng.permutation(order)
        for k, s in enumerate(range(0, len(perm), tcfg.batch_size)):
            idx = perm[s:s + tcfg.batch_size]
            x, y = train.images[idx], train.labels[idx]
            lr = cosine_lr(ep + k / steps, tcfg.epochs, tcfg.lr, tcfg.lr_min)
            logits, feats = forward(student, x)
            ce, kl, feat = kd_components(logits, t_logits[idx], feats, t_feats[idx], y, kd)
            loss = ad.scale(ce, kd.chi)
            if kd.kd_beta:
                loss = loss + ad.scale(kl, kd.kd_beta)
            if kd.gamma:
                loss = loss + ad.scale(feat, kd.gamma)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            sums += np.array([ce.item(), kl.item(), feat.item()]) * len(idx)
            hits += int(np.sum(np.argmax(logits.data, -1) == y))
        ce_m, kl_m, feat_m = sums / len(train)
        row = {"epoch": ep, "ce": ce_m, "kl": kl_m, "feat": feat_m, "train_acc": hits / len(train),
               "eval_acc": evaluate(student, eval_ds) if eval_ds is not None else float("nan")}
        hist.append(row)
        if logger:
            logger(row)
    if metrics_path is not None:
        write_metrics(hist, metrics_path, METRIC_FIELDS)
    return student, hist
