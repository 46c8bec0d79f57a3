"""Desk-scale experiment drivers shared by the CLI and the acceptance suite:
teacher training, search, binarization and KD retraining over a mu grid.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .arch import DESK_CONFIG, AttentionAssignment, MLPAssignment, ViTConfig
from .cost import CostTable, default_table, estimate
from .data import Dataset, synth_shapes, train_eval_split
from .distill import KDConfig, retrain
from .model import ViT, build_vit
from .search import SearchConfig, SearchResult, binarize_topk, per_layer_uniform_baseline, run_search
from .training import TrainConfig, evaluate, train_teacher

__all__ = ["DeskSetup", "desk_data", "train_desk_teacher", "desk_search", "retrain_assignment", "desk_pareto",
           "PARETO_MU", "PARETO_CONFIG"]

PARETO_MU = (0.1, 0.3, 0.5, 0.7)
# four heads per layer so every mu in the grid keeps a distinct head count
PARETO_CONFIG = replace(DESK_CONFIG, heads=4)


@dataclass(frozen=True)
class DeskSetup:
    n: int = 1600
    eval_frac: float = 0.25
    noise: float = 0.25
    data_seed: int = 0
    teacher_epochs: int = 30
    search_epochs: int = 20
    retrain_epochs: int = 30
    lam: float = 0.1


def desk_data(cfg: ViTConfig, setup: DeskSetup = DeskSetup()) -> tuple[Dataset, Dataset]:
    ds = synth_shapes(setup.n, cfg.image, cfg.classes, seed=setup.data_seed, channels=cfg.channels, noise=setup.noise)
    return train_eval_split(ds, setup.eval_frac, setup.data_seed)


def train_desk_teacher(cfg: ViTConfig, train: Dataset, eval_ds: Dataset, seed: int, epochs: int) -> ViT:
    """Homogeneous RSAttn model trained with plain cross-entropy."""
    t = build_vit(cfg, seed, attn=AttentionAssignment.all_rs(cfg))
    train_teacher(t, train, eval_ds, TrainConfig(epochs=epochs, seed=seed))
    return t


def desk_search(teacher: ViT, train: Dataset, seed: int, lam: float, epochs: int, table: CostTable,
                search_gelu: bool = False) -> SearchResult:
    """Search starting from the trained RSAttn teacher's weights (alpha = 1 reproduces it)."""
    return run_search(teacher, train, SearchConfig(lam=lam, epochs=epochs, seed=seed, search_gelu=search_gelu), table)


def retrain_assignment(searched: ViT, attn: AttentionAssignment, teacher: ViT, train: Dataset, eval_ds: Dataset,
                       seed: int, epochs: int, kd: KDConfig = KDConfig(), mlp: MLPAssignment | None = None) -> tuple[ViT, float]:
    student = searched.copy(attn=attn, mlp=mlp or MLPAssignment.all_gelu(searched.cfg))
    retrain(student, teacher, train, eval_ds, kd, TrainConfig(epochs=epochs, seed=seed))
    return student, evaluate(student, eval_ds)


def desk_pareto(seed: int = 0, setup: DeskSetup = DeskSetup(), cfg: ViTConfig = PARETO_CONFIG, mus=PARETO_MU,
                table: CostTable | None = None, uniform_mu: float = 0.5, ce_only_mu: float | None = 0.5,
                logger=None) -> dict:
    """One seed of the mu sweep plus the all-ScaleAttn, all-RSAttn, uniform and CE-only reference points."""
    table = table or default_table("simulator")
    say = logger or (lambda *_: None)
    train, eval_ds = desk_data(cfg, setup)
    teacher = train_desk_teacher(cfg, train, eval_ds, seed, setup.teacher_epochs)
    say(f"seed {seed}: teacher eval acc {evaluate(teacher, eval_ds):.4f}")
    sr = desk_search(teacher, train, seed, setup.lam, setup.search_epochs, table)
    out = {"seed": seed, "teacher_acc": evaluate(teacher, eval_ds), "alpha": sr.alpha, "points": []}

    def point(name, mu, attn, kd=KDConfig()):
        _, acc = retrain_assignment(sr.model, attn, teacher, train, eval_ds, seed, setup.retrain_epochs, kd)
        lat = estimate(cfg, attn, table).total
        row = {"name": name, "mu": mu, "realized_mu": attn.realized_mu, "acc": acc, "latency": lat}
        say(f"seed {seed}: {name} mu={mu} acc={acc:.4f} lat={lat:.4f}s")
        out["points"].append(row)
        return row

    for mu in mus:
        point("searched", mu, binarize_topk(sr.alpha, mu))
    point("all_scale", 0.0, AttentionAssignment.all_scale(cfg))
    out["all_rs_latency"] = estimate(cfg, AttentionAssignment.all_rs(cfg), table).total
    if uniform_mu is not None:
        point("uniform", uniform_mu, per_layer_uniform_baseline(cfg, uniform_mu))
    if ce_only_mu is not None:
        point("ce_only", ce_only_mu, binarize_topk(sr.alpha, ce_only_mu), KDConfig(kd_beta=0.0, gamma=0.0))
    return out


def pick(result: dict, name: str, mu: float | None = None) -> dict:
    for p in result["points"]:
        if p["name"] == name and (mu is None or np.isclose(p["mu"], mu)):
            return p
    raise KeyError((name, mu))
