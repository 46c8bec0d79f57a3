"""Command-line driver for the search / retrain / private-inference pipeline.

Each subcommand is one stage.  Stages write into ``<out>/<stage>/`` along
with a ``manifest.json`` holding a hash of their inputs; rerunning a stage
whose inputs have not changed is a no-op.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import cost
from .arch import (CIFAR_CONFIG, DESK_CONFIG, TINY_IMAGENET_CONFIG, AttentionAssignment, MLPAssignment, ViTConfig,
                   load_arch, save_arch)
from .attention import TAGS
from .data import desk_split_from_file, synth_shapes, train_eval_split
from .distill import KDConfig, retrain
from .errors import HetViTError, InvalidConfig, MissingArtifact
from .kernels import error_probe
from .model import fuse_mlp, load_checkpoint, mpc_forward, save_checkpoint
from .ring import RingParams
from .runtime import Session
from .search import SearchConfig, binarize_threshold, binarize_topk, run_search
from .training import TrainConfig, evaluate, train_teacher, write_metrics
from . import plotting

PRESETS = {"desk": DESK_CONFIG, "pareto": dataclasses.replace(DESK_CONFIG, heads=4), "cifar": CIFAR_CONFIG,
           "tiny": TINY_IMAGENET_CONFIG}
ENV_OUT = "HETVIT_OUT"


@dataclass
class RunConfig:
    seed: int = 0
    out: str | None = None
    preset: str = "pareto"
    vit: dict = field(default_factory=dict)
    data: str | None = None
    data_n: int = 1600
    data_noise: float = 0.25
    eval_frac: float = 0.25
    teacher_epochs: int = 30
    search_epochs: int = 20
    retrain_epochs: int = 30
    lr: float = 3e-3
    arch_lr: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 0.05
    lam: float = 0.1
    eta: float | None = None
    search_gelu: bool = False
    mlp_granularity: str = "layer"
    mu: float = 0.5
    sigma: float = 0.75
    relu: bool = False
    temperature: float = 1.0
    chi: float = 1.0
    kd_beta: float = 1.0
    gamma: float = 1.0
    ring_l: int = 64
    ring_f: int = 18
    cost_table: str = "simulator"
    samples: int = 100
    mus: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7])
    workers: int = 4
    variances: list = field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0])
    probe_trials: int = 64
    probe_length: int = 16
    checkpoint: str | None = None
    arch: str | None = None

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise InvalidConfig(f"preset must be one of {sorted(PRESETS)}")
        self.vit_config()
        SearchConfig(lam=self.lam, eta=self.eta, mu=self.mu, sigma=self.sigma, mlp_granularity=self.mlp_granularity)
        KDConfig(self.temperature, self.chi, self.kd_beta, self.gamma)
        RingParams(self.ring_l, self.ring_f)
        if not all(0 <= m <= 1 for m in self.mus):
            raise InvalidConfig("every mu in mus must be in [0, 1]")
        if self.samples < 1 or self.workers < 1:
            raise InvalidConfig("samples and workers must be positive")

    def vit_config(self) -> ViTConfig:
        base = PRESETS[self.preset].to_dict()
        base.update(self.vit)
        return ViTConfig.from_dict(base)

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(ENV_OUT) or "runs")


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_run_config(path, overrides: dict) -> RunConfig:
    values = {}
    if path:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise InvalidConfig(f"{path}: expected a mapping")
        unknown = set(doc) - FIELDS
        if unknown:
            raise InvalidConfig(f"{path}: unknown keys {sorted(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# stage bookkeeping

_DATA_KEYS = ["preset", "vit", "data", "data_n", "data_noise", "eval_frac"]
STAGE_KEYS = {
    "teacher": ["seed", "teacher_epochs", "lr", "batch_size", "weight_decay"] + _DATA_KEYS,
    "search": ["seed", "lam", "eta", "search_epochs", "lr", "arch_lr", "batch_size", "weight_decay", "search_gelu",
               "mlp_granularity", "cost_table"] + _DATA_KEYS,
    "binarize": ["mu", "sigma", "search_gelu", "mlp_granularity"],
    "retrain": ["seed", "retrain_epochs", "lr", "batch_size", "weight_decay", "temperature", "chi", "kd_beta",
                "gamma", "relu"] + _DATA_KEYS,
    "infer": ["seed", "checkpoint", "arch"] + _DATA_KEYS,
    "mpc_infer": ["seed", "samples", "ring_l", "ring_f", "checkpoint", "arch"] + _DATA_KEYS,
    "estimate": ["preset", "vit", "cost_table", "arch"],
    "sweep": ["seed", "mus", "sigma", "relu", "retrain_epochs", "lr", "batch_size", "weight_decay", "temperature",
              "chi", "kd_beta", "gamma", "cost_table", "search_gelu", "mlp_granularity"] + _DATA_KEYS,
    "probe": ["seed", "variances", "probe_trials", "probe_length", "ring_l", "ring_f"],
}


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Stage:
    def __init__(self, rc: RunConfig, name: str, inputs: list[Path] = (), force: bool = False):
        self.rc, self.name = rc, name
        self.dir = rc.out_dir() / name
        self.inputs = [Path(p) for p in inputs]
        for p in self.inputs:
            if not p.exists():
                raise MissingArtifact(f"stage {name} needs {p}; run the earlier stage first")
        cfg = {k: getattr(rc, k) for k in STAGE_KEYS[name]}
        payload = json.dumps({"config": cfg, "inputs": {str(p): file_hash(p) for p in self.inputs}}, sort_keys=True)
        self.config = cfg
        self.input_hash = hashlib.sha256(payload.encode()).hexdigest()
        self.force = force
        self.artifacts: list[str] = []

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.dir / name

    def up_to_date(self) -> bool:
        m = self.dir / "manifest.json"
        if self.force or not m.exists():
            return False
        try:
            man = json.loads(m.read_text())
        except ValueError:
            return False
        return man.get("input_hash") == self.input_hash and all((self.dir / a).exists() for a in man.get("artifacts", []))

    def begin(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dir / "config.yaml", "w") as fh:
            yaml.safe_dump(dataclasses.asdict(self.rc), fh, sort_keys=True)

    def finish(self, summary: dict | None = None) -> None:
        man = {"stage": self.name, "input_hash": self.input_hash, "config": self.config,
               "inputs": [str(p) for p in self.inputs], "artifacts": sorted(set(self.artifacts)),
               "summary": summary or {}, "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
        (self.dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True, default=float))


def _say(msg: str) -> None:
    print(msg, flush=True)


def _data(rc: RunConfig):
    vcfg = rc.vit_config()
    if rc.data:
        return desk_split_from_file(rc.data, vcfg, rc.eval_frac, rc.seed)
    ds = synth_shapes(rc.data_n, vcfg.image, vcfg.classes, seed=rc.seed, channels=vcfg.channels, noise=rc.data_noise)
    return train_eval_split(ds, rc.eval_frac, rc.seed)


def _table(rc: RunConfig):
    if rc.cost_table.endswith(".csv"):
        return cost.default_table("custom", rc.cost_table)
    return cost.default_table(rc.cost_table)


def _run(stage: Stage, body):
    if stage.up_to_date():
        _say(f"{stage.name}: up to date ({stage.dir})")
        return json.loads((stage.dir / "manifest.json").read_text()).get("summary", {})
    stage.begin()
    summary = body(stage)
    stage.finish(summary)
    _say(f"{stage.name}: done -> {stage.dir}")
    return summary


# stages


def cmd_train_teacher(rc: RunConfig, force=False) -> dict:
    inputs = [rc.data] if rc.data else []

    def body(st):
        train, ev = _data(rc)
        model = _build(rc)
        hist = train_teacher(model, train, ev, TrainConfig(rc.teacher_epochs, rc.lr, weight_decay=rc.weight_decay,
                                                           batch_size=rc.batch_size, seed=rc.seed),
                             log=lambda r: _say(f"  epoch {r['epoch']}: ce={r['ce']:.4f} eval={r['eval_acc']:.4f}"))
        save_checkpoint(model, st.path("teacher.ckpt"), {"role": "teacher"})
        write_metrics(hist, st.path("metrics.csv"))
        plotting.line_plot([r["epoch"] for r in hist], {"train": [r["train_acc"] for r in hist],
                                                        "eval": [r["eval_acc"] for r in hist]},
                           st.path("accuracy.svg"), ylabel="accuracy")
        return {"eval_acc": hist[-1]["eval_acc"] if hist else None}

    return _run(Stage(rc, "teacher", inputs, force), body)


def _build(rc: RunConfig):
    from .model import build_vit
    vcfg = rc.vit_config()
    return build_vit(vcfg, rc.seed, attn=AttentionAssignment.all_rs(vcfg))


def _out(rc, *parts) -> Path:
    return rc.out_dir().joinpath(*parts)


def cmd_search(rc: RunConfig, force=False) -> dict:
    teacher_ckpt = _out(rc, "teacher", "teacher.ckpt")

    def body(st):
        train, _ = _data(rc)
        teacher = load_checkpoint(teacher_ckpt, rc.vit_config())
        scfg = SearchConfig(lam=rc.lam, eta=rc.eta, mu=rc.mu, sigma=rc.sigma, epochs=rc.search_epochs, lr=rc.lr,
                            arch_lr=rc.arch_lr, weight_decay=rc.weight_decay, batch_size=rc.batch_size, seed=rc.seed,
                            search_gelu=rc.search_gelu, mlp_granularity=rc.mlp_granularity)
        res = run_search(teacher, train, scfg, _table(rc),
                         logger=lambda r: _say(f"  epoch {r['epoch']}: task={r['task_loss']:.4f} "
                                               f"mean_alpha={r['mean_alpha']:.4f} mean_beta={r['mean_beta']:.4f}"))
        save_checkpoint(res.model, st.path("searched.ckpt"), {"role": "searched", "eta": res.eta,
                                                              "lat_scale": res.lat_scale})
        np.savetxt(st.path("alpha.csv"), res.alpha, delimiter=",", fmt="%.9f")
        np.savetxt(st.path("beta.csv"), res.beta, delimiter=",", fmt="%.9f")
        write_metrics(res.history, st.path("loss.csv"))
        plotting.line_plot([r["epoch"] for r in res.history], {"mean alpha": [r["mean_alpha"] for r in res.history],
                                                               "mean beta": [r["mean_beta"] for r in res.history]},
                           st.path("arch_params.svg"), ylabel="value")
        return {"eta": res.eta, "lat_scale": res.lat_scale, "mean_alpha": float(res.alpha.mean())}

    return _run(Stage(rc, "search", [teacher_ckpt], force), body)


def _binarized(rc: RunConfig, alpha, beta):
    attn = binarize_topk(alpha, rc.mu)
    mlp = binarize_threshold(beta, rc.sigma) if rc.search_gelu else MLPAssignment.all_gelu(rc.vit_config(),
                                                                                           rc.mlp_granularity)
    return attn, mlp


def cmd_binarize(rc: RunConfig, force=False) -> dict:
    a_path, b_path = _out(rc, "search", "alpha.csv"), _out(rc, "search", "beta.csv")

    def body(st):
        alpha = np.loadtxt(a_path, delimiter=",", ndmin=2)
        beta = np.loadtxt(b_path, delimiter=",", ndmin=2)
        attn, mlp = _binarized(rc, alpha, beta)
        save_arch(st.path("arch.yaml"), rc.vit_config(), attn, mlp)
        return {"rs_heads": int(attn.head_grid(rc.vit_config()).sum()), "realized_mu": attn.realized_mu,
                "gelu_sites_kept": int(mlp.gelu_kept.sum())}

    return _run(Stage(rc, "binarize", [a_path, b_path], force), body)


def _student(rc: RunConfig, searched_path, attn, mlp):
    model = load_checkpoint(searched_path, rc.vit_config())
    model = model.copy(attn=attn, mlp=MLPAssignment(mlp.gelu_kept, granularity=mlp.granularity))
    linear = ~mlp.gelu_kept
    if linear.any():
        relu = linear if rc.relu else np.zeros_like(linear)
        model = fuse_mlp(model, MLPAssignment(mlp.gelu_kept, linear, relu, mlp.granularity))
    return model


def cmd_retrain(rc: RunConfig, force=False) -> dict:
    searched = _out(rc, "search", "searched.ckpt")
    arch = _out(rc, "binarize", "arch.yaml")
    teacher_ckpt = _out(rc, "teacher", "teacher.ckpt")

    def body(st):
        train, ev = _data(rc)
        _, attn, mlp = load_arch(arch)
        student = _student(rc, searched, attn, mlp)
        teacher = load_checkpoint(teacher_ckpt, rc.vit_config())
        kd = KDConfig(rc.temperature, rc.chi, rc.kd_beta, rc.gamma)
        _, hist = retrain(student, teacher, train, ev, kd,
                          TrainConfig(rc.retrain_epochs, rc.lr, weight_decay=rc.weight_decay,
                                      batch_size=rc.batch_size, seed=rc.seed),
                          metrics_path=st.path("metrics.csv"),
                          logger=lambda r: _say(f"  epoch {r['epoch']}: ce={r['ce']:.4f} kl={r['kl']:.4f} "
                                                f"feat={r['feat']:.4f} eval={r['eval_acc']:.4f}"))
        save_checkpoint(student, st.path("student.ckpt"), {"role": "student", "kd_direction": "KL(student||teacher)"})
        plotting.line_plot([r["epoch"] for r in hist], {k: [r[k] for r in hist] for k in ("ce", "kl", "feat")},
                           st.path("losses.svg"), ylabel="loss component")
        return {"eval_acc": hist[-1]["eval_acc"] if hist else evaluate(student, ev)}

    return _run(Stage(rc, "retrain", [searched, arch, teacher_ckpt], force), body)


def _model_for_inference(rc: RunConfig):
    ckpt = Path(rc.checkpoint) if rc.checkpoint else _out(rc, "retrain", "student.ckpt")
    if not ckpt.exists():
        raise MissingArtifact(f"no checkpoint at {ckpt}")
    model = load_checkpoint(ckpt)
    inputs = [ckpt]
    if rc.arch:
        _, attn, mlp = load_arch(rc.arch)
        model = model.copy(attn=attn, mlp=mlp)
        inputs.append(Path(rc.arch))
    return model, inputs


def cmd_infer(rc: RunConfig, force=False) -> dict:
    model, inputs = _model_for_inference(rc)

    def body(st):
        _, ev = _data(rc)
        pred = model.predict(ev.images)
        with open(st.path("predictions.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "label", "prediction"])
            w.writerows(zip(range(len(pred)), ev.labels.tolist(), pred.tolist()))
        acc = float(np.mean(pred == ev.labels))
        _say(f"  eval accuracy {acc:.4f}")
        return {"eval_acc": acc, "realized_mu": model.attn.realized_mu}

    return _run(Stage(rc, "infer", inputs, force), body)


def cmd_mpc_infer(rc: RunConfig, force=False) -> dict:
    model, inputs = _model_for_inference(rc)

    def body(st):
        _, ev = _data(rc)
        x = ev.images[:rc.samples]
        sess = Session(RingParams(rc.ring_l, rc.ring_f), seed=rc.seed)
        t0 = time.perf_counter()
        shared = mpc_forward(model, x, sess)
        logits = sess.reveal_real(shared)
        wall = time.perf_counter() - t0
        plain = model(x)[0].data
        agree = float(np.mean(np.argmax(logits, -1) == np.argmax(plain, -1)))
        sess.meter.to_csv(st.path("comm_by_op.csv"))
        rep = cost.estimate(model.cfg, model.attn, cost.default_table("simulator"), model.mlp, batch=len(x))
        with open(st.path("measured_vs_estimated.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["op_kind", "measured_bytes", "estimated_bytes", "rel_dev"])
            w.writerows(cost.measured_vs_estimated(sess.meter, rep))
        layers = sorted(sess.meter.layer_breakdown)
        plotting.bar_breakdown(layers, [sess.meter.layer_breakdown[k].bytes / 2 ** 20 for k in layers],
                               st.path("comm_by_layer.svg"), ylabel="MiB exchanged")
        _say(f"  argmax agreement {agree:.4f}, {sess.meter.total_bytes / 2 ** 20:.2f} MiB, {sess.meter.rounds} rounds")
        return {"agreement": agree, "bytes": sess.meter.total_bytes, "rounds": sess.meter.rounds,
                "max_abs_logit_err": float(np.abs(logits - plain).max()), "wall_s": wall}

    return _run(Stage(rc, "mpc_infer", inputs, force), body)


def cmd_estimate(rc: RunConfig, force=False) -> dict:
    arch = Path(rc.arch) if rc.arch else _out(rc, "binarize", "arch.yaml")
    inputs = [arch] if arch.exists() else []

    def body(st):
        vcfg = rc.vit_config()
        table = _table(rc)
        attn, mlp = AttentionAssignment.all_rs(vcfg), None
        if inputs:
            acfg, a, m = load_arch(arch)
            if acfg == vcfg:
                attn, mlp = a or attn, m
        rep = cost.estimate(vcfg, attn, table, mlp)
        rep.to_csv(st.path("report.csv"))
        kinds = sorted(rep.by_kind, key=lambda k: -rep.by_kind[k])
        plotting.bar_breakdown(kinds, [rep.by_kind[k] for k in kinds], st.path("by_kind.svg"))
        layers = list(rep.by_layer)
        with open(st.path("by_layer.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "latency_s"])
            w.writerows((k, rep.by_layer[k]) for k in layers)
        plotting.bar_breakdown(layers, [rep.by_layer[k] for k in layers], st.path("by_layer.svg"))
        # attention-variant comparison on the same backbone
        variants = [v for v in TAGS]
        lats = [cost.variant_latency(v, table, vcfg) for v in variants]
        with open(st.path("variants.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "latency_s"])
            w.writerows(zip(variants, lats))
        order = np.argsort(lats)
        plotting.bar_breakdown([variants[i] for i in order], [lats[i] for i in order], st.path("variants.svg"))
        _say(f"  total {rep.total:.4f} s, {rep.total_bytes / 2 ** 20:.2f} MiB, {rep.total_rounds} rounds")
        return {"latency_s": rep.total, "bytes": rep.total_bytes, "rounds": rep.total_rounds,
                "protocol": table.protocol}

    return _run(Stage(rc, "estimate", inputs, force), body)


def derived_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0] % (2 ** 31))


def _sweep_point(args):
    rc_dict, mu, seed = args
    rc = RunConfig(**rc_dict)
    rc.mu, rc.seed = mu, seed
    train, ev = _data(dataclasses.replace(rc, seed=rc_dict["seed"]))
    alpha = np.loadtxt(_out(rc, "search", "alpha.csv"), delimiter=",", ndmin=2)
    beta = np.loadtxt(_out(rc, "search", "beta.csv"), delimiter=",", ndmin=2)
    attn, mlp = _binarized(rc, alpha, beta)
    student = _student(rc, _out(rc, "search", "searched.ckpt"), attn, mlp)
    teacher = load_checkpoint(_out(rc, "teacher", "teacher.ckpt"))
    retrain(student, teacher, train, ev, KDConfig(rc.temperature, rc.chi, rc.kd_beta, rc.gamma),
            TrainConfig(rc.retrain_epochs, rc.lr, weight_decay=rc.weight_decay, batch_size=rc.batch_size, seed=seed))
    lat = cost.estimate(student.cfg, student.attn, _table(rc), student.mlp).total
    return {"mu": mu, "realized_mu": attn.realized_mu, "rs_heads": int(attn.choice.sum()), "seed": seed,
            "eval_acc": evaluate(student, ev), "latency_s": lat}


def cmd_sweep(rc: RunConfig, force=False) -> dict:
    inputs = [_out(rc, "search", n) for n in ("alpha.csv", "beta.csv", "searched.ckpt")] + \
             [_out(rc, "teacher", "teacher.ckpt")]

    def body(st):
        jobs = [(dataclasses.asdict(rc), float(mu), derived_seed(rc.seed, i)) for i, mu in enumerate(rc.mus)]
        if rc.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(rc.workers, len(jobs))) as ex:
                rows = list(ex.map(_sweep_point, jobs))
        else:
            rows = [_sweep_point(j) for j in jobs]
        write_metrics(rows, st.path("pareto.csv"))
        plotting.pareto_plot([r["latency_s"] for r in rows], [r["eval_acc"] for r in rows],
                             [f"mu={r['mu']}" for r in rows], st.path("pareto.svg"))
        for r in rows:
            _say(f"  mu={r['mu']}: acc={r['eval_acc']:.4f} latency={r['latency_s']:.4f}s")
        return {"points": len(rows)}

    return _run(Stage(rc, "sweep", inputs, force), body)


def cmd_probe_error(rc: RunConfig, force=False) -> dict:
    def body(st):
        rows = error_probe(rc.variances, rc.probe_trials, length=rc.probe_length, seed=rc.seed,
                           params=RingParams(rc.ring_l, rc.ring_f))
        with open(st.path("error.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variance", "softmax_rel_err", "relusoftmax_rel_err"])
            w.writerows(rows)
        plotting.error_plot([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], st.path("error.svg"))
        for v, a, b in rows:
            _say(f"  var={v:g}: softmax {a:.3e}  relu-softmax {b:.3e}")
        return {"rows": len(rows)}

    return _run(Stage(rc, "probe", [], force), body)


def cmd_pipeline(rc: RunConfig, force=False) -> dict:
    cmd_train_teacher(rc, force)
    cmd_search(rc, force)
    cmd_binarize(rc, force)
    res = cmd_retrain(rc, force)
    est = cmd_estimate(rc, force)
    path = rc.out_dir() / "pareto.csv"
    row = {"mu": rc.mu, "sigma": rc.sigma, "eval_acc": res["eval_acc"], "latency_s": est["latency_s"]}
    write_metrics([row], path)
    _say(f"pipeline: mu={rc.mu} acc={row['eval_acc']:.4f} latency={row['latency_s']:.4f}s -> {path}")
    return row


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "search": cmd_search,
    "binarize": cmd_binarize,
    "retrain": cmd_retrain,
    "infer": cmd_infer,
    "mpc-infer": cmd_mpc_infer,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "probe-error": cmd_probe_error,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetvit", description="Heterogeneous-attention ViT search and private inference.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat YAML run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--cost-table", dest="cost_table", help="profile name or CSV path")
    p.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./runs)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--checkpoint")
    p.add_argument("--arch")
    p.add_argument("--samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--search-gelu", dest="search_gelu", action="store_const", const=True)
    p.add_argument("--relu", action="store_const", const=True, help="add ReLU after fused MLPs")
    p.add_argument("--force", action="store_true", help="rerun even if the stage is up to date")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    over = {k: v for k, v in vars(args).items() if k not in ("command", "config", "force")}
    try:
        rc = load_run_config(args.config, over)
        COMMANDS[args.command](rc, args.force)
    except (HetViTError, OSError, ValueError, KeyError) as exc:
        rec = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(rec), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
