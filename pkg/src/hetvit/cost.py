"""Table-driven latency and communication estimates for private inference.

A :class:`CostTable` prices each operation kind per canonical unit; the
graph walker :func:`inference_ops` lists every operator invocation a model
performs, and :func:`estimate` folds the two into a :class:`LatencyReport`.

Latency of one invocation = units * unit_latency_s + bytes / bandwidth
+ rounds * rtt.  Bytes are the sum over both parties.
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .arch import CIFAR_CONFIG, AttentionAssignment, MLPAssignment, ViTConfig
from .errors import MissingCostEntry, UnknownProfile

__all__ = [
    "cot_cost",
    "CostEntry",
    "CostTable",
    "OpCall",
    "LatencyReport",
    "SCALING_RULES",
    "VARIANTS",
    "PUBLISHED_LATENCY",
    "simulator_table",
    "default_table",
    "calibrate",
    "attention_head_ops",
    "inference_ops",
    "estimate",
    "estimate_ops",
    "variant_latency",
    "measured_vs_estimated",
    "WAN_BANDWIDTH",
    "WAN_RTT",
]

WAN_BANDWIDTH = 44e6  # bytes per second
WAN_RTT = 0.040  # seconds

SCALING_RULES = ("elements", "rows", "nmk", "nk+km", "tree")

VARIANTS = ("Softmax", "Linformer", "ReLU", "ReLU6", "Sparsemax", "XNorm", "Square", "2Quad", "ScaleAttn", "RSAttn")

# Published whole-model latency (seconds) of the CIFAR-10 ViT per attention variant.
PUBLISHED_LATENCY = {
    "Softmax": 6.82,
    "Linformer": 5.44,
    "ReLU6": 3.02,
    "Sparsemax": 3.23,
    "XNorm": 13.25,
    "Square": 0.72,
    "2Quad": 4.22,
    "ScaleAttn": 0.66,
    "RSAttn": 5.32,
}


def cot_cost(k: int, l: int, sec_lambda: int) -> tuple[int, int]:
    """Bits and rounds of one 1-out-of-k correlated OT on l-bit messages."""
    if k < 2 or l < 1 or sec_lambda <= 0:
        raise ValueError("cot_cost needs k >= 2, l >= 1, sec_lambda > 0")
    return 2 * sec_lambda + k * l, 2


@dataclass(frozen=True)
class CostEntry:
    op_kind: str
    unit_latency_s: float
    unit_bytes: float
    rounds: int
    scaling_rule: str = "elements"

    def __post_init__(self):
        if self.unit_latency_s < 0 or self.unit_bytes < 0 or self.rounds < 0:
            raise ValueError(f"negative cost for {self.op_kind}")
        if self.scaling_rule not in SCALING_RULES:
            raise ValueError(f"unknown scaling rule {self.scaling_rule!r}")


@dataclass(frozen=True)
class OpCall:
    """One operator invocation.

    ``dims`` depends on the kind: ``(b, n, k, m)`` for matmul, ``(rows, k)``
    for max, ``(count,)`` otherwise.
    """

    kind: str
    dims: tuple
    layer: str = "model"

    def units(self, rule: str) -> int:
        d = self.dims
        if rule == "nmk":
            b, n, k, m = d
            return b * n * k * m
        if rule == "nk+km":
            b, n, k, m = d
            return b * (n * k + k * m)
        if rule == "tree":
            rows, k = d
            return rows * (k - 1)
        return int(np.prod(d))

    def depth(self, rule: str) -> int:
        if rule == "tree":
            return max(1, math.ceil(math.log2(self.dims[1]))) if self.dims[1] > 1 else 0
        return 1


class CostTable:
    def __init__(self, entries, protocol: str = "custom", bandwidth: float = WAN_BANDWIDTH, rtt: float = WAN_RTT,
                 meta: dict | None = None):
        self.entries: dict[str, CostEntry] = {e.op_kind: e for e in entries}
        self.protocol = protocol
        self.bandwidth = float(bandwidth)
        self.rtt = float(rtt)
        self.meta = dict(meta or {})

    def __getitem__(self, kind: str) -> CostEntry:
        try:
            return self.entries[kind]
        except KeyError:
            raise MissingCostEntry(f"cost table {self.protocol!r} has no entry for {kind!r}") from None

    def __contains__(self, kind) -> bool:
        return kind in self.entries

    def kinds(self) -> list[str]:
        return list(self.entries)

    def with_entry(self, entry: CostEntry) -> "CostTable":
        entries = dict(self.entries)
        entries[entry.op_kind] = entry
        return CostTable(entries.values(), self.protocol, self.bandwidth, self.rtt, self.meta)

    def call_cost(self, call: OpCall) -> tuple[float, float, int]:
        """(latency seconds, bytes, rounds) of one invocation."""
        e = self[call.kind]
        units = call.units(e.scaling_rule)
        if units == 0:
            return 0.0, 0.0, 0
        rounds = e.rounds * call.depth(e.scaling_rule)
        nbytes = units * e.unit_bytes
        lat = units * e.unit_latency_s + nbytes / self.bandwidth + rounds * self.rtt
        return lat, nbytes, rounds

    # CSV
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# protocol={self.protocol} bandwidth_Bps={self.bandwidth:g} rtt_s={self.rtt:g}\n")
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["op_kind", "unit_latency_s", "unit_bytes", "rounds", "scaling_rule"])
        for e in self.entries.values():
            w.writerow([e.op_kind, repr(e.unit_latency_s), repr(float(e.unit_bytes)), e.rounds, e.scaling_rule])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "CostTable":
        with open(path) as fh:
            lines = fh.read().splitlines()
        header = {}
        body = []
        for ln in lines:
            if ln.startswith("#"):
                for tok in ln[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        header[k] = v
            elif ln.strip():
                body.append(ln)
        entries = []
        for row in csv.DictReader(body):
            entries.append(CostEntry(
                row["op_kind"].strip(),
                float(row["unit_latency_s"]),
                float(row["unit_bytes"]),
                int(float(row["rounds"])),
                row.get("scaling_rule", "elements").strip() or "elements",
            ))
        protocol = header.pop("protocol", "custom")
        bw = float(header.pop("bandwidth_Bps", WAN_BANDWIDTH))
        rtt = float(header.pop("rtt_s", WAN_RTT))
        return cls(entries, protocol, bw, rtt, header)


@dataclass
class LatencyReport:
    total: float = 0.0
    total_bytes: float = 0.0
    total_rounds: int = 0
    by_kind: dict = field(default_factory=lambda: defaultdict(float))
    by_layer: dict = field(default_factory=lambda: defaultdict(float))
    bytes_by_kind: dict = field(default_factory=lambda: defaultdict(float))
    rounds_by_kind: dict = field(default_factory=lambda: defaultdict(int))

    def add(self, call: OpCall, lat: float, nbytes: float, rounds: int) -> None:
        self.total += lat
        self.total_bytes += nbytes
        self.total_rounds += rounds
        self.by_kind[call.kind] += lat
        self.by_layer[call.layer] += lat
        self.bytes_by_kind[call.kind] += nbytes
        self.rounds_by_kind[call.kind] += rounds

    def __add__(self, other: "LatencyReport") -> "LatencyReport":
        out = LatencyReport()
        for r in (self, other):
            out.total += r.total
            out.total_bytes += r.total_bytes
            out.total_rounds += r.total_rounds
            for src, dst in ((r.by_kind, out.by_kind), (r.by_layer, out.by_layer),
                             (r.bytes_by_kind, out.bytes_by_kind), (r.rounds_by_kind, out.rounds_by_kind)):
                for k, v in src.items():
                    dst[k] += v
        return out

    def rows(self):
        return [(k, self.by_kind[k], self.bytes_by_kind[k], self.rounds_by_kind[k]) for k in sorted(self.by_kind)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["op_kind", "latency_s", "bytes", "rounds"])
            w.writerows(self.rows())
            w.writerow(["total", self.total, self.total_bytes, self.total_rounds])


# Tables


def simulator_table(params=None, approx=None, compare_price=None) -> CostTable:
    """Closed-form costs of the kernels as the simulator meters them."""
    from .kernels import DEFAULT_APPROX
    from .ring import RingParams

    params = params or RingParams()
    approx = approx or DEFAULT_APPROX
    if compare_price is None:
        bits, cr = cot_cost(2, params.l, 128)
        cmp_b = (bits + 7) // 8
    else:
        cmp_b, cr = compare_price
    eb = params.elem_bytes
    mul_b = 4 * eb
    n, it, jt = approx.exp_iters, approx.recip_iters, approx.rsqrt_iters
    recip = n + 2 * it
    rsq = n + 3 * jt
    gelu_muls = 6 + n + recip
    entries = [
        CostEntry("share", 0.0, eb, 1),
        CostEntry("reveal", 0.0, 2 * eb, 1),
        CostEntry("matmul", 0.0, mul_b, 1, "nmk"),
        CostEntry("mul", 0.0, mul_b, 1),
        CostEntry("compare", 0.0, cmp_b, cr),
        CostEntry("relu", 0.0, cmp_b + mul_b, cr + 1),
        CostEntry("max", 0.0, cmp_b + mul_b, cr + 1, "tree"),
        CostEntry("exp", 0.0, n * mul_b, n),
        CostEntry("reciprocal", 0.0, recip * mul_b, recip, "rows"),
        CostEntry("gelu", 0.0, gelu_muls * mul_b + 2 * cmp_b, 2 * cr + gelu_muls),
        CostEntry("layernorm", 0.0, 3 * mul_b, 3),
        CostEntry("ln_rsqrt", 0.0, rsq * mul_b, rsq, "rows"),
        CostEntry("rsqrt", 0.0, rsq * mul_b, rsq, "rows"),
    ]
    return CostTable(entries, "simulator", meta={"l": params.l, "f": params.f})


def _semi2k_base() -> CostTable:
    """Byte/round shape of a SEMI-2K style protocol before latency fitting.

    Matrix Beaver triples open n*k + k*m elements; reciprocal runs three
    Newton steps; GeLU is a three-piece polynomial with two comparisons.
    """
    eb = 8
    mul_b = 4 * eb
    cmp_bits, cr = cot_cost(2, 64, 128)
    cmp_b = cmp_bits // 8
    n, it, jt = 8, 3, 3
    entries = [
        CostEntry("share", 0.0, eb, 1),
        CostEntry("reveal", 0.0, 2 * eb, 1),
        CostEntry("matmul", 0.0, 2 * eb, 1, "nk+km"),
        CostEntry("mul", 0.0, mul_b, 1),
        CostEntry("compare", 0.0, cmp_b, cr),
        CostEntry("relu", 0.0, cmp_b + mul_b, cr + 1),
        CostEntry("max", 0.0, cmp_b + mul_b, cr + 1, "tree"),
        CostEntry("exp", 0.0, n * mul_b, n),
        CostEntry("reciprocal", 0.0, (n + 2 * it) * mul_b, n + 2 * it, "rows"),
        CostEntry("gelu", 0.0, 2 * cmp_b + 5 * mul_b, cr + 3),
        CostEntry("layernorm", 0.0, 3 * mul_b, 3),
        CostEntry("ln_rsqrt", 0.0, (n + 3 * jt) * mul_b, n + 3 * jt, "rows"),
        CostEntry("rsqrt", 0.0, (n + 3 * jt) * mul_b, n + 3 * jt, "rows"),
    ]
    return CostTable(entries, "semi2k")


# kinds whose per-unit latency is fitted against the attention column
FIT_KINDS = ("matmul", "mul", "compare", "relu", "max", "exp", "reciprocal", "rsqrt")


def calibrate(base: CostTable, cfg: ViTConfig = CIFAR_CONFIG, targets: dict = PUBLISHED_LATENCY, headroom: float = 2.0):
    """Fit per-unit compute latencies so whole-model variant costs track ``targets``.

    The network part (bytes and rounds) is fixed by ``base`` and is far
    slower than the published numbers, so targets are first scaled by
    s = headroom * max_v(net_v / target_v).  With headroom 2 the network
    term is at most half of every scaled target.  The remaining compute
    latency per unit is solved by non-negative least squares in relative
    terms.  Returns (table, info) where info holds s and the residuals on
    the unscaled axis.
    """
    from scipy.optimize import nnls

    names = [v for v in targets]
    A = np.zeros((len(names), len(FIT_KINDS)))
    net = np.zeros(len(names))
    for r, v in enumerate(names):
        for call in inference_ops(cfg, variant=v):
            e = base[call.kind]
            lat, _, _ = base.call_cost(call)
            net[r] += lat
            if call.kind in FIT_KINDS:
                A[r, FIT_KINDS.index(call.kind)] += call.units(e.scaling_rule)
    t = np.array([targets[v] for v in names])
    s = headroom * float(np.max(net / t))
    rhs = s * t - net
    # columns differ by orders of magnitude; normalise before solving
    norm = np.where(A.max(axis=0) > 0, A.max(axis=0), 1.0)
    # weight rows by 1/target so the fit is in relative terms
    w = 1.0 / t
    x, _ = nnls((A / norm) * w[:, None], rhs * w)
    u = x / norm
    table = base
    for k, val in zip(FIT_KINDS, u):
        e = base[k]
        table = table.with_entry(replace(e, unit_latency_s=float(val)))
    pred = np.array([estimate_ops(inference_ops(cfg, variant=v), table).total for v in names])
    info = {
        "scale": s,
        "residual": {v: float(p / s - tv) for v, p, tv in zip(names, pred, t)},
        "predicted": {v: float(p) for v, p in zip(names, pred)},
    }
    return table, info


_CACHE: dict = {}


def default_table(profile: str = "cifar_semi2k", path=None) -> CostTable:
    """Built-in cost tables.

    ``simulator`` prices exactly what the simulator meters;
    ``cifar_semi2k`` and ``tiny_imagenet_semi2k`` are SEMI-2K style tables
    whose unit latencies are fitted to the published attention-variant
    latencies of the CIFAR-10 model; ``custom`` reads ``path``.
    """
    if profile == "simulator":
        return simulator_table()
    if profile == "custom":
        if path is None:
            raise UnknownProfile("custom profile needs a CSV path")
        return CostTable.from_csv(path)
    if profile in ("cifar_semi2k", "tiny_imagenet_semi2k"):
        if "semi2k" not in _CACHE:
            _CACHE["semi2k"] = calibrate(_semi2k_base())
        table, info = _CACHE["semi2k"]
        meta = {"fit_scale": f"{info['scale']:.4f}", "fit_config": "cifar"}
        return CostTable(table.entries.values(), profile, table.bandwidth, table.rtt, meta)
    raise UnknownProfile(f"unknown cost profile {profile!r}")


def calibration_info() -> dict:
    default_table("cifar_semi2k")
    return _CACHE["semi2k"][1]


# Graph walker


def attention_head_ops(variant: str, n: int, d: int, b: int = 1, rows: int | None = None, layer: str = "model",
                       linformer_k: int = 32) -> list[OpCall]:
    """Operator invocations for one attention head of ``n`` tokens.

    ``rows`` limits RSAttn/Softmax style variants to a subset of query rows
    (row-granular assignments); ScaleAttn ``rows`` are the rows it serves.
    """
    r = n if rows is None else rows
    if r == 0:
        return []
    L = layer
    mm = lambda nn, kk, mm_: OpCall("matmul", (b, nn, kk, mm_), L)
    if variant == "ScaleAttn":
        return [mm(d, n, d), mm(r, d, d)]
    if variant == "RSAttn":
        return [mm(r, d, n), OpCall("relu", (b * r * n,), L), OpCall("reciprocal", (b * r,), L),
                OpCall("mul", (b * r * n,), L), mm(r, n, d)]
    if variant == "Softmax":
        return [mm(r, d, n), OpCall("max", (b * r, n), L), OpCall("exp", (b * r * n,), L),
                OpCall("reciprocal", (b * r,), L), OpCall("mul", (b * r * n,), L), mm(r, n, d)]
    if variant == "Linformer":
        k = linformer_k
        return [mm(k, n, d), mm(k, n, d), mm(r, d, k), OpCall("max", (b * r, k), L), OpCall("exp", (b * r * k,), L),
                OpCall("reciprocal", (b * r,), L), OpCall("mul", (b * r * k,), L), mm(r, k, d)]
    if variant == "ReLU":
        return [mm(r, d, n), OpCall("relu", (b * r * n,), L), mm(r, n, d)]
    if variant == "ReLU6":
        return [mm(r, d, n), OpCall("relu", (2 * b * r * n,), L), mm(r, n, d)]
    if variant == "Sparsemax":
        return [mm(r, d, n), OpCall("max", (b * r, n), L), OpCall("compare", (b * r * n,), L),
                OpCall("relu", (b * r * n,), L), mm(r, n, d)]
    if variant == "XNorm":
        return [mm(d, n, d), OpCall("mul", (b * r * d,), L), OpCall("rsqrt", (b * d,), L), OpCall("mul", (b * r * d,), L),
                OpCall("mul", (b * d * d,), L), OpCall("rsqrt", (b * d,), L), OpCall("mul", (b * d * d,), L),
                mm(r, d, d)]
    if variant == "Square":
        return [mm(r, d, n), OpCall("mul", (b * r * n,), L), mm(r, n, d)]
    if variant == "2Quad":
        return [mm(r, d, n), OpCall("mul", (b * r * n,), L), OpCall("reciprocal", (b * r,), L),
                OpCall("mul", (b * r * n,), L), mm(r, n, d)]
    raise ValueError(f"unknown attention variant {variant!r}")


def variant_ops(cfg: ViTConfig, variant: str, linformer_k: int = 32) -> list[OpCall]:
    """Attention-only invocations of a homogeneous model using ``variant``."""
    out = []
    for i in range(cfg.depth):
        for _ in range(cfg.heads):
            out += attention_head_ops(variant, cfg.tokens, cfg.head_dim, layer=f"layer{i}", linformer_k=linformer_k)
    return out


def _layernorm_ops(rows: int, width: int, layer: str) -> list[OpCall]:
    return [OpCall("layernorm", (rows * width,), layer), OpCall("ln_rsqrt", (rows,), layer)]


def mlp_ops(cfg: ViTConfig, mlp: MLPAssignment | None, i: int, b: int = 1, layer: str | None = None) -> list[OpCall]:
    L = layer or f"layer{i}"
    C, H, T = cfg.dim, cfg.hidden, cfg.tokens
    if mlp is None:
        g, f, ra = T, 0, 0
    else:
        gk = mlp.gelu_tokens(i, T)
        fu = mlp.fused_tokens(i, T)
        g, f, ra = int(gk.sum()), int(fu.sum()), int(mlp.relu_tokens(i, T).sum())
    u = T - g - f
    out = []
    if g:
        out += [OpCall("matmul", (b, g, C, H), L), OpCall("gelu", (b * g * H,), L), OpCall("matmul", (b, g, H, C), L)]
    if u:
        out += [OpCall("matmul", (b, u, C, H), L), OpCall("matmul", (b, u, H, C), L)]
    if f:
        out.append(OpCall("matmul", (b, f, C, C), L))
        if ra:
            out.append(OpCall("relu", (b * ra * C,), L))
    return out


def block_ops(cfg: ViTConfig, i: int, attn: AttentionAssignment | None = None, mlp: MLPAssignment | None = None,
              b: int = 1, variant: str | None = None, linformer_k: int = 32) -> list[OpCall]:
    """One transformer block.  ``variant`` overrides the assignment for every head."""
    L = f"layer{i}"
    T, C, d = cfg.tokens, cfg.dim, cfg.head_dim
    ops = _layernorm_ops(b * T, C, L)
    ops.append(OpCall("matmul", (b, T, C, 3 * C), L))
    for j in range(cfg.heads):
        if variant is not None:
            ops += attention_head_ops(variant, T, d, b, layer=L, linformer_k=linformer_k)
            continue
        mask = attn.rows(i, j, T) if attn is not None else np.ones(T, dtype=bool)
        r = int(mask.sum())
        ops += attention_head_ops("RSAttn", T, d, b, rows=r, layer=L)
        ops += attention_head_ops("ScaleAttn", T, d, b, rows=T - r, layer=L)
    ops.append(OpCall("matmul", (b, T, C, C), L))
    ops += _layernorm_ops(b * T, C, L)
    ops += mlp_ops(cfg, mlp, i, b, L)
    return ops


def inference_ops(cfg: ViTConfig, attn: AttentionAssignment | None = None, mlp: MLPAssignment | None = None,
                  batch: int = 1, variant: str | None = None, linformer_k: int = 32) -> list[OpCall]:
    """Every operator invocation of one private forward pass over ``batch`` images.

    Mirrors :func:`hetvit.model.mpc_forward` call for call.
    """
    b = batch
    ops = [OpCall("share", (b * cfg.image * cfg.image * cfg.channels,), "embed"),
           OpCall("matmul", (b, cfg.patches, cfg.patch_dim, cfg.dim), "embed")]
    for i in range(cfg.depth):
        ops += block_ops(cfg, i, attn, mlp, b, variant, linformer_k)
    ops += _layernorm_ops(b, cfg.dim, "head")
    ops.append(OpCall("matmul", (b, 1, cfg.dim, cfg.classes), "head"))
    ops.append(OpCall("reveal", (b * cfg.classes,), "head"))
    return ops


def estimate_ops(ops, table: CostTable) -> LatencyReport:
    rep = LatencyReport()
    for call in ops:
        lat, nbytes, rounds = table.call_cost(call)
        rep.add(call, lat, nbytes, rounds)
    return rep


def estimate(cfg: ViTConfig, attn: AttentionAssignment | None, table: CostTable, mlp: MLPAssignment | None = None,
             batch: int = 1, variant: str | None = None) -> LatencyReport:
    if attn is not None:
        attn.check(cfg)
    if mlp is not None:
        mlp.check(cfg)
    return estimate_ops(inference_ops(cfg, attn, mlp, batch, variant), table)


def variant_latency(variant: str, table: CostTable, cfg: ViTConfig = CIFAR_CONFIG, linformer_k: int = 32) -> float:
    """Whole-model latency of a homogeneous model using ``variant`` in every head."""
    return estimate_ops(inference_ops(cfg, variant=variant, linformer_k=linformer_k), table).total


def measured_vs_estimated(meter, report: LatencyReport) -> list[tuple[str, float, float, float]]:
    """Per op-kind (kind, measured bytes, estimated bytes, relative deviation)."""
    out = []
    kinds = sorted(set(meter.op_breakdown) | set(report.bytes_by_kind))
    for k in kinds:
        got = float(meter.op_breakdown[k].bytes) if k in meter.op_breakdown else 0.0
        est = float(report.bytes_by_kind.get(k, 0.0))
        dev = abs(got - est) / est if est else (0.0 if got == 0 else math.inf)
        out.append((k, got, est, dev))
    return out


