"""The toy heterogeneous ViT: plaintext forward (training, search), MLP
fusion, checkpoints and the secret-shared forward pass.
"""
from __future__ import annotations

import json
import math
import struct

import numpy as np
from scipy.stats import truncnorm

from . import autodiff as ad
from .arch import AttentionAssignment, MLPAssignment, ViTConfig
from .autodiff import Tensor
from .errors import CorruptFile, InvalidConfig, NotFused, ShapeMismatch, SiteStillNonlinear, VersionMismatch
from .kernels import DEFAULT_APPROX, ApproxConfig, mpc_gelu, mpc_layernorm, mpc_relu, mpc_relusoftmax
from .runtime import Session, SharedTensor

__all__ = [
    "ViT",
    "build_vit",
    "forward",
    "patchify",
    "fuse_mlp",
    "add_relu_after_fusion",
    "mlp_param_count",
    "save_checkpoint",
    "load_checkpoint",
    "mpc_forward",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"HVITCKPT"
CHECKPOINT_VERSION = 1


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W, C) -> (B, patches, patch*patch*C), row-major over the grid."""
    b, h, w, c = images.shape
    gh, gw = h // patch, w // patch
    x = images.reshape(b, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, patch * patch * c)


def _trunc_normal(rng, shape, std=0.02):
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


def _init_params(cfg: ViTConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    C, H = cfg.dim, cfg.hidden
    p = {
        "patch_w": _trunc_normal(rng, (cfg.patch_dim, C)),
        "patch_b": np.zeros(C),
        "pos": _trunc_normal(rng, (1, cfg.tokens, C)),
    }
    if cfg.class_token:
        p["cls"] = _trunc_normal(rng, (1, 1, C))
    for i in range(cfg.depth):
        p[f"b{i}.ln1_g"] = np.ones(C)
        p[f"b{i}.ln1_b"] = np.zeros(C)
        p[f"b{i}.qkv_w"] = _trunc_normal(rng, (C, 3 * C))
        p[f"b{i}.qkv_b"] = np.zeros(3 * C)
        p[f"b{i}.proj_w"] = _trunc_normal(rng, (C, C))
        p[f"b{i}.proj_b"] = np.zeros(C)
        p[f"b{i}.ln2_g"] = np.ones(C)
        p[f"b{i}.ln2_b"] = np.zeros(C)
        p[f"b{i}.fc1_w"] = _trunc_normal(rng, (C, H))
        p[f"b{i}.fc1_b"] = np.zeros(H)
        p[f"b{i}.fc2_w"] = _trunc_normal(rng, (H, C))
        p[f"b{i}.fc2_b"] = np.zeros(C)
    p["norm_g"] = np.ones(C)
    p["norm_b"] = np.zeros(C)
    p["head_w"] = _trunc_normal(rng, (C, cfg.classes))
    p["head_b"] = np.zeros(cfg.classes)
    return p


class ViT:
    """Parameters plus the current binarized architecture.

    ``attn`` / ``mlp`` default to an all-RSAttn, all-GeLU model.
    """

    def __init__(self, cfg: ViTConfig, params: dict, attn: AttentionAssignment | None = None,
                 mlp: MLPAssignment | None = None):
        self.cfg = cfg
        self.params = {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=True) for k, v in params.items()}
        self.attn = attn or AttentionAssignment.all_rs(cfg)
        self.mlp = mlp or MLPAssignment.all_gelu(cfg)
        self.attn.check(cfg)
        self.mlp.check(cfg)

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def named_parameters(self):
        return sorted(self.params.items())

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def copy(self, attn=None, mlp=None) -> "ViT":
        return ViT(self.cfg, self.state(), attn or self.attn, mlp or self.mlp)

    def __call__(self, images, **kw):
        return forward(self, images, **kw)

    def predict(self, images, batch: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(images), batch):
            logits, _ = forward(self, images[s:s + batch])
            out.append(np.argmax(logits.data, axis=-1))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)


def build_vit(cfg: ViTConfig, seed: int = 0, attn=None, mlp=None) -> ViT:
    if not isinstance(cfg, ViTConfig):
        raise InvalidConfig("build_vit needs a ViTConfig")
    return ViT(cfg, _init_params(cfg, seed), attn, mlp)


# plaintext forward


def _attention(model: ViT, i: int, q: Tensor, k: Tensor, v: Tensor, attn: AttentionAssignment, alpha):
    """q, k, v: (B, N, T, d).  Returns (B, N, T, d)."""
    cfg = model.cfg
    T, d = cfg.tokens, cfg.head_dim
    kt = k.swapaxes(-1, -2)

    def rs():
        return ad.matmul(ad.relusoftmax_rows(ad.scale(ad.matmul(q, kt), 1.0 / math.sqrt(d)), cfg.rs_eps), v)

    def sc():
        return ad.scale(ad.matmul(q, ad.matmul(kt, v)), 1.0 / (T * math.sqrt(d)))

    if alpha is not None:
        a = ad.reshape(alpha[i], 1, cfg.heads, 1, 1)
        return rs() * a + sc() * (1.0 - a)
    mask = np.stack([attn.rows(i, j, T) for j in range(cfg.heads)])
    if mask.all():
        return rs()
    if not mask.any():
        return sc()
    m = mask.astype(np.float64)[None, :, :, None]
    return rs() * m + sc() * (1.0 - m)


def _mlp(model: ViT, i: int, x: Tensor, mlp: MLPAssignment, beta):
    cfg, P = model.cfg, model.params
    T = cfg.tokens

    def fc1():
        return ad.matmul(x, P[f"b{i}.fc1_w"]) + P[f"b{i}.fc1_b"]

    def fc2(h):
        return ad.matmul(h, P[f"b{i}.fc2_w"]) + P[f"b{i}.fc2_b"]

    if beta is not None:
        h = fc1()
        b = beta[i]
        b = ad.reshape(b, 1, -1, 1)
        return fc2(ad.gelu_tanh(h) * b + h * (1.0 - b))
    g = mlp.gelu_tokens(i, T)
    f = mlp.fused_tokens(i, T)
    r = mlp.relu_tokens(i, T)
    u = ~g & ~f
    parts = []
    if g.any() or u.any():
        h = fc1()
        if g.all():
            parts.append((g, fc2(ad.gelu_tanh(h))))
        elif u.all():
            parts.append((u, fc2(h)))
        else:
            if g.any():
                parts.append((g, fc2(ad.gelu_tanh(h))))
            if u.any():
                parts.append((u, fc2(h)))
    if f.any():
        if f"b{i}.fuse_w" not in P:
            raise NotFused(f"layer {i} has fused sites but no fused weights; call fuse_mlp first")
        z = ad.matmul(x, P[f"b{i}.fuse_w"]) + P[f"b{i}.fuse_b"]
        if r.all():
            z = ad.relu(z)
        elif r.any():
            rm = r.astype(np.float64)[None, :, None]
            z = ad.relu(z) * rm + z * (1.0 - rm)
        parts.append((f, z))
    if len(parts) == 1:
        return parts[0][1]
    out = None
    for m, val in parts:
        term = val * m.astype(np.float64)[None, :, None]
        out = term if out is None else out + term
    return out


def forward(model: ViT, images, attn: AttentionAssignment | None = None, mlp: MLPAssignment | None = None,
            alpha: Tensor | None = None, beta: Tensor | None = None):
    """Plaintext forward.  Returns (logits (B, classes), last-layer features (B, T, C)).

    With ``alpha`` (L x N) / ``beta`` (L x sites) the mixed search forms are
    used instead of the binarized assignment.
    """
    cfg, P = model.cfg, model.params
    attn = attn or model.attn
    mlp = mlp or model.mlp
    attn.check(cfg)
    mlp.check(cfg)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != (cfg.image, cfg.image, cfg.channels):
        raise ShapeMismatch(f"images must be (B, {cfg.image}, {cfg.image}, {cfg.channels}), got {images.shape}")
    B, T, C, N, d = images.shape[0], cfg.tokens, cfg.dim, cfg.heads, cfg.head_dim
    x = ad.matmul(Tensor(patchify(images, cfg.patch)), P["patch_w"]) + P["patch_b"]
    if cfg.class_token:
        cls = ad.mul(P["cls"], np.ones((B, 1, 1)))
        x = ad.concat([cls, x], axis=1)
    x = x + P["pos"]
    for i in range(cfg.depth):
        h = ad.layernorm(x, P[f"b{i}.ln1_g"], P[f"b{i}.ln1_b"])
        qkv = ad.matmul(h, P[f"b{i}.qkv_w"]) + P[f"b{i}.qkv_b"]
        qkv = qkv.reshape(B, T, 3, N, d).transpose(2, 0, 3, 1, 4)
        o = _attention(model, i, qkv[0], qkv[1], qkv[2], attn, alpha)
        o = o.transpose(0, 2, 1, 3).reshape(B, T, C)
        x = x + ad.matmul(o, P[f"b{i}.proj_w"]) + P[f"b{i}.proj_b"]
        h = ad.layernorm(x, P[f"b{i}.ln2_g"], P[f"b{i}.ln2_b"])
        x = x + _mlp(model, i, h, mlp, beta)
    feats = x
    pooled = x[:, 0, :] if cfg.class_token else x.mean(axis=1)
    z = ad.layernorm(pooled, P["norm_g"], P["norm_b"])
    logits = ad.matmul(z, P["head_w"]) + P["head_b"]
    return logits, feats


# fusion


def mlp_param_count(model: ViT, layer: int) -> int:
    """Weight count of the MLP as deployed at ``layer`` (fused if any site is)."""
    cfg = model.cfg
    C, H = cfg.dim, cfg.hidden
    f = model.mlp.fused_tokens(layer, cfg.tokens)
    if f.all():
        return C * C
    return C * H + H * C + (C * C if f.any() else 0)


def fuse_mlp(model: ViT, target: MLPAssignment) -> ViT:
    """Collapse fc1/fc2 into one C x C map at every site ``target`` marks fused.

    W_f = W1 W2 and b_f = b1 W2 + b2.  Sites still carrying a GeLU in
    ``model`` cannot be fused.
    """
    cfg = model.cfg
    target.check(cfg)
    if target.granularity != model.mlp.granularity:
        raise ShapeMismatch("fusion target and model use different MLP granularity")
    if np.any(target.fused & model.mlp.gelu_kept):
        raise SiteStillNonlinear("cannot fuse a site whose GeLU is still present")
    params = model.state()
    for i in range(cfg.depth):
        if not target.fused[i].any() or f"b{i}.fuse_w" in params:
            continue
        w1, b1 = params[f"b{i}.fc1_w"], params[f"b{i}.fc1_b"]
        w2, b2 = params[f"b{i}.fc2_w"], params[f"b{i}.fc2_b"]
        params[f"b{i}.fuse_w"] = w1 @ w2
        params[f"b{i}.fuse_b"] = b1 @ w2 + b2
    mlp = MLPAssignment(model.mlp.gelu_kept, target.fused | model.mlp.fused, target.relu_added | model.mlp.relu_added,
                        model.mlp.granularity)
    return ViT(cfg, params, model.attn, mlp)


def add_relu_after_fusion(model: ViT, sites) -> ViT:
    """Insert a ReLU after the fused map at ``sites`` (bool grid like ``mlp.fused``)."""
    sites = np.asarray(sites, dtype=bool)
    if sites.shape != model.mlp.fused.shape:
        raise ShapeMismatch(f"sites grid {sites.shape} does not match {model.mlp.fused.shape}")
    if np.any(sites & ~model.mlp.fused):
        raise NotFused("ReLU can only be added at fused sites")
    mlp = MLPAssignment(model.mlp.gelu_kept, model.mlp.fused, model.mlp.relu_added | sites, model.mlp.granularity)
    return ViT(model.cfg, model.state(), model.attn, mlp)


# checkpoints


def save_checkpoint(model: ViT, path, extra: dict | None = None) -> None:
    """Binary container: magic, version, JSON header length, JSON header, float64 LE blobs."""
    names = sorted(model.params)
    tensors = []
    offset = 0
    for n in names:
        a = model.params[n].data
        tensors.append({"name": n, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "attention": model.attn.to_dict(),
        "mlp": model.mlp.to_dict(),
        "tensors": tensors,
        "nbytes": offset,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True, indent=1).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    magic = fh.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise CorruptFile("not a checkpoint (bad magic)")
    raw = fh.read(12)
    if len(raw) != 12:
        raise CorruptFile("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", raw)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    hb = fh.read(hlen)
    if len(hb) != hlen:
        raise CorruptFile("truncated checkpoint header")
    try:
        header = json.loads(hb)
    except ValueError as exc:
        raise CorruptFile(f"checkpoint header is not JSON: {exc}") from None
    return header, fh


def load_checkpoint(path, expect: ViTConfig | None = None) -> ViT:
    """Load a model; ``expect`` guards against a different architecture config."""
    with open(path, "rb") as fh:
        header, fh = _read_header(fh)
        blob = fh.read()
    try:
        cfg = ViTConfig.from_dict(header["config"])
        attn = AttentionAssignment.from_dict(header["attention"])
        mlp = MLPAssignment.from_dict(header["mlp"])
        specs = header["tensors"]
        nbytes = header["nbytes"]
    except (KeyError, TypeError, InvalidConfig) as exc:
        raise CorruptFile(f"checkpoint header incomplete: {exc}") from None
    if expect is not None and cfg != expect:
        raise VersionMismatch(f"checkpoint config {cfg} does not match expected {expect}")
    if len(blob) != nbytes:
        raise CorruptFile(f"checkpoint payload has {len(blob)} bytes, header says {nbytes}")
    params = {}
    for s in specs:
        n = int(np.prod(s["shape"])) if s["shape"] else 1
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=s["offset"]).reshape(s["shape"])
        params[s["name"]] = a.astype(np.float64)
    return ViT(cfg, params, attn, mlp)


# secret-shared forward


def _share_weights(model: ViT, session: Session) -> dict:
    return {k: session.share_real(v.data, offline=True) for k, v in model.params.items()}


def _bias(x: SharedTensor, b: SharedTensor) -> SharedTensor:
    return x + b.broadcast_to(x.shape)


def _linear(session, x, w, b):
    return _bias(session.matmul_fixed(x, w), b)


def _scatter_rows(parts, T: int, axis: int = 1):
    """Reassemble row groups (mask, value) into T rows along ``axis`` (public permutation)."""
    if len(parts) == 1:
        return parts[0][1]
    order = np.concatenate([np.flatnonzero(m) for m, _ in parts])
    stacked = SharedTensor.concatenate([v for _, v in parts], axis=axis)
    return stacked.take(np.argsort(order), axis=axis)


def _mpc_head(session, q, k, v, rows, T, d, approx):
    """One head; q, k, v are (B, T, d).  Mirrors cost.attention_head_ops."""
    parts = []
    r = np.flatnonzero(rows)
    s = np.flatnonzero(~rows)
    kt = k.swapaxes(-1, -2)
    if r.size:
        qr = q.take(r, axis=1)
        logits = session.mul_public_real(session.matmul_fixed(qr, kt), 1.0 / math.sqrt(d))
        att = mpc_relusoftmax(logits, approx)
        parts.append((rows, session.matmul_fixed(att, v)))
    if s.size:
        m = session.matmul_fixed(kt, v)
        qs = q.take(s, axis=1)
        out = session.mul_public_real(session.matmul_fixed(qs, m), 1.0 / (T * math.sqrt(d)))
        parts.append((~rows, out))
    return _scatter_rows(parts, T)


def _mpc_mlp(session, W, i, x, mlp: MLPAssignment, T, approx):
    g = mlp.gelu_tokens(i, T)
    f = mlp.fused_tokens(i, T)
    ra = mlp.relu_tokens(i, T)
    u = ~g & ~f
    parts = []
    if g.any():
        xg = x if g.all() else x.take(np.flatnonzero(g), axis=1)
        h = mpc_gelu(_linear(session, xg, W[f"b{i}.fc1_w"], W[f"b{i}.fc1_b"]), approx)
        parts.append((g, _linear(session, h, W[f"b{i}.fc2_w"], W[f"b{i}.fc2_b"])))
    if u.any():
        xu = x if u.all() else x.take(np.flatnonzero(u), axis=1)
        h = _linear(session, xu, W[f"b{i}.fc1_w"], W[f"b{i}.fc1_b"])
        parts.append((u, _linear(session, h, W[f"b{i}.fc2_w"], W[f"b{i}.fc2_b"])))
    if f.any():
        fi = np.flatnonzero(f)
        xf = x if f.all() else x.take(fi, axis=1)
        z = _linear(session, xf, W[f"b{i}.fuse_w"], W[f"b{i}.fuse_b"])
        rr = ra[fi]
        if rr.all():
            z = mpc_relu(z)
        elif rr.any():
            local = np.zeros(fi.size, dtype=bool)
            local[rr] = True
            on = mpc_relu(z.take(np.flatnonzero(local), axis=1))
            off = z.take(np.flatnonzero(~local), axis=1)
            z = _scatter_rows([(local, on), (~local, off)], fi.size)
        parts.append((f, z))
    return _scatter_rows(parts, T)


def mpc_forward(model: ViT, images, session: Session, attn: AttentionAssignment | None = None,
                mlp: MLPAssignment | None = None, approx: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """Secret-shared inference; returns shared logits (B, classes).

    Weights are shared offline; the client's images are shared online.
    Every operator runs through the metered runtime, one invocation per
    head, in the order :func:`hetvit.cost.inference_ops` lists them.
    """
    cfg = model.cfg
    attn = attn or model.attn
    mlp = mlp or model.mlp
    attn.check(cfg)
    mlp.check(cfg)
    images = np.asarray(images, dtype=np.float64)
    B, T, C, N, d = images.shape[0], cfg.tokens, cfg.dim, cfg.heads, cfg.head_dim
    W = _share_weights(model, session)
    meter = session.meter
    with meter.layer("embed"):
        img = session.share_real(images)
        p = cfg.patch
        gh = cfg.image // p
        patches = img.reshape(B, gh, p, gh, p, cfg.channels).transpose(0, 1, 3, 2, 4, 5).reshape(B, cfg.patches, cfg.patch_dim)
        x = _linear(session, patches, W["patch_w"], W["patch_b"])
        if cfg.class_token:
            x = SharedTensor.concatenate([W["cls"].broadcast_to((B, 1, C)), x], axis=1)
        x = x + W["pos"].broadcast_to(x.shape)
    for i in range(cfg.depth):
        with meter.layer(f"layer{i}"):
            h = mpc_layernorm(x, W[f"b{i}.ln1_g"], W[f"b{i}.ln1_b"], cfg=approx)
            qkv = _linear(session, h, W[f"b{i}.qkv_w"], W[f"b{i}.qkv_b"])
            qkv = qkv.reshape(B, T, 3, N, d).transpose(2, 3, 0, 1, 4)
            heads = [_mpc_head(session, qkv[0, j], qkv[1, j], qkv[2, j], attn.rows(i, j, T), T, d, approx)
                     for j in range(N)]
            o = SharedTensor.concatenate([hh.expand_dims(2) for hh in heads], axis=2).reshape(B, T, C)
            x = x + _linear(session, o, W[f"b{i}.proj_w"], W[f"b{i}.proj_b"])
            h = mpc_layernorm(x, W[f"b{i}.ln2_g"], W[f"b{i}.ln2_b"], cfg=approx)
            x = x + _mpc_mlp(session, W, i, h, mlp, T, approx)
    with meter.layer("head"):
        if cfg.class_token:
            pooled = x[:, 0, :]
        else:
            pooled = session.mul_public_real(x.sum(axis=1), 1.0 / T)
        z = mpc_layernorm(pooled, W["norm_g"], W["norm_b"], cfg=approx)
        logits = _linear(session, z.expand_dims(1), W["head_w"], W["head_b"])
    return logits.reshape(B, cfg.classes)
