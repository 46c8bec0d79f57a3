"""MPC-friendly non-linear kernels on top of :mod:`hetvit.runtime`.

Every kernel opens a meter scope named after itself, so its traffic shows
up as one line in the breakdown.  Softmax is deliberately left unscoped and
decomposes into ``max``/``exp``/``reciprocal``/``mul``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ring
from .runtime import Session, SharedTensor

__all__ = [
    "ApproxConfig",
    "mpc_exp",
    "mpc_reciprocal",
    "mpc_inv_sqrt",
    "mpc_max",
    "mpc_relu",
    "mpc_softmax",
    "mpc_relusoftmax",
    "mpc_gelu",
    "mpc_layernorm",
    "error_probe",
    "exp_limit",
    "reciprocal_newton",
]

GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ApproxConfig:
    exp_iters: int = 8
    recip_iters: int = 13
    epsilon: float = 1e-8
    rsqrt_iters: int = 8
    gelu_clamp: float = 8.0

    def __post_init__(self):
        if self.exp_iters < 1 or self.recip_iters < 1 or self.rsqrt_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


DEFAULT_APPROX = ApproxConfig()


# Float references of the exact iterations the kernels run.


def exp_limit(x, n: int = 8):
    """(1 + x/2^n)^(2^n) in double precision."""
    y = 1.0 + np.asarray(x, dtype=np.float64) / 2.0 ** n
    for _ in range(n):
        y = y * y
    return y


def reciprocal_newton(x, iters: int = 13, exp_iters: int = 8):
    x = np.asarray(x, dtype=np.float64)
    y = 3.0 * exp_limit(0.5 - x, exp_iters) + 0.003
    for _ in range(iters):
        y = y * (2.0 - x * y)
    return y


def _epsilon_ring(session: Session, eps: float) -> np.ndarray:
    v = np.asarray(ring.encode(eps, session.params), dtype=np.uint64)
    if v == 0:
        v = np.uint64(1)
    return v


def mpc_exp(x: SharedTensor, cfg: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """e^x as (1 + x/2^n)^(2^n): one shift-and-add, then n squarings.

    Valid for x > -2^n; large positive inputs saturate instead of wrapping.
    """
    s = x.session
    with s.meter.op("exp", units=x.size):
        y = s.truncate(x, bits=cfg.exp_iters).add_public(s.public(1.0))
        for _ in range(cfg.exp_iters):
            y = s.mul_fixed(y, y, saturate=True)
    return y


def mpc_reciprocal(x: SharedTensor, cfg: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """1/x by Newton-Raphson from y0 = 3 e^(0.5 - x) + 0.003.

    Only meaningful for x > 0.  The iteration diverges once x * y0 > 2,
    which bounds the usable domain at roughly x < 600.
    """
    s = x.session
    with s.meter.op("reciprocal", units=x.size):
        e = mpc_exp(s.add_public_real(-x, 0.5), cfg)
        y = s.add_public_real(e.scale_int(3), 0.003)
        two = s.public(2.0)
        for _ in range(cfg.recip_iters):
            xy = s.mul_fixed(x, y)
            y = s.mul_fixed(y, (-xy).add_public(two))
    return y


def mpc_inv_sqrt(x: SharedTensor, cfg: ApproxConfig = DEFAULT_APPROX, kind: str = "rsqrt") -> SharedTensor:
    """1/sqrt(x) by Newton iteration y <- y (3 - x y^2) / 2.

    Starts from y0 = 2.2 e^(-(x/2 + 0.2)) + 0.2 - x/1024.  With the default
    8 iterations it is accurate to 1e-4 for x in about [3e-3, 300]; below
    that the iteration has not caught up with 1/sqrt(x) yet, above it y0
    goes negative.
    """
    s = x.session
    with s.meter.op(kind, units=x.size):
        arg = s.add_public_real(-s.mul_public_real(x, 0.5), -0.2)
        e = mpc_exp(arg, cfg)
        y = s.mul_public_real(e, 2.2) - s.mul_public_real(x, 1.0 / 1024)
        y = s.add_public_real(y, 0.2)
        three = s.public(3.0)
        for _ in range(cfg.rsqrt_iters):
            y2 = s.mul_fixed(y, y)
            xy2 = s.mul_fixed(x, y2)
            y = s.truncate(s.mul_fixed(y, (-xy2).add_public(three)), bits=1)
    return y


def mpc_max(xs: SharedTensor) -> SharedTensor:
    """Maximum over the last axis by a tournament of pairwise comparisons.

    Each level costs one comparison round plus one selection multiply;
    there are ceil(log2 k) levels.
    """
    s = xs.session
    k = xs.shape[-1]
    rows = xs.size // k
    with s.meter.op("max", units=rows * (k - 1)):
        cur = xs
        while cur.shape[-1] > 1:
            n = cur.shape[-1]
            half = n // 2
            a = cur[..., 0:2 * half:2]
            b = cur[..., 1:2 * half:2]
            d = a - b
            bit = s.drelu(d)
            m = b + s.mul(bit, d)
            if n % 2:
                m = SharedTensor.concatenate([m, cur[..., n - 1:n]], axis=-1)
            cur = m
    return cur[..., 0]


def mpc_relu(x: SharedTensor) -> SharedTensor:
    s = x.session
    with s.meter.op("relu", units=x.size):
        return s.mul(s.drelu(x), x)


def mpc_softmax(xs: SharedTensor, cfg: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    s = xs.session
    m = mpc_max(xs).expand_dims(-1).broadcast_to(xs.shape)
    e = mpc_exp(xs - m, cfg)
    total = e.sum(axis=-1)
    inv = mpc_reciprocal(total, cfg).expand_dims(-1).broadcast_to(xs.shape)
    return s.mul_fixed(e, inv)


def mpc_relusoftmax(xs: SharedTensor, cfg: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """ReLU(x_i) / (sum_j ReLU(x_j) + eps) over the last axis.

    An all-nonpositive row comes out as the zero vector.
    """
    s = xs.session
    r = mpc_relu(xs)
    total = r.sum(axis=-1).add_public(_epsilon_ring(s, cfg.epsilon))
    inv = mpc_reciprocal(total, cfg).expand_dims(-1).broadcast_to(xs.shape)
    return s.mul_fixed(r, inv)


def mpc_gelu(x: SharedTensor, cfg: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """tanh-GeLU, with tanh(z) = 1 - 2/(e^(2z) + 1) evaluated on |z|.

    Working on |z| (clamped at ``cfg.gelu_clamp``) keeps e^(-2|z|) in (0, 1]
    so the reciprocal always sees an argument in (1, 2]; the sign is put
    back afterwards.  Beyond the clamp tanh is +-1 to fixed-point precision.
    """
    s = x.session
    with s.meter.op("gelu", units=x.size):
        x2 = s.mul_fixed(x, x)
        x3 = s.mul_fixed(x2, x)
        z = s.mul_public_real(x + s.mul_public_real(x3, 0.044715), GELU_C)
        bit = s.drelu(z)
        sign = bit.scale_int(2).add_public(ring.from_signed(np.int64(-1), s.params))
        az = s.mul(sign, z)
        over = s.add_public_real(-az, cfg.gelu_clamp)
        az = s.add_public_real(-mpc_relu(over), cfg.gelu_clamp)
        e = mpc_exp(az.scale_int(-2), cfg)
        r = mpc_reciprocal(s.add_public_real(e, 1.0), cfg)
        t_abs = s.add_public_real(r.scale_int(2), -1.0)
        t = s.mul(sign, t_abs)
        half_x = s.truncate(x, bits=1)
        return s.mul_fixed(half_x, s.add_public_real(t, 1.0))


def mpc_layernorm(x: SharedTensor, gamma: SharedTensor, beta: SharedTensor, eps: float = 1e-5,
                  cfg: ApproxConfig = DEFAULT_APPROX) -> SharedTensor:
    """LayerNorm over the last axis with shared affine parameters.

    Metered as ``layernorm`` (three element-wise products) plus one
    ``ln_rsqrt`` per row.
    """
    s = x.session
    c = x.shape[-1]
    with s.meter.op("layernorm", units=x.size):
        mean = s.mul_public_real(x.sum(axis=-1, keepdims=True), 1.0 / c)
        xc = x - mean.broadcast_to(x.shape)
        sq = s.mul_fixed(xc, xc)
        var = s.add_public_real(s.mul_public_real(sq.sum(axis=-1, keepdims=True), 1.0 / c), eps)
    inv = mpc_inv_sqrt(var, cfg, kind="ln_rsqrt")
    with s.meter.op("layernorm"):
        y = s.mul_fixed(xc, inv.broadcast_to(x.shape))
        y = s.mul_fixed(y, gamma.broadcast_to(x.shape))
        return y + beta.broadcast_to(x.shape)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _relusoftmax(x, eps):
    r = np.maximum(x, 0.0)
    return r / (r.sum(axis=-1, keepdims=True) + eps)


def error_probe(variance_grid, trials: int = 64, cfg: ApproxConfig = DEFAULT_APPROX, length: int = 16,
                seed: int = 0, params: ring.RingParams | None = None) -> list[tuple[float, float, float]]:
    """Mean relative l2 error of MPC softmax and ReLU-softmax vs float references.

    For each variance, ``trials`` Gaussian logit rows of ``length`` entries
    are pushed through both kernels in one batched session.
    """
    rng = np.random.default_rng(seed)
    out = []
    for var in variance_grid:
        if var <= 0:
            raise ValueError("variances must be positive")
        logits = rng.normal(0.0, math.sqrt(var), size=(trials, length))
        sess = Session(params, seed=seed)
        xs = sess.share_real(logits)
        got_sm = sess.reveal_real(mpc_softmax(xs, cfg))
        got_rs = sess.reveal_real(mpc_relusoftmax(xs, cfg))
        ref_sm = _softmax(logits)
        ref_rs = _relusoftmax(logits, cfg.epsilon)
        err_sm = np.linalg.norm(got_sm - ref_sm, axis=-1) / np.linalg.norm(ref_sm, axis=-1)
        denom = np.linalg.norm(ref_rs, axis=-1)
        num = np.linalg.norm(got_rs - ref_rs, axis=-1)
        err_rs = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), num)
        out.append((float(var), float(err_sm.mean()), float(err_rs.mean())))
    return out
