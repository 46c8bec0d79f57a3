"""Fixed-point encoding into the ring Z_{2^l}.

Ring elements are carried as ``numpy.uint64`` arrays; for ``l < 64`` every
result is masked back into ``[0, 2^l)``.  Scalars in give numpy scalars out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeOverflow

__all__ = [
    "RingParams",
    "encode",
    "decode",
    "ring_add",
    "ring_sub",
    "ring_neg",
    "ring_mul",
    "truncate",
    "to_signed",
    "from_signed",
]


@dataclass(frozen=True)
class RingParams:
    """Bit widths of the fixed-point ring: ``l`` total bits, ``f`` fractional."""

    l: int = 64
    f: int = 18

    def __post_init__(self):
        if not (0 < self.f < self.l <= 64):
            raise ValueError(f"need 0 < f < l <= 64, got l={self.l}, f={self.f}")

    @property
    def mask(self) -> np.uint64:
        return np.uint64((1 << self.l) - 1)

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def bound(self) -> float:
        """Open bound on representable reals: |x| < 2^(l-f-1)."""
        return float(2 ** (self.l - self.f - 1))

    @property
    def product_bound(self) -> float:
        """Largest |x*y| whose raw 2f-bit product still fits the ring."""
        return float(2 ** (self.l - 1 - 2 * self.f))

    @property
    def elem_bytes(self) -> int:
        return (self.l + 7) // 8

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.f


DEFAULT_PARAMS = RingParams()


def _out(arr: np.ndarray, scalar: bool):
    return arr[()] if scalar else arr


def _as_ring(a, params: RingParams) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype != np.uint64:
        if arr.dtype.kind == "f":
            raise TypeError("ring elements must be integers; use encode() for reals")
        arr = arr.astype(np.int64).astype(np.uint64) if arr.dtype.kind == "i" else arr.astype(np.uint64)
    return arr & params.mask


def from_signed(v, params: RingParams = DEFAULT_PARAMS) -> np.ndarray:
    """Map signed int64 values into the ring (two's complement)."""
    v = np.asarray(v, dtype=np.int64)
    return v.astype(np.uint64) & params.mask


def to_signed(a, params: RingParams = DEFAULT_PARAMS) -> np.ndarray:
    """Signed two's-complement interpretation of ring elements as int64."""
    arr = _as_ring(a, params)
    if params.l == 64:
        return arr.view(np.int64) if arr.ndim else np.asarray(arr).view(np.int64)
    half = np.int64(1 << (params.l - 1))
    full_mask = np.int64((1 << params.l) - 1)
    x = arr.astype(np.int64)
    return ((x + half) & full_mask) - half


def encode(real, params: RingParams = DEFAULT_PARAMS):
    """round(real * 2^f) mod 2^l, rounding half away from zero."""
    x = np.asarray(real, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(np.abs(x) >= params.bound):
        raise RangeOverflow(f"value outside (-2^{params.l - params.f - 1}, 2^{params.l - params.f - 1})")
    scaled = x * params.scale
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    out = rounded.astype(np.int64).astype(np.uint64) & params.mask
    return _out(out, x.ndim == 0)


def decode(elem, params: RingParams = DEFAULT_PARAMS):
    arr = np.asarray(elem)
    out = to_signed(arr, params).astype(np.float64) / params.scale
    return _out(np.asarray(out), arr.ndim == 0)


def ring_add(a, b, params: RingParams = DEFAULT_PARAMS):
    a_, b_ = _as_ring(a, params), _as_ring(b, params)
    with np.errstate(over="ignore"):
        r = (a_ + b_) & params.mask
    return _out(np.asarray(r), a_.ndim == 0 and b_.ndim == 0)


def ring_sub(a, b, params: RingParams = DEFAULT_PARAMS):
    a_, b_ = _as_ring(a, params), _as_ring(b, params)
    with np.errstate(over="ignore"):
        r = (a_ - b_) & params.mask
    return _out(np.asarray(r), a_.ndim == 0 and b_.ndim == 0)


def ring_neg(a, params: RingParams = DEFAULT_PARAMS):
    a_ = _as_ring(a, params)
    with np.errstate(over="ignore"):
        r = (np.uint64(0) - a_) & params.mask
    return _out(np.asarray(r), a_.ndim == 0)


def ring_mul(a, b, params: RingParams = DEFAULT_PARAMS):
    a_, b_ = _as_ring(a, params), _as_ring(b, params)
    with np.errstate(over="ignore"):
        r = (a_ * b_) & params.mask
    return _out(np.asarray(r), a_.ndim == 0 and b_.ndim == 0)


def truncate(a, params: RingParams = DEFAULT_PARAMS, bits: int | None = None):
    """Arithmetic right shift by ``bits`` (default f) in the signed view."""
    a_ = np.asarray(a)
    shift = params.f if bits is None else bits
    out = from_signed(to_signed(a_, params) >> np.int64(shift), params)
    return _out(np.asarray(out), a_.ndim == 0)
