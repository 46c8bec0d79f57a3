"""Two-party additive secret-sharing simulator with communication metering.

Both parties live in one process.  Every value that crosses between them goes
through :class:`Channel`, which is where bytes and rounds are counted.  Beaver
triples come from a trusted dealer (offline phase, not metered).  Comparison is
an idealized functionality priced by the session's compare entry.
"""
from __future__ import annotations

import csv
import itertools
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import ring
from .errors import PartyMismatch, ShapeMismatch, TripleReuse
from .ring import RingParams


def _wraps_silently(cls):
    """Ring arithmetic wraps mod 2^64 by design; silence numpy's scalar overflow warnings."""
    for name, fn in list(vars(cls).items()):
        if callable(fn) and not isinstance(fn, (type, staticmethod, classmethod)):
            setattr(cls, name, np.errstate(over="ignore")(fn))
    return cls

__all__ = [
    "OpStats",
    "CommMeter",
    "Channel",
    "Share",
    "SharedTensor",
    "BeaverTriple",
    "MatmulTriple",
    "Dealer",
    "Session",
    "share",
    "reconstruct",
    "add_shares",
    "sub_shares",
    "add_public",
    "mul_public",
    "mul_shares",
    "matmul_shares",
    "drelu_oracle",
]


@dataclass
class OpStats:
    bytes_p0: int = 0
    bytes_p1: int = 0
    rounds: int = 0
    calls: int = 0
    units: int = 0

    @property
    def bytes(self) -> int:
        return self.bytes_p0 + self.bytes_p1

    def add(self, other: "OpStats") -> None:
        self.bytes_p0 += other.bytes_p0
        self.bytes_p1 += other.bytes_p1
        self.rounds += other.rounds
        self.calls += other.calls
        self.units += other.units


class CommMeter:
    """Byte and round counters with a per-operation and per-layer breakdown.

    Traffic is attributed to the outermost open :meth:`op` scope, so a
    reciprocal's internal exponential is billed to ``reciprocal``.
    """

    def __init__(self):
        self.bytes_sent = [0, 0]
        self.rounds = 0
        self.op_breakdown: dict[str, OpStats] = {}
        self.layer_breakdown: dict[str, OpStats] = {}
        self._ops: list[str] = []
        self._layer: str | None = None

    @property
    def total_bytes(self) -> int:
        return self.bytes_sent[0] + self.bytes_sent[1]

    @contextmanager
    def op(self, kind: str, units: int = 0):
        outer = not self._ops
        if outer:
            stats = self.op_breakdown.setdefault(kind, OpStats())
            stats.calls += 1
            stats.units += int(units)
            if self._layer is not None:
                self.layer_breakdown.setdefault(self._layer, OpStats()).calls += 1
        self._ops.append(kind)
        try:
            yield
        finally:
            self._ops.pop()

    @contextmanager
    def layer(self, name: str):
        prev, self._layer = self._layer, name
        self.layer_breakdown.setdefault(name, OpStats())
        try:
            yield
        finally:
            self._layer = prev

    def record(self, kind: str, bytes_p0: int, bytes_p1: int, rounds: int) -> None:
        target = self._ops[0] if self._ops else kind
        self.bytes_sent[0] += bytes_p0
        self.bytes_sent[1] += bytes_p1
        self.rounds += rounds
        delta = OpStats(bytes_p0, bytes_p1, rounds)
        self.op_breakdown.setdefault(target, OpStats()).add(delta)
        if self._layer is not None:
            self.layer_breakdown[self._layer].add(delta)

    def snapshot(self) -> tuple[int, int, int]:
        return self.bytes_sent[0], self.bytes_sent[1], self.rounds

    def merge(self, other: "CommMeter") -> None:
        """Fold another session's meter into this one."""
        self.bytes_sent[0] += other.bytes_sent[0]
        self.bytes_sent[1] += other.bytes_sent[1]
        self.rounds += other.rounds
        for src, dst in ((other.op_breakdown, self.op_breakdown), (other.layer_breakdown, self.layer_breakdown)):
            for k, v in src.items():
                dst.setdefault(k, OpStats()).add(v)

    def rows(self) -> list[tuple[str, int, int, int]]:
        return [(k, v.bytes_p0, v.bytes_p1, v.rounds) for k, v in sorted(self.op_breakdown.items())]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["op", "bytes_p0", "bytes_p1", "rounds"])
            w.writerows(self.rows())


class Channel:
    """Message queue between party 0 and party 1; one exchange is one round."""

    def __init__(self, meter: CommMeter, elem_bytes: int):
        self.meter = meter
        self.elem_bytes = elem_bytes
        self._inbox = (deque(), deque())

    def exchange(self, msg0: list[np.ndarray], msg1: list[np.ndarray], kind: str, billed: int | None = None):
        """Party 0 sends ``msg0`` and party 1 sends ``msg1`` in the same round.

        ``billed`` overrides the per-party element count charged to the meter.
        """
        self._inbox[1].append(msg0)
        self._inbox[0].append(msg1)
        n0 = sum(int(np.size(m)) for m in msg0) if billed is None else billed
        n1 = sum(int(np.size(m)) for m in msg1) if billed is None else billed
        self.meter.record(kind, n0 * self.elem_bytes, n1 * self.elem_bytes, 1)
        return self._inbox[0].popleft(), self._inbox[1].popleft()

    def send(self, sender: int, msg: list[np.ndarray], kind: str):
        n = sum(int(np.size(m)) for m in msg)
        b = n * self.elem_bytes
        self.meter.record(kind, b if sender == 0 else 0, b if sender == 1 else 0, 1)
        self._inbox[1 - sender].append(msg)
        return self._inbox[1 - sender].popleft()


@dataclass
class Share:
    party: int
    value: np.ndarray


@_wraps_silently
class SharedTensor:
    """A secret-shared ring tensor: party 0 holds ``s0``, party 1 holds ``s1``.

    Local (communication-free) operations are methods here; anything that
    needs interaction goes through the owning :class:`Session`.
    """

    __slots__ = ("s0", "s1", "session")

    def __init__(self, s0: np.ndarray, s1: np.ndarray, session: "Session"):
        self.s0 = np.asarray(s0, dtype=np.uint64)
        self.s1 = np.asarray(s1, dtype=np.uint64)
        self.session = session

    @property
    def params(self) -> RingParams:
        return self.session.params

    @property
    def shape(self) -> tuple[int, ...]:
        return self.s0.shape

    @property
    def size(self) -> int:
        return int(self.s0.size)

    @property
    def ndim(self) -> int:
        return self.s0.ndim

    def shares(self) -> tuple[Share, Share]:
        return Share(0, self.s0.copy()), Share(1, self.s1.copy())

    def _map(self, fn) -> "SharedTensor":
        return SharedTensor(fn(self.s0), fn(self.s1), self.session)

    def __repr__(self):
        return f"SharedTensor(shape={self.shape})"

    # local arithmetic
    def __add__(self, other: "SharedTensor") -> "SharedTensor":
        m = self.params.mask
        return SharedTensor((self.s0 + other.s0) & m, (self.s1 + other.s1) & m, self.session)

    def __sub__(self, other: "SharedTensor") -> "SharedTensor":
        m = self.params.mask
        return SharedTensor((self.s0 - other.s0) & m, (self.s1 - other.s1) & m, self.session)

    def __neg__(self) -> "SharedTensor":
        m = self.params.mask
        return SharedTensor((np.uint64(0) - self.s0) & m, (np.uint64(0) - self.s1) & m, self.session)

    def add_public(self, c) -> "SharedTensor":
        """Add a public ring value (party 0 absorbs it)."""
        c = np.asarray(c, dtype=np.uint64)
        return SharedTensor((self.s0 + c) & self.params.mask, np.broadcast_to(self.s1, np.broadcast_shapes(self.shape, c.shape)).copy(), self.session)

    def mul_public(self, c) -> "SharedTensor":
        """Multiply by a public ring value; no truncation."""
        c = np.asarray(c, dtype=np.uint64)
        m = self.params.mask
        return SharedTensor((self.s0 * c) & m, (self.s1 * c) & m, self.session)

    def scale_int(self, k: int) -> "SharedTensor":
        return self.mul_public(ring.from_signed(np.int64(k), self.params))

    # shape plumbing
    def reshape(self, *shape) -> "SharedTensor":
        return self._map(lambda s: s.reshape(*shape))

    def transpose(self, *axes) -> "SharedTensor":
        return self._map(lambda s: s.transpose(*axes))

    def swapaxes(self, a: int, b: int) -> "SharedTensor":
        return self._map(lambda s: np.swapaxes(s, a, b))

    def __getitem__(self, idx) -> "SharedTensor":
        return self._map(lambda s: s[idx])

    def take(self, indices, axis: int) -> "SharedTensor":
        return self._map(lambda s: np.take(s, indices, axis=axis))

    def expand_dims(self, axis: int) -> "SharedTensor":
        return self._map(lambda s: np.expand_dims(s, axis))

    def broadcast_to(self, shape) -> "SharedTensor":
        return self._map(lambda s: np.broadcast_to(s, shape).copy())

    def sum(self, axis=None, keepdims: bool = False) -> "SharedTensor":
        m = self.params.mask
        return self._map(lambda s: np.sum(s, axis=axis, keepdims=keepdims, dtype=np.uint64) & m)

    @staticmethod
    def concatenate(parts: Iterable["SharedTensor"], axis: int = 0) -> "SharedTensor":
        parts = list(parts)
        return SharedTensor(
            np.concatenate([p.s0 for p in parts], axis=axis),
            np.concatenate([p.s1 for p in parts], axis=axis),
            parts[0].session,
        )

    def reveal(self) -> np.ndarray:
        return self.session.reconstruct(self)

    def reveal_real(self) -> np.ndarray:
        return ring.decode(self.reveal(), self.params)


@dataclass
class BeaverTriple:
    id: int
    a: SharedTensor
    b: SharedTensor
    c: SharedTensor


@dataclass
class MatmulTriple:
    id: int
    a: SharedTensor
    b: SharedTensor
    c: SharedTensor


@_wraps_silently
class Dealer:
    """Trusted dealer handing out Beaver triples; the offline phase is free."""

    def __init__(self, session: "Session", rng: np.random.Generator):
        self.session = session
        self.rng = rng
        self._ids = itertools.count()

    def _uniform(self, shape) -> np.ndarray:
        return self.rng.integers(0, np.iinfo(np.uint64).max, size=shape, endpoint=True, dtype=np.uint64) & self.session.params.mask

    def _split(self, v: np.ndarray) -> SharedTensor:
        r = self._uniform(v.shape)
        return SharedTensor(r, (v - r) & self.session.params.mask, self.session)

    def triple(self, shape) -> BeaverTriple:
        a, b = self._uniform(shape), self._uniform(shape)
        c = (a * b) & self.session.params.mask
        return BeaverTriple(next(self._ids), self._split(a), self._split(b), self._split(c))

    def matmul_triple(self, x_shape, y_shape) -> MatmulTriple:
        a, b = self._uniform(x_shape), self._uniform(y_shape)
        c = np.matmul(a, b) & self.session.params.mask
        return MatmulTriple(next(self._ids), self._split(a), self._split(b), self._split(c))


def _default_compare_price(params: RingParams) -> tuple[int, int]:
    from .cost import cot_cost

    bits, rounds = cot_cost(2, params.l, 128)
    return (bits + 7) // 8, rounds


@_wraps_silently
class Session:
    """State for one simulated two-party computation.

    Holds ring parameters, the meter, the dealer and the randomness used for
    sharing.  Identical seeds give bit-identical shares and meters.  A session
    is not thread-safe; run independent sessions in parallel and merge meters.
    """

    def __init__(self, params: RingParams | None = None, seed: int = 0, cost_table=None):
        self.params = params or RingParams()
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        share_seed, dealer_seed = ss.spawn(2)
        self.rng = np.random.default_rng(share_seed)
        self.meter = CommMeter()
        self.channel = Channel(self.meter, self.params.elem_bytes)
        self.dealer = Dealer(self, np.random.default_rng(dealer_seed))
        self._used_triples: set[int] = set()
        if cost_table is not None and "compare" in cost_table:
            entry = cost_table["compare"]
            self.compare_price = (int(entry.unit_bytes), int(entry.rounds))
        else:
            self.compare_price = _default_compare_price(self.params)

    # sharing
    def _uniform(self, shape) -> np.ndarray:
        return self.rng.integers(0, np.iinfo(np.uint64).max, size=shape, endpoint=True, dtype=np.uint64) & self.params.mask

    def _reshare(self, v: np.ndarray) -> SharedTensor:
        v = np.asarray(v, dtype=np.uint64) & self.params.mask
        r = self._uniform(v.shape)
        return SharedTensor(r, (v - r) & self.params.mask, self)

    def share(self, x, offline: bool = False) -> SharedTensor:
        """Split ring values into (r, x - r).

        The owner keeps one share and sends the other: one ring element per
        value, one round.  ``offline=True`` skips metering (model weights are
        shared before inference starts).
        """
        x = np.asarray(x, dtype=np.uint64) & self.params.mask
        st = self._reshare(x)
        if not offline:
            with self.meter.op("share", units=x.size):
                self.channel.send(0, [st.s1], "share")
        return st

    def share_real(self, x, offline: bool = False) -> SharedTensor:
        return self.share(ring.encode(np.asarray(x, dtype=np.float64), self.params), offline=offline)

    def public(self, x) -> np.ndarray:
        return np.asarray(ring.encode(np.asarray(x, dtype=np.float64), self.params), dtype=np.uint64)

    def _peek(self, x: SharedTensor) -> np.ndarray:
        """Reconstruct without communication; only for idealized functionalities."""
        return (x.s0 + x.s1) & self.params.mask

    def reconstruct(self, x: SharedTensor) -> np.ndarray:
        with self.meter.op("reveal", units=x.size):
            got0, got1 = self.channel.exchange([x.s0], [x.s1], "reveal")
        v0 = (x.s0 + got0[0]) & self.params.mask
        v1 = (got1[0] + x.s1) & self.params.mask
        assert np.array_equal(v0, v1)
        return v0

    def reveal_real(self, x: SharedTensor) -> np.ndarray:
        return ring.decode(self.reconstruct(x), self.params)

    # multiplication
    def _consume(self, triple_id: int) -> None:
        if triple_id in self._used_triples:
            raise TripleReuse(f"triple {triple_id} already consumed")
        self._used_triples.add(triple_id)

    def mul(self, x: SharedTensor, y: SharedTensor, triple: BeaverTriple | None = None) -> SharedTensor:
        """Beaver multiplication in the ring (no truncation).

        Each party opens its shares of x-a and y-b: two ring elements per
        party per product, one round.
        """
        if x.shape != y.shape:
            raise ShapeMismatch(f"mul needs equal shapes, got {x.shape} and {y.shape}")
        t = triple or self.dealer.triple(x.shape)
        self._consume(t.id)
        m = self.params.mask
        e_sh, f_sh = x - t.a, y - t.b
        with self.meter.op("mul", units=x.size):
            got0, got1 = self.channel.exchange([e_sh.s0, f_sh.s0], [e_sh.s1, f_sh.s1], "mul")
        e = (e_sh.s0 + got0[0]) & m
        f = (f_sh.s0 + got0[1]) & m
        z0 = (t.c.s0 + e * t.b.s0 + f * t.a.s0 + e * f) & m
        z1 = (t.c.s1 + e * t.b.s1 + f * t.a.s1) & m
        return SharedTensor(z0, z1, self)

    def truncate(self, x: SharedTensor, bits: int | None = None) -> SharedTensor:
        """Faithful arithmetic shift; local in this simulator, so unmetered."""
        return self._reshare(ring.truncate(self._peek(x), self.params, bits))

    def mul_fixed(self, x: SharedTensor, y: SharedTensor, saturate: bool = False) -> SharedTensor:
        """Fixed-point product: Beaver multiply then truncate.

        With ``saturate`` the result is clamped to the largest product the
        ring can hold instead of wrapping.
        """
        z = self.truncate(self.mul(x, y))
        if saturate:
            p = self.params
            prod = ring.decode(self._peek(x), p) * ring.decode(self._peek(y), p)
            over = np.abs(prod) >= p.product_bound
            if np.any(over):
                lim = np.asarray(ring.encode(p.product_bound - p.resolution, p), dtype=np.uint64)
                clamp = np.where(prod > 0, lim, (np.uint64(0) - lim) & p.mask)
                z = self._reshare(np.where(over, clamp, self._peek(z)))
        return z

    def mul_public_real(self, x: SharedTensor, c) -> SharedTensor:
        return self.truncate(x.mul_public(self.public(c)))

    def add_public_real(self, x: SharedTensor, c) -> SharedTensor:
        return x.add_public(self.public(c))

    def matmul(self, x: SharedTensor, y: SharedTensor, triple: MatmulTriple | None = None) -> SharedTensor:
        """Beaver matrix product over the last two axes (leading axes batch).

        Metered as n*m*k scalar multiplications' traffic in a single round.
        """
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise ShapeMismatch(f"matmul shapes {x.shape} and {y.shape} not conformable")
        out_shape = np.broadcast_shapes(x.shape[:-2], y.shape[:-2]) + (x.shape[-2], y.shape[-1])
        t = triple or self.dealer.matmul_triple(x.shape, y.shape)
        self._consume(t.id)
        m = self.params.mask
        e_sh, f_sh = x - t.a, y - t.b
        n, k, mm = x.shape[-2], x.shape[-1], y.shape[-1]
        mults = int(np.prod(out_shape[:-2], dtype=np.int64)) * n * mm * k
        with self.meter.op("matmul", units=mults):
            got0, got1 = self.channel.exchange([e_sh.s0, f_sh.s0], [e_sh.s1, f_sh.s1], "matmul", billed=2 * mults)
        e = (e_sh.s0 + got0[0]) & m
        f = (f_sh.s0 + got0[1]) & m
        z0 = (t.c.s0 + np.matmul(e, t.b.s0) + np.matmul(t.a.s0, f) + np.matmul(e, f)) & m
        z1 = (t.c.s1 + np.matmul(e, t.b.s1) + np.matmul(t.a.s1, f)) & m
        return SharedTensor(z0, z1, self)

    def matmul_fixed(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return self.truncate(self.matmul(x, y))

    # comparison
    def drelu(self, x: SharedTensor) -> SharedTensor:
        """Shared bit [x > 0] (integer 0/1 in the ring); idealized, table-priced."""
        bit = (ring.to_signed(self._peek(x), self.params) > 0).astype(np.uint64)
        unit_bytes, rounds = self.compare_price
        total = unit_bytes * x.size
        with self.meter.op("compare", units=x.size):
            self.meter.record("compare", total // 2, total - total // 2, rounds)
        return self._reshare(bit)


# Function-style API mirroring the operation names used in docs and tests.


def share(x, session: Session) -> tuple[Share, Share]:
    return session.share(x).shares()


def reconstruct(s0: Share, s1: Share, session: Session | None = None, params: RingParams | None = None) -> np.ndarray:
    """Sum of the two shares mod 2^l; metered when a session is given."""
    if s0.party == s1.party:
        raise PartyMismatch(f"both shares claim party {s0.party}")
    if session is None:
        params = params or RingParams()
        return (np.asarray(s0.value, dtype=np.uint64) + np.asarray(s1.value, dtype=np.uint64)) & params.mask
    first, second = (s0, s1) if s0.party == 0 else (s1, s0)
    return session.reconstruct(SharedTensor(first.value, second.value, session))


def add_shares(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    return x + y


def sub_shares(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    return x - y


def add_public(x: SharedTensor, c) -> SharedTensor:
    return x.add_public(c)


def mul_public(x: SharedTensor, c) -> SharedTensor:
    return x.mul_public(c)


def mul_shares(x: SharedTensor, y: SharedTensor, triple: BeaverTriple | None, session: Session) -> SharedTensor:
    return session.mul(x, y, triple)


def matmul_shares(x: SharedTensor, y: SharedTensor, session: Session) -> SharedTensor:
    return session.matmul(x, y)


def drelu_oracle(x: SharedTensor, session: Session) -> SharedTensor:
    return session.drelu(x)
