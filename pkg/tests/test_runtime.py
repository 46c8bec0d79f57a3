import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetvit.errors import PartyMismatch, ShapeMismatch, TripleReuse
from hetvit.ring import RingParams, decode, encode, from_signed
from hetvit.runtime import (CommMeter, Session, Share, add_public, add_shares, drelu_oracle, matmul_shares,
                            mul_public, mul_shares, reconstruct, share, sub_shares)

P = RingParams()
EB = P.elem_bytes


def _sess(seed=0):
    return Session(P, seed=seed)


def test_share_reconstruct_examples():
    s = _sess()
    assert int(reconstruct(*share(0, s))) == 0
    assert int(reconstruct(*share(42, s))) == 42
    x = encode(1.5, P)
    assert int(reconstruct(*share(x, s))) == int(x)
    assert int(reconstruct(Share(0, np.uint64(0)), Share(1, np.uint64(0)))) == 0


def test_share_is_deterministic_per_seed():
    a0, a1 = share(encode(1.5, P), _sess(7))
    b0, b1 = share(encode(1.5, P), _sess(7))
    assert int(a0.value) == int(b0.value) and int(a1.value) == int(b1.value)
    c0, _ = share(encode(1.5, P), _sess(8))
    assert int(c0.value) != int(a0.value)


def test_share_meters_one_element():
    s = _sess()
    s.share(np.arange(5))
    assert s.meter.bytes_sent == [5 * EB, 0]
    assert s.meter.rounds == 1


def test_party_mismatch():
    s0, s1 = share(3, _sess())
    with pytest.raises(PartyMismatch):
        reconstruct(s0, Share(s0.party, s1.value))


def test_many_roundtrips_exact():
    rng = np.random.default_rng(0)
    x = rng.integers(0, np.iinfo(np.uint64).max, size=10_000, endpoint=True, dtype=np.uint64)
    s = _sess()
    np.testing.assert_array_equal(s.reconstruct(s.share(x)), x)


def test_reconstruct_meters_one_element_per_party():
    s = _sess()
    x = s.share(np.arange(3), offline=True)
    s.reconstruct(x)
    assert s.meter.bytes_sent == [3 * EB, 3 * EB]
    assert s.meter.rounds == 1


def test_local_ops():
    s = _sess()
    x, y = s.share(3, offline=True), s.share(5, offline=True)
    assert int(s.reconstruct(add_shares(x, y))) == 8
    assert int(s.reconstruct(sub_shares(y, x))) == 2
    assert int(s.reconstruct(add_public(x, np.uint64(4)))) == 7
    h = s.truncate(mul_public(s.share(encode(2.0, P), offline=True), encode(0.5, P)))
    assert int(s.reconstruct(h)) == int(encode(1.0, P))


def test_additions_are_free():
    s = _sess()
    x = s.share(1, offline=True)
    before = s.meter.snapshot()
    acc = x
    for _ in range(1000):
        acc = add_shares(acc, x)
    acc = mul_public(add_public(acc, np.uint64(1)), np.uint64(3))
    assert s.meter.snapshot() == before
    assert int(s.reconstruct(acc)) == 3 * 1002


def test_beaver_mul():
    s = _sess()
    x, y = s.share(3, offline=True), s.share(5, offline=True)
    t = s.dealer.triple(())
    before = s.meter.snapshot()
    z = mul_shares(x, y, t, s)
    b0, b1, r = s.meter.snapshot()
    assert (b0 - before[0], b1 - before[1], r - before[2]) == (2 * EB, 2 * EB, 1)
    assert int(s.reconstruct(z)) == 15
    with pytest.raises(TripleReuse):
        mul_shares(x, y, t, s)


def test_triple_invariant():
    s = _sess()
    t = s.dealer.triple((16,))
    a, b, c = (s._peek(v) for v in (t.a, t.b, t.c))
    np.testing.assert_array_equal((a * b) & P.mask, c)


def test_fixed_point_mul():
    s = _sess()
    z = s.mul_fixed(s.share_real(1.5, offline=True), s.share_real(2.0, offline=True))
    assert abs(s.reveal_real(z) - 3.0) <= 2.0 ** (-P.f + 1)


def test_matmul_identity_exact(rng):
    s = _sess()
    X = rng.integers(0, 2 ** 40, size=(4, 4), dtype=np.uint64)
    I = np.eye(4, dtype=np.uint64)
    z = matmul_shares(s.share(I, offline=True), s.share(X, offline=True), s)
    np.testing.assert_array_equal(s.reconstruct(z), X)


def test_matmul_fixed_against_plaintext(rng):
    s = _sess()
    A, B = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    # oracle: products of the encoded operands, exact in float for these magnitudes
    oracle = decode(encode(A, P), P) @ decode(encode(B, P), P)
    before = s.meter.snapshot()
    z = s.matmul_fixed(s.share_real(A, offline=True), s.share_real(B, offline=True))
    b0, _, r = s.meter.snapshot()
    assert np.max(np.abs(s.reveal_real(z) - oracle)) <= 8 * 2.0 ** (-P.f + 1)
    assert b0 - before[0] == 64 * 8 * 2 * EB
    assert r - before[2] == 1


def test_matmul_shape_mismatch():
    s = _sess()
    with pytest.raises(ShapeMismatch):
        s.matmul(s.share(np.zeros((2, 3), np.uint64), offline=True), s.share(np.zeros((2, 3), np.uint64), offline=True))
    with pytest.raises(ShapeMismatch):
        s.mul(s.share(np.zeros(2, np.uint64), offline=True), s.share(np.zeros(3, np.uint64), offline=True))


def test_drelu_examples_and_metering():
    s = _sess()
    x = s.share_real(np.array([2.0, -1.0, 0.0]), offline=True)
    bit = drelu_oracle(x, s)
    np.testing.assert_array_equal(s.reconstruct(bit), [1, 0, 0])
    st_ = s.meter.op_breakdown["compare"]
    unit, rounds = s.compare_price
    assert st_.bytes == 3 * unit and st_.rounds == rounds


def test_meter_conservation_and_replay():
    def run(seed):
        s = _sess(seed)
        x = s.share_real(np.linspace(-2, 2, 6))
        y = s.share_real(np.ones(6))
        z = s.mul_fixed(x, y)
        s.drelu(z)
        s.matmul(x.reshape(2, 3), y.reshape(3, 2))
        s.reconstruct(z)
        return s.meter, z
    m1, z1 = run(3)
    m2, z2 = run(3)
    assert m1.total_bytes == sum(v.bytes for v in m1.op_breakdown.values())
    assert m1.rounds == sum(v.rounds for v in m1.op_breakdown.values())
    assert m1.rows() == m2.rows()
    np.testing.assert_array_equal(z1.s0, z2.s0)


def test_meter_merge():
    a, b = _sess(0), _sess(1)
    a.share(np.arange(4))
    b.share(np.arange(2))
    m = CommMeter()
    m.merge(a.meter)
    m.merge(b.meter)
    assert m.total_bytes == a.meter.total_bytes + b.meter.total_bytes
    assert m.op_breakdown["share"].bytes == 6 * EB


def test_nested_scopes_bill_outermost():
    s = _sess()
    x = s.share_real(np.ones(3), offline=True)
    with s.meter.op("reciprocal"):
        s.mul(x, x)
        s.drelu(x)
    assert set(s.meter.op_breakdown) == {"reciprocal"}


@given(st.lists(st.integers(-2 ** 40, 2 ** 40), min_size=1, max_size=8),
       st.lists(st.integers(-2 ** 40, 2 ** 40), min_size=1, max_size=8))
def test_circuit_matches_plaintext(xs, ys):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    s = _sess()
    a, b = s.share(from_signed(np.array(xs), P), offline=True), s.share(from_signed(np.array(ys), P), offline=True)
    out = sub_shares(add_shares(s.mul(a, b), mul_public(a, np.uint64(3))), b)
    expect = [(x * y + 3 * x - y) % 2 ** 64 for x, y in zip(xs, ys)]
    assert [int(v) for v in s.reconstruct(out)] == expect
