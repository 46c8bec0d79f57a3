import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetvit.errors import RangeOverflow
from hetvit.ring import RingParams, decode, encode, ring_add, ring_mul, ring_sub, to_signed, truncate

P32 = RingParams(32, 12)
P64 = RingParams()


def test_encode_examples():
    assert int(encode(1.0, P32)) == 4096
    assert int(encode(-1.0, P32)) == 2 ** 32 - 4096
    assert int(encode(0.0, P32)) == 0
    assert int(encode(0.0, P64)) == 0


def test_encode_rounds_half_away_from_zero():
    half = 0.5 / 4096
    assert int(encode(half, P32)) == 1
    assert int(encode(-half, P32)) == 2 ** 32 - 1


def test_decode_examples():
    assert decode(np.uint64(4096), P32) == 1.0
    assert decode(np.uint64(2 ** 32 - 4096), P32) == -1.0
    assert abs(decode(encode(0.333, P32), P32) - 0.333) <= 2 ** -13


def test_encode_range():
    with pytest.raises(RangeOverflow):
        encode(2.0 ** 19, P32)
    with pytest.raises(RangeOverflow):
        encode(np.array([0.0, -(2.0 ** 19) - 1]), P32)
    with pytest.raises(RangeOverflow):
        encode(-(2.0 ** 19), P32)  # precondition is |x| < 2^(l-f-1)
    assert decode(encode(2.0 ** 19 - 1, P32), P32) == 2.0 ** 19 - 1


def test_ring_ops_examples():
    assert int(ring_add(np.uint64(2 ** 32 - 1), np.uint64(1), P32)) == 0
    assert int(ring_mul(np.uint64(3), np.uint64(5), P32)) == 15
    assert int(ring_mul(np.uint64(2 ** 31), np.uint64(2), P32)) == 0


def test_truncate_examples():
    assert int(truncate(np.uint64(2 ** 24), P32)) == 4096
    assert int(truncate(np.uint64(0), P32)) == 0
    prod = ring_mul(encode(0.5, P32), encode(0.5, P32), P32)
    assert int(truncate(prod, P32)) == 1024


def test_params_validation():
    for l, f in ((64, 0), (32, 32), (65, 10)):
        with pytest.raises(ValueError):
            RingParams(l, f)


reals = st.floats(-1000, 1000, allow_nan=False)
elems = st.integers(0, 2 ** 64 - 1)


@given(reals)
def test_roundtrip_bound(x):
    for p in (P32, P64):
        assert abs(decode(encode(x, p), p) - x) <= 2.0 ** (-p.f - 1)


@given(elems, elems, elems)
def test_ring_laws(a, b, c):
    a, b, c = (np.uint64(v) for v in (a, b, c))
    assert ring_add(a, b) == ring_add(b, a)
    assert ring_mul(a, b) == ring_mul(b, a)
    assert ring_add(ring_add(a, b), c) == ring_add(a, ring_add(b, c))
    assert ring_mul(ring_mul(a, b), c) == ring_mul(a, ring_mul(b, c))
    assert ring_sub(ring_add(a, b), b) == a


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1))
def test_ring_ops_match_python_ints(a, b):
    assert int(ring_add(np.uint64(a), np.uint64(b), P32)) == (a + b) % 2 ** 32
    assert int(ring_mul(np.uint64(a), np.uint64(b), P32)) == (a * b) % 2 ** 32


@given(st.floats(-300, 300), st.floats(-300, 300))
def test_truncated_product(x, y):
    p = P64
    got = decode(truncate(ring_mul(encode(x, p), encode(y, p), p), p), p)
    # encoding error of each factor plus the truncation step
    tol = 2.0 ** (-p.f + 1) + (abs(x) + abs(y)) * 2.0 ** (-p.f - 1)
    assert abs(got - x * y) <= tol


def test_signed_view():
    assert int(to_signed(np.uint64(2 ** 32 - 1), P32)) == -1
    assert int(to_signed(np.uint64(2 ** 64 - 5), P64)) == -5
