import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trendfuzz import bitmap as bm
from trendfuzz.bitmap import BitmapAccumulator, CoverageBitmap
from trendfuzz.errors import ConfigError, FormatError, PreconditionError

SMALL = 64


def afl_class(n: int) -> int:
    """Hit-count class written out longhand, independent of the module's table."""
    if n == 0:
        return 0
    if n == 1:
        return 1
    if n == 2:
        return 2
    if n == 3:
        return 4
    if n <= 7:
        return 8
    if n <= 15:
        return 16
    if n <= 31:
        return 32
    if n <= 127:
        return 64
    return 128


def naive_count(b):
    return sum(1 for x in b.entries.tolist() if x != 0)


bitmaps = arrays(np.uint8, SMALL).map(CoverageBitmap)


def test_bucketize_exhaustive():
    raw = np.arange(256, dtype=np.uint8)
    got = bm.bucketize(raw).entries.tolist()
    assert got == [afl_class(n) for n in range(256)]


@pytest.mark.parametrize("raw,expected", [(5, 1 << 3), (0, 0), (200, 1 << 7), (1, 1), (128, 128), (127, 64)])
def test_bucketize_examples(raw, expected):
    assert bm.bucketize(np.array([raw], dtype=np.uint8)).entries[0] == expected


def test_bucketize_saturates_wide_counters():
    assert bm.bucketize(np.array([1000, -3, 7, 0])).entries.tolist() == [128, 0, 8, 0]


def test_bucketize_rejects_size_mismatch():
    with pytest.raises(ConfigError):
        bm.bucketize(np.zeros(10, dtype=np.uint8), map_size=16)


@given(arrays(np.uint8, SMALL))
def test_bucketize_is_entrywise(raw):
    got = bm.bucketize(raw).entries
    for i in range(SMALL):
        assert got[i] == afl_class(int(raw[i]))
    # every output byte holds at most one bit
    assert all(bin(int(x)).count("1") <= 1 for x in got)


def test_union_examples():
    x = CoverageBitmap.from_entries({3: 1, 9: 8}, SMALL)
    empty = CoverageBitmap.empty(SMALL)
    assert bm.union_into(empty, x) == x
    assert bm.union_into(x, x) == x
    a = CoverageBitmap.from_entries({5: 1}, SMALL)
    b = CoverageBitmap.from_entries({5: 8}, SMALL)
    assert bm.union_into(a, b) == CoverageBitmap.from_entries({5: 9}, SMALL)


@given(bitmaps, bitmaps, bitmaps)
def test_union_laws(a, b, c):
    u = bm.union_into
    assert u(a, b) == u(b, a)
    assert u(u(a, b), c) == u(a, u(b, c))
    assert u(a, a) == a
    assert u(a, CoverageBitmap.empty(SMALL)) == a
    assert bm.count(u(a, b)) <= bm.count(a) + bm.count(b)


def test_intersect_examples():
    x = CoverageBitmap.from_entries({1: 3, 2: 4}, SMALL)
    assert bm.intersect_all([x]) == x
    assert bm.intersect_all([x, CoverageBitmap.empty(SMALL)]) == CoverageBitmap.empty(SMALL)
    with pytest.raises(PreconditionError):
        bm.intersect_all([])


@given(st.lists(bitmaps, min_size=1, max_size=5))
def test_intersect_matches_bytewise_and(bs):
    got = bm.intersect_all(bs).entries.tolist()
    for i in range(SMALL):
        v = 255
        for b in bs:
            v &= int(b.entries[i])
        assert got[i] == v


def test_subtract_examples():
    x = CoverageBitmap.from_entries({4: 1 | 8}, SMALL)
    empty = CoverageBitmap.empty(SMALL)
    assert bm.subtract(x, empty) == x
    assert bm.subtract(x, x) == empty
    assert bm.subtract(x, CoverageBitmap.from_entries({4: 1}, SMALL)) == CoverageBitmap.from_entries({4: 8}, SMALL)
    # entry mode drops the whole entry
    assert bm.subtract(x, CoverageBitmap.from_entries({4: 1}, SMALL), mode="entries") == empty


@given(st.lists(bitmaps, min_size=1, max_size=5), st.sampled_from(["bits", "entries"]))
def test_subtract_common_leaves_no_agreed_bit(bs, mode):
    common = bm.intersect_all(bs)
    for b in bs:
        rest = bm.subtract(b, common, mode)
        assert not (rest.entries & common.entries).any()
        assert bm.count(rest) <= bm.count(b)


def test_count_and_density_examples():
    empty = CoverageBitmap.empty()
    assert bm.count(empty) == 0
    assert bm.density(empty) == 0.0
    assert bm.count(CoverageBitmap.from_entries({7: 2})) == 1
    full = CoverageBitmap(np.full(bm.DEFAULT_MAP_SIZE, 1, dtype=np.uint8))
    assert bm.density(full) == 1.0
    some = CoverageBitmap.from_entries({i: 1 for i in range(655)})
    assert bm.density(some) == pytest.approx(655 / 65536)
    assert bm.density(some) == pytest.approx(0.00999, abs=1e-5)


@given(bitmaps)
def test_count_matches_naive_loop(b):
    assert bm.count(b) == naive_count(b)
    assert bm.count(b, "bits") == sum(bin(x).count("1") for x in b.entries.tolist())
    with pytest.raises(ConfigError):
        bm.count(b, "words")


def test_serialize_roundtrip_and_length_check(tmp_path):
    empty = CoverageBitmap.empty()
    assert bm.serialize(empty) == bytes(65536)
    rng = np.random.default_rng(0)
    b = CoverageBitmap(rng.integers(0, 256, 65536, dtype=np.uint8))
    assert bm.deserialize(bm.serialize(b)) == b
    bm.save(b, tmp_path / "x.bitmap")
    assert bm.load(tmp_path / "x.bitmap") == b
    with pytest.raises(FormatError):
        bm.deserialize(bytes(65535))


def test_map_size_must_be_power_of_two():
    assert bm.check_map_size(256) == 256
    for bad in (0, -4, 100):
        with pytest.raises(ConfigError):
            bm.check_map_size(bad)


def test_mismatched_sizes_rejected():
    with pytest.raises(ConfigError):
        bm.union_into(CoverageBitmap.empty(64), CoverageBitmap.empty(128))


def test_bitmap_is_immutable():
    b = CoverageBitmap.empty(SMALL)
    with pytest.raises(ValueError):
        b.entries[0] = 1


@settings(max_examples=50)
@given(st.lists(bitmaps, max_size=6))
def test_accumulator_is_union_and_monotone(bs):
    acc = BitmapAccumulator(SMALL)
    expected = CoverageBitmap.empty(SMALL)
    last = 0
    for b in bs:
        before = bm.count(acc.snapshot())
        new = acc.add(b)
        expected = bm.union_into(expected, b)
        assert acc.snapshot() == expected
        assert bm.count(acc.snapshot()) == before + new >= last
        last = bm.count(acc.snapshot())
