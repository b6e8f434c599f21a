from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from centroid_mem.core.errors import ArgumentError, MalformedTagError, ModeError
from centroid_mem.services.ptr_codec import (
    ADDRESS_MASK,
    MAX_EXPONENT,
    LowFatFields,
    PointerMode,
    SlotSpec,
    TaggedWord,
    aligned_bounds,
    aligned_exponent,
    canonical_centroid,
    centroid_pair,
    decode,
    encode,
    exponent_from_centroid,
    in_slot_check,
    lowfat_bounds,
    lowfat_layout,
    min_slot_exponent,
    slot_base,
)

SPACE_BITS = 12
SPACE = 1 << SPACE_BITS

modes = st.sampled_from(list(PointerMode))
exponents = st.integers(min_value=1, max_value=MAX_EXPONENT)
addresses = st.integers(min_value=0, max_value=ADDRESS_MASK)


@pytest.mark.parametrize(
    ("start", "end", "expected"),
    [(0x1234, 0x1260, 7), (0x1000, 0x1000, 1), (0x0000, 0x00FF, 8)],
)
def test_min_slot_exponent_examples(start: int, end: int, expected: int) -> None:
    assert min_slot_exponent(start, end) == expected


def test_min_slot_exponent_rejects_reversed_range() -> None:
    with pytest.raises(ArgumentError):
        min_slot_exponent(0x20, 0x10)


@pytest.mark.parametrize(
    ("addr", "exponent", "expected"),
    [(0x1234, 4, 0x1230), (0x1230, 4, 0x1230), (0x1234, 8, 0x1200)],
)
def test_slot_base_examples(addr: int, exponent: int, expected: int) -> None:
    assert slot_base(addr, exponent) == expected


@pytest.mark.parametrize(
    ("exponent", "addr", "bounds"),
    [
        (4, 0x1234, (0x1230, 0x123F)),
        (1, 0x0001, (0x0000, 0x0001)),
        (12, 0x0040_2FFF, (0x0040_2000, 0x0040_2FFF)),
    ],
)
def test_aligned_bounds_examples(exponent: int, addr: int, bounds: tuple[int, int]) -> None:
    result = aligned_bounds(TaggedWord(PointerMode.ALIGNED, exponent, addr))
    assert (result.base, result.bound) == bounds
    assert result.base <= addr <= result.bound


def test_aligned_bounds_rejects_centroid_word() -> None:
    with pytest.raises(ModeError):
        aligned_bounds(TaggedWord(PointerMode.CENTROID, 4, 0x1234))


@pytest.mark.parametrize(
    ("base", "exponent", "sub", "first", "last", "bounds"),
    [
        (0x1000, 8, 6, 1, 2, (0x1040, 0x10BF)),
        (0x1000, 8, 6, 0, 3, (0x1000, 0x10FF)),
        (0x2000, 7, 5, 2, 2, (0x2040, 0x205F)),
    ],
)
def test_lowfat_bounds_examples(
    base: int, exponent: int, sub: int, first: int, last: int, bounds: tuple[int, int]
) -> None:
    result = lowfat_bounds(SlotSpec(base, exponent), LowFatFields(exponent, sub, first, last))
    assert (result.base, result.bound) == bounds


def test_lowfat_bounds_rejects_inverted_blocks() -> None:
    with pytest.raises(ArgumentError):
        lowfat_bounds(SlotSpec(0x1000, 8), LowFatFields(8, 6, 3, 1))


@pytest.mark.parametrize("exponent", range(1, 20))
def test_lowfat_full_slot_reproduces_aligned_bounds(exponent: int) -> None:
    sub = max(exponent - 5, 0)
    fields = LowFatFields(exponent, sub, 0, (1 << (exponent - sub)) - 1)
    base = 3 << exponent
    lowfat = lowfat_bounds(SlotSpec(base, exponent), fields)
    aligned = aligned_bounds(TaggedWord(PointerMode.ALIGNED, exponent, base))
    assert (lowfat.base, lowfat.bound) == (aligned.base, aligned.bound)


@given(
    size=st.integers(min_value=1, max_value=1 << 24),
    slot_index=st.integers(min_value=0, max_value=1 << 10),
)
def test_lowfat_layout_stays_inside_slot(size: int, slot_index: int) -> None:
    fields = lowfat_layout(size)
    slot = SlotSpec(slot_index << fields.exponent, fields.exponent)
    bounds = lowfat_bounds(slot, fields)
    assert slot.base <= bounds.base <= bounds.bound <= slot.bound
    assert bounds.length >= size
    assert bounds.length - size < fields.block_size


@pytest.mark.parametrize(
    ("base", "exponent", "pair"),
    [(0x100, 4, (0x107, 0x108)), (0x000, 1, (0x000, 0x001)), (0x1200, 7, (0x123F, 0x1240))],
)
def test_centroid_pair_examples(base: int, exponent: int, pair: tuple[int, int]) -> None:
    low, high = centroid_pair(SlotSpec(base, exponent))
    assert (low, high) == pair
    assert high == low + 1
    # equal halves on each side of the split
    assert low - base + 1 == (base + (1 << exponent)) - high


@pytest.mark.parametrize(
    ("start", "end", "expected"),
    [(0x102, 0x10C, 0x108), (0x1200, 0x127F, 0x1240), (0x0000, 0x0001, 0x0001)],
)
def test_canonical_centroid_examples(start: int, end: int, expected: int) -> None:
    centroid = canonical_centroid(start, end)
    assert centroid == expected
    assert start <= centroid <= end


def test_canonical_centroid_rejects_single_byte() -> None:
    with pytest.raises(ArgumentError):
        canonical_centroid(0x10, 0x10)


@pytest.mark.parametrize(
    ("centroid", "which", "expected"),
    [(0x107, "L", 4), (0x108, "H", 4), (0x001, "H", 1)],
)
def test_exponent_from_centroid_examples(centroid: int, which: str, expected: int) -> None:
    assert exponent_from_centroid(centroid, which) == expected  # type: ignore[arg-type]


@pytest.mark.parametrize("exponent", range(1, MAX_EXPONENT + 1))
def test_exponent_recovery_for_every_exponent(exponent: int) -> None:
    slot = SlotSpec(5 << exponent if exponent < 50 else 0, exponent)
    low, high = centroid_pair(slot)
    assert exponent_from_centroid(low, "L") == exponent
    assert exponent_from_centroid(high, "H") == exponent


def test_encode_examples() -> None:
    assert encode(PointerMode.CENTROID, 12, 0x40_2FFF) == 0x9800_0000_0040_2FFF
    assert encode(PointerMode.ALIGNED, 4, 0x1234) == 0x0800_0000_0000_1234


@pytest.mark.parametrize("word", [0x0000_0000_0000_1234, 0x8000_0000_0000_1234, 0x7200_0000_0000_0000])
def test_decode_rejects_out_of_range_exponent(word: int) -> None:
    with pytest.raises(MalformedTagError) as excinfo:
        decode(word)
    assert excinfo.value.word == word


@given(mode=modes, exponent=exponents, address=addresses)
def test_encode_decode_round_trip(mode: PointerMode, exponent: int, address: int) -> None:
    assert decode(encode(mode, exponent, address)) == TaggedWord(mode, exponent, address)


@given(address=addresses, exponent=exponents)
def test_slot_contains_address(address: int, exponent: int) -> None:
    base = slot_base(address, exponent)
    assert base <= address <= base | ((1 << exponent) - 1)
    assert in_slot_check(address, SlotSpec(base, exponent))


@pytest.mark.parametrize(
    ("addr", "expected"),
    [(0x123F, True), (0x1240, False), (0x1230, True), (0x122F, False)],
)
def test_in_slot_check_examples(addr: int, expected: bool) -> None:
    assert in_slot_check(addr, SlotSpec(0x1230, 4)) is expected


@pytest.mark.parametrize("exponent", range(1, SPACE_BITS + 1))
def test_in_slot_check_matches_interval_membership(exponent: int) -> None:
    for base in range(0, SPACE, 1 << exponent):
        slot = SlotSpec(base, exponent)
        for addr in range(max(base - 3, 0), min(base + (1 << exponent) + 3, SPACE)):
            assert in_slot_check(addr, slot) is (slot.base <= addr <= slot.bound)


def _numpy_min_exponent(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    result = np.full(starts.shape, SPACE_BITS + 1, dtype=np.int64)
    for exponent in range(SPACE_BITS, 0, -1):
        result = np.where((starts >> exponent) == (ends >> exponent), exponent, result)
    return result


def test_minimality_and_centroid_containment_exhaustive() -> None:
    for start in range(SPACE - 1):
        ends = np.arange(start + 1, SPACE, dtype=np.int64)
        starts = np.full(ends.shape, start, dtype=np.int64)
        exponents = _numpy_min_exponent(starts, ends)
        assert (exponents <= SPACE_BITS).all()
        below = np.maximum(exponents - 1, 0)
        # no smaller slot holds both ends
        assert ((starts >> below) != (ends >> below))[exponents >= 2].all()
        bases = starts & ~((1 << exponents) - 1)
        low = bases | ((1 << (exponents - 1)) - 1)
        high = bases | (1 << (exponents - 1))
        assert ((starts <= low) & (high <= ends)).all()


def test_library_matches_exhaustive_oracle_on_sampled_pairs() -> None:
    rng = np.random.default_rng(2024)
    a = rng.integers(0, SPACE, size=1_000_000)
    b = rng.integers(0, SPACE, size=1_000_000)
    keep = a != b
    starts = np.minimum(a, b)[keep]
    ends = np.maximum(a, b)[keep]
    expected_exponents = _numpy_min_exponent(starts, ends)
    expected_high = (starts & ~((1 << expected_exponents) - 1)) | (1 << (expected_exponents - 1))
    for start, end, exponent, high in zip(
        starts.tolist(), ends.tolist(), expected_exponents.tolist(), expected_high.tolist()
    ):
        assert min_slot_exponent(start, end) == exponent
        assert canonical_centroid(start, end) == high


def _random_packing(rng: random.Random) -> list[tuple[int, int]]:
    ranges = []
    cursor = rng.randrange(4)
    while True:
        length = rng.randint(2, 96)
        if cursor + length > SPACE:
            return ranges
        ranges.append((cursor, cursor + length - 1))
        cursor += length + rng.randrange(4)


def test_canonical_centroids_unique_across_disjoint_packings() -> None:
    rng = random.Random(7)
    for _ in range(10_000):
        ranges = _random_packing(rng)
        centroids = [canonical_centroid(start, end) for start, end in ranges]
        assert len(set(centroids)) == len(centroids)


@pytest.mark.parametrize(("size", "exponent"), [(1, 1), (2, 1), (3, 2), (9, 4), (1024, 10), (1025, 11)])
def test_aligned_exponent(size: int, exponent: int) -> None:
    assert aligned_exponent(size) == exponent
