from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Callable

import pytest
from pydantic import ValidationError

from centroid_mem.core.config import Settings
from centroid_mem.core.errors import (
    AllocatorError,
    ArgumentError,
    DoubleFreeError,
    DuplicateDescriptorError,
    OutOfSpaceError,
    UnknownObjectError,
)
from centroid_mem.schemas.size_classes import SizeClassTable
from centroid_mem.services.alloc_sim import (
    AllocationState,
    BinningAllocator,
    place_minimal,
)
from centroid_mem.services.descriptor_store import (
    DescriptorStore,
    Level,
    LookupOutcome,
    ObjectDescriptor,
)
from centroid_mem.services.ptr_codec import (
    PointerMode,
    aligned_exponent,
    canonical_centroid,
    lowfat_layout,
    min_slot_exponent,
)


def test_small_object_gets_minimal_aligned_slot(allocator: BinningAllocator) -> None:
    word, record = allocator.allocate(9)
    assert word.mode is PointerMode.ALIGNED
    assert word.exponent == 4
    assert record.base % 16 == 0
    assert (record.base, record.bound) == (record.slot.base, record.slot.bound)
    assert record.slack == 7
    assert record.level is Level.USER


def test_single_byte_aligned_object_uses_two_byte_slot(allocator: BinningAllocator) -> None:
    word, record = allocator.allocate(1)
    assert word.exponent == 1
    assert record.reserved == 2


def test_large_object_gets_centroid_word_and_descriptor(
    allocator: BinningAllocator, store: DescriptorStore
) -> None:
    word, record = allocator.allocate(1500)
    assert word.mode is PointerMode.CENTROID
    assert word.address == record.base
    assert record.bound == record.base + 1499
    assert word.exponent == min_slot_exponent(record.base, record.bound) == aligned_exponent(1500)
    assert record.centroid == canonical_centroid(record.base, record.bound)
    stored = store.peek(record.centroid)
    assert stored is not None and (stored.base, stored.bound) == (record.base, record.bound)


def test_mode_threshold_boundary(allocator: BinningAllocator) -> None:
    assert allocator.allocate(1023)[0].mode is PointerMode.ALIGNED
    assert allocator.allocate(1024)[0].mode is PointerMode.CENTROID


def test_policy_override_and_forced_mode(make_settings: Callable[..., Settings]) -> None:
    allocator = BinningAllocator(DescriptorStore(), make_settings(force_mode="centroid"))
    assert allocator.allocate(8)[0].mode is PointerMode.CENTROID
    assert allocator.allocate(8, policy_override=PointerMode.ALIGNED)[0].mode is PointerMode.ALIGNED


def test_single_byte_centroid_object_is_widened(allocator: BinningAllocator) -> None:
    word, record = allocator.allocate(1, policy_override=PointerMode.CENTROID)
    assert record.reserved == 2
    assert record.requested_size == 1
    assert record.centroid == canonical_centroid(record.base, record.base + 1)


def test_zero_size_rejected(allocator: BinningAllocator) -> None:
    with pytest.raises(ArgumentError):
        allocator.allocate(0)


@pytest.mark.parametrize("length", [2, 3, 5, 100, 1000, 1500, 4097, 70_000])
@pytest.mark.parametrize("cursor", [0, 1, 0x7F3, 0x1_0000_0400])
def test_place_minimal_keeps_minimal_exponent(cursor: int, length: int) -> None:
    base = place_minimal(cursor, length)
    assert base >= cursor
    assert min_slot_exponent(base, base + length - 1) == aligned_exponent(length)


def test_place_minimal_honours_alignment_floor() -> None:
    assert place_minimal(0x1001, 4096, min_alignment_exponent=12) == 0x2000


def test_free_revokes_and_double_free_raises(
    allocator: BinningAllocator, store: DescriptorStore
) -> None:
    _, record = allocator.allocate(2048)
    freed = allocator.free(record.object_id)
    assert freed.state is AllocationState.FREED
    assert store.lookup(record.centroid).outcome is LookupOutcome.REVOKED
    with pytest.raises(DoubleFreeError) as excinfo:
        allocator.free(record.object_id)
    assert excinfo.value.record.object_id == record.object_id


def test_free_unknown_object(allocator: BinningAllocator) -> None:
    with pytest.raises(UnknownObjectError):
        allocator.free(404)


def test_live_object_id_cannot_be_reclaimed(allocator: BinningAllocator) -> None:
    allocator.allocate(8, object_id=3)
    with pytest.raises(AllocatorError):
        allocator.allocate(8, object_id=3)
    allocator.free(3)
    _, record = allocator.allocate(8, object_id=3)
    assert record.live


def test_fresh_policy_never_reissues_an_address_range(allocator: BinningAllocator) -> None:
    rng = random.Random(3)
    live: list[int] = []
    for _ in range(2000):
        if live and rng.random() < 0.45:
            allocator.free(live.pop(rng.randrange(len(live))))
        else:
            size = rng.choice([1, 7, 16, 100, 900, 1024, 3000, 70_000])
            live.append(allocator.allocate(size)[1].object_id)
    spans = sorted((record.base, record.bound) for record in allocator.history())
    for (_, previous_bound), (next_base, _) in zip(spans, spans[1:]):
        assert previous_bound < next_base


def test_live_records_are_pairwise_disjoint(allocator: BinningAllocator) -> None:
    for size in (3, 1024, 17, 5000, 2, 64, 1):
        allocator.allocate(size)
    records = allocator.live_records()
    for left, right in zip(records, records[1:]):
        assert left.bound < right.base


def test_reuse_hands_back_freed_aligned_slot(make_settings: Callable[..., Settings]) -> None:
    allocator = BinningAllocator(DescriptorStore(), make_settings(reuse=True))
    _, first = allocator.allocate(24)
    allocator.free(first.object_id)
    _, second = allocator.allocate(20)
    assert second.base == first.base
    assert second.generation == first.generation + 1


def test_reuse_hands_back_freed_centroid_range(make_settings: Callable[..., Settings]) -> None:
    store = DescriptorStore()
    allocator = BinningAllocator(store, make_settings(reuse=True))
    _, first = allocator.allocate(2000)
    allocator.free(first.object_id)
    _, second = allocator.allocate(1900)
    assert second.base == first.base
    assert store.lookup(second.centroid).found


def test_failed_descriptor_insert_releases_the_range(
    store: DescriptorStore, allocator: BinningAllocator
) -> None:
    arena = allocator.arena(Level.USER.value)
    start = arena.cursor
    base = place_minimal(start, 3000)
    centroid = canonical_centroid(base, base + 2999)
    store.insert(ObjectDescriptor(centroid=centroid, base=base, bound=base + 2999))
    with pytest.raises(DuplicateDescriptorError):
        allocator.allocate(3000)
    assert arena.cursor == start
    assert allocator.find_live(base) is None

    store.revoke(centroid)
    _, record = allocator.allocate(3000)
    assert record.base == base
    assert record.generation == 0


def test_find_live_uses_interval_index(allocator: BinningAllocator) -> None:
    _, small = allocator.allocate(5)
    _, large = allocator.allocate(3000)
    assert allocator.find_live(small.base + 7) == small
    assert allocator.find_live(large.bound) == large
    assert allocator.find_live(large.bound + 1) is None
    allocator.free(large.object_id)
    assert allocator.find_live(large.base) is None


def test_out_of_space(make_settings: Callable[..., Settings]) -> None:
    allocator = BinningAllocator(DescriptorStore(), make_settings(arena_size=64))
    allocator.allocate(32)
    allocator.allocate(32)
    with pytest.raises(OutOfSpaceError):
        allocator.allocate(1)


@pytest.mark.parametrize("exponent", range(2, 17))
def test_aligned_worst_case_slack(make_settings: Callable[..., Settings], exponent: int) -> None:
    allocator = BinningAllocator(DescriptorStore(), make_settings(force_mode="aligned"))
    _, record = allocator.allocate((1 << (exponent - 1)) + 1)
    assert record.slot.exponent == exponent
    assert record.slack == (1 << (exponent - 1)) - 1


@pytest.mark.parametrize("exponent", range(2, 17))
def test_lowfat_worst_case_slack(make_settings: Callable[..., Settings], exponent: int) -> None:
    sub = max(exponent - 5, 0)
    sizes = range((1 << (exponent - 1)) + 1, (1 << exponent) + 1)
    slacks = {
        size: ((lowfat_layout(size).last_block + 1) << lowfat_layout(size).sub_exponent) - size
        for size in sizes
    }
    worst = (1 << sub) - 1
    assert max(slacks.values()) == worst
    assert slacks[(1 << (exponent - 1)) + 1] == worst

    allocator = BinningAllocator(DescriptorStore(), make_settings(force_mode="aligned", lowfat=True))
    _, record = allocator.allocate((1 << (exponent - 1)) + 1)
    assert record.encoding == "lowfat"
    assert record.slack == worst
    assert record.slack <= (1 << (exponent - 1)) - 1


def test_fragmentation_report_groups_by_encoding(allocator: BinningAllocator) -> None:
    allocator.allocate(9)
    allocator.allocate(16)
    allocator.allocate(1500)
    report = allocator.fragmentation_report()
    assert list(report) == ["aligned", "centroid"]
    assert report["aligned"].objects == 2
    assert report["aligned"].total_requested == 25
    assert report["aligned"].total_reserved == 32
    assert report["aligned"].max_slack == 7
    assert report["aligned"].mean_slack == 3.5
    assert report["centroid"].max_slack == 0


def test_aligned_liveness_registers_slot_descriptor(
    make_settings: Callable[..., Settings],
) -> None:
    store = DescriptorStore()
    allocator = BinningAllocator(store, make_settings(aligned_liveness=True))
    _, record = allocator.allocate(12)
    assert record.centroid == record.slot.base | 8
    allocator.free(record.object_id)
    assert store.lookup(record.centroid).outcome is LookupOutcome.REVOKED


def test_size_class_table_from_file(tmp_path: Path, make_settings: Callable[..., Settings]) -> None:
    path = tmp_path / "classes.json"
    path.write_text(
        json.dumps({"classes": [{"max_size": 24, "exponent": 5}, {"max_size": 64, "exponent": 6}]})
    )
    allocator = BinningAllocator(DescriptorStore(), make_settings(size_class_file=str(path)))
    assert allocator.allocate(3)[0].exponent == 5
    assert allocator.allocate(40)[0].exponent == 6
    assert allocator.allocate(100)[0].exponent == 7


@pytest.mark.parametrize(
    "classes",
    [
        [{"max_size": 40, "exponent": 5}],
        [{"max_size": 16, "exponent": 4}, {"max_size": 16, "exponent": 5}],
        [],
    ],
)
def test_size_class_table_validation(classes: list[dict[str, int]]) -> None:
    with pytest.raises(ValidationError):
        SizeClassTable.model_validate({"classes": classes})


def test_default_size_classes_cover_powers_of_two() -> None:
    table = SizeClassTable.default()
    assert [item.max_size for item in table.classes] == [1 << n for n in range(1, 11)]
