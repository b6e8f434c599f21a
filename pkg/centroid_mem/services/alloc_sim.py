from __future__ import annotations

import logging
from bisect import bisect_right, insort
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Optional

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.core.errors import (
    AllocatorError,
    ArgumentError,
    DescriptorStoreError,
    DoubleFreeError,
    OutOfSpaceError,
    UnknownObjectError,
)
from centroid_mem.schemas.size_classes import SizeClassTable
from centroid_mem.services.descriptor_store import (
    DescriptorStore,
    Level,
    ObjectDescriptor,
    Permission,
)
from centroid_mem.services.ptr_codec import (
    LowFatFields,
    PointerMode,
    SlotSpec,
    TaggedWord,
    aligned_exponent,
    canonical_centroid,
    centroid_pair,
    lowfat_bounds,
    lowfat_layout,
    min_slot_exponent,
)


class AllocationState(str, Enum):
    LIVE = "live"
    FREED = "freed"


@dataclass(frozen=True)
class AllocationRecord:
    object_id: int
    requested_size: int
    base: int
    bound: int
    slot: SlotSpec
    mode: PointerMode
    level: Level
    generation: int
    arena: str
    state: AllocationState = AllocationState.LIVE
    lowfat: Optional[LowFatFields] = None
    centroid: Optional[int] = None
    parent_centroid: Optional[int] = None
    container: bool = False

    @property
    def reserved(self) -> int:
        return self.bound - self.base + 1

    @property
    def slack(self) -> int:
        return self.reserved - self.requested_size

    @property
    def encoding(self) -> str:
        if self.lowfat is not None:
            return "lowfat"
        return self.mode.value

    @property
    def live(self) -> bool:
        return self.state is AllocationState.LIVE

    def covers(self, addr: int, size: int = 1) -> bool:
        return self.base <= addr and addr + size - 1 <= self.bound


@dataclass
class Arena:
    name: str
    base: int
    end: int
    cursor: int = -1
    aligned_free: dict[int, list[int]] = field(default_factory=dict)
    centroid_free: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.cursor < 0:
            self.cursor = self.base

    def reserve(self, base: int, length: int) -> None:
        if base < self.cursor or base + length > self.end:
            raise OutOfSpaceError(
                f"arena {self.name} cannot hold {length} bytes at {base:#x} "
                f"(window ends at {self.end:#x})"
            )
        self.cursor = base + length


@dataclass(frozen=True)
class FragmentationSummary:
    objects: int
    total_requested: int
    total_reserved: int
    mean_slack: float
    max_slack: int


def align_up(value: int, alignment: int) -> int:
    return (value + alignment - 1) & ~(alignment - 1)


def place_minimal(cursor: int, length: int, min_alignment_exponent: int = 0) -> int:
    """Lowest base at or above ``cursor`` whose range keeps the minimal slot exponent.

    Alignments are tried from fine to coarse, so padding is only spent when the
    range would otherwise straddle a larger slot.
    """
    target = aligned_exponent(length)
    for shift in range(min(min_alignment_exponent, target), target + 1):
        base = align_up(cursor, 1 << shift)
        if min_slot_exponent(base, base + length - 1) == target:
            return base
    return align_up(cursor, 1 << target)


def fragmentation_report(records: Iterable[AllocationRecord]) -> dict[str, FragmentationSummary]:
    grouped: dict[str, list[AllocationRecord]] = {}
    for record in records:
        grouped.setdefault(record.encoding, []).append(record)
    report: dict[str, FragmentationSummary] = {}
    for encoding in sorted(grouped):
        items = grouped[encoding]
        slacks = [item.slack for item in items]
        report[encoding] = FragmentationSummary(
            objects=len(items),
            total_requested=sum(item.requested_size for item in items),
            total_reserved=sum(item.reserved for item in items),
            mean_slack=sum(slacks) / len(slacks),
            max_slack=max(slacks),
        )
    return report


class BinningAllocator:
    """Simulated binning allocator issuing tagged words over virtual arenas.

    Only bookkeeping exists; no host memory backs the arenas. Container
    (parent) descriptors live in ``parent_table``, a System-level table kept
    apart from ``store``, so a child may carry the same centroid as its parent.
    """

    def __init__(
        self,
        store: DescriptorStore,
        settings: Settings | None = None,
        size_classes: SizeClassTable | None = None,
        parent_table: DescriptorStore | None = None,
    ):
        self.settings = settings or get_settings()
        self.store = store
        self.parent_table = parent_table or DescriptorStore(sets=store.cache.sets, ways=store.cache.ways)
        if size_classes is None and self.settings.size_class_file:
            size_classes = SizeClassTable.from_file(self.settings.size_class_file)
        self.size_classes = size_classes or SizeClassTable.default(self.settings.mode_threshold)
        self.logger = logging.getLogger("centroid_mem.services.alloc")
        self._arenas: dict[str, Arena] = {}
        self._records: dict[int, AllocationRecord] = {}
        self._history: list[AllocationRecord] = []
        self._live_bases: list[int] = []
        self._live_by_base: dict[int, int] = {}
        self._containers: dict[int, int] = {}
        self._slot_generations: dict[tuple[int, int], int] = {}
        self._next_id = 0
        self.add_arena(Level.USER.value, self.settings.user_arena_base, self.settings.arena_size)
        self.add_arena(Level.SYSTEM.value, self.settings.system_arena_base, self.settings.arena_size)

    def add_arena(self, name: str, base: int, size: int) -> Arena:
        if name in self._arenas:
            raise AllocatorError(f"arena {name} already exists")
        arena = Arena(name=name, base=base, end=base + size)
        self._arenas[name] = arena
        return arena

    def arena(self, name: str) -> Arena:
        return self._arenas[name]

    def drop_arena(self, name: str) -> None:
        self._arenas.pop(name, None)

    def select_mode(self, size: int, policy_override: Optional[PointerMode]) -> PointerMode:
        if policy_override is not None:
            return policy_override
        if self.settings.force_mode is not None:
            return PointerMode(self.settings.force_mode)
        if size < self.settings.mode_threshold:
            return PointerMode.ALIGNED
        return PointerMode.CENTROID

    def allocate(
        self,
        size: int,
        level: Level = Level.USER,
        policy_override: Optional[PointerMode] = None,
        *,
        object_id: Optional[int] = None,
        arena: Optional[Arena] = None,
        parent_centroid: Optional[int] = None,
        permissions: Permission = Permission.READ | Permission.WRITE,
        min_alignment_exponent: int = 0,
        container: bool = False,
    ) -> tuple[TaggedWord, AllocationRecord]:
        if size < 1:
            raise ArgumentError("allocation size must be at least one byte")
        object_id = self._claim_id(object_id)
        arena = arena or self._arenas[level.value]
        mode = self.select_mode(size, policy_override)
        table = self.parent_table if container else self.store
        if mode is PointerMode.ALIGNED:
            word, record = self._allocate_aligned(
                size, level, object_id, arena, parent_centroid, permissions, table
            )
        else:
            word, record = self._allocate_centroid(
                size, level, object_id, arena, parent_centroid, permissions, min_alignment_exponent, table
            )
        if container:
            record = replace(record, container=True)
            self._containers[record.base] = object_id
        else:
            self._index(record)
        self._records[object_id] = record
        self._history.append(record)
        self.logger.debug(
            "object_allocated",
            extra={
                "object_id": object_id,
                "size": size,
                "mode": mode.value,
                "exponent": word.exponent,
                "base": hex(record.base),
                "bound": hex(record.bound),
                "arena": arena.name,
            },
        )
        return word, record

    def free(self, object_id: int) -> AllocationRecord:
        record = self._records.get(object_id)
        if record is None:
            raise UnknownObjectError(f"object {object_id} was never allocated")
        if not record.live:
            raise DoubleFreeError(record)
        freed = replace(record, state=AllocationState.FREED)
        self._records[object_id] = freed
        if record.container:
            self._containers.pop(record.base, None)
        else:
            self._unindex(record)
        if record.centroid is not None:
            (self.parent_table if record.container else self.store).revoke(record.centroid)
        if self.settings.reuse:
            arena = self._arenas[record.arena]
            if record.mode is PointerMode.ALIGNED:
                arena.aligned_free.setdefault(record.slot.exponent, []).append(record.slot.base)
            else:
                arena.centroid_free.setdefault(record.slot.exponent, []).append(
                    (record.base, record.reserved)
                )
        self.logger.debug(
            "object_freed",
            extra={"object_id": object_id, "base": hex(record.base), "reuse": self.settings.reuse},
        )
        return freed

    def record(self, object_id: int) -> AllocationRecord:
        record = self._records.get(object_id)
        if record is None:
            raise UnknownObjectError(f"object {object_id} was never allocated")
        return record

    def records(self) -> Iterator[AllocationRecord]:
        return iter(self._records.values())

    def history(self) -> list[AllocationRecord]:
        return list(self._history)

    def live_records(self) -> list[AllocationRecord]:
        return [self._records[self._live_by_base[base]] for base in self._live_bases]

    def find_live(self, addr: int) -> Optional[AllocationRecord]:
        index = bisect_right(self._live_bases, addr) - 1
        if index >= 0:
            record = self._records[self._live_by_base[self._live_bases[index]]]
            if record.base <= addr <= record.bound:
                return record
        for object_id in self._containers.values():
            record = self._records[object_id]
            if record.base <= addr <= record.bound:
                return record
        return None

    def fragmentation_report(self) -> dict[str, FragmentationSummary]:
        return fragmentation_report(self._history)

    def _claim_id(self, object_id: Optional[int]) -> int:
        if object_id is None:
            object_id = self._next_id
        existing = self._records.get(object_id)
        if existing is not None and existing.live:
            raise AllocatorError(f"object id {object_id} is still live")
        self._next_id = max(self._next_id, object_id + 1)
        return object_id

    def _next_generation(self, base: int, exponent: int, reused: bool) -> int:
        return self._slot_generations.get((base, exponent), -1) + 1 if reused else 0

    def _generation(self, base: int, exponent: int, reused: bool) -> int:
        generation = self._next_generation(base, exponent, reused)
        self._slot_generations[(base, exponent)] = generation
        return generation

    def _allocate_aligned(
        self,
        size: int,
        level: Level,
        object_id: int,
        arena: Arena,
        parent_centroid: Optional[int],
        permissions: Permission,
        table: DescriptorStore,
    ) -> tuple[TaggedWord, AllocationRecord]:
        fields: Optional[LowFatFields] = None
        if self.settings.lowfat:
            fields = lowfat_layout(size, self.settings.lowfat_block_exponent)
            exponent = fields.exponent
        else:
            exponent = self.size_classes.exponent_for(size)
        mark = arena.cursor
        free_slots = arena.aligned_free.get(exponent)
        reused = bool(self.settings.reuse and free_slots)
        if reused:
            base = free_slots.pop()
        else:
            base = align_up(arena.cursor, 1 << exponent)
            arena.reserve(base, 1 << exponent)
        slot = SlotSpec(base, exponent)
        bound = slot.bound if fields is None else lowfat_bounds(slot, fields).bound
        centroid: Optional[int] = None
        if self.settings.aligned_liveness:
            _, centroid = centroid_pair(slot)
            try:
                table.insert(
                    ObjectDescriptor(
                        centroid=centroid,
                        base=base,
                        bound=bound,
                        permissions=permissions,
                        level=level,
                        generation=self._next_generation(base, exponent, reused),
                        parent_centroid=parent_centroid,
                    )
                )
            except DescriptorStoreError:
                arena.cursor = mark
                if reused:
                    arena.aligned_free.setdefault(exponent, []).append(base)
                raise
        generation = self._generation(base, exponent, reused)
        record = AllocationRecord(
            object_id=object_id,
            requested_size=size,
            base=base,
            bound=bound,
            slot=slot,
            mode=PointerMode.ALIGNED,
            level=level,
            generation=generation,
            arena=arena.name,
            lowfat=fields,
            centroid=centroid,
            parent_centroid=parent_centroid,
        )
        return TaggedWord(PointerMode.ALIGNED, exponent, base), record

    def _allocate_centroid(
        self,
        size: int,
        level: Level,
        object_id: int,
        arena: Arena,
        parent_centroid: Optional[int],
        permissions: Permission,
        min_alignment_exponent: int,
        table: DescriptorStore,
    ) -> tuple[TaggedWord, AllocationRecord]:
        # single-byte objects are widened so both centroids exist
        length = max(size, 2)
        target = aligned_exponent(length)
        mark = arena.cursor
        reclaimed: Optional[tuple[int, int]] = None
        if self.settings.reuse:
            candidates = arena.centroid_free.get(target, [])
            for index in range(len(candidates) - 1, -1, -1):
                if candidates[index][1] >= length:
                    reclaimed = candidates.pop(index)
                    break
        reused = reclaimed is not None
        if reclaimed is not None:
            base = reclaimed[0]
        else:
            base = place_minimal(arena.cursor, length, min_alignment_exponent)
            arena.reserve(base, length)
        bound = base + length - 1
        exponent = min_slot_exponent(base, bound)
        centroid = canonical_centroid(base, bound)
        slot = SlotSpec.containing(base, exponent)
        try:
            table.insert(
                ObjectDescriptor(
                    centroid=centroid,
                    base=base,
                    bound=bound,
                    permissions=permissions,
                    level=level,
                    generation=self._next_generation(slot.base, exponent, reused),
                    parent_centroid=parent_centroid,
                )
            )
        except DescriptorStoreError:
            arena.cursor = mark
            if reclaimed is not None:
                arena.centroid_free.setdefault(target, []).append(reclaimed)
            raise
        generation = self._generation(slot.base, exponent, reused)
        record = AllocationRecord(
            object_id=object_id,
            requested_size=size,
            base=base,
            bound=bound,
            slot=slot,
            mode=PointerMode.CENTROID,
            level=level,
            generation=generation,
            arena=arena.name,
            centroid=centroid,
            parent_centroid=parent_centroid,
        )
        return TaggedWord(PointerMode.CENTROID, exponent, base), record

    def _index(self, record: AllocationRecord) -> None:
        position = bisect_right(self._live_bases, record.base)
        if position > 0:
            previous = self._records[self._live_by_base[self._live_bases[position - 1]]]
            if previous.bound >= record.base:
                raise AllocatorError(
                    f"object {record.object_id} overlaps live object {previous.object_id}"
                )
        if position < len(self._live_bases) and self._live_bases[position] <= record.bound:
            raise AllocatorError(f"object {record.object_id} overlaps a live object")
        insort(self._live_bases, record.base)
        self._live_by_base[record.base] = record.object_id

    def _unindex(self, record: AllocationRecord) -> None:
        position = bisect_right(self._live_bases, record.base) - 1
        if position >= 0 and self._live_bases[position] == record.base:
            del self._live_bases[position]
        self._live_by_base.pop(record.base, None)
