"""Parent/child descriptor schemes over a flat simulated page table.

Three ways to reach a parent (System) descriptor from a child:

* ``DUAL_TAG``: the child word carries the parent slot exponent next to its own tag.
* ``RANGE_CACHE``: a fully-associative range cache in front of a sorted parent list.
* ``PTE``: every page of a parent carries the parent CentroID in its entry.

All backing metadata is maintained on every mapping; the scheme only selects
the lookup path, so the three can be compared on one run.
"""

from __future__ import annotations

import logging
from bisect import bisect_right, insort
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.core.errors import (
    ArgumentError,
    MalformedTagError,
    OutOfSpaceError,
    ParentFullError,
)
from centroid_mem.services.alloc_sim import AllocationRecord, Arena, BinningAllocator
from centroid_mem.services.descriptor_store import (
    Level,
    ObjectDescriptor,
    Permission,
    RangeCacheModel,
)
from centroid_mem.services.dgu import AccessFault, FaultKind
from centroid_mem.services.ptr_codec import (
    EXPONENT_MASK,
    EXPONENT_SHIFT,
    MAX_EXPONENT,
    MIN_EXPONENT,
    MODE_SHIFT,
    PointerMode,
    SlotSpec,
    TaggedWord,
    centroid_pair,
)

DUAL_ADDRESS_BITS = 51
DUAL_ADDRESS_MASK = (1 << DUAL_ADDRESS_BITS) - 1
S_TAG_SHIFT = 51


class ParentScheme(str, Enum):
    DUAL_TAG = "dualtag"
    RANGE_CACHE = "rangecache"
    PTE = "pte"


@dataclass
class PageTableEntry:
    vpn: int
    present: bool = True
    permissions: Permission = Permission.READ | Permission.WRITE
    s_tag: Optional[int] = None


@dataclass(frozen=True)
class DualTagWord:
    """Child word with a parent slot exponent packed under the U-TAG.

    Layout: bit 63 mode, bits 62..57 child exponent, bits 56..51 parent
    exponent, bits 50..0 address.
    """

    u_mode: PointerMode
    u_exponent: int
    s_exponent: int
    address: int

    def __post_init__(self) -> None:
        for exponent in (self.u_exponent, self.s_exponent):
            if not MIN_EXPONENT <= exponent <= MAX_EXPONENT:
                raise ArgumentError(f"slot exponent {exponent} outside [1, 56]")
        if not 0 <= self.address <= DUAL_ADDRESS_MASK:
            raise ArgumentError(
                f"address {self.address:#x} is outside the {DUAL_ADDRESS_BITS}-bit dual-tag window"
            )

    @property
    def raw(self) -> int:
        return (
            (self.u_mode.bit << MODE_SHIFT)
            | (self.u_exponent << EXPONENT_SHIFT)
            | (self.s_exponent << S_TAG_SHIFT)
            | self.address
        )

    @property
    def child(self) -> TaggedWord:
        return TaggedWord(self.u_mode, self.u_exponent, self.address)

    @classmethod
    def decode(cls, word: int) -> DualTagWord:
        u_exponent = (word >> EXPONENT_SHIFT) & EXPONENT_MASK
        s_exponent = (word >> S_TAG_SHIFT) & EXPONENT_MASK
        if not (MIN_EXPONENT <= u_exponent <= MAX_EXPONENT and MIN_EXPONENT <= s_exponent <= MAX_EXPONENT):
            raise MalformedTagError(f"dual-tag word {word:#018x} carries an invalid exponent", word)
        mode = PointerMode.CENTROID if word >> MODE_SHIFT else PointerMode.ALIGNED
        return cls(mode, u_exponent, s_exponent, word & DUAL_ADDRESS_MASK)


@dataclass
class ParentRegion:
    object_id: int
    descriptor: ObjectDescriptor
    word: TaggedWord
    arena: Arena
    children: list[int] = field(default_factory=list)

    @property
    def exponent(self) -> int:
        return self.word.exponent


@dataclass
class SchemeCounters:
    lookups: int = 0
    tag_decodes: int = 0
    range_hits: int = 0
    range_fills: int = 0
    table_walks: int = 0
    page_walks: int = 0
    descriptor_lookups: int = 0
    misses: int = 0


ParentQuery = Union[int, TaggedWord, DualTagWord]


class MultiLevelManager:
    """Maps page-granular parents and resolves children to them."""

    def __init__(
        self,
        allocator: BinningAllocator,
        settings: Settings | None = None,
        range_cache: RangeCacheModel | None = None,
    ):
        self.settings = settings or get_settings()
        self.allocator = allocator
        self.parent_table = allocator.parent_table
        self.page_size = self.settings.page_size
        self.page_shift = (self.page_size - 1).bit_length()
        if 1 << self.page_shift != self.page_size:
            raise ArgumentError(f"page size {self.page_size} is not a power of two")
        self.scheme = ParentScheme(self.settings.parent_scheme or ParentScheme.PTE.value)
        self.range_cache = range_cache or RangeCacheModel(capacity=self.settings.range_cache_capacity)
        self.page_table: dict[int, PageTableEntry] = {}
        self.counters: dict[ParentScheme, SchemeCounters] = {
            scheme: SchemeCounters() for scheme in ParentScheme
        }
        self._window = allocator.add_arena(
            "parents", self.settings.parent_window_base, self.settings.parent_window_size
        )
        self._parents: dict[int, ParentRegion] = {}
        self._sorted_bases: list[int] = []
        self.logger = logging.getLogger("centroid_mem.services.multilevel")

    def map_parent(self, size: int, *, object_id: Optional[int] = None) -> ParentRegion:
        if size <= 0:
            raise ArgumentError("parent size must be positive")
        rounded = -(-size // self.page_size) * self.page_size
        word, record = self.allocator.allocate(
            rounded,
            Level.SYSTEM,
            PointerMode.CENTROID,
            object_id=object_id,
            arena=self._window,
            min_alignment_exponent=self.page_shift,
            container=True,
        )
        descriptor = self.parent_table.peek(record.centroid)
        assert descriptor is not None
        region = ParentRegion(
            object_id=record.object_id,
            descriptor=descriptor,
            word=word,
            arena=self.allocator.add_arena(f"parent@{record.base:#x}", record.base, record.reserved),
        )
        for vpn in range(record.base >> self.page_shift, (record.bound >> self.page_shift) + 1):
            self.page_table[vpn] = PageTableEntry(vpn=vpn, s_tag=descriptor.centroid)
        self._parents[record.base] = region
        insort(self._sorted_bases, record.base)
        self.logger.debug(
            "parent_mapped",
            extra={
                "object_id": record.object_id,
                "base": hex(record.base),
                "bound": hex(record.bound),
                "centroid": hex(descriptor.centroid),
                "pages": rounded >> self.page_shift,
            },
        )
        return region

    def unmap_parent(self, region: ParentRegion) -> None:
        for child_id in region.children:
            if self.allocator.record(child_id).live:
                self.allocator.free(child_id)
        self.allocator.free(region.object_id)
        self.allocator.drop_arena(region.arena.name)
        base, bound = region.descriptor.base, region.descriptor.bound
        for vpn in range(base >> self.page_shift, (bound >> self.page_shift) + 1):
            self.page_table.pop(vpn, None)
        self.range_cache.invalidate(base)
        self._parents.pop(base, None)
        self._sorted_bases.remove(base)
        self.logger.debug("parent_unmapped", extra={"object_id": region.object_id, "base": hex(base)})

    def parents(self) -> list[ParentRegion]:
        return [self._parents[base] for base in self._sorted_bases]

    def region_of(self, addr: int) -> Optional[ParentRegion]:
        index = bisect_right(self._sorted_bases, addr) - 1
        if index < 0:
            return None
        region = self._parents[self._sorted_bases[index]]
        return region if region.descriptor.covers(addr) else None

    def child_alloc(
        self,
        parent: ParentRegion,
        size: int,
        *,
        object_id: Optional[int] = None,
        policy_override: Optional[PointerMode] = None,
        permissions: Permission = Permission.READ | Permission.WRITE,
    ) -> tuple[TaggedWord, AllocationRecord]:
        # parent links are only recorded where the word already exposes them
        parent_centroid = (
            parent.descriptor.centroid if self.scheme is ParentScheme.DUAL_TAG else None
        )
        try:
            word, record = self.allocator.allocate(
                size,
                Level.USER,
                policy_override,
                object_id=object_id,
                arena=parent.arena,
                parent_centroid=parent_centroid,
                permissions=permissions,
            )
        except OutOfSpaceError as exc:
            raise ParentFullError(f"parent {parent.object_id} cannot hold {size} more bytes") from exc
        parent.children.append(record.object_id)
        return word, record

    def dual_tag_word(self, word: TaggedWord, parent: ParentRegion) -> DualTagWord:
        return DualTagWord(word.mode, word.exponent, parent.exponent, word.address)

    def parent_of(
        self,
        query: ParentQuery,
        scheme: Optional[ParentScheme] = None,
    ) -> Union[ObjectDescriptor, AccessFault]:
        scheme = scheme or self.scheme
        counters = self.counters[scheme]
        counters.lookups += 1
        if scheme is ParentScheme.DUAL_TAG:
            result = self._via_dual_tag(query, counters)
        elif scheme is ParentScheme.RANGE_CACHE:
            result = self._via_range_cache(_address_of(query), counters)
        else:
            result = self._via_page_table(_address_of(query), counters)
        if isinstance(result, AccessFault):
            counters.misses += 1
        return result

    def _via_dual_tag(
        self, query: ParentQuery, counters: SchemeCounters
    ) -> Union[ObjectDescriptor, AccessFault]:
        if isinstance(query, DualTagWord):
            dual = query
        elif isinstance(query, int) and query > DUAL_ADDRESS_MASK:
            try:
                dual = DualTagWord.decode(query)
            except MalformedTagError as exc:
                return AccessFault(FaultKind.MALFORMED_TAG, query, None, str(exc))
        else:
            raise ArgumentError("the dual-tag scheme needs a dual-tag word, not a bare address")
        counters.tag_decodes += 1
        _, centroid = centroid_pair(SlotSpec.containing(dual.address, dual.s_exponent))
        return self._lookup_parent(centroid, dual.address, counters)

    def _via_range_cache(
        self, addr: int, counters: SchemeCounters
    ) -> Union[ObjectDescriptor, AccessFault]:
        cached = self.range_cache.lookup(addr)
        if cached.hit and cached.descriptor is not None:
            counters.range_hits += 1
            return cached.descriptor
        counters.table_walks += 1
        region = self.region_of(addr)
        if region is None:
            return _miss(addr, "no parent range holds the address")
        descriptor = self.parent_table.peek(region.descriptor.centroid)
        if descriptor is None or not descriptor.live:
            return _miss(addr, "parent descriptor is no longer live")
        self.range_cache.fill(descriptor)
        counters.range_fills += 1
        return descriptor

    def _via_page_table(
        self, addr: int, counters: SchemeCounters
    ) -> Union[ObjectDescriptor, AccessFault]:
        counters.page_walks += 1
        entry = self.page_table.get(addr >> self.page_shift)
        if entry is None or not entry.present or entry.s_tag is None:
            return _miss(addr, "page is unmapped or carries no S-TAG")
        return self._lookup_parent(entry.s_tag, addr, counters)

    def _lookup_parent(
        self, centroid: int, addr: int, counters: SchemeCounters
    ) -> Union[ObjectDescriptor, AccessFault]:
        counters.descriptor_lookups += 1
        result = self.parent_table.lookup(centroid)
        if not result.found or result.descriptor is None:
            return _miss(addr, f"no live parent descriptor for centroid {centroid:#x}")
        if result.descriptor.level is not Level.SYSTEM or not result.descriptor.covers(addr):
            return _miss(addr, f"centroid {centroid:#x} does not name a parent of the address")
        return result.descriptor


def exposed_system_bits(word: int) -> int:
    """Parent exponent bits readable from a user-visible dual-tag word."""
    return (word >> S_TAG_SHIFT) & EXPONENT_MASK


def _address_of(query: ParentQuery) -> int:
    if isinstance(query, (TaggedWord, DualTagWord)):
        return query.address
    return query


def _miss(addr: int, detail: str) -> AccessFault:
    return AccessFault(FaultKind.DESCRIPTOR_MISS, None, addr, detail)
