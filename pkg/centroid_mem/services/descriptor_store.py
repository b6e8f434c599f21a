from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum, Flag
from typing import Iterator, Optional

from centroid_mem.core.errors import (
    DuplicateDescriptorError,
    RangeOverlapError,
    UnknownDescriptorError,
)
from centroid_mem.services.ptr_codec import exponent_from_centroid


class Permission(Flag):
    NONE = 0
    READ = 1
    WRITE = 2
    EXECUTE = 4

    @classmethod
    def parse(cls, label: str) -> Permission:
        if len(label) != 3 or any(char not in f"{allowed}-" for char, allowed in zip(label, "rwx")):
            raise ValueError(f"permission label {label!r} is not of the form 'rwx'")
        result = cls.NONE
        for char, flag in zip(label, (cls.READ, cls.WRITE, cls.EXECUTE)):
            if char != "-":
                result |= flag
        return result

    def label(self) -> str:
        return "".join(
            char if flag in self else "-"
            for char, flag in (("r", Permission.READ), ("w", Permission.WRITE), ("x", Permission.EXECUTE))
        )


class Level(str, Enum):
    USER = "user"
    SYSTEM = "system"


class DescriptorState(str, Enum):
    LIVE = "live"
    REVOKED = "revoked"


@dataclass(frozen=True)
class ObjectDescriptor:
    centroid: int
    base: int
    bound: int
    permissions: Permission = Permission.READ | Permission.WRITE
    level: Level = Level.USER
    state: DescriptorState = DescriptorState.LIVE
    generation: int = 0
    parent_centroid: Optional[int] = None
    semantic_tag: Optional[int] = None

    @property
    def live(self) -> bool:
        return self.state is DescriptorState.LIVE

    @property
    def length(self) -> int:
        return self.bound - self.base + 1

    def covers(self, addr: int, size: int = 1) -> bool:
        return self.base <= addr and addr + size - 1 <= self.bound


class LookupOutcome(str, Enum):
    HIT = "hit"
    MISS_THEN_FILL = "miss_then_fill"
    NOT_FOUND = "not_found"
    REVOKED = "revoked"


@dataclass(frozen=True)
class LookupResult:
    outcome: LookupOutcome
    descriptor: Optional[ObjectDescriptor] = None

    @property
    def found(self) -> bool:
        return self.outcome in (LookupOutcome.HIT, LookupOutcome.MISS_THEN_FILL)


@dataclass
class CacheCounters:
    hits: int = 0
    misses: int = 0
    evictions: int = 0

    @property
    def accesses(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> Optional[float]:
        if not self.accesses:
            return None
        return self.hits / self.accesses


class DescriptorCacheModel:
    """Set-associative LRU cache tagged by CentroID.

    The set index is taken from the centroid bits above its trailing ``1 0...0``
    pattern, i.e. the slot's CID prefix.
    """

    def __init__(self, sets: int = 64, ways: int = 4):
        if sets < 1 or ways < 1:
            raise ValueError("descriptor cache needs at least one set and one way")
        self.sets = sets
        self.ways = ways
        self._lines: list[OrderedDict[int, ObjectDescriptor]] = [OrderedDict() for _ in range(sets)]
        self.counters = CacheCounters()

    def set_index(self, centroid: int) -> int:
        exponent = exponent_from_centroid(centroid, "H")
        return (centroid >> exponent) % self.sets

    def get(self, centroid: int) -> Optional[ObjectDescriptor]:
        line = self._lines[self.set_index(centroid)]
        descriptor = line.get(centroid)
        if descriptor is None:
            self.counters.misses += 1
            return None
        line.move_to_end(centroid)
        self.counters.hits += 1
        return descriptor

    def fill(self, descriptor: ObjectDescriptor) -> Optional[int]:
        line = self._lines[self.set_index(descriptor.centroid)]
        evicted: Optional[int] = None
        if descriptor.centroid not in line and len(line) >= self.ways:
            evicted, _ = line.popitem(last=False)
            self.counters.evictions += 1
        line[descriptor.centroid] = descriptor
        line.move_to_end(descriptor.centroid)
        return evicted

    def invalidate(self, centroid: int) -> bool:
        return self._lines[self.set_index(centroid)].pop(centroid, None) is not None

    def entries(self) -> Iterator[ObjectDescriptor]:
        for line in self._lines:
            yield from line.values()

    def __len__(self) -> int:
        return sum(len(line) for line in self._lines)


@dataclass
class LookupCounters:
    hit: int = 0
    miss_then_fill: int = 0
    not_found: int = 0
    revoked: int = 0

    @property
    def total(self) -> int:
        return self.hit + self.miss_then_fill + self.not_found + self.revoked

    def record(self, outcome: LookupOutcome) -> None:
        name = outcome.value
        setattr(self, name, getattr(self, name) + 1)


class DescriptorStore:
    """Memory-resident descriptor table keyed by CentroID with a cache in front.

    Mutations are serialized by the caller; lookups only touch cache state.
    """

    def __init__(self, sets: int = 64, ways: int = 4):
        self._table: dict[int, ObjectDescriptor] = {}
        self.cache = DescriptorCacheModel(sets=sets, ways=ways)
        self.lookups = LookupCounters()
        self.logger = logging.getLogger("centroid_mem.services.descriptor_store")

    def insert(self, descriptor: ObjectDescriptor) -> None:
        current = self._table.get(descriptor.centroid)
        if current is not None and current.live:
            raise DuplicateDescriptorError(
                f"live descriptor already registered for centroid {descriptor.centroid:#x}"
            )
        if current is not None:
            self.logger.debug(
                "descriptor_tombstone_replaced",
                extra={"centroid": hex(descriptor.centroid), "generation": current.generation},
            )
        self._table[descriptor.centroid] = descriptor

    def revoke(self, centroid: int) -> ObjectDescriptor:
        current = self._table.get(centroid)
        if current is None or not current.live:
            raise UnknownDescriptorError(f"no live descriptor for centroid {centroid:#x}")
        revoked = replace(current, state=DescriptorState.REVOKED)
        self._table[centroid] = revoked
        self.cache.invalidate(centroid)
        return revoked

    def lookup(self, centroid: int) -> LookupResult:
        cached = self.cache.get(centroid)
        if cached is not None:
            result = LookupResult(LookupOutcome.HIT, cached)
        else:
            stored = self._table.get(centroid)
            if stored is None:
                result = LookupResult(LookupOutcome.NOT_FOUND)
            elif not stored.live:
                result = LookupResult(LookupOutcome.REVOKED, stored)
            else:
                self.cache.fill(stored)
                result = LookupResult(LookupOutcome.MISS_THEN_FILL, stored)
        self.lookups.record(result.outcome)
        return result

    def peek(self, centroid: int) -> Optional[ObjectDescriptor]:
        """Table read that bypasses the cache and its counters."""
        return self._table.get(centroid)

    def live_descriptors(self) -> Iterator[ObjectDescriptor]:
        return (descriptor for descriptor in self._table.values() if descriptor.live)

    def __len__(self) -> int:
        return len(self._table)


@dataclass(frozen=True)
class RangeEntry:
    base: int
    bound: int
    descriptor: ObjectDescriptor


@dataclass(frozen=True)
class RangeLookup:
    hit: bool
    descriptor: Optional[ObjectDescriptor] = None


@dataclass
class RangeCacheModel:
    """Fully-associative LRU range cache answering which cached range holds an address."""

    capacity: int = 16
    counters: CacheCounters = field(default_factory=CacheCounters)
    _entries: OrderedDict[int, RangeEntry] = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("range cache capacity must be positive")

    def lookup(self, addr: int) -> RangeLookup:
        for base, entry in self._entries.items():
            if entry.base <= addr <= entry.bound:
                self._entries.move_to_end(base)
                self.counters.hits += 1
                return RangeLookup(True, entry.descriptor)
        self.counters.misses += 1
        return RangeLookup(False)

    def fill(self, descriptor: ObjectDescriptor) -> Optional[RangeEntry]:
        for entry in self._entries.values():
            if entry.base <= descriptor.bound and descriptor.base <= entry.bound:
                if entry.base == descriptor.base and entry.bound == descriptor.bound:
                    self._entries[entry.base] = RangeEntry(entry.base, entry.bound, descriptor)
                    self._entries.move_to_end(entry.base)
                    return None
                raise RangeOverlapError(
                    f"range [{descriptor.base:#x}, {descriptor.bound:#x}] overlaps cached "
                    f"[{entry.base:#x}, {entry.bound:#x}]"
                )
        evicted: Optional[RangeEntry] = None
        if len(self._entries) >= self.capacity:
            _, evicted = self._entries.popitem(last=False)
            self.counters.evictions += 1
        self._entries[descriptor.base] = RangeEntry(descriptor.base, descriptor.bound, descriptor)
        return evicted

    def invalidate(self, base: int) -> bool:
        return self._entries.pop(base, None) is not None

    def entries(self) -> list[RangeEntry]:
        return list(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)
