from __future__ import annotations

import logging
from dataclasses import asdict
from typing import Optional, Sequence

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.core.errors import DoubleFreeError, TraceParseError
from centroid_mem.core.logging import (
    clear_replay_context,
    log_fault,
    log_replay_finished,
    set_replay_context,
)
from centroid_mem.schemas.report import (
    AccessVerdict,
    CacheStats,
    Detection,
    DescriptorLookups,
    EventCounts,
    FaultEvent,
    FragmentationStats,
    Report,
    SchemeStats,
    ViolationTally,
)
from centroid_mem.schemas.trace import (
    AccessEvent,
    AllocEvent,
    FreeEvent,
    RawAccessEvent,
    TraceEvent,
)
from centroid_mem.services.alloc_sim import AllocationRecord, BinningAllocator
from centroid_mem.services.descriptor_store import (
    CacheCounters,
    DescriptorStore,
    Level,
    Permission,
)
from centroid_mem.services.dgu import (
    AccessFault,
    AccessKind,
    AccessRequest,
    DescriptorGenerationUnit,
    EffectiveAccess,
    FaultKind,
)
from centroid_mem.services.multilevel import MultiLevelManager, ParentRegion, ParentScheme
from centroid_mem.services.ptr_codec import PointerMode, TaggedWord
from centroid_mem.utils.hashing import sha256_hex
from centroid_mem.utils.trace_io import dump_trace

CONFIG_FIELDS = (
    "mode_threshold",
    "force_mode",
    "reuse",
    "lowfat",
    "lowfat_block_exponent",
    "aligned_liveness",
    "cpp_oob_one_past",
    "descriptor_cache_sets",
    "descriptor_cache_ways",
    "range_cache_capacity",
    "parent_scheme",
)


class ReplayEngine:
    """Drives trace events through the allocator and the DGU.

    One engine replays one trace; build a fresh engine per run. With
    ``honor_overrides=False`` per-event mode overrides are ignored so a forced
    back-end applies to every object.
    """

    def __init__(self, settings: Settings | None = None, *, honor_overrides: bool = True):
        self.settings = settings or get_settings()
        self.honor_overrides = honor_overrides
        self.store = DescriptorStore(
            sets=self.settings.descriptor_cache_sets,
            ways=self.settings.descriptor_cache_ways,
        )
        self.allocator = BinningAllocator(self.store, self.settings)
        self.dgu = DescriptorGenerationUnit(self.store, self.settings)
        self.multilevel: Optional[MultiLevelManager] = None
        if self.settings.parent_scheme is not None:
            self.multilevel = MultiLevelManager(self.allocator, self.settings)
        self.logger = logging.getLogger("centroid_mem.replay")
        self._words: dict[int, TaggedWord] = {}
        self._parents: dict[int, ParentRegion] = {}
        self._child_parent: dict[int, int] = {}
        self._counts = EventCounts()
        self._double_frees = 0
        self._fault_events: list[FaultEvent] = []
        self._verdicts: list[AccessVerdict] = []
        self._detection = _DetectionTally()

    def replay(self, events: Sequence[TraceEvent]) -> Report:
        run_id = sha256_hex(dump_trace(events))[:12]
        set_replay_context(run_id=run_id)
        self.logger.info("replay_started", extra={"events": len(events)})
        try:
            for event in events:
                set_replay_context(trace_seq=event.seq)
                self._counts.events += 1
                if isinstance(event, AllocEvent):
                    self._on_alloc(event)
                elif isinstance(event, FreeEvent):
                    self._on_free(event)
                else:
                    self._on_access(event)
            report = self._build_report()
            log_replay_finished(
                events=report.counts.events,
                attempted=report.counts.attempted,
                issued=report.counts.issued,
                faulted=report.counts.faulted,
                unsafe_issued=report.counts.unsafe_issued,
                faults=report.faults,
            )
            return report
        finally:
            clear_replay_context()

    def _on_alloc(self, event: AllocEvent) -> None:
        self._counts.allocs += 1
        self._parents.pop(event.object_id, None)
        self._child_parent.pop(event.object_id, None)
        level = Level(event.level)
        override: Optional[PointerMode] = None
        if event.mode_override is not None and self.honor_overrides:
            override = PointerMode(event.mode_override)
        permissions = Permission.parse(event.permissions)
        manager = self.multilevel
        if manager is not None and event.parent_id is not None:
            parent = self._parents.get(event.parent_id)
            if parent is None:
                raise TraceParseError(event.seq, f"object {event.parent_id} is not a mapped parent")
            word, record = manager.child_alloc(
                parent,
                event.size,
                object_id=event.object_id,
                policy_override=override,
                permissions=permissions,
            )
            self._child_parent[record.object_id] = event.parent_id
        elif manager is not None and level is Level.SYSTEM and event.size >= manager.page_size:
            region = manager.map_parent(event.size, object_id=event.object_id)
            self._parents[event.object_id] = region
            word = region.word
        else:
            word, _ = self.allocator.allocate(
                event.size,
                level,
                override,
                object_id=event.object_id,
                permissions=permissions,
            )
        self._words[event.object_id] = word

    def _on_free(self, event: FreeEvent) -> None:
        self._counts.frees += 1
        detected = False
        try:
            region = self._parents.get(event.object_id)
            manager = self.multilevel
            if region is not None and manager is not None and self.allocator.record(event.object_id).live:
                manager.unmap_parent(region)
            else:
                self.allocator.free(event.object_id)
        except DoubleFreeError as exc:
            detected = True
            self._double_frees += 1
            word = self._words.get(event.object_id)
            self._record_fault(
                event,
                AccessFault(
                    FaultKind.DOUBLE_FREE,
                    None if word is None else word.raw,
                    exc.record.base,
                    str(exc),
                ),
                event.object_id,
            )
        self._detection.observe(event.label, None, detected)

    def _on_access(self, event: AccessEvent | RawAccessEvent) -> None:
        object_id: Optional[int] = None
        lowfat = None
        if isinstance(event, AccessEvent):
            object_id = event.object_id
            word: TaggedWord | int = self._words[object_id]
            lowfat = self.allocator.record(object_id).lowfat
        else:
            word = event.word
        request = AccessRequest(
            word=word,
            offset=event.offset,
            size=event.size,
            kind=AccessKind(event.kind),
            lowfat=lowfat,
        )
        outcome = self.dgu.authenticate(request)
        violation = event.violation if isinstance(event, AccessEvent) else None
        if isinstance(outcome, AccessFault):
            self._record_fault(event, outcome, object_id)
            verdict = outcome.kind.value
            effective = outcome.effective_address
        else:
            self._check_issued(outcome)
            if object_id is not None and object_id in self._child_parent and self.multilevel is not None:
                self._resolve_parent(object_id)
            verdict = "issued"
            effective = outcome.effective_address
        self._detection.observe(event.label, violation, isinstance(outcome, AccessFault))
        if self.settings.explain:
            self._verdicts.append(
                AccessVerdict(
                    seq=event.seq,
                    object_id=object_id,
                    effective_address=None if effective is None else hex(effective),
                    size=event.size,
                    kind=event.kind,
                    outcome=verdict,
                    label=event.label,
                    violation=violation,
                )
            )

    def _check_issued(self, access: EffectiveAccess) -> None:
        first, last = access.span
        record = self.allocator.find_live(first)
        if record is None or not record.covers(first, access.size):
            self._counts.unsafe_issued += 1
            self.logger.debug(
                "unsafe_access_issued",
                extra={"effective_address": hex(first), "last": hex(last)},
            )

    def _resolve_parent(self, object_id: int) -> None:
        manager = self.multilevel
        assert manager is not None
        word = self._words[object_id]
        parent = self._parents[self._child_parent[object_id]]
        if manager.scheme is ParentScheme.DUAL_TAG:
            manager.parent_of(manager.dual_tag_word(word, parent))
        else:
            manager.parent_of(word.address)

    def _record_fault(
        self,
        event: TraceEvent,
        fault: AccessFault,
        object_id: Optional[int],
    ) -> None:
        self._fault_events.append(
            FaultEvent(
                seq=event.seq,
                kind=fault.kind.value,
                object_id=object_id,
                word=None if fault.word is None else f"{fault.word:#018x}",
                effective_address=(
                    None if fault.effective_address is None else hex(fault.effective_address)
                ),
                detail=fault.detail,
                label=event.label,
            )
        )
        log_fault(
            kind=fault.kind.value,
            seq=event.seq,
            word=fault.word,
            effective_address=fault.effective_address,
            detail=fault.detail,
        )

    def _build_report(self) -> Report:
        counters = self.dgu.counters
        counts = self._counts.model_copy(
            update={
                "attempted": counters.attempted,
                "issued": counters.issued,
                "faulted": counters.faulted,
            }
        )
        faults = {kind.value: counters.faults[kind] for kind in FaultKind}
        faults[FaultKind.DOUBLE_FREE.value] += self._double_frees
        history = self.allocator.history()
        report = Report(
            config={name: getattr(self.settings, name) for name in CONFIG_FIELDS},
            counts=counts,
            faults=faults,
            detection=self._detection.summary(),
            descriptor_cache=_cache_stats(self.store.cache.counters),
            descriptor_lookups=DescriptorLookups(**asdict(self.store.lookups)),
            fragmentation={
                encoding: FragmentationStats(**asdict(summary))
                for encoding, summary in self.allocator.fragmentation_report().items()
            },
            mode_counts=_mode_counts(history),
            fault_events=list(self._fault_events),
            verdicts=list(self._verdicts) if self.settings.explain else None,
        )
        if self.multilevel is not None:
            report.range_cache = _cache_stats(self.multilevel.range_cache.counters)
            report.parent_scheme = self.multilevel.scheme.value
            report.schemes = {
                scheme.value: SchemeStats(**asdict(self.multilevel.counters[scheme]))
                for scheme in ParentScheme
            }
        return report


def replay(events: Sequence[TraceEvent], settings: Settings | None = None) -> Report:
    return ReplayEngine(settings).replay(events)


class _DetectionTally:
    def __init__(self) -> None:
        self.labeled = 0
        self.tp = 0
        self.fp = 0
        self.fn = 0
        self.tn = 0
        self.by_label: dict[str, list[int]] = {
            "spatial_violation": [0, 0],
            "temporal_violation": [0, 0],
        }
        self.by_violation: dict[str, ViolationTally] = {}

    def observe(self, label: Optional[str], violation: Optional[str], detected: bool) -> None:
        if label is None:
            return
        self.labeled += 1
        if label == "benign":
            if detected:
                self.fp += 1
            else:
                self.tn += 1
            return
        tally = self.by_label[label]
        if detected:
            self.tp += 1
            tally[0] += 1
        else:
            self.fn += 1
            tally[1] += 1
        if violation is not None:
            entry = self.by_violation.setdefault(violation, ViolationTally())
            if detected:
                entry.detected += 1
            else:
                entry.missed += 1

    def summary(self) -> Detection:
        flagged = self.tp + self.fp
        return Detection(
            labeled=self.labeled,
            true_positives=self.tp,
            false_positives=self.fp,
            false_negatives=self.fn,
            true_negatives=self.tn,
            precision=self.tp / flagged if flagged else 1.0,
            recall=_ratio(self.tp, self.tp + self.fn),
            spatial_recall=_ratio(*_hit_total(self.by_label["spatial_violation"])),
            temporal_recall=_ratio(*_hit_total(self.by_label["temporal_violation"])),
            by_violation={key: self.by_violation[key] for key in sorted(self.by_violation)},
        )


def _hit_total(tally: list[int]) -> tuple[int, int]:
    return tally[0], tally[0] + tally[1]


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    if not denominator:
        return None
    return numerator / denominator


def _cache_stats(counters: CacheCounters) -> CacheStats:
    return CacheStats(
        hits=counters.hits,
        misses=counters.misses,
        evictions=counters.evictions,
        hit_rate=counters.hit_rate,
    )


def _mode_counts(records: Sequence[AllocationRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for record in records:
        counts[record.encoding] = counts.get(record.encoding, 0) + 1
    return {key: counts[key] for key in sorted(counts)}
