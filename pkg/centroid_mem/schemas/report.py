from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field

from centroid_mem.schemas.trace import AccessKindName, EventLabel, ViolationKind


class EventCounts(BaseModel):
    events: int = 0
    allocs: int = 0
    frees: int = 0
    attempted: int = 0
    issued: int = 0
    faulted: int = 0
    unsafe_issued: int = Field(
        default=0,
        description="Issued accesses whose span touched storage outside every live object.",
    )


class ViolationTally(BaseModel):
    detected: int = 0
    missed: int = 0


class Detection(BaseModel):
    labeled: int = 0
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    true_negatives: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None
    spatial_recall: Optional[float] = None
    temporal_recall: Optional[float] = None
    by_violation: dict[str, ViolationTally] = Field(default_factory=dict)


class CacheStats(BaseModel):
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    hit_rate: Optional[float] = None


class DescriptorLookups(BaseModel):
    hit: int = 0
    miss_then_fill: int = 0
    not_found: int = 0
    revoked: int = 0


class FragmentationStats(BaseModel):
    objects: int
    total_requested: int
    total_reserved: int
    mean_slack: float
    max_slack: int


class SchemeStats(BaseModel):
    lookups: int = 0
    tag_decodes: int = 0
    range_hits: int = 0
    range_fills: int = 0
    table_walks: int = 0
    page_walks: int = 0
    descriptor_lookups: int = 0
    misses: int = 0


class FaultEvent(BaseModel):
    seq: int
    kind: str
    object_id: Optional[int] = None
    word: Optional[str] = None
    effective_address: Optional[str] = None
    detail: str
    label: Optional[EventLabel] = None


class AccessVerdict(BaseModel):
    seq: int
    object_id: Optional[int] = None
    effective_address: Optional[str] = None
    size: int
    kind: AccessKindName
    outcome: str
    label: Optional[EventLabel] = None
    violation: Optional[ViolationKind] = None


class Report(BaseModel):
    config: dict[str, Any] = Field(default_factory=dict)
    counts: EventCounts = Field(default_factory=EventCounts)
    faults: dict[str, int] = Field(default_factory=dict)
    detection: Detection = Field(default_factory=Detection)
    descriptor_cache: CacheStats = Field(default_factory=CacheStats)
    descriptor_lookups: DescriptorLookups = Field(default_factory=DescriptorLookups)
    range_cache: CacheStats = Field(default_factory=CacheStats)
    fragmentation: dict[str, FragmentationStats] = Field(default_factory=dict)
    mode_counts: dict[str, int] = Field(default_factory=dict)
    parent_scheme: Optional[str] = None
    schemes: dict[str, SchemeStats] = Field(default_factory=dict)
    fault_events: list[FaultEvent] = Field(default_factory=list)
    verdicts: Optional[list[AccessVerdict]] = None

    def flat_items(self) -> list[tuple[str, Any]]:
        """Scalar fields as dotted ``(key, value)`` pairs; event lists are left out."""
        data = self.model_dump(mode="json", exclude={"fault_events", "verdicts"})
        items: list[tuple[str, Any]] = []
        _flatten("", data, items)
        return items


def _flatten(prefix: str, value: Any, items: list[tuple[str, Any]]) -> None:
    if isinstance(value, dict):
        for key in value:
            _flatten(f"{prefix}.{key}" if prefix else str(key), value[key], items)
    else:
        items.append((prefix, value))
