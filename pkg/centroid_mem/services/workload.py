"""Synthetic allocation workloads and violation injection.

Size defaults follow the usual heap-object statistics: nearly all objects
are small (< 1 KiB) and short-lived, a few are large and long-lived. The
lifetime parameters are synthetic; nothing measured backs their values.
"""

from __future__ import annotations

import heapq
import logging
import math
import random
from typing import Sequence

from pydantic import BaseModel, Field, model_validator

from centroid_mem.core.errors import ArgumentError
from centroid_mem.schemas.trace import (
    AccessEvent,
    AllocEvent,
    FreeEvent,
    TraceEvent,
)
from centroid_mem.services.ptr_codec import aligned_exponent
from centroid_mem.utils.trace_io import renumber

ACCESS_WIDTHS = (1, 2, 4, 8)
logger = logging.getLogger("centroid_mem.services.workload")


class WorkloadParams(BaseModel):
    allocations: int = Field(default=1000, ge=0, description="Number of alloc events.")
    p_small: float = Field(default=0.99, ge=0.0, le=1.0)
    small_min: int = Field(default=16, ge=1)
    small_max: int = Field(default=1024, ge=2, description="Exclusive upper size bound.")
    large_min: int = Field(default=64 * 1024, ge=1)
    large_max: int = Field(default=16 * 1024 * 1024, ge=2, description="Exclusive upper size bound.")
    small_lifetime: float = Field(default=4.0, gt=0, description="Mean lifetime in alloc steps.")
    large_lifetime: float = Field(default=256.0, gt=0, description="Mean lifetime in alloc steps.")
    access_rate: float = Field(default=2.0, ge=0, description="Mean accesses per alloc step.")
    store_fraction: float = Field(default=0.3, ge=0.0, le=1.0)
    free_remaining: bool = True
    spatial_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    temporal_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    double_free_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def validate_ranges(self) -> "WorkloadParams":
        if self.small_min >= self.small_max:
            raise ValueError("small size range is empty")
        if self.large_min >= self.large_max:
            raise ValueError("large size range is empty")
        return self


def log_uniform(rng: random.Random, low: int, high: int) -> int:
    """Integer in ``[low, high)`` drawn log-uniformly."""
    value = int(math.exp(rng.uniform(math.log(low), math.log(high))))
    return min(max(value, low), high - 1)


def generate(params: WorkloadParams) -> list[TraceEvent]:
    rng = random.Random(params.seed)
    events: list[TraceEvent] = []
    sizes: dict[int, int] = {}
    live: list[int] = []
    deaths: list[tuple[int, int]] = []

    def retire(object_id: int) -> None:
        live.remove(object_id)
        events.append(FreeEvent(seq=1, object_id=object_id, label="benign"))

    for step in range(params.allocations):
        while deaths and deaths[0][0] <= step:
            _, object_id = heapq.heappop(deaths)
            retire(object_id)
        small = rng.random() < params.p_small
        if small:
            size = log_uniform(rng, params.small_min, params.small_max)
            lifetime = params.small_lifetime
        else:
            size = log_uniform(rng, params.large_min, params.large_max)
            lifetime = params.large_lifetime
        object_id = step
        sizes[object_id] = size
        live.append(object_id)
        events.append(AllocEvent(seq=1, object_id=object_id, size=size, label="benign"))
        heapq.heappush(deaths, (step + 1 + int(rng.expovariate(1.0 / lifetime)), object_id))
        for _ in range(_access_count(rng, params.access_rate)):
            target = rng.choice(live)
            events.append(_benign_access(rng, target, sizes[target], params.store_fraction))

    if params.free_remaining:
        while deaths:
            _, object_id = heapq.heappop(deaths)
            retire(object_id)

    trace = renumber(events)
    logger.debug(
        "workload_generated",
        extra={"seed": params.seed, "allocations": params.allocations, "events": len(trace)},
    )
    return trace


def inject(
    trace: Sequence[TraceEvent],
    spatial_rate: float,
    temporal_rate: float,
    seed: int,
    *,
    double_free_rate: float = 0.0,
) -> list[TraceEvent]:
    """Label unlabeled accesses benign and splice in ground-truth violations.

    Spatial violations follow the alloc of a live object at an offset past its
    size, alternating between the slot slack and the bytes past the slot.
    Temporal violations follow a free and touch the freed object in bounds.
    """
    for name, rate in (
        ("spatial_rate", spatial_rate),
        ("temporal_rate", temporal_rate),
        ("double_free_rate", double_free_rate),
    ):
        if not 0.0 <= rate <= 1.0:
            raise ArgumentError(f"{name} must lie in [0, 1], got {rate}")
    rng = random.Random(seed)
    sizes: dict[int, int] = {}
    out: list[TraceEvent] = []
    within_next = True
    for event in trace:
        if isinstance(event, AccessEvent) and event.label is None:
            event = event.model_copy(update={"label": "benign"})
        out.append(event)
        if isinstance(event, AllocEvent):
            sizes[event.object_id] = event.size
            if rng.random() < spatial_rate:
                out.append(spatial_violation(rng, event.object_id, event.size, within_next))
                within_next = not within_next
        elif isinstance(event, FreeEvent) and event.object_id in sizes:
            size = sizes[event.object_id]
            if rng.random() < temporal_rate:
                out.append(
                    AccessEvent(
                        seq=1,
                        object_id=event.object_id,
                        offset=rng.randrange(size),
                        label="temporal_violation",
                        violation="freed",
                    )
                )
            if rng.random() < double_free_rate:
                out.append(
                    FreeEvent(seq=1, object_id=event.object_id, label="temporal_violation")
                )
    return renumber(out)


def spatial_violation(
    rng: random.Random,
    object_id: int,
    size: int,
    within_slot: bool = True,
) -> AccessEvent:
    """Out-of-bounds access inside the minimal slot's slack or past the slot.

    Objects that fill their slot exactly have no slack and always get a
    past-the-slot access.
    """
    slot_size = 1 << aligned_exponent(size)
    if within_slot and slot_size > size:
        offset = rng.randrange(size, slot_size)
        violation = "within_slot"
    else:
        offset = slot_size + rng.randrange(slot_size)
        violation = "beyond_slot"
    return AccessEvent(
        seq=1,
        object_id=object_id,
        offset=offset,
        label="spatial_violation",
        violation=violation,
    )


def _access_count(rng: random.Random, rate: float) -> int:
    whole = int(rate)
    return whole + (1 if rng.random() < rate - whole else 0)


def _benign_access(
    rng: random.Random,
    object_id: int,
    size: int,
    store_fraction: float,
) -> AccessEvent:
    width = rng.choice([w for w in ACCESS_WIDTHS if w <= size])
    offset = rng.randrange(0, size - width + 1, width)
    kind = "store" if rng.random() < store_fraction else "load"
    return AccessEvent(
        seq=1, object_id=object_id, offset=offset, size=width, kind=kind, label="benign"
    )
