"""Side-by-side replay of one trace under the three bounds back-ends."""

from __future__ import annotations

import logging
from typing import Literal, Optional, Sequence

from pydantic import BaseModel

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.schemas.report import Report
from centroid_mem.schemas.trace import AllocEvent, TraceEvent
from centroid_mem.services.ptr_codec import aligned_exponent, lowfat_layout
from centroid_mem.services.replay import ReplayEngine

BackendName = Literal["aligned", "lowfat", "centroid"]
BACKENDS: tuple[BackendName, ...] = ("aligned", "lowfat", "centroid")

logger = logging.getLogger("centroid_mem.services.compare")


class CompareRow(BaseModel):
    backend: BackendName
    objects: int
    total_requested: int
    total_reserved: int
    mean_slack: float
    max_slack: int
    closed_form_max_slack: int
    attempted: int
    issued: int
    faulted: int
    unsafe_issued: int
    precision: Optional[float] = None
    recall: Optional[float] = None
    spatial_recall: Optional[float] = None
    temporal_recall: Optional[float] = None


class CompareTable(BaseModel):
    rows: list[CompareRow]

    def row(self, backend: BackendName) -> CompareRow:
        for row in self.rows:
            if row.backend == backend:
                return row
        raise KeyError(backend)


def backend_settings(settings: Settings, backend: BackendName) -> Settings:
    update: dict[str, object] = {"parent_scheme": None, "lowfat": backend == "lowfat"}
    update["force_mode"] = "centroid" if backend == "centroid" else "aligned"
    return settings.model_copy(update=update)


def slack_closed_form(size: int, backend: BackendName, block_count_exponent: int = 5) -> int:
    """Reserved-minus-requested bytes the back-end must produce for ``size``."""
    if backend == "aligned":
        return (1 << aligned_exponent(size)) - size
    if backend == "lowfat":
        fields = lowfat_layout(size, block_count_exponent)
        return ((fields.last_block + 1) << fields.sub_exponent) - size
    return max(size, 2) - size


def aligned_worst_slack(exponent: int) -> int:
    return (1 << (exponent - 1)) - 1


def lowfat_worst_slack(exponent: int, block_count_exponent: int = 5) -> int:
    return (1 << max(exponent - block_count_exponent, 0)) - 1


def compare(events: Sequence[TraceEvent], settings: Settings | None = None) -> CompareTable:
    settings = settings or get_settings()
    sizes = [event.size for event in events if isinstance(event, AllocEvent)]
    rows = []
    for backend in BACKENDS:
        report = ReplayEngine(backend_settings(settings, backend), honor_overrides=False).replay(events)
        closed_form = max(
            (slack_closed_form(size, backend, settings.lowfat_block_exponent) for size in sizes),
            default=0,
        )
        rows.append(_row(backend, report, closed_form))
    logger.info("compare_finished", extra={"events": len(events), "backends": list(BACKENDS)})
    return CompareTable(rows=rows)


def _row(backend: BackendName, report: Report, closed_form: int) -> CompareRow:
    summaries = list(report.fragmentation.values())
    objects = sum(item.objects for item in summaries)
    requested = sum(item.total_requested for item in summaries)
    reserved = sum(item.total_reserved for item in summaries)
    return CompareRow(
        backend=backend,
        objects=objects,
        total_requested=requested,
        total_reserved=reserved,
        mean_slack=(reserved - requested) / objects if objects else 0.0,
        max_slack=max((item.max_slack for item in summaries), default=0),
        closed_form_max_slack=closed_form,
        attempted=report.counts.attempted,
        issued=report.counts.issued,
        faulted=report.counts.faulted,
        unsafe_issued=report.counts.unsafe_issued,
        precision=report.detection.precision,
        recall=report.detection.recall,
        spatial_recall=report.detection.spatial_recall,
        temporal_recall=report.detection.temporal_recall,
    )
