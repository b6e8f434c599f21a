from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from pydantic import ValidationError

from centroid_mem.core.errors import TraceParseError
from centroid_mem.schemas.trace import (
    AccessEvent,
    AllocEvent,
    FreeEvent,
    TraceEvent,
    TraceHeader,
    trace_event_adapter,
)

HEADER_LINE = TraceHeader().model_dump_json()


def parse_trace(lines: Iterable[str]) -> list[TraceEvent]:
    """Parse JSONL trace lines, header first, into validated events.

    Object ids used by ``free`` and ``access`` must have been allocated on an
    earlier line, and ``seq`` must strictly increase.
    """
    events: list[TraceEvent] = []
    allocated: set[int] = set()
    last_seq = 0
    saw_header = False
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceParseError(line_no, f"invalid JSON ({exc.msg})") from exc
        if not saw_header:
            try:
                TraceHeader.model_validate(payload)
            except ValidationError as exc:
                raise TraceParseError(line_no, 'expected header {"v":1}') from exc
            saw_header = True
            continue
        try:
            event = trace_event_adapter.validate_python(payload)
        except ValidationError as exc:
            raise TraceParseError(line_no, _first_error(exc)) from exc
        if event.seq <= last_seq:
            raise TraceParseError(event.seq, f"seq {event.seq} does not follow {last_seq}")
        last_seq = event.seq
        if isinstance(event, AllocEvent):
            allocated.add(event.object_id)
        elif isinstance(event, (FreeEvent, AccessEvent)) and event.object_id not in allocated:
            raise TraceParseError(event.seq, f"object {event.object_id} has no prior alloc")
        events.append(event)
    if not saw_header:
        raise TraceParseError(1, "trace is empty")
    return events


def read_trace(path: str | Path) -> list[TraceEvent]:
    with open(path, encoding="utf-8") as handle:
        return parse_trace(handle)


def iter_trace_lines(events: Sequence[TraceEvent]) -> Iterator[str]:
    yield HEADER_LINE
    for event in events:
        yield event.model_dump_json(exclude_none=True)


def dump_trace(events: Sequence[TraceEvent]) -> str:
    return "".join(f"{line}\n" for line in iter_trace_lines(events))


def renumber(events: Iterable[TraceEvent]) -> list[TraceEvent]:
    """Copy events with ``seq`` set to their line number after the header."""
    return [event.model_copy(update={"seq": index}) for index, event in enumerate(events, start=2)]


def _first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error["loc"])
    return f"{location}: {error['msg']}" if location else error["msg"]
