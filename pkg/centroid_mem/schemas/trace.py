from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_serializer, field_validator

from centroid_mem.core.config import ModeName

TRACE_VERSION = 1

EventLabel = Literal["benign", "spatial_violation", "temporal_violation"]
ViolationKind = Literal["within_slot", "beyond_slot", "freed"]
LevelName = Literal["user", "system"]
AccessKindName = Literal["load", "store", "fetch"]


class TraceHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    v: Literal[1] = TRACE_VERSION


class _TraceEventBase(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seq: int = Field(ge=1)
    label: Optional[EventLabel] = None


class AllocEvent(_TraceEventBase):
    op: Literal["alloc"] = "alloc"
    object_id: int = Field(ge=0)
    size: int = Field(ge=1)
    level: LevelName = "user"
    mode_override: Optional[ModeName] = None
    parent_id: Optional[int] = Field(default=None, ge=0)
    permissions: str = Field(default="rw-", pattern=r"^[r-][w-][x-]$")


class FreeEvent(_TraceEventBase):
    op: Literal["free"] = "free"
    object_id: int = Field(ge=0)


class AccessEvent(_TraceEventBase):
    op: Literal["access"] = "access"
    object_id: int = Field(ge=0)
    offset: int
    size: int = Field(default=1, ge=1)
    kind: AccessKindName = "load"
    violation: Optional[ViolationKind] = None


class RawAccessEvent(_TraceEventBase):
    op: Literal["raw_access"] = "raw_access"
    word: int = Field(ge=0, lt=1 << 64)
    offset: int = 0
    size: int = Field(default=1, ge=1)
    kind: AccessKindName = "load"

    @field_validator("word", mode="before")
    @classmethod
    def parse_hex_word(cls, value: object) -> object:
        if isinstance(value, str):
            try:
                return int(value, 16)
            except ValueError as exc:
                raise ValueError(f"word {value!r} is not a hex string") from exc
        return value

    @field_serializer("word")
    def serialize_word(self, value: int) -> str:
        return f"{value:#018x}"


TraceEvent = Annotated[
    Union[AllocEvent, FreeEvent, AccessEvent, RawAccessEvent],
    Field(discriminator="op"),
]

trace_event_adapter: TypeAdapter[TraceEvent] = TypeAdapter(TraceEvent)
