from __future__ import annotations

from typing import Any, Optional

EXIT_OK = 0
EXIT_FAULTS = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_IO = 74


class CentroidMemError(RuntimeError):
    exit_code = EXIT_DATA


class ArgumentError(CentroidMemError, ValueError):
    exit_code = EXIT_USAGE


class MalformedTagError(CentroidMemError, ValueError):
    def __init__(self, message: str, word: Optional[int] = None):
        super().__init__(message)
        self.word = word


class ModeError(CentroidMemError):
    pass


class TraceParseError(CentroidMemError):
    def __init__(self, seq: int, message: str):
        super().__init__(f"trace line {seq}: {message}")
        self.seq = seq


class AllocatorError(CentroidMemError):
    pass


class OutOfSpaceError(AllocatorError):
    pass


class UnknownObjectError(AllocatorError, KeyError):
    def __str__(self) -> str:
        return RuntimeError.__str__(self)


class DoubleFreeError(AllocatorError):
    def __init__(self, record: Any):
        super().__init__(f"double free of object {record.object_id}")
        self.record = record


class ParentFullError(AllocatorError):
    pass


class DescriptorStoreError(CentroidMemError):
    pass


class DuplicateDescriptorError(DescriptorStoreError):
    pass


class UnknownDescriptorError(DescriptorStoreError, KeyError):
    def __str__(self) -> str:
        return RuntimeError.__str__(self)


class RangeOverlapError(DescriptorStoreError):
    pass
