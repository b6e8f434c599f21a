from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.core.errors import ArgumentError, MalformedTagError
from centroid_mem.services.descriptor_store import (
    DescriptorState,
    DescriptorStore,
    Level,
    LookupOutcome,
    ObjectDescriptor,
    Permission,
)
from centroid_mem.services.ptr_codec import (
    LowFatFields,
    PointerMode,
    TaggedWord,
    aligned_bounds,
    centroid_of_word,
    decode,
    lowfat_bounds,
)

ALIGNED_DEFAULT_PERMISSIONS = Permission.READ | Permission.WRITE


class AccessKind(str, Enum):
    LOAD = "load"
    STORE = "store"
    FETCH = "fetch"

    @property
    def required(self) -> Permission:
        return _REQUIRED_PERMISSION[self]


_REQUIRED_PERMISSION = {
    AccessKind.LOAD: Permission.READ,
    AccessKind.STORE: Permission.WRITE,
    AccessKind.FETCH: Permission.EXECUTE,
}


class FaultKind(str, Enum):
    MALFORMED_TAG = "malformed_tag"
    OUT_OF_BOUNDS = "out_of_bounds"
    USE_AFTER_FREE = "use_after_free"
    PERMISSION_DENIED = "permission_denied"
    DESCRIPTOR_MISS = "descriptor_miss"
    DOUBLE_FREE = "double_free"


@dataclass(frozen=True)
class AccessFault:
    kind: FaultKind
    word: Optional[int]
    effective_address: Optional[int]
    detail: str


@dataclass(frozen=True)
class AccessRequest:
    word: Union[TaggedWord, int]
    offset: int
    size: int
    kind: AccessKind = AccessKind.LOAD
    lowfat: Optional[LowFatFields] = None

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ArgumentError("access size must be at least one byte")

    @property
    def raw_word(self) -> int:
        return self.word.raw if isinstance(self.word, TaggedWord) else self.word


@dataclass(frozen=True)
class EffectiveAccess:
    effective_address: int
    size: int
    descriptor: ObjectDescriptor

    @property
    def span(self) -> tuple[int, int]:
        return self.effective_address, self.effective_address + self.size - 1


@dataclass
class DguCounters:
    attempted: int = 0
    issued: int = 0
    faults: dict[FaultKind, int] = field(default_factory=lambda: {kind: 0 for kind in FaultKind})

    @property
    def faulted(self) -> int:
        return self.attempted - self.issued


class DescriptorGenerationUnit:
    """Derives a descriptor for every access and runs the security phases.

    Phases run in a fixed order and the first failure decides the fault:
    tag well-formedness, descriptor derivation, address authentication,
    access control, temporal check. Faulting requests are never issued.
    """

    def __init__(self, store: DescriptorStore, settings: Settings | None = None):
        self.settings = settings or get_settings()
        self.store = store
        self.counters = DguCounters()

    def derive_descriptor(
        self,
        word: Union[TaggedWord, int],
        lowfat: Optional[LowFatFields] = None,
    ) -> Union[ObjectDescriptor, AccessFault]:
        resolved = self._resolve(word, lowfat)
        if isinstance(resolved, AccessFault):
            return resolved
        _, descriptor = resolved
        if not descriptor.live:
            return AccessFault(
                FaultKind.USE_AFTER_FREE,
                _raw(word),
                None,
                f"descriptor {descriptor.centroid:#x} was revoked",
            )
        return descriptor

    def authenticate(self, request: AccessRequest) -> Union[EffectiveAccess, AccessFault]:
        self.counters.attempted += 1
        outcome = self._authenticate(request)
        if isinstance(outcome, AccessFault):
            self.counters.faults[outcome.kind] += 1
        else:
            self.counters.issued += 1
        return outcome

    def ptr_add(
        self,
        word: Union[TaggedWord, int],
        delta: int,
        lowfat: Optional[LowFatFields] = None,
    ) -> Union[TaggedWord, AccessFault]:
        resolved = self._resolve(word, lowfat)
        if isinstance(resolved, AccessFault):
            return resolved
        tagged, descriptor = resolved
        if tagged.mode is PointerMode.CENTROID and not descriptor.live:
            return AccessFault(
                FaultKind.DESCRIPTOR_MISS,
                tagged.raw,
                None,
                f"dangling word: descriptor {descriptor.centroid:#x} was revoked",
            )
        target = tagged.address + delta
        upper = descriptor.bound + 1 if self.settings.cpp_oob_one_past else descriptor.bound
        if not descriptor.base <= target <= upper:
            return AccessFault(
                FaultKind.OUT_OF_BOUNDS,
                tagged.raw,
                target,
                f"{target:#x} leaves [{descriptor.base:#x}, {descriptor.bound:#x}]",
            )
        return tagged.with_address(target)

    def _authenticate(self, request: AccessRequest) -> Union[EffectiveAccess, AccessFault]:
        raw = request.raw_word
        resolved = self._resolve(request.word, request.lowfat)
        if isinstance(resolved, AccessFault):
            return resolved
        tagged, descriptor = resolved
        effective = tagged.address + request.offset
        if not descriptor.covers(effective, request.size):
            return AccessFault(
                FaultKind.OUT_OF_BOUNDS,
                raw,
                effective,
                f"span [{effective:#x}, {effective + request.size - 1:#x}] outside "
                f"[{descriptor.base:#x}, {descriptor.bound:#x}]",
            )
        required = request.kind.required
        if required not in descriptor.permissions:
            return AccessFault(
                FaultKind.PERMISSION_DENIED,
                raw,
                effective,
                f"{request.kind.value} needs {required.label()} but descriptor grants "
                f"{descriptor.permissions.label()}",
            )
        if descriptor.state is not DescriptorState.LIVE:
            return AccessFault(
                FaultKind.USE_AFTER_FREE,
                raw,
                effective,
                f"descriptor {descriptor.centroid:#x} was revoked",
            )
        return EffectiveAccess(effective, request.size, descriptor)

    def _resolve(
        self,
        word: Union[TaggedWord, int],
        lowfat: Optional[LowFatFields],
    ) -> Union[tuple[TaggedWord, ObjectDescriptor], AccessFault]:
        """Decoded word and its descriptor, revoked entries included."""
        if isinstance(word, TaggedWord):
            tagged = word
        else:
            try:
                tagged = decode(word)
            except MalformedTagError as exc:
                return AccessFault(FaultKind.MALFORMED_TAG, word, None, str(exc))
        centroid = centroid_of_word(tagged)
        if tagged.mode is PointerMode.ALIGNED:
            return tagged, self._aligned_descriptor(tagged, centroid, lowfat)
        result = self.store.lookup(centroid)
        if result.outcome is LookupOutcome.NOT_FOUND:
            return AccessFault(
                FaultKind.DESCRIPTOR_MISS,
                tagged.raw,
                None,
                f"no descriptor registered for centroid {centroid:#x}",
            )
        return tagged, result.descriptor

    def _aligned_descriptor(
        self,
        word: TaggedWord,
        centroid: int,
        lowfat: Optional[LowFatFields],
    ) -> ObjectDescriptor:
        if lowfat is not None:
            bounds = lowfat_bounds(word.slot, lowfat)
        else:
            bounds = aligned_bounds(word)
        if self.settings.aligned_liveness:
            result = self.store.lookup(centroid)
            if result.descriptor is not None:
                return result.descriptor
        return ObjectDescriptor(
            centroid=centroid,
            base=bounds.base,
            bound=bounds.bound,
            permissions=ALIGNED_DEFAULT_PERMISSIONS,
            level=Level.USER,
        )


def _raw(word: Union[TaggedWord, int]) -> int:
    return word.raw if isinstance(word, TaggedWord) else word
