"""Bit-exact tagged-word encodings and slot arithmetic.

Word layout (64 bits)::

    63      62 ....... 57  56 ................................ 0
    [mode]  [exponent N ]  [linear address, 57-bit canonical   ]

mode 0 is an Aligned Allocation word, mode 1 a CentroID word. Every function here is
pure and works on plain ``int`` values or frozen dataclasses.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Literal

from centroid_mem.core.errors import ArgumentError, MalformedTagError, ModeError

ADDRESS_BITS = 57
ADDRESS_MASK = (1 << ADDRESS_BITS) - 1
WORD_MASK = (1 << 64) - 1
MODE_SHIFT = 63
EXPONENT_SHIFT = 57
EXPONENT_MASK = 0x3F
MIN_EXPONENT = 1
MAX_EXPONENT = 56
DEFAULT_LOWFAT_M = 5

CentroidKind = Literal["L", "H"]


class PointerMode(str, Enum):
    ALIGNED = "aligned"
    CENTROID = "centroid"

    @property
    def bit(self) -> int:
        return 1 if self is PointerMode.CENTROID else 0


def _check_address(addr: int, name: str = "address") -> None:
    if addr < 0 or addr > ADDRESS_MASK:
        raise ArgumentError(f"{name} {addr:#x} is outside the 57-bit canonical space")


def _check_exponent(exponent: int) -> None:
    if not MIN_EXPONENT <= exponent <= MAX_EXPONENT:
        raise ArgumentError(f"slot exponent {exponent} outside [{MIN_EXPONENT}, {MAX_EXPONENT}]")


@dataclass(frozen=True)
class SlotSpec:
    base: int
    exponent: int

    def __post_init__(self) -> None:
        _check_exponent(self.exponent)
        _check_address(self.base, "slot base")
        if self.base & ((1 << self.exponent) - 1):
            raise ArgumentError(f"slot base {self.base:#x} is not 2^{self.exponent} aligned")

    @classmethod
    def containing(cls, addr: int, exponent: int) -> SlotSpec:
        return cls(slot_base(addr, exponent), exponent)

    @property
    def size(self) -> int:
        return 1 << self.exponent

    @property
    def bound(self) -> int:
        return self.base | (self.size - 1)

    @property
    def cid(self) -> int:
        """Slot-invariant address prefix shared by every byte of the slot."""
        return self.base >> self.exponent


@dataclass(frozen=True)
class BoundsDescriptor:
    base: int
    bound: int

    def __post_init__(self) -> None:
        if self.base > self.bound:
            raise ArgumentError(f"bounds base {self.base:#x} exceeds bound {self.bound:#x}")

    @property
    def length(self) -> int:
        return self.bound - self.base + 1

    def covers(self, addr: int, size: int = 1) -> bool:
        return self.base <= addr and addr + size - 1 <= self.bound


@dataclass(frozen=True)
class TaggedWord:
    mode: PointerMode
    exponent: int
    address: int

    def __post_init__(self) -> None:
        _check_exponent(self.exponent)
        _check_address(self.address)

    @property
    def raw(self) -> int:
        return encode(self.mode, self.exponent, self.address)

    @property
    def slot(self) -> SlotSpec:
        return SlotSpec.containing(self.address, self.exponent)

    def with_address(self, address: int) -> TaggedWord:
        return TaggedWord(self.mode, self.exponent, address)

    def __str__(self) -> str:
        return f"{self.raw:#018x}"


@dataclass(frozen=True)
class LowFatFields:
    exponent: int
    sub_exponent: int
    first_block: int
    last_block: int

    def __post_init__(self) -> None:
        _check_exponent(self.exponent)
        if not 0 <= self.sub_exponent <= self.exponent:
            raise ArgumentError(
                f"sub-block exponent {self.sub_exponent} outside [0, {self.exponent}]"
            )
        if self.first_block < 0 or self.last_block >= 1 << self.block_count_exponent:
            raise ArgumentError(
                f"block indices ({self.first_block}, {self.last_block}) do not fit "
                f"{self.block_count_exponent}-bit fields"
            )

    @property
    def block_count_exponent(self) -> int:
        return self.exponent - self.sub_exponent

    @property
    def block_size(self) -> int:
        return 1 << self.sub_exponent


def count_trailing_zeros(value: int) -> int:
    if value == 0:
        return ADDRESS_BITS
    return (value & -value).bit_length() - 1


def count_trailing_ones(value: int) -> int:
    return count_trailing_zeros(~value & ADDRESS_MASK)


def slot_base(addr: int, exponent: int) -> int:
    return addr & ~((1 << exponent) - 1)


def min_slot_exponent(start: int, end: int) -> int:
    """Smallest N >= 1 whose 2^N-aligned slot holds both ``start`` and ``end``."""
    _check_address(start, "start")
    _check_address(end, "end")
    if start > end:
        raise ArgumentError(f"range start {start:#x} exceeds end {end:#x}")
    exponent = max((start ^ end).bit_length(), MIN_EXPONENT)
    if exponent > MAX_EXPONENT:
        raise ArgumentError(f"range [{start:#x}, {end:#x}] needs a slot wider than 2^56")
    return exponent


def in_slot_check(addr: int, slot: SlotSpec) -> bool:
    return addr >> slot.exponent == slot.base >> slot.exponent


def aligned_bounds(word: TaggedWord) -> BoundsDescriptor:
    if word.mode is not PointerMode.ALIGNED:
        raise ModeError("aligned_bounds requires an Aligned-mode word")
    base = slot_base(word.address, word.exponent)
    return BoundsDescriptor(base, base | ((1 << word.exponent) - 1))


def lowfat_bounds(slot: SlotSpec, fields: LowFatFields) -> BoundsDescriptor:
    if fields.exponent != slot.exponent:
        raise ArgumentError(
            f"Low-Fat fields for N={fields.exponent} applied to a 2^{slot.exponent} slot"
        )
    if fields.first_block > fields.last_block:
        raise ArgumentError(
            f"first block {fields.first_block} exceeds last block {fields.last_block}"
        )
    e = fields.sub_exponent
    base = slot.base | (fields.first_block << e)
    bound = slot.base | (fields.last_block << e) | ((1 << e) - 1)
    return BoundsDescriptor(base, bound)


def lowfat_layout(size: int, block_count_exponent: int = DEFAULT_LOWFAT_M) -> LowFatFields:
    """Fields for an object of ``size`` bytes placed at the base of its minimal slot."""
    if size < 1:
        raise ArgumentError("object size must be at least one byte")
    exponent = aligned_exponent(size)
    sub_exponent = max(exponent - block_count_exponent, 0)
    blocks = -(-size // (1 << sub_exponent))
    return LowFatFields(exponent, sub_exponent, 0, blocks - 1)


def aligned_exponent(size: int) -> int:
    """Exponent of the smallest 2^N slot holding ``size`` bytes (N >= 1)."""
    return max((max(size, 2) - 1).bit_length(), MIN_EXPONENT)


def centroid_pair(slot: SlotSpec) -> tuple[int, int]:
    half = 1 << (slot.exponent - 1)
    return slot.base | (half - 1), slot.base | half


def canonical_centroid(start: int, end: int) -> int:
    if start >= end:
        raise ArgumentError(
            f"centroid needs a range of at least two bytes, got [{start:#x}, {end:#x}]"
        )
    exponent = min_slot_exponent(start, end)
    _, centroid_h = centroid_pair(SlotSpec.containing(start, exponent))
    return centroid_h


def centroid_of_word(word: TaggedWord) -> int:
    """CentroID-H of the slot named by a word; valid for both pointer modes."""
    _, centroid_h = centroid_pair(word.slot)
    return centroid_h


def exponent_from_centroid(centroid: int, which: CentroidKind) -> int:
    if which == "L":
        return count_trailing_ones(centroid) + 1
    return count_trailing_zeros(centroid) + 1


def encode(mode: PointerMode, exponent: int, addr: int) -> int:
    _check_exponent(exponent)
    _check_address(addr)
    return (mode.bit << MODE_SHIFT) | (exponent << EXPONENT_SHIFT) | addr


def decode(word: int) -> TaggedWord:
    if word < 0 or word > WORD_MASK:
        raise MalformedTagError(f"value {word:#x} is not a 64-bit word", word)
    exponent = (word >> EXPONENT_SHIFT) & EXPONENT_MASK
    if not MIN_EXPONENT <= exponent <= MAX_EXPONENT:
        raise MalformedTagError(
            f"word {word:#018x} carries slot exponent {exponent}, outside "
            f"[{MIN_EXPONENT}, {MAX_EXPONENT}]",
            word,
        )
    mode = PointerMode.CENTROID if word >> MODE_SHIFT else PointerMode.ALIGNED
    return TaggedWord(mode, exponent, word & ADDRESS_MASK)
