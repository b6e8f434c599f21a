from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from centroid_mem.services.ptr_codec import MAX_EXPONENT, MIN_EXPONENT, aligned_exponent


class SizeClass(BaseModel):
    max_size: int = Field(ge=1)
    exponent: int = Field(ge=MIN_EXPONENT, le=MAX_EXPONENT)


class SizeClassTable(BaseModel):
    classes: list[SizeClass] = Field(min_length=1)

    @model_validator(mode="after")
    def validate_classes(self) -> "SizeClassTable":
        previous: Optional[SizeClass] = None
        for size_class in self.classes:
            if size_class.max_size > 1 << size_class.exponent:
                raise ValueError(
                    f"class max_size {size_class.max_size} does not fit a 2^{size_class.exponent} slot"
                )
            if previous is not None and (
                size_class.max_size <= previous.max_size or size_class.exponent < previous.exponent
            ):
                raise ValueError("size classes must be strictly increasing")
            previous = size_class
        return self

    @classmethod
    def default(cls, threshold: int = 1024) -> "SizeClassTable":
        classes = []
        exponent = MIN_EXPONENT
        while 1 << exponent <= threshold:
            classes.append(SizeClass(max_size=1 << exponent, exponent=exponent))
            exponent += 1
        return cls(classes=classes)

    @classmethod
    def from_file(cls, path: str | Path) -> "SizeClassTable":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.model_validate(data)

    def exponent_for(self, size: int) -> int:
        """Slot exponent of the first class holding ``size``; sizes past the table use the minimal slot."""
        for size_class in self.classes:
            if size <= size_class.max_size:
                return size_class.exponent
        return aligned_exponent(size)
