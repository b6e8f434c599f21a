from __future__ import annotations

from functools import lru_cache
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

ModeName = Literal["aligned", "centroid"]
ParentSchemeName = Literal["dualtag", "rangecache", "pte"]


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        populate_by_name=True,
    )

    log_level: str = Field(default="WARNING", alias="CENTROID_MEM_LOG_LEVEL")
    seed: Optional[int] = Field(default=None, alias="CENTROID_MEM_SEED")

    mode_threshold: int = Field(default=1024, ge=2, alias="CENTROID_MEM_MODE_THRESHOLD")
    size_class_file: Optional[str] = Field(default=None, alias="CENTROID_MEM_SIZE_CLASSES")
    user_arena_base: int = Field(default=1 << 32, ge=0, alias="CENTROID_MEM_USER_ARENA_BASE")
    system_arena_base: int = Field(default=1 << 34, ge=0, alias="CENTROID_MEM_SYSTEM_ARENA_BASE")
    arena_size: int = Field(default=1 << 32, gt=0, alias="CENTROID_MEM_ARENA_SIZE")
    reuse: bool = Field(default=False, alias="CENTROID_MEM_REUSE")
    force_mode: Optional[ModeName] = Field(default=None, alias="CENTROID_MEM_FORCE_MODE")
    lowfat: bool = Field(default=False, alias="CENTROID_MEM_LOWFAT")
    lowfat_block_exponent: int = Field(default=5, ge=1, le=16, alias="CENTROID_MEM_LOWFAT_M")

    descriptor_cache_sets: int = Field(default=64, ge=1, alias="CENTROID_MEM_CACHE_SETS")
    descriptor_cache_ways: int = Field(default=4, ge=1, alias="CENTROID_MEM_CACHE_WAYS")
    range_cache_capacity: int = Field(default=16, ge=1, alias="CENTROID_MEM_RANGE_CAPACITY")

    aligned_liveness: bool = Field(default=False, alias="CENTROID_MEM_ALIGNED_LIVENESS")
    cpp_oob_one_past: bool = Field(default=False, alias="CENTROID_MEM_CPP_OOB_ONE_PAST")

    parent_scheme: Optional[ParentSchemeName] = Field(default=None, alias="CENTROID_MEM_PARENT_SCHEME")
    parent_window_base: int = Field(default=0x4000_0000, ge=0, alias="CENTROID_MEM_PARENT_BASE")
    parent_window_size: int = Field(default=0x4000_0000, gt=0, alias="CENTROID_MEM_PARENT_SIZE")
    page_size: int = Field(default=4096, ge=2, alias="CENTROID_MEM_PAGE_SIZE")

    explain: bool = Field(default=False, alias="CENTROID_MEM_EXPLAIN")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
