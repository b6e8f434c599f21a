from __future__ import annotations

import os
from pathlib import Path
from typing import Callable, Iterator

import pytest

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.services.alloc_sim import BinningAllocator
from centroid_mem.services.descriptor_store import DescriptorStore
from centroid_mem.services.dgu import DescriptorGenerationUnit

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    for name in list(os.environ):
        if name.startswith("CENTROID_MEM_"):
            monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def settings() -> Settings:
    return Settings(_env_file=None)


@pytest.fixture
def make_settings() -> Callable[..., Settings]:
    def factory(**overrides: object) -> Settings:
        return Settings(_env_file=None, **overrides)

    return factory


@pytest.fixture
def store() -> DescriptorStore:
    return DescriptorStore()


@pytest.fixture
def allocator(store: DescriptorStore, settings: Settings) -> BinningAllocator:
    return BinningAllocator(store, settings)


@pytest.fixture
def dgu(store: DescriptorStore, settings: Settings) -> DescriptorGenerationUnit:
    return DescriptorGenerationUnit(store, settings)


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--update-golden",
        action="store_true",
        default=False,
        help="Rewrite golden files under tests/data from the current output.",
    )


@pytest.fixture
def golden(request: pytest.FixtureRequest) -> Callable[[str, str], None]:
    """Compare text byte for byte against ``tests/data/<name>``.

    A missing file is recorded and the test skipped, so the first run on a
    fresh checkout pins the output for every later run.
    """
    update = request.config.getoption("--update-golden")

    def check(name: str, text: str) -> None:
        path = DATA_DIR / name
        if update or not path.exists():
            path.write_text(text, encoding="utf-8")
            if not update:
                pytest.skip(f"recorded golden file {name}")
            return
        assert text == path.read_text(encoding="utf-8")

    return check
