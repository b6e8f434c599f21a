from __future__ import annotations

from typing import Callable

import pytest

from centroid_mem.core.config import Settings
from centroid_mem.services.compare import (
    BACKENDS,
    aligned_worst_slack,
    backend_settings,
    compare,
    lowfat_worst_slack,
    slack_closed_form,
)
from centroid_mem.services.workload import WorkloadParams, generate, inject


@pytest.fixture(scope="module")
def trace() -> list:
    return inject(generate(WorkloadParams(allocations=400, seed=17)), 0.2, 0.2, seed=17)


def test_compare_produces_one_row_per_backend(trace: list, settings: Settings) -> None:
    table = compare(trace, settings)
    assert [row.backend for row in table.rows] == list(BACKENDS)
    for row in table.rows:
        assert row.objects == 400
        assert row.attempted == row.issued + row.faulted
        assert row.max_slack == row.closed_form_max_slack


def test_slack_orders_the_backends(trace: list, settings: Settings) -> None:
    table = compare(trace, settings)
    aligned, lowfat, centroid = (table.row(name) for name in BACKENDS)
    assert centroid.max_slack == 0
    assert centroid.total_reserved == centroid.total_requested
    assert lowfat.max_slack < aligned.max_slack
    assert lowfat.total_reserved <= aligned.total_reserved


def test_precise_bounds_miss_nothing(trace: list, settings: Settings) -> None:
    table = compare(trace, settings)
    centroid = table.row("centroid")
    aligned = table.row("aligned")
    assert centroid.spatial_recall == 1.0
    assert centroid.temporal_recall == 1.0
    assert aligned.spatial_recall is not None and aligned.spatial_recall < 1.0
    assert aligned.temporal_recall == 0.0


def test_backend_settings_drop_parent_scheme(make_settings: Callable[..., Settings]) -> None:
    base = make_settings(parent_scheme="pte", lowfat=True)
    assert backend_settings(base, "aligned").lowfat is False
    assert backend_settings(base, "lowfat").force_mode == "aligned"
    assert backend_settings(base, "centroid").force_mode == "centroid"
    assert all(backend_settings(base, name).parent_scheme is None for name in BACKENDS)


@pytest.mark.parametrize("exponent", range(2, 21))
def test_worst_slack_closed_forms(exponent: int) -> None:
    size = (1 << (exponent - 1)) + 1
    assert slack_closed_form(size, "aligned") == aligned_worst_slack(exponent)
    assert slack_closed_form(size, "lowfat") == lowfat_worst_slack(exponent)
    assert slack_closed_form(size, "centroid") == 0
    assert lowfat_worst_slack(exponent) <= aligned_worst_slack(exponent)


def test_row_lookup_rejects_unknown_backend(trace: list, settings: Settings) -> None:
    with pytest.raises(KeyError):
        compare(trace[:5], settings).row("baggy")  # type: ignore[arg-type]
