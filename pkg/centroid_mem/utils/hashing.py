from __future__ import annotations

import hashlib
import json

from centroid_mem.schemas.report import Report


def sha256_hex(value: bytes | str) -> str:
    if isinstance(value, str):
        value = value.encode("utf-8")
    digest = hashlib.sha256()
    digest.update(value)
    return digest.hexdigest()


def canonical_json(report: Report) -> str:
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def report_digest(report: Report) -> str:
    return sha256_hex(canonical_json(report))
