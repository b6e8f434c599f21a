from __future__ import annotations

import logging
import logging.config
from contextvars import ContextVar
from typing import Any, Optional, Union

from pythonjsonlogger import jsonlogger


run_id_ctx: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
trace_seq_ctx: ContextVar[Optional[int]] = ContextVar("trace_seq", default=None)


class ReplayContextFilter(logging.Filter):
    """Injects replay scoped context variables into each log record."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = run_id_ctx.get()
        record.trace_seq = trace_seq_ctx.get()
        return True


def configure_logging(level: Union[int, str] = logging.WARNING) -> None:
    """Configure JSON structured logging on stderr."""
    logging.config.dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "filters": {
                "replay_context": {
                    "()": ReplayContextFilter,
                }
            },
            "formatters": {
                "json": {
                    "()": jsonlogger.JsonFormatter,
                    "fmt": "%(asctime)s %(levelname)s %(name)s %(message)s",
                }
            },
            "handlers": {
                "default": {
                    "class": "logging.StreamHandler",
                    "stream": "ext://sys.stderr",
                    "level": level,
                    "formatter": "json",
                    "filters": ["replay_context"],
                }
            },
            "loggers": {
                "": {
                    "handlers": ["default"],
                    "level": level,
                }
            },
        }
    )


def set_replay_context(run_id: Optional[str] = None, trace_seq: Optional[int] = None) -> None:
    if run_id is not None:
        run_id_ctx.set(run_id)
    if trace_seq is not None:
        trace_seq_ctx.set(trace_seq)


def clear_replay_context() -> None:
    run_id_ctx.set(None)
    trace_seq_ctx.set(None)


def log_fault(
    *,
    kind: str,
    seq: Optional[int],
    word: Optional[int],
    effective_address: Optional[int],
    detail: str,
) -> None:
    logger = logging.getLogger("centroid_mem.faults")
    logger.debug(
        "fault_recorded",
        extra={
            "event": "fault_recorded",
            "run_id": run_id_ctx.get(),
            "seq": seq,
            "kind": kind,
            "word": None if word is None else f"{word:#018x}",
            "effective_address": None if effective_address is None else hex(effective_address),
            "detail": detail,
        },
    )


def log_replay_finished(
    *,
    events: int,
    attempted: int,
    issued: int,
    faulted: int,
    unsafe_issued: int,
    faults: dict[str, int],
) -> None:
    logger = logging.getLogger("centroid_mem.replay")
    logger.info(
        "replay_finished",
        extra={
            "event": "replay_finished",
            "run_id": run_id_ctx.get(),
            "events": events,
            "attempted": attempted,
            "issued": issued,
            "faulted": faulted,
            "unsafe_issued": unsafe_issued,
            "faults": {key: value for key, value in faults.items() if value},
        },
    )


def log_unhandled_exception(event: str, *, command: str, detail: Any = None) -> None:
    logger = logging.getLogger("centroid_mem.errors")
    logger.exception(
        event,
        extra={
            "command": command,
            "run_id": run_id_ctx.get(),
            "detail": detail,
        },
    )
