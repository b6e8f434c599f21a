from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from pydantic import ValidationError

from centroid_mem.core.config import Settings, get_settings
from centroid_mem.core import logging as logging_utils
from centroid_mem.core.errors import (
    EXIT_DATA,
    EXIT_FAULTS,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    ArgumentError,
    CentroidMemError,
)
from centroid_mem.schemas.report import Report
from centroid_mem.services.compare import CompareRow, CompareTable, compare
from centroid_mem.services.ptr_codec import (
    PointerMode,
    TaggedWord,
    aligned_bounds,
    centroid_pair,
    decode,
    encode,
)
from centroid_mem.services.replay import ReplayEngine
from centroid_mem.services.workload import WorkloadParams, generate, inject
from centroid_mem.utils.hashing import canonical_json, report_digest
from centroid_mem.utils.trace_io import dump_trace, parse_trace

FORMATS = ("json", "csv", "human")

# flag dest -> Settings field
ENGINE_FLAGS = {
    "mode_threshold": "mode_threshold",
    "size_classes": "size_class_file",
    "cache_sets": "descriptor_cache_sets",
    "cache_ways": "descriptor_cache_ways",
    "range_capacity": "range_cache_capacity",
    "parent_scheme": "parent_scheme",
    "reuse": "reuse",
    "force_mode": "force_mode",
    "lowfat": "lowfat",
    "lowfat_m": "lowfat_block_exponent",
    "aligned_liveness": "aligned_liveness",
    "cpp_oob_one_past": "cpp_oob_one_past",
    "explain": "explain",
}


class UsageArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as ``ArgumentError``."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ArgumentError(f"{self.prog}: {message}")


def parse_int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from exc


def parse_hex_word(text: str) -> int:
    try:
        value = int(text, 16)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{text!r} is not a hex word") from exc
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text!r} does not fit 64 bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = UsageArgumentParser(
        prog="centroid-mem",
        description="CentroID tagged-word simulator: encodings, workloads, trace replay.",
    )
    parser.add_argument("--log-level", default=None, help="Log level for stderr JSON logs.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=UsageArgumentParser)

    engine = UsageArgumentParser(add_help=False)
    engine.add_argument("--mode-threshold", type=parse_int)
    engine.add_argument("--size-classes", metavar="PATH")
    engine.add_argument("--cache-sets", type=parse_int)
    engine.add_argument("--cache-ways", type=parse_int)
    engine.add_argument("--range-capacity", type=parse_int)
    engine.add_argument("--parent-scheme", choices=("dualtag", "rangecache", "pte"))
    engine.add_argument("--force-mode", choices=("aligned", "centroid"))
    engine.add_argument("--lowfat-m", type=parse_int)
    for flag in ("--reuse", "--lowfat", "--aligned-liveness", "--cpp-oob-one-past"):
        engine.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)

    inspect_cmd = commands.add_parser("inspect", help="Decompose a tagged word.")
    inspect_cmd.add_argument("word", nargs="?", type=parse_hex_word)
    inspect_cmd.add_argument("--mode", choices=("aligned", "centroid"))
    inspect_cmd.add_argument("--n", dest="exponent", type=parse_int)
    inspect_cmd.add_argument("--addr", type=parse_int)
    inspect_cmd.add_argument("--format", choices=("json", "human"), default="human")
    inspect_cmd.set_defaults(handler=cmd_inspect)

    gen_cmd = commands.add_parser("gen", help="Generate a JSONL workload trace.")
    gen_cmd.add_argument("--allocations", type=parse_int, default=1000)
    gen_cmd.add_argument("--p-small", type=float, default=0.99)
    gen_cmd.add_argument("--access-rate", type=float, default=2.0)
    gen_cmd.add_argument("--small-lifetime", type=float, default=4.0)
    gen_cmd.add_argument("--large-lifetime", type=float, default=256.0)
    gen_cmd.add_argument("--large-max", type=parse_int, default=16 * 1024 * 1024)
    gen_cmd.add_argument("--spatial-rate", type=float, default=0.0)
    gen_cmd.add_argument("--temporal-rate", type=float, default=0.0)
    gen_cmd.add_argument("--double-free-rate", type=float, default=0.0)
    gen_cmd.add_argument("--seed", type=parse_int, default=None)
    gen_cmd.add_argument("-o", "--output", default="-", metavar="PATH")
    gen_cmd.set_defaults(handler=cmd_gen)

    run_cmd = commands.add_parser("run", parents=[engine], help="Replay a trace.")
    add_output_arguments(run_cmd, default_format="json")
    run_cmd.add_argument("trace", help="Trace path, or - for stdin.")
    run_cmd.add_argument("--strict", action="store_true", help="Exit 2 when any fault occurred.")
    run_cmd.add_argument("--explain", action="store_const", const=True, default=None)
    run_cmd.set_defaults(handler=cmd_run)

    compare_cmd = commands.add_parser(
        "compare", parents=[engine], help="Replay a trace under each bounds back-end."
    )
    add_output_arguments(compare_cmd, default_format="human")
    compare_cmd.add_argument("trace", help="Trace path, or - for stdin.")
    compare_cmd.set_defaults(handler=cmd_compare)
    return parser


def add_output_arguments(command: argparse.ArgumentParser, *, default_format: str) -> None:
    # each command owns its --format action and default
    command.add_argument("--format", choices=FORMATS, default=default_format)
    command.add_argument("-o", "--output", default="-", metavar="PATH")


def settings_from_args(args: argparse.Namespace, base: Settings) -> Settings:
    update = {
        field: getattr(args, dest)
        for dest, field in ENGINE_FLAGS.items()
        if getattr(args, dest, None) is not None
    }
    if not update:
        return base
    try:
        return Settings.model_validate({**base.model_dump(), **update})
    except ValidationError as exc:
        raise ArgumentError(f"invalid option value: {exc.errors()[0]['msg']}") from exc


def cmd_inspect(args: argparse.Namespace, settings: Settings) -> int:
    if args.word is not None:
        if args.mode or args.exponent is not None or args.addr is not None:
            raise ArgumentError("inspect takes either a word or --mode/--n/--addr, not both")
        raw = args.word
    else:
        if args.mode is None or args.exponent is None or args.addr is None:
            raise ArgumentError("inspect needs a hex word or all of --mode, --n and --addr")
        try:
            raw = encode(PointerMode(args.mode), args.exponent, args.addr)
        except CentroidMemError as exc:
            raise ArgumentError(str(exc)) from exc
    word = decode(raw)
    fields = describe_word(word)
    if args.format == "json":
        _emit("-", json.dumps(fields, indent=2) + "\n")
    else:
        width = max(len(key) for key in fields)
        _emit("-", "".join(f"{key:<{width}}  {value}\n" for key, value in fields.items()))
    return EXIT_OK


def describe_word(word: TaggedWord) -> dict[str, Any]:
    slot = word.slot
    fields: dict[str, Any] = {
        "word": f"{word.raw:#018x}",
        "mode": word.mode.value,
        "exponent": word.exponent,
        "address": hex(word.address),
        "slot": f"[{slot.base:#x}, {slot.bound:#x}]",
        "cid": hex(slot.cid),
    }
    if word.mode is PointerMode.ALIGNED:
        bounds = aligned_bounds(word)
        fields["bounds"] = f"[{bounds.base:#x}, {bounds.bound:#x}]"
    else:
        centroid_l, centroid_h = centroid_pair(slot)
        fields["centroid_l"] = hex(centroid_l)
        fields["centroid_h"] = hex(centroid_h)
    return fields


def cmd_gen(args: argparse.Namespace, settings: Settings) -> int:
    _check_output_path(args.output)
    seed = args.seed if args.seed is not None else (settings.seed if settings.seed is not None else 0)
    try:
        params = _workload_params(args, seed)
    except ValidationError as exc:
        raise ArgumentError(f"invalid workload option: {exc.errors()[0]['msg']}") from exc
    events = generate(params)
    if params.spatial_rate or params.temporal_rate or params.double_free_rate:
        events = inject(
            events,
            params.spatial_rate,
            params.temporal_rate,
            seed,
            double_free_rate=params.double_free_rate,
        )
    _emit(args.output, dump_trace(events))
    return EXIT_OK


def _workload_params(args: argparse.Namespace, seed: int) -> WorkloadParams:
    return WorkloadParams(
        allocations=args.allocations,
        p_small=args.p_small,
        access_rate=args.access_rate,
        small_lifetime=args.small_lifetime,
        large_lifetime=args.large_lifetime,
        large_max=args.large_max,
        spatial_rate=args.spatial_rate,
        temporal_rate=args.temporal_rate,
        double_free_rate=args.double_free_rate,
        seed=seed,
    )


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    _check_output_path(args.output)
    events = parse_trace(_read_input(args.trace))
    report = ReplayEngine(settings).replay(events)
    _emit(args.output, render_report(report, args.format))
    if args.strict and any(report.faults.values()):
        return EXIT_FAULTS
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, settings: Settings) -> int:
    _check_output_path(args.output)
    events = parse_trace(_read_input(args.trace))
    table = compare(events, settings)
    _emit(args.output, render_compare(table, args.format))
    return EXIT_OK


def render_report(report: Report, fmt: str) -> str:
    if fmt == "json":
        return canonical_json(report) + "\n"
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key, value in report.flat_items():
            writer.writerow([key, "" if value is None else value])
        return buffer.getvalue()
    return _human_report(report)


def render_compare(table: CompareTable, fmt: str) -> str:
    if fmt == "json":
        return table.model_dump_json(indent=2) + "\n"
    columns = list(CompareRow.model_fields)
    rows = [[_cell(row.model_dump()[column]) for column in columns] for row in table.rows]
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
        return buffer.getvalue()
    widths = [max(len(column), *(len(row[index]) for row in rows)) for index, column in enumerate(columns)]
    lines = ["  ".join(column.ljust(widths[i]) for i, column in enumerate(columns))]
    lines += ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def _human_report(report: Report) -> str:
    counts = report.counts
    detection = report.detection
    lines = [
        f"events        {counts.events} ({counts.allocs} alloc, {counts.frees} free)",
        f"accesses      {counts.attempted} attempted, {counts.issued} issued, {counts.faulted} faulted",
        f"unsafe issued {counts.unsafe_issued}",
        "faults        "
        + (", ".join(f"{kind}={count}" for kind, count in report.faults.items() if count) or "none"),
        f"precision     {_cell(detection.precision)}",
        f"recall        {_cell(detection.recall)}",
        f"desc cache    hit rate {_cell(report.descriptor_cache.hit_rate)}",
    ]
    if report.parent_scheme is not None:
        lines.append(f"range cache   hit rate {_cell(report.range_cache.hit_rate)}")
        lines.append(f"parent scheme {report.parent_scheme}")
    for encoding, summary in report.fragmentation.items():
        lines.append(
            f"slack {encoding:<8}{summary.objects} objects, mean {summary.mean_slack:.2f}, "
            f"max {summary.max_slack}"
        )
    lines.append(f"digest        {report_digest(report)}")
    if report.verdicts is not None:
        lines.append("verdicts")
        for verdict in report.verdicts:
            target = "-" if verdict.object_id is None else str(verdict.object_id)
            label = f"  [{verdict.label}]" if verdict.label else ""
            lines.append(
                f"  seq {verdict.seq:<6} object {target:<6} {verdict.effective_address or '-':<20} "
                f"{verdict.kind} {verdict.size}  {verdict.outcome}{label}"
            )
    return "\n".join(lines) + "\n"


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _read_input(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def _check_output_path(path: str) -> None:
    if path == "-":
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory {parent} does not exist")


def _emit(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or EXIT_OK)

    handler: Callable[[argparse.Namespace, Settings], int] = args.handler
    try:
        settings = settings_from_args(args, get_settings())
        logging_utils.configure_logging((args.log_level or settings.log_level).upper())
        return handler(args, settings)
    except CentroidMemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception:
        logging_utils.log_unhandled_exception("command_failed", command=args.command)
        raise


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
