#!/usr/bin/env python3
"""
Command-line tool for TSDF recordings.
Usage: python cli/tsdf.py <command> [options]   (see --help)
"""
import argparse
import json
import logging
import sys
from pathlib import Path

# Add the project root to path so the packages import without installation
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from shared import config  # noqa: E402
from shared.errors import DatasetError, TsdfError  # noqa: E402
from shared.storage import IndexStore  # noqa: E402
from tsdf import convert, dataset, indexer, metadata  # noqa: E402
from tsdf.timecodec import format_iso8601, parse_iso8601, rebase  # noqa: E402

logger = logging.getLogger("tsdf.cli")

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_IO = 3

INDEX_DB_NAME = "index.db"

EPILOG = """\
environment:
  TSDF_AUDIT_TOLERANCE_MS  default end-timestamp tolerance for `audit` (otherwise one
                           time unit of the encoding, or one sample period, but no finer
                           than the precision end_iso8601 is written with)
  TSDF_METADATA_VERSION    metadata_version the validator expects (default 0.1)
  TSDF_LOG_LEVEL           log level for diagnostics on stderr (default WARNING)

exit status: 0 success, 1 validation/audit findings or data errors, 2 usage error, 3 I/O error
"""


def _emit_rows(rows, stream=None):
    stream = sys.stdout if stream is None else stream
    for row in rows:
        stream.write(json.dumps(row, ensure_ascii=False) + "\n")


def _parse_rows(text: str):
    start, sep, stop = text.partition("..")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}")
    try:
        return int(start), int(stop)
    except ValueError:
        raise argparse.ArgumentTypeError(f"row bounds must be integers, got {text!r}")


def _parse_assignment(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _dialect(args) -> convert.CsvDialect:
    return convert.CsvDialect(args.delimiter, args.decimal, args.quotechar)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    records = metadata.read_records(args.metadata)
    report = metadata.validate(records)
    if args.format == "json-lines":
        _emit_rows(report.to_rows())
    else:
        sys.stderr.write(report.to_text() + "\n")
    return EXIT_OK if report.ok else EXIT_FINDINGS


def cmd_info(args) -> int:
    records = metadata.read_records(args.metadata)
    if args.format == "json-lines":
        _emit_rows([{"group_id": r.group_id, **r.to_dict()} for r in records])
    else:
        print(metadata.render_table(metadata.flattened_table(records)))
    return EXIT_OK


def cmd_audit(args) -> int:
    rec = dataset.open_recording(args.metadata)
    tolerance_ns = None if args.tolerance_ms is None else int(round(args.tolerance_ms * 1_000_000))
    report = dataset.audit(rec, tolerance_ns)
    if args.format == "json-lines":
        _emit_rows(report.to_rows())
    else:
        print(report.to_text())
    return EXIT_OK if report.ok else EXIT_FINDINGS


def _slice_signals(data: dataset.GroupSlice):
    """SignalSpec for a read slice, re-based so the slice starts at its first instant."""
    dropped = ("rows", "end_iso8601", "checksum", "checksum_type")

    def fields_for(record, first):
        fields = {k: v for k, v in record.to_dict().items() if k not in dropped}
        if first is not None:
            fields["start_iso8601"] = format_iso8601(rebase(parse_iso8601(record.start_iso8601), first))
        return fields

    group = data.group
    files = []
    shared = data.shared_timestamps
    first_shared = int(shared[0]) if shared is not None and shared.size else None
    if group.time_source.kind == dataset.TimeSourceKind.TIME_FILE:
        files.append(dataset.FileSpec(fields_for(group.time_source.record, first_shared)))
    for piece in data.slices:
        matrix = piece.matrix
        values = matrix.raw if matrix.raw is not None and piece.record.scale_factors is None else matrix.values
        own = None if group.shares_timeline else piece.timestamps
        first = first_shared if own is None else (int(own[0]) if own.size else None)
        files.append(dataset.FileSpec(fields_for(piece.record, first), values, own))
    instants = shared if group.time_source.kind == dataset.TimeSourceKind.TIME_FILE else None
    return dataset.SignalSpec(tuple(files), instants)


def cmd_slice(args) -> int:
    rec = dataset.open_recording(args.metadata)
    start, stop = args.rows
    if args.bin:
        data = dataset.read_group(rec, args.group, (start, stop), args.file)
        written = dataset.create_recording([_slice_signals(data)], args.bin, overwrite=args.overwrite)
        logger.info(f"Wrote slice to {written[0]}")
        print(written[0])
        return EXIT_OK
    text = convert.export_csv(rec, args.group, (start, stop), args.file, args.time_format, _dialect(args))
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_import_csv(args) -> int:
    template = {}
    if args.template:
        template.update(json.loads(Path(args.template).read_text(encoding="utf-8")))
    template.update(dict(args.set or []))
    mapping = convert.parse_mapping(args.map) if args.map else None
    rec = convert.import_csv(
        args.csv,
        args.out,
        template,
        mapping=mapping,
        dialect=_dialect(args),
        time_compression=args.time_compression,
        strict_monotone=args.strict_monotone,
        overwrite=args.overwrite,
    )
    print(rec.metadata_path)
    return EXIT_OK


def cmd_export_csv(args) -> int:
    rec = dataset.open_recording(args.metadata)
    text = convert.export_csv(rec, args.group, args.rows, args.file, args.time_format, _dialect(args))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    scale_factors = [float(v) for v in args.scale_factors.split(",")] if args.scale_factors else None
    rec = convert.synth(
        args.out,
        channels=args.channels,
        rate=args.rate,
        duration=args.duration,
        seed=args.seed,
        data_type=args.data_type,
        bits=args.bits,
        endianness=args.endianness,
        time_encoding=args.time_encoding,
        jitter=args.jitter,
        scale_factors=scale_factors,
        overwrite=args.overwrite,
    )
    print(rec.metadata_path)
    return EXIT_OK


def cmd_bench(args) -> int:
    rec = dataset.open_recording(args.metadata)
    report = convert.bench_storage(rec, args.slice_fraction, args.seed)
    if args.format == "json-lines":
        _emit_rows(report.to_rows())
    else:
        print(report.to_text())
    return EXIT_OK


def cmd_index_build(args) -> int:
    index = indexer.build_index(args.root, args.out, workers=args.workers)
    IndexStore(Path(args.out) / INDEX_DB_NAME).replace(index)
    for entry in index.skipped:
        sys.stderr.write(f"{entry.severity.value}: {entry.path}: [{entry.code}] {entry.message}\n")
    if args.format == "json-lines":
        _emit_rows([{"files": len(index.files), "channels": len(index.channels), "skipped": len(index.skipped)}])
    else:
        print(f"{len(index.files)} file(s), {len(index.channels)} channel(s), {len(index.skipped)} skipped")
    return EXIT_OK


def cmd_index_query(args) -> int:
    overlaps = None
    if args.t0 is not None or args.t1 is not None:
        if args.t0 is None or args.t1 is None:
            raise TsdfError("--from and --to go together", "invalid_time_range")
        overlaps = (indexer.parse_time_bound(args.t0), indexer.parse_time_bound(args.t1))
    flt = indexer.IndexFilter(args.subject, args.study, args.device, args.sensor_type, overlaps, args.channel)
    if args.root:
        rows = indexer.query(indexer.build_index(args.root), flt)
    else:
        db_path = Path(args.index) / INDEX_DB_NAME
        if not db_path.is_file():
            raise FileNotFoundError(f"No index database at {db_path}")
        rows = IndexStore(db_path).query(flt)
    dicts = indexer.rows_as_dicts(rows)
    if args.format == "json-lines":
        _emit_rows(dicts)
    elif dicts:
        header = list(dicts[0])
        table = [header] + [["" if d[k] is None else str(d[k]) for k in header] for d in dicts]
        print(metadata.render_table(table))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_format(parser):
    parser.add_argument("--format", choices=["text", "json-lines"], default="text", help="Output format")


def _add_dialect(parser):
    parser.add_argument("--delimiter", default=",", help="CSV field delimiter (default ',')")
    parser.add_argument("--decimal", default=".", help="Decimal mark (default '.')")
    parser.add_argument("--quotechar", default='"', help="CSV quote character (default '\"')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsdf",
        description="Read, write, validate, audit, convert and index TSDF recordings",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("validate", help="Parse, flatten and validate a metadata file")
    p.add_argument("metadata")
    _add_format(p)
    p.set_defaults(handler=cmd_validate)

    p = commands.add_parser("info", help="Show the flattened fields x files table")
    p.add_argument("metadata")
    _add_format(p)
    p.set_defaults(handler=cmd_info)

    p = commands.add_parser("audit", help="Cross-file consistency audit", epilog=EPILOG,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("metadata")
    p.add_argument("--tolerance-ms", type=float, default=None, help="End-timestamp tolerance in milliseconds")
    _add_format(p)
    p.set_defaults(handler=cmd_audit)

    p = commands.add_parser("slice", help="Read rows of one group to CSV or to a new recording")
    p.add_argument("metadata")
    p.add_argument("--group", type=int, default=0)
    p.add_argument("--rows", type=_parse_rows, required=True, help="Row range A..B (B exclusive)")
    out = p.add_mutually_exclusive_group()
    out.add_argument("--csv", help="Write CSV here (default: stdout)")
    out.add_argument("--bin", help="Write a new TSDF recording into this directory")
    p.add_argument("--file", help="Read only this file; files with their own time channel are bounded by their rows")
    p.add_argument("--time-format", choices=["iso", "elapsed"], default="iso")
    p.add_argument("--overwrite", action="store_true")
    _add_dialect(p)
    p.set_defaults(handler=cmd_slice)

    p = commands.add_parser("import-csv", help="Import a CSV file as a recording")
    p.add_argument("csv")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--map", help="column:label[:unit],... (label 'time' marks the time column); "
                                 "default reads 'label [unit]' headers")
    p.add_argument("--template", help="JSON file with fields for every record")
    p.add_argument("--set", action="append", type=_parse_assignment, metavar="FIELD=VALUE",
                   help="Set a template field (value parsed as JSON when possible)")
    p.add_argument("--time-compression", choices=["relative", "difference"], default="relative")
    p.add_argument("--strict-monotone", action="store_true", help="Reject repeated time values")
    p.add_argument("--overwrite", action="store_true")
    _add_dialect(p)
    p.set_defaults(handler=cmd_import_csv)

    p = commands.add_parser("export-csv", help="Export a group as CSV")
    p.add_argument("metadata")
    p.add_argument("--group", type=int, default=0)
    p.add_argument("--rows", type=_parse_rows, default=None, help="Row range A..B (default: all)")
    p.add_argument("--file", help="File to export when files keep their own time channel")
    p.add_argument("--time-format", choices=["iso", "elapsed"], default="iso")
    p.add_argument("--out", help="Output file (default: stdout)")
    _add_dialect(p)
    p.set_defaults(handler=cmd_export_csv)

    p = commands.add_parser("synth", help="Generate a deterministic synthetic recording")
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--rate", type=float, default=100.0, help="Sampling rate in Hz")
    p.add_argument("--duration", type=float, default=10.0, help="Duration in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--data-type", choices=list(metadata.DATA_TYPES), default="float")
    p.add_argument("--bits", type=int, choices=list(metadata.BIT_WIDTHS), default=32)
    p.add_argument("--endianness", choices=list(metadata.ENDIANNESS), default="little")
    p.add_argument("--time-encoding", choices=list(convert.SYNTH_TIME_ENCODINGS), default="uniform")
    p.add_argument("--jitter", type=float, default=0.0, help="Timestamp jitter as a fraction of the period")
    p.add_argument("--scale-factors", help="Comma-separated per-channel scale factors")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("bench", help="Binary vs CSV size and load latency")
    p.add_argument("metadata")
    p.add_argument("--slice-fraction", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)
    p.set_defaults(handler=cmd_bench)

    p = commands.add_parser("index", help="Build or query a metadata index")
    index_commands = p.add_subparsers(dest="index_command", required=True)

    q = index_commands.add_parser("build", help="Index every metadata file below a directory")
    q.add_argument("root")
    q.add_argument("--out", required=True, help="Directory for the CSV tables, schema.sql and index.db")
    q.add_argument("--workers", type=int, default=1)
    _add_format(q)
    q.set_defaults(handler=cmd_index_build)

    q = index_commands.add_parser("query", help="Query an index")
    source = q.add_mutually_exclusive_group(required=True)
    source.add_argument("--index", help="Directory written by 'index build'")
    source.add_argument("--root", help="Scan this directory instead of reading a stored index")
    q.add_argument("--subject")
    q.add_argument("--study")
    q.add_argument("--device")
    q.add_argument("--sensor-type")
    q.add_argument("--channel", help="Channel label")
    q.add_argument("--from", dest="t0", help="Window start (ISO 8601 with offset, or epoch ms)")
    q.add_argument("--to", dest="t1", help="Window end")
    _add_format(q)
    q.set_defaults(handler=cmd_index_query)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=config.LOG_LEVEL, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except DatasetError as e:
        print(f"❌ [{e.code}] {e}", file=sys.stderr)
        report = e.details.get("report")
        if report is not None:
            print(report.to_text(), file=sys.stderr)
        return EXIT_IO if e.code == "missing_binary_file" else EXIT_FINDINGS
    except TsdfError as e:
        print(f"❌ [{e.code}] {e}", file=sys.stderr)
        return EXIT_FINDINGS
    except OSError as e:
        print(f"❌ I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
