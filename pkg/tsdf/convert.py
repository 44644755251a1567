"""
CSV import/export, synthetic recordings and the text-vs-binary storage benchmark.
"""
import csv
import io
import logging
import os
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from shared.errors import ConversionError, TsdfError
from tsdf.dataset import (
    TIME_LABEL,
    FileSpec,
    Recording,
    SignalSpec,
    TimeSourceKind,
    time_channel_index,
    create_recording,
    open_recording,
    read_group,
)
from tsdf.metadata import Layout
from tsdf.timecodec import (
    UNIT_NANOS,
    format_iso8601,
    parse_iso8601,
    rebase,
    to_epoch_nanos,
)

logger = logging.getLogger(__name__)

# Commonly quoted size overhead of CSV over raw binary samples
CLAIMED_TEXT_OVERHEAD = 4.0

TIME_ROLE = "time"
CHANNEL_ROLE = "channel"

_HEADER_RE = re.compile(r"^\s*(?P<label>.+?)\s*\[(?P<unit>[^\]]*)\]\s*$")

# fields the import derives itself; a template value for them is ignored
_DERIVED_FIELDS = ("end_iso8601", "rows", "file_name", "channels", "units", "compression", "sampling_rate")


@dataclass(frozen=True)
class CsvDialect:
    delimiter: str = ","
    decimal: str = "."
    quotechar: str = '"'

    def __post_init__(self):
        if len(self.delimiter) != 1 or len(self.decimal) != 1 or len(self.quotechar) != 1:
            raise ConversionError("Delimiter, decimal mark and quote char must be single characters", "invalid_dialect")
        if self.delimiter == self.decimal:
            raise ConversionError(
                f"Delimiter and decimal mark are both {self.delimiter!r}", "invalid_dialect"
            )


@dataclass(frozen=True)
class ColumnMapping:
    """Where one CSV column goes: the time role, or a channel with label and unit."""

    column: str
    role: str = CHANNEL_ROLE
    label: Optional[str] = None
    unit: Optional[str] = None

    @property
    def channel_label(self) -> str:
        return self.label or self.column


def parse_mapping(text: str) -> List[ColumnMapping]:
    """
    Parse ``column:label:unit`` items separated by commas, e.g.
    ``t_ms:time:ms,x:X:m/s/s``. A label of ``time`` marks the time column.
    """
    mapping = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ConversionError(f"Bad mapping item {item!r}, expected column:label[:unit]", "invalid_mapping")
        column, label = parts[0], parts[1]
        unit = parts[2] if len(parts) == 3 else None
        role = TIME_ROLE if label == TIME_LABEL else CHANNEL_ROLE
        mapping.append(ColumnMapping(column, role, label, unit))
    return mapping


def mapping_from_header(header: Sequence[str]) -> List[ColumnMapping]:
    """Read ``label [unit]`` headers back into a mapping (the export_csv header form)."""
    mapping = []
    for column in header:
        match = _HEADER_RE.match(column)
        label, unit = (match["label"], match["unit"]) if match else (column.strip(), None)
        role = TIME_ROLE if label == TIME_LABEL else CHANNEL_ROLE
        mapping.append(ColumnMapping(column, role, label, unit))
    return mapping


# ---------------------------------------------------------------------------
# Import
# ---------------------------------------------------------------------------


def _parse_number(cell: str, dialect: CsvDialect, row: int, column: int) -> float:
    text = cell.strip()
    if dialect.decimal != ".":
        text = text.replace(dialect.decimal, ".")
    try:
        return float(text)
    except ValueError:
        raise ConversionError(
            f"Row {row}, column {column}: cannot parse {cell!r} as a number",
            "unparseable_number",
            row=row,
            column=column,
        )


def _parse_time(cell: str, dialect: CsvDialect, unit_ns: int, row: int, column: int):
    """Return (epoch nanoseconds or None, elapsed nanoseconds or None)."""
    text = cell.strip()
    if "T" in text:
        try:
            return to_epoch_nanos(parse_iso8601(text), allow_local=True), None
        except TsdfError as e:
            raise ConversionError(f"Row {row}, column {column}: {e}", "unparseable_time", row=row, column=column)
    if dialect.decimal != ".":
        text = text.replace(dialect.decimal, ".")
    try:
        elapsed = Decimal(text) * unit_ns
    except InvalidOperation:
        raise ConversionError(
            f"Row {row}, column {column}: cannot parse {cell!r} as a time value",
            "unparseable_time",
            row=row,
            column=column,
        )
    if not elapsed.is_finite():
        raise ConversionError(f"Row {row}, column {column}: time value {cell!r}", "unparseable_time",
                              row=row, column=column)
    return None, int(elapsed.to_integral_value())


def _exact_in_unit(deltas: np.ndarray, unit_ns: int) -> bool:
    return bool(np.all(deltas % unit_ns == 0))


def import_csv(
    csv_path: Union[str, os.PathLike],
    out_dir: Union[str, os.PathLike],
    template: Mapping[str, Any],
    mapping: Optional[Sequence[ColumnMapping]] = None,
    dialect: CsvDialect = CsvDialect(),
    time_compression: str = "relative",
    strict_monotone: bool = False,
    metadata_name: Optional[str] = None,
    overwrite: bool = False,
) -> Recording:
    """
    Import a rectangular CSV file as a one-group recording.

    Args:
        csv_path: CSV file with a header row.
        out_dir: Directory for the metadata and binary files.
        template: Fields copied into every record (subject_id, study_id,
            device_id, endianness, metadata_version, data_type, bits, ...).
            start_iso8601 is required unless the time column holds ISO 8601
            timestamps; sampling_rate is required when no time column is mapped.
        mapping: Column roles; defaults to reading ``label [unit]`` headers.
            Unmapped columns are dropped.
        dialect: Delimiter, decimal mark and quote character. Never guessed.
        time_compression: "relative" or "difference" for the time file.
        strict_monotone: Reject repeated time values.

    Returns:
        The opened recording.

    Numeric time cells are elapsed time in the mapped unit since
    start_iso8601. Parse failures report the 1-based file row and column.
    """
    csv_path = Path(csv_path)
    if time_compression not in ("relative", "difference"):
        raise ConversionError(f"Time compression must be relative or difference, got {time_compression!r}",
                              "invalid_time_compression")
    with open(csv_path, "r", newline="", encoding="utf-8") as fid:
        rows = list(csv.reader(fid, delimiter=dialect.delimiter, quotechar=dialect.quotechar))
    if not rows:
        raise ConversionError(f"{csv_path}: no header row", "missing_header")
    header, body = rows[0], rows[1:]
    mapping = list(mapping) if mapping is not None else mapping_from_header(header)

    positions = {}
    for item in mapping:
        if item.column not in header:
            raise ConversionError(f"{csv_path}: no column {item.column!r} in header", "unknown_column",
                                  column=item.column)
        positions[item.column] = header.index(item.column)
    time_items = [m for m in mapping if m.role == TIME_ROLE]
    channel_items = [m for m in mapping if m.role == CHANNEL_ROLE]
    if len(time_items) > 1:
        raise ConversionError("More than one column mapped to time", "ambiguous_time_source")
    if not channel_items:
        raise ConversionError("No column mapped to a channel", "no_channels")
    time_item = time_items[0] if time_items else None
    time_unit = (time_item.unit or "ms") if time_item else None
    if time_unit is not None and time_unit not in UNIT_NANOS:
        raise ConversionError(f"Unknown time unit {time_unit!r}", "unknown_time_unit")

    fields = {k: v for k, v in template.items() if k not in _DERIVED_FIELDS}
    start_ns = None
    if template.get("start_iso8601"):
        start_ns = to_epoch_nanos(parse_iso8601(template["start_iso8601"]), allow_local=True)

    values = np.empty((len(body), len(channel_items)), dtype=np.float64)
    instants = np.empty(len(body), dtype=np.int64)
    for index, line in enumerate(body):
        row = index + 2
        if len(line) != len(header):
            raise ConversionError(
                f"Row {row} has {len(line)} fields, header has {len(header)}", "ragged_row", row=row
            )
        for c, item in enumerate(channel_items):
            col = positions[item.column]
            values[index, c] = _parse_number(line[col], dialect, row, col + 1)
        if time_item is not None:
            col = positions[time_item.column]
            absolute, elapsed = _parse_time(line[col], dialect, UNIT_NANOS[time_unit], row, col + 1)
            if absolute is None:
                if start_ns is None:
                    raise ConversionError("Numeric time values need start_iso8601 in the template",
                                          "missing_mandatory:start_iso8601")
                absolute = start_ns + elapsed
            instants[index] = absolute

    stem = csv_path.stem
    files = []
    signal_instants = None
    if time_item is not None:
        if strict_monotone and instants.size > 1:
            repeats = np.flatnonzero(np.diff(instants) == 0)
            if repeats.size:
                row = int(repeats[0]) + 3
                raise ConversionError(f"Row {row} repeats the previous time value", "duplicate_time", row=row)
        if "start_iso8601" not in fields:
            if not instants.size:
                raise ConversionError("An empty CSV needs start_iso8601 in the template",
                                      "missing_mandatory:start_iso8601")
            first = parse_iso8601(body[0][positions[time_item.column]].strip())
            fields["start_iso8601"] = format_iso8601(rebase(first, int(instants.min())))
            start_ns = int(instants.min())
        exact = _exact_in_unit(instants - np.int64(start_ns), UNIT_NANOS[time_unit])
        files.append(FileSpec({
            "file_name": f"{stem}_time.bin",
            "channels": [TIME_LABEL],
            "units": [time_unit],
            "compression": time_compression,
            "data_type": "int" if exact else "float",
            "bits": 64,
        }))
        signal_instants = instants
    else:
        if not template.get("sampling_rate"):
            raise ConversionError("No time column mapped and no sampling_rate in the template",
                                  "absent_time_source")
        fields["sampling_rate"] = template["sampling_rate"]

    files.append(FileSpec({
        "file_name": f"{stem}_samples.bin",
        "channels": [m.channel_label for m in channel_items],
        "units": [m.unit or "unitless" for m in channel_items],
        "data_type": fields.pop("data_type", "float"),
        "bits": fields.pop("bits", 64),
    }, values))

    if time_item is None:
        fields.setdefault("compression", "none")
    written = create_recording(
        [SignalSpec(tuple(files), signal_instants)],
        out_dir,
        common=fields,
        metadata_name=metadata_name or f"{stem}_metadata.json",
        layout=Layout.GROUPED_BY_COMMON_PREFIX,
        overwrite=overwrite,
    )
    logger.info(f"Imported {len(body)} rows from {csv_path}")
    return open_recording(written[0])


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def format_value(value: Any, decimal: str = ".") -> str:
    """Shortest text that reads back to the same number in its own precision."""
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    if isinstance(value, np.floating) and not np.isfinite(value):
        return "nan" if np.isnan(value) else ("inf" if value > 0 else "-inf")
    text = np.format_float_positional(value, unique=True, trim="-")
    return text.replace(".", decimal) if decimal != "." else text


def format_elapsed(delta_ns: int, unit: str, decimal: str = ".") -> str:
    """Exact decimal rendering of ``delta_ns`` in ``unit``."""
    unit_ns = UNIT_NANOS[unit]
    sign = "-" if delta_ns < 0 else ""
    whole, rest = divmod(abs(int(delta_ns)), unit_ns)
    if not rest:
        return f"{sign}{whole}"
    digits = len(str(unit_ns)) - 1
    return f"{sign}{whole}{decimal}{rest:0{digits}d}".rstrip("0")


def _timeline_unit(rec: Recording, group_id: int, file_name: Optional[str]) -> str:
    group = rec.group(group_id)
    source = group.time_source
    if source.kind == TimeSourceKind.TIME_FILE:
        return source.record.units[0]
    if source.kind == TimeSourceKind.TIME_CHANNEL:
        record = rec.record(file_name) if file_name else group.amplitude_records[0]
        return record.units[time_channel_index(record)]
    return "s"


def export_csv(
    rec: Recording,
    group_id: int = 0,
    row_range: Optional[Tuple[int, int]] = None,
    file_name: Optional[str] = None,
    time_format: str = "iso",
    dialect: CsvDialect = CsvDialect(),
) -> str:
    """
    Render rows of a group as CSV text.

    The first column is the timestamp, either ISO 8601 in the offset of the
    record's start_iso8601 (``time_format="iso"``) or exact elapsed time in
    the time unit (``"elapsed"``, header ``time [ms]``). Channel headers read
    ``label [unit]``. For groups whose files carry their own time channel,
    ``file_name`` picks the file (default: the first).
    """
    if time_format not in ("iso", "elapsed"):
        raise ConversionError(f"Unknown time format {time_format!r}", "invalid_time_format")
    group = rec.group(group_id)
    names = [r.file_name for r in group.amplitude_records]
    if file_name is not None and file_name not in names:
        raise ConversionError(f"{file_name!r} is not an amplitude file of group {group_id}", "unknown_file")
    if file_name is None and not group.shares_timeline:
        file_name = names[0]
    slices = read_group(rec, group_id, row_range, file_name).slices
    timestamps = slices[0].timestamps

    start_text = slices[0].record.start_iso8601
    start = parse_iso8601(start_text)
    start_ns = to_epoch_nanos(start, allow_local=True)
    unit = _timeline_unit(rec, group_id, slices[0].record.file_name)

    header = ["time" if time_format == "iso" else f"time [{unit}]"]
    columns = []
    for piece in slices:
        for index, (label, channel_unit) in enumerate(zip(piece.record.channels, piece.record.units)):
            if label == TIME_LABEL:
                continue
            header.append(f"{label} [{channel_unit}]")
            columns.append(piece.matrix.values[:, index])

    out = io.StringIO()
    writer = csv.writer(out, delimiter=dialect.delimiter, quotechar=dialect.quotechar, lineterminator="\n")
    writer.writerow(header)
    for row, instant in enumerate(timestamps.tolist()):
        if time_format == "iso":
            stamp = format_iso8601(rebase(start, instant))
        else:
            stamp = format_elapsed(instant - start_ns, unit, dialect.decimal)
        writer.writerow([stamp] + [format_value(column[row], dialect.decimal) for column in columns])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Synthetic recordings
# ---------------------------------------------------------------------------


SYNTH_TIME_ENCODINGS = ("uniform", "relative", "difference", "absolute")


def synth(
    out_dir: Union[str, os.PathLike],
    channels: int = 3,
    rate: float = 100.0,
    duration: float = 10.0,
    seed: int = 0,
    data_type: str = "float",
    bits: int = 32,
    endianness: str = "little",
    time_encoding: str = "uniform",
    jitter: float = 0.0,
    scale_factors: Optional[Sequence[float]] = None,
    start_iso8601: str = "2020-01-01T00:00:00.000+00:00",
    overwrite: bool = False,
) -> Recording:
    """
    Write a deterministic synthetic recording: a few sinusoids plus noise per
    channel, seeded by ``seed``.

    ``time_encoding="uniform"`` stores no timestamps. Any other encoding writes
    a microsecond time file; ``jitter`` (fraction of a sample period, < 1)
    perturbs the instants so they are no longer uniform.
    """
    if time_encoding not in SYNTH_TIME_ENCODINGS:
        raise ConversionError(f"Unknown time encoding {time_encoding!r}", "invalid_time_encoding")
    if not 0.0 <= jitter < 1.0:
        raise ConversionError("jitter must be in [0, 1)", "invalid_jitter")
    if channels < 1 or rate <= 0 or duration < 0:
        raise ConversionError("Need at least one channel, a positive rate and a non-negative duration",
                              "invalid_synth_parameters")

    rng = np.random.default_rng(seed)
    rows = int(round(rate * duration))
    t = np.arange(rows, dtype=np.float64) / rate
    freqs = rng.uniform(0.1, rate / 8.0, size=channels)
    phases = rng.uniform(0.0, 2 * np.pi, size=channels)
    waves = np.sin(2 * np.pi * t[:, None] * freqs[None, :] + phases[None, :])
    waves = 0.8 * waves + 0.2 * rng.standard_normal((rows, channels)).clip(-1.0, 1.0)

    if data_type == "float":
        values = waves
    else:
        info = np.iinfo(np.dtype(f"{'u' if data_type == 'uint' else 'i'}{bits // 8}"))
        offset = 0.0 if data_type == "int" else (float(info.max) + 1.0) / 2.0
        counts = np.rint(waves * (float(info.max) * 0.45) + offset)
        if scale_factors is not None:
            values = counts * np.asarray(scale_factors, dtype=np.float64)
        else:
            values = counts.astype(np.int64) if bits < 64 or data_type == "int" else counts.astype(np.uint64)

    labels = [f"ch{i}" for i in range(channels)]
    sample_fields: Dict[str, Any] = {
        "file_name": "synth_samples.bin",
        "channels": labels,
        "units": ["unitless"] * channels,
        "data_type": data_type,
        "bits": bits,
    }
    if scale_factors is not None:
        sample_fields["scale_factors"] = [float(f) for f in scale_factors]

    common = {
        "subject_id": f"synthetic{seed}",
        "study_id": "synthetic",
        "device_id": "synth",
        "endianness": endianness,
        "metadata_version": "0.1",
        "start_iso8601": start_iso8601,
    }
    start_ns = to_epoch_nanos(parse_iso8601(start_iso8601), allow_local=True)
    files = []
    instants = None
    if time_encoding == "uniform":
        sample_fields["sampling_rate"] = rate
        common["compression"] = "none"
    else:
        period_us = 1e6 / rate
        ticks = np.rint(np.arange(rows, dtype=np.float64) * period_us)
        if jitter:
            ticks = ticks + np.floor(rng.uniform(0.0, jitter, size=rows) * period_us)
        instants = ticks.astype(np.int64) * 1000 + np.int64(start_ns)
        files.append(FileSpec({
            "file_name": "synth_time.bin",
            "channels": [TIME_LABEL],
            "units": ["us"],
            "compression": time_encoding,
            "data_type": "int",
            "bits": 64,
        }))
    files.append(FileSpec(sample_fields, values))

    written = create_recording(
        [SignalSpec(tuple(files), instants)],
        out_dir,
        common=common,
        metadata_name="synth_metadata.json",
        overwrite=overwrite,
    )
    return open_recording(written[0])


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchReport:
    binary_bytes: int
    csv_bytes: int
    ratio: Optional[float]
    full_load_ms: float
    random_slice_ms: float
    rows: int = 0
    slice_rows: int = 0
    claimed_ratio: float = CLAIMED_TEXT_OVERHEAD
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def to_rows(self) -> List[dict]:
        return [
            {"metric": "binary_bytes", "value": self.binary_bytes},
            {"metric": "csv_bytes", "value": self.csv_bytes},
            {"metric": "ratio", "value": self.ratio},
            {"metric": "claimed_ratio", "value": self.claimed_ratio},
            {"metric": "rows", "value": self.rows},
            {"metric": "full_load_ms", "value": round(self.full_load_ms, 3)},
            {"metric": "slice_rows", "value": self.slice_rows},
            {"metric": "random_slice_ms", "value": round(self.random_slice_ms, 3)},
        ]

    def to_text(self) -> str:
        cells = [(r["metric"], "undefined" if r["value"] is None else str(r["value"])) for r in self.to_rows()]
        width = max(len(name) for name, _ in cells)
        lines = [f"{name.ljust(width)}  {value}" for name, value in cells]
        return "\n".join(lines + list(self.notes))


def bench_storage(rec: Recording, slice_fraction: float = 0.01, seed: int = 0) -> BenchReport:
    """
    Compare binary size with the CSV export of every timeline, and time a
    full load against a random contiguous slice of ``slice_fraction`` of the
    rows. A group whose files carry their own time channel is exported file
    by file over each file's full length. ``rows`` counts the exported rows.
    The ratio is None when the recording holds no bytes.
    """
    binary_bytes = sum(rec.binary_path(r).stat().st_size for r in rec.records)
    csv_bytes = 0
    full_ms = 0.0
    slice_ms = 0.0
    total_rows = 0
    slice_rows = 0
    rng = np.random.default_rng(seed)
    for group in rec.groups:
        # one export per timeline, so every binary byte has a CSV counterpart
        if group.shares_timeline:
            parts = [(None, min(r.rows for r in group.records))]
        else:
            parts = [(r.file_name, r.rows) for r in group.amplitude_records]
        for file_name, rows in parts:
            total_rows += rows
            text = export_csv(rec, group.group_id, (0, rows), file_name, time_format="elapsed")
            csv_bytes += len(text.encode("utf-8"))

            began = time.perf_counter()
            read_group(rec, group.group_id, (0, rows), file_name)
            full_ms += (time.perf_counter() - began) * 1000

            count = max(1, int(rows * slice_fraction)) if rows else 0
            first = int(rng.integers(0, rows - count + 1)) if rows else 0
            began = time.perf_counter()
            read_group(rec, group.group_id, (first, first + count), file_name)
            slice_ms += (time.perf_counter() - began) * 1000
            slice_rows += count

    ratio = csv_bytes / binary_bytes if binary_bytes else None
    notes = ()
    if ratio is not None and ratio < CLAIMED_TEXT_OVERHEAD:
        notes = (f"measured text overhead {ratio:.2f}x is below the {CLAIMED_TEXT_OVERHEAD:.0f}x figure; "
                 "it depends on how many digits each value needs",)
    report = BenchReport(binary_bytes, csv_bytes, ratio, full_ms, slice_ms, total_rows, slice_rows, notes=notes)
    logger.info(f"Benchmarked {rec.metadata_path}: ratio {ratio}")
    return report
