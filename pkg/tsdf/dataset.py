"""
Whole recordings: one metadata file plus the binary files it describes.

``open_recording`` binds flattened records to their files and works out, per
group, where the timestamps come from: a dedicated time file (channels
``["time"]``), a ``time`` channel inside each amplitude file, or uniform
sampling at ``sampling_rate``.
"""
import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from shared import config
from shared.errors import DatasetError, SizeMismatchError, TsdfError
from tsdf.binio import (
    BINARY_SUFFIXES,
    BinaryLayout,
    SampleMatrix,
    is_binary_name,
    iter_blocks,
    read_rows,
    verify_size,
    write_rows,
)
from tsdf.metadata import (
    COMPRESSIONS,
    FileRecord,
    Layout,
    Severity,
    ValidationReport,
    Violation,
    read_records,
    record_from_fields,
    serialize_metadata,
    validate,
)
from tsdf.timecodec import (
    NS_PER_S,
    TimeEncoding,
    TimeKind,
    decode_timestamps,
    encode_timestamps,
    format_iso8601,
    parse_iso8601,
    raw_to_nanos,
    rebase,
    to_epoch_nanos,
)

logger = logging.getLogger(__name__)

TIME_LABEL = "time"
DEFAULT_METADATA_NAME = "recording_metadata.json"


class TimeSourceKind:
    TIME_FILE = "time_file"
    TIME_CHANNEL = "time_channel"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class TimeSource:
    kind: str
    record: Optional[FileRecord] = None
    sampling_rate: Optional[float] = None


@dataclass(frozen=True)
class SignalGroup:
    group_id: int
    sensor_type: Optional[str]
    time_source: TimeSource
    amplitude_records: Tuple[FileRecord, ...]

    @property
    def records(self) -> Tuple[FileRecord, ...]:
        if self.time_source.kind == TimeSourceKind.TIME_FILE:
            return (self.time_source.record,) + self.amplitude_records
        return self.amplitude_records

    @property
    def shares_timeline(self) -> bool:
        return self.time_source.kind != TimeSourceKind.TIME_CHANNEL


@dataclass(frozen=True)
class Recording:
    metadata_path: Path
    records: Tuple[FileRecord, ...]
    groups: Tuple[SignalGroup, ...]

    @property
    def directory(self) -> Path:
        return self.metadata_path.parent

    def binary_path(self, record: FileRecord) -> Path:
        return self.directory / record.file_name

    def group(self, group_id: int) -> SignalGroup:
        for group in self.groups:
            if group.group_id == group_id:
                return group
        raise DatasetError(f"No group {group_id} in {self.metadata_path}", "unknown_group", group_id=group_id)

    def record(self, file_name: str) -> FileRecord:
        for record in self.records:
            if record.file_name == file_name:
                return record
        raise DatasetError(f"No file {file_name!r} in {self.metadata_path}", "unknown_file", file_name=file_name)


def _is_time_file(record: FileRecord) -> bool:
    return record.channels == (TIME_LABEL,)


def time_channel_index(record: FileRecord) -> Optional[int]:
    if _is_time_file(record) or TIME_LABEL not in record.channels:
        return None
    return record.channels.index(TIME_LABEL)


def _time_kind(record: FileRecord) -> TimeKind:
    # stored time without an explicit strategy counts from the start
    if record.compression in (None, "none"):
        return TimeKind.RELATIVE
    return TimeKind(record.compression)


def _build_groups(records: Sequence[FileRecord]) -> Tuple[SignalGroup, ...]:
    members: Dict[int, List[FileRecord]] = {}
    for record in records:
        members.setdefault(record.group_id, []).append(record)

    groups = []
    for group_id, group_records in members.items():
        names = ", ".join(r.file_name for r in group_records)
        time_files = [r for r in group_records if _is_time_file(r)]
        amplitudes = tuple(r for r in group_records if not _is_time_file(r))
        with_channel = [r for r in amplitudes if time_channel_index(r) is not None]

        if len(time_files) > 1:
            raise DatasetError(
                f"Group {group_id} ({names}) has {len(time_files)} time files",
                "ambiguous_time_source",
                file_name=time_files[1].file_name,
            )
        if time_files and with_channel:
            raise DatasetError(
                f"{with_channel[0].file_name}: has a time channel while group {group_id} also has "
                f"time file {time_files[0].file_name}",
                "ambiguous_time_source",
                file_name=with_channel[0].file_name,
            )

        if time_files:
            time_file = time_files[0]
            for record in amplitudes:
                if record.rows != time_file.rows:
                    raise DatasetError(
                        f"{record.file_name}: {record.rows} rows but time file {time_file.file_name} has "
                        f"{time_file.rows}",
                        "time_rows_mismatch",
                        file_name=record.file_name,
                    )
            source = TimeSource(TimeSourceKind.TIME_FILE, record=time_file)
            timed = [time_file]
        elif with_channel:
            missing = [r for r in amplitudes if time_channel_index(r) is None]
            if missing:
                raise DatasetError(
                    f"{missing[0].file_name}: no time channel while the rest of group {group_id} has one",
                    "absent_time_source",
                    file_name=missing[0].file_name,
                )
            source = TimeSource(TimeSourceKind.TIME_CHANNEL)
            timed = with_channel
        else:
            rates = {r.sampling_rate for r in amplitudes}
            if not amplitudes or None in rates:
                lacking = next((r for r in amplitudes if r.sampling_rate is None), group_records[0])
                raise DatasetError(
                    f"{lacking.file_name}: no time file, time channel or sampling_rate",
                    "absent_time_source",
                    file_name=lacking.file_name,
                )
            if len(rates) > 1:
                raise DatasetError(
                    f"Group {group_id} ({names}) mixes sampling rates {sorted(rates)}",
                    "inconsistent_sampling_rate",
                    file_name=amplitudes[0].file_name,
                )
            source = TimeSource(TimeSourceKind.UNIFORM, sampling_rate=float(rates.pop()))
            timed = []

        for record in timed:
            try:
                _time_encoding(record, source)
            except (TsdfError, ValueError) as e:
                raise DatasetError(f"{record.file_name}: {e}", getattr(e, "code", "invalid_time_encoding"),
                                   file_name=record.file_name)

        sensor_type = next((r.sensor_type for r in group_records if r.sensor_type), None)
        groups.append(SignalGroup(group_id, sensor_type, source, amplitudes))
    return tuple(groups)


def _time_encoding(record: FileRecord, source: TimeSource) -> TimeEncoding:
    """Encoding of the timeline that ``record`` is read against."""
    base = parse_iso8601(record.start_iso8601)
    if source.kind == TimeSourceKind.UNIFORM:
        return TimeEncoding(TimeKind.UNIFORM, "s", base, source.sampling_rate)
    index = 0 if _is_time_file(record) else time_channel_index(record)
    return TimeEncoding(_time_kind(record), record.units[index], base)


def _timeline_record(group: SignalGroup, record: FileRecord) -> FileRecord:
    if group.time_source.kind == TimeSourceKind.TIME_FILE:
        return group.time_source.record
    return record


def open_recording(metadata_path: Union[str, os.PathLike]) -> Recording:
    """
    Parse, flatten and validate a metadata file, check every binary file
    against its layout and resolve each group's time source.
    """
    metadata_path = Path(metadata_path)
    records = read_records(metadata_path)
    report = validate(records)
    if report.errors:
        first = report.errors[0]
        raise DatasetError(
            f"{metadata_path}: {len(report.errors)} validation error(s), first: {first.message}",
            "validation_failed",
            report=report,
        )

    for record in records:
        if record.compression is not None and record.compression not in COMPRESSIONS:
            raise DatasetError(
                f"{record.file_name}: unsupported compression {record.compression!r}",
                "unsupported_compression",
                file_name=record.file_name,
            )
        if not is_binary_name(record.file_name):
            logger.warning(f"{record.file_name}: binary files are expected to end in one of {BINARY_SUFFIXES}")
        path = metadata_path.parent / record.file_name
        if not path.is_file():
            raise DatasetError(f"{record.file_name}: binary file not found at {path}", "missing_binary_file",
                               file_name=record.file_name)
        check = verify_size(path, BinaryLayout.from_record(record))
        if not check.ok:
            raise SizeMismatchError(check.expected, check.actual, record.file_name)

    recording = Recording(metadata_path, tuple(records), _build_groups(records))
    logger.info(f"Opened {metadata_path} with {len(records)} file(s) in {len(recording.groups)} group(s)")
    return recording


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecordSlice:
    record: FileRecord
    timestamps: np.ndarray
    matrix: SampleMatrix


@dataclass(frozen=True)
class GroupSlice:
    group: SignalGroup
    row_start: int
    row_stop: int
    slices: Tuple[RecordSlice, ...]
    shared_timestamps: Optional[np.ndarray] = None

    @property
    def timestamps(self) -> np.ndarray:
        """The group's timestamp vector; fails if records keep separate timelines."""
        if self.shared_timestamps is not None:
            return self.shared_timestamps
        first = self.slices[0].timestamps
        if all(np.array_equal(first, s.timestamps) for s in self.slices[1:]):
            return first
        raise DatasetError(
            f"Records of group {self.group.group_id} carry different timelines", "no_shared_timestamps"
        )

    @property
    def matrices(self) -> Tuple[SampleMatrix, ...]:
        return tuple(s.matrix for s in self.slices)

    def matrix(self, file_name: str) -> SampleMatrix:
        for s in self.slices:
            if s.record.file_name == file_name:
                return s.matrix
        raise DatasetError(f"{file_name!r} is not in group {self.group.group_id}", "unknown_file")


def _read_matrix(rec: Recording, record: FileRecord, row_start: int, row_count: int) -> SampleMatrix:
    matrix = read_rows(rec.binary_path(record), BinaryLayout.from_record(record), row_start, row_count,
                       record.file_name)
    return dataclasses.replace(matrix, channel_labels=record.channels, units=record.units)


def _difference_carry(rec: Recording, record: FileRecord, column: int, stop: int, unit_ns: int) -> int:
    """Nanoseconds accumulated by rows [0, stop) of a difference-encoded stream."""
    carry = 0
    layout = BinaryLayout.from_record(record)
    for block in iter_blocks(rec.binary_path(record), layout, stop):
        steps = block.values[:, column]
        if steps.size and steps.min() < 0:
            raise DatasetError(f"{record.file_name}: negative time step", "nonmonotonic_time",
                               file_name=record.file_name)
        carry += int(np.sum(raw_to_nanos(steps, unit_ns).astype(object)))
    return carry


def _decode_timeline(rec: Recording, group: SignalGroup, record: FileRecord, row_start: int,
                     row_count: int) -> np.ndarray:
    source = _timeline_record(group, record)
    enc = _time_encoding(source, group.time_source)
    if enc.kind is TimeKind.UNIFORM:
        return decode_timestamps([], enc, row_count, first_row=row_start)
    column = 0 if _is_time_file(source) else time_channel_index(source)
    values = _read_matrix(rec, source, row_start, row_count).values[:, column]
    carry = 0
    if enc.kind is TimeKind.DIFFERENCE and row_start > 0:
        # difference encoding has no random access: sum every earlier step
        carry = _difference_carry(rec, source, column, row_start, enc.unit_nanos)
    return decode_timestamps(values, enc, row_count, carry=carry)


def read_group(
    rec: Recording,
    group_id: int,
    row_range: Optional[Tuple[int, int]] = None,
    file_name: Optional[str] = None,
) -> GroupSlice:
    """
    Timestamps and sample matrices for rows [start, stop) of one group.

    Amplitude rows are fetched by offset; a difference-encoded time file also
    needs a pass over the rows before ``start``.

    Files that carry their own time channel may differ in length. Each is
    bounded by its own rows: the range may run up to the longest file, and a
    shorter file contributes only the rows it has. ``file_name`` restricts
    the slice to one amplitude file and bounds the range by that file alone.
    """
    group = rec.group(group_id)
    amplitude = group.amplitude_records
    if file_name is not None:
        amplitude = tuple(r for r in amplitude if r.file_name == file_name)
        if not amplitude:
            raise DatasetError(f"{file_name!r} is not an amplitude file of group {group_id}", "unknown_file",
                               file_name=file_name)

    if group.shares_timeline:
        row_counts = [r.rows for r in group.records]
        limit = min(row_counts) if row_counts else 0
    else:
        row_counts = [r.rows for r in amplitude]
        limit = max(row_counts) if row_counts else 0
    if row_range is None:
        row_range = (0, limit)
    start, stop = row_range
    if start < 0 or stop < start or stop > limit:
        raise DatasetError(
            f"Rows [{start}, {stop}) are outside group {group_id} (rows {sorted(set(row_counts))})",
            "row_range_out_of_bounds",
        )

    shared = None
    if group.shares_timeline:
        anchor = group.time_source.record or group.amplitude_records[0]
        shared = _decode_timeline(rec, group, anchor, start, stop - start)

    slices = []
    for record in amplitude:
        if shared is not None:
            first, count, timestamps = start, stop - start, shared
        else:
            first = min(start, record.rows)
            count = min(stop, record.rows) - first
            timestamps = _decode_timeline(rec, group, record, first, count)
        slices.append(RecordSlice(record, timestamps, _read_matrix(rec, record, first, count)))
    return GroupSlice(group, start, stop, tuple(slices), shared)


# ---------------------------------------------------------------------------
# Audit
# ---------------------------------------------------------------------------


def end_tolerance_ns(enc: TimeEncoding, end_text: Optional[str] = None) -> int:
    """
    How far the last decoded instant may sit from end_iso8601.

    One unit of the time encoding (one sample period for uniform sampling), but
    never finer than the precision the end timestamp is written with.
    """
    override = config.audit_tolerance_ns()
    if override is not None:
        return override
    if enc.kind is TimeKind.UNIFORM:
        tolerance = int(round(NS_PER_S / float(enc.sampling_rate)))
    else:
        tolerance = enc.unit_nanos
    if end_text:
        try:
            tolerance = max(tolerance, parse_iso8601(end_text).resolution_nanos)
        except TsdfError:
            pass
    return tolerance


def _checksum_violation(path: Path, record: FileRecord) -> Optional[Violation]:
    expected = record.get("checksum")
    if not expected:
        return None
    algorithm = record.get("checksum_type") or "md5"
    try:
        digest = hashlib.new(algorithm)
    except ValueError:
        return Violation(Severity.WARNING, f"{record.path}.checksum_type", "unknown_checksum_type",
                         f"{record.file_name}: cannot verify checksum of type {algorithm!r}")
    with open(path, "rb") as fid:
        for chunk in iter(lambda: fid.read(1 << 20), b""):
            digest.update(chunk)
    if digest.hexdigest().lower() != str(expected).lower():
        return Violation(Severity.ERROR, f"{record.path}.checksum", "checksum_mismatch",
                         f"{record.file_name}: {algorithm} is {digest.hexdigest()}, metadata says {expected}")
    return None


def audit(rec: Recording, tolerance_ns: Optional[int] = None) -> ValidationReport:
    """
    Cross-file consistency checks; findings are reported, never raised.

    Re-validates the records, re-checks every file size and checksum, scans
    float data for NaN/Inf, checks timelines are monotonic and that the last
    decoded instant matches end_iso8601.
    """
    violations: List[Violation] = list(validate(rec.records).violations)
    broken = set()

    for record in rec.records:
        path = rec.binary_path(record)
        where = f"{record.path}.file_name"
        if not path.is_file():
            violations.append(Violation(Severity.ERROR, where, "missing_binary_file",
                                        f"{record.file_name}: not found"))
            broken.add(record.file_name)
            continue
        layout = BinaryLayout.from_record(record)
        check = verify_size(path, layout)
        if not check.ok:
            violations.append(Violation(Severity.ERROR, where, "size_mismatch",
                                        f"{record.file_name}: expected {check.expected} bytes, found {check.actual}"))
            broken.add(record.file_name)
            continue
        if check.actual > config.MAX_FILE_BYTES:
            violations.append(Violation(Severity.WARNING, where, "oversized_file",
                                        f"{record.file_name}: {check.actual} bytes"))
        finding = _checksum_violation(path, record)
        if finding:
            violations.append(finding)
        if layout.data_type == "float":
            bad = sum(int(np.count_nonzero(~np.isfinite(b.values))) for b in iter_blocks(path, layout, layout.rows))
            if bad:
                violations.append(Violation(Severity.WARNING, where, "non_finite_values",
                                            f"{record.file_name}: {bad} NaN/Inf value(s)"))

    for group in rec.groups:
        if any(r.file_name in broken for r in group.records):
            continue
        if group.time_source.kind == TimeSourceKind.TIME_FILE:
            targets = [(group.time_source.record, group.records)]
        else:
            targets = [(record, (record,)) for record in group.amplitude_records]
        for anchor, checked in targets:
            violations.extend(_audit_timeline(rec, group, anchor, checked, tolerance_ns))

    return ValidationReport(tuple(violations))


def _audit_timeline(rec: Recording, group: SignalGroup, anchor: FileRecord, checked: Sequence[FileRecord],
                    tolerance_ns: Optional[int]) -> List[Violation]:
    found = []
    rows = anchor.rows
    try:
        timestamps = _decode_timeline(rec, group, anchor, 0, rows)
    except TsdfError as e:
        return [Violation(Severity.ERROR, f"{anchor.path}.file_name", e.code, f"{anchor.file_name}: {e}")]
    if timestamps.size > 1 and np.any(np.diff(timestamps) < 0):
        index = int(np.argmax(np.diff(timestamps) < 0)) + 1
        found.append(Violation(Severity.ERROR, f"{anchor.path}.file_name", "nonmonotonic_time",
                               f"{anchor.file_name}: time goes backwards at row {index}"))
    if not timestamps.size:
        return found

    enc = _time_encoding(_timeline_record(group, anchor), group.time_source)
    last = int(timestamps[-1])
    for record in checked:
        end = parse_iso8601(record.end_iso8601)
        end_ns = to_epoch_nanos(end, allow_local=True)
        allowed = tolerance_ns if tolerance_ns is not None else end_tolerance_ns(enc, record.end_iso8601)
        if abs(last - end_ns) > allowed:
            decoded = format_iso8601(rebase(end, last))
            found.append(Violation(
                Severity.ERROR,
                f"{record.path}.end_iso8601",
                "end_timestamp_mismatch",
                f"{record.file_name}: last decoded instant {decoded} vs end_iso8601 {record.end_iso8601} "
                f"(off by {(last - end_ns) / 1e6:.3f} ms, tolerance {allowed / 1e6:.3f} ms)",
            ))
    return found


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FileSpec:
    """
    One binary file to write. ``values`` is rows x channels; for a file with a
    ``time`` channel the time column may be left out (it is filled from the
    instants). A time file (channels ``["time"]``) needs no values.
    """

    fields: Mapping[str, Any]
    values: Optional[np.ndarray] = None
    instants: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SignalSpec:
    """Files sharing one timeline; ``instants`` are epoch nanoseconds."""

    files: Tuple[FileSpec, ...]
    instants: Optional[np.ndarray] = None
    fields: Mapping[str, Any] = field(default_factory=lambda: MappingProxyType({}))


def _final_instant(fields: Mapping[str, Any], instants: Optional[np.ndarray], rows: int, start_ns: int) -> int:
    if rows == 0:
        return start_ns
    if instants is not None:
        return int(instants[-1])
    rate = fields.get("sampling_rate")
    if not rate:
        raise DatasetError(f"{fields.get('file_name')}: no instants and no sampling_rate", "absent_time_source",
                           file_name=fields.get("file_name"))
    return start_ns + int(round((rows - 1) * (NS_PER_S / float(rate))))


def _prepare_file(spec: FileSpec, signal: SignalSpec, common: Mapping[str, Any], group_id: int):
    fields = {**common, **signal.fields, **spec.fields}
    name = fields.get("file_name")
    record = record_from_fields(fields, group_id)
    instants = spec.instants if spec.instants is not None else signal.instants
    if instants is not None:
        instants = np.asarray(instants, dtype=np.int64).reshape(-1)
    values = None if spec.values is None else np.asarray(spec.values)
    if values is not None and values.ndim == 1:
        values = values.reshape(-1, 1)

    if values is not None:
        rows = values.shape[0]
    elif instants is not None:
        rows = instants.size
    else:
        raise DatasetError(f"{name}: neither values nor instants given", "missing_values", file_name=name)
    if instants is not None and instants.size != rows:
        raise DatasetError(f"{name}: {rows} rows but {instants.size} instants", "redundant_field_conflict",
                           file_name=name)
    if "rows" in fields and fields["rows"] != rows:
        raise DatasetError(f"{name}: rows field says {fields['rows']}, data has {rows}", "redundant_field_conflict",
                           file_name=name)
    fields["rows"] = rows

    if not fields.get("start_iso8601"):
        raise DatasetError(f"{name}: start_iso8601 is required", "missing_mandatory:start_iso8601", file_name=name)
    start = parse_iso8601(fields["start_iso8601"])
    start_ns = to_epoch_nanos(start, allow_local=True)

    time_column = 0 if _is_time_file(record) else time_channel_index(record)
    if time_column is not None:
        if instants is None:
            raise DatasetError(f"{name}: time data needs instants", "missing_instants", file_name=name)
        encoded = encode_timestamps(
            instants, _time_kind(record), record.units[time_column], start,
            data_type=record.data_type, bits=record.bits,
        )
        n_channels = len(record.channels)
        if values is None:
            values = encoded.reshape(-1, 1).astype(np.float64 if record.data_type == "float" else np.int64)
        else:
            if values.shape[1] == n_channels - 1:
                values = np.insert(values.astype(np.float64), time_column, 0, axis=1)
            elif values.dtype.kind != "f" and record.data_type == "float":
                values = values.astype(np.float64)
            else:
                values = values.copy()
            values[:, time_column] = encoded

    final = _final_instant(fields, instants, rows, start_ns)
    computed_end = format_iso8601(rebase(start, final))
    if fields.get("end_iso8601"):
        given = parse_iso8601(fields["end_iso8601"])
        if instants is None:
            enc = TimeEncoding(TimeKind.UNIFORM, "s", start, fields["sampling_rate"])
        else:
            unit = record.units[time_column] if time_column is not None else "ns"
            enc = TimeEncoding(TimeKind.RELATIVE, unit, start)
        if abs(to_epoch_nanos(given, allow_local=True) - final) > end_tolerance_ns(enc, fields["end_iso8601"]):
            raise DatasetError(
                f"{name}: end_iso8601 {fields['end_iso8601']} disagrees with last instant {computed_end}",
                "redundant_field_conflict",
                file_name=name,
            )
    else:
        fields["end_iso8601"] = computed_end

    record = record_from_fields(fields, group_id)
    return record, values


def create_recording(
    signals: Sequence[SignalSpec],
    out_dir: Union[str, os.PathLike],
    common: Optional[Mapping[str, Any]] = None,
    metadata_name: str = DEFAULT_METADATA_NAME,
    layout: Union[Layout, str] = Layout.GROUPED_BY_COMMON_PREFIX,
    checksums: bool = False,
    overwrite: bool = False,
) -> List[Path]:
    """
    Write a metadata file and its binaries into ``out_dir``.

    Everything is encoded and validated in memory first; nothing is written
    unless the whole recording is consistent. end_iso8601 is filled in from
    the last instant when not given, and checked against it when given.
    Returns the written paths, metadata file first.
    """
    common = dict(common or {})
    records: List[FileRecord] = []
    payloads: List[bytes] = []
    for group_id, signal in enumerate(signals):
        for spec in signal.files:
            record, values = _prepare_file(spec, signal, common, group_id)
            report = validate([record])
            if report.errors:
                raise DatasetError(
                    f"{record.file_name}: {', '.join(report.codes(Severity.ERROR))}",
                    "validation_failed",
                    report=report,
                    file_name=record.file_name,
                )
            data = write_rows(values, BinaryLayout.from_record(record))
            if checksums:
                record = record.replace_fields(checksum=hashlib.md5(data).hexdigest(), checksum_type="md5")
            records.append(record)
            payloads.append(data)

    report = validate(records)
    if report.errors:
        raise DatasetError(f"{', '.join(report.codes(Severity.ERROR))}", "validation_failed", report=report)
    _build_groups(records)
    text = serialize_metadata(records, layout)

    out_dir = Path(out_dir)
    targets = [out_dir / metadata_name] + [out_dir / r.file_name for r in records]
    if len(set(targets)) != len(targets):
        raise DatasetError(f"{metadata_name} collides with a binary file name", "output_name_collision")
    if not overwrite:
        existing = [str(t) for t in targets if t.exists()]
        if existing:
            raise DatasetError(f"Refusing to overwrite {', '.join(existing)}", "output_exists")

    out_dir.mkdir(parents=True, exist_ok=True)
    partials = []
    try:
        for target, data in zip(targets, [text.encode("utf-8")] + payloads):
            target.parent.mkdir(parents=True, exist_ok=True)
            partial = target.with_name(f".{target.name}.partial")
            partial.write_bytes(data)
            partials.append((partial, target))
    except OSError:
        for partial, _ in partials:
            partial.unlink(missing_ok=True)
        raise
    for partial, target in partials:
        os.replace(partial, target)
    logger.info(f"Wrote {targets[0]} with {len(records)} binary file(s)")
    return targets


def signals_from_recording(rec: Recording) -> List[SignalSpec]:
    """Read every group back into ``SignalSpec`` form, e.g. to re-create it elsewhere."""
    signals = []
    for group in rec.groups:
        files = []
        instants = None
        if group.time_source.kind == TimeSourceKind.TIME_FILE:
            time_record = group.time_source.record
            files.append(FileSpec(time_record.to_dict()))
            instants = _decode_timeline(rec, group, time_record, 0, time_record.rows)
        # each file in full; files of one group may differ in length
        for record in group.amplitude_records:
            matrix = _read_matrix(rec, record, 0, record.rows)
            values = matrix.raw if matrix.raw is not None and record.scale_factors is None else matrix.values
            own = None
            if group.time_source.kind == TimeSourceKind.TIME_CHANNEL:
                own = _decode_timeline(rec, group, record, 0, record.rows)
            files.append(FileSpec(record.to_dict(), values, own))
        files.sort(key=lambda f: rec.records.index(rec.record(f.fields["file_name"])))
        signals.append(SignalSpec(tuple(files), instants))
    return signals
