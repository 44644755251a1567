"""
Relational index over a tree of TSDF metadata files.

Every ``*.json`` below a root is parsed and flattened; each binary file becomes
one row of ``files``, with its channels and any remaining fields in the
``channels`` and ``extras`` tables. Documents that cannot be indexed go into a
skip report instead of aborting the scan.
"""
import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from shared.errors import IndexBuildError, TsdfError
from tsdf.metadata import FileRecord, Severity, read_records, thaw, validate
from tsdf.timecodec import parse_iso8601, to_epoch_millis

logger = logging.getLogger(__name__)

SCHEMA_SQL = """\
CREATE TABLE IF NOT EXISTS files (
    id INTEGER PRIMARY KEY,
    metadata_path TEXT NOT NULL,
    file_name TEXT NOT NULL,
    subject_id TEXT,
    study_id TEXT,
    device_id TEXT,
    sensor_type TEXT,
    start_epoch_ms INTEGER,
    end_epoch_ms INTEGER,
    rows INTEGER,
    data_type TEXT,
    bits INTEGER,
    n_channels INTEGER,
    group_id INTEGER,
    UNIQUE (metadata_path, file_name)
);
CREATE TABLE IF NOT EXISTS channels (
    file_id INTEGER NOT NULL REFERENCES files (id),
    channel_index INTEGER NOT NULL,
    label TEXT,
    unit TEXT,
    PRIMARY KEY (file_id, channel_index)
);
CREATE TABLE IF NOT EXISTS extras (
    file_id INTEGER NOT NULL REFERENCES files (id),
    field_name TEXT NOT NULL,
    value_text TEXT,
    PRIMARY KEY (file_id, field_name)
);
CREATE INDEX IF NOT EXISTS files_subject ON files (subject_id);
CREATE INDEX IF NOT EXISTS files_study ON files (study_id);
CREATE INDEX IF NOT EXISTS files_device ON files (device_id);
CREATE INDEX IF NOT EXISTS files_time ON files (start_epoch_ms, end_epoch_ms);
CREATE INDEX IF NOT EXISTS channels_label ON channels (label);
"""

# Fields with their own column in "files" (or in "channels")
_COLUMN_FIELDS = frozenset(
    {
        "file_name",
        "subject_id",
        "study_id",
        "device_id",
        "sensor_type",
        "start_iso8601",
        "end_iso8601",
        "rows",
        "data_type",
        "bits",
        "channels",
        "units",
    }
)


@dataclass(frozen=True)
class FileRow:
    id: int
    metadata_path: str
    file_name: str
    subject_id: Optional[str]
    study_id: Optional[str]
    device_id: Optional[str]
    sensor_type: Optional[str]
    start_epoch_ms: Optional[int]
    end_epoch_ms: Optional[int]
    rows: Optional[int]
    data_type: Optional[str]
    bits: Optional[int]
    n_channels: int
    group_id: int


@dataclass(frozen=True)
class ChannelRow:
    file_id: int
    channel_index: int
    label: str
    unit: Optional[str]


@dataclass(frozen=True)
class ExtraRow:
    file_id: int
    field_name: str
    value_text: str


@dataclass(frozen=True)
class SkipEntry:
    path: str
    severity: Severity
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"path": self.path, "severity": self.severity.value, "code": self.code, "message": self.message}


@dataclass(frozen=True)
class IndexTable:
    files: Tuple[FileRow, ...] = ()
    channels: Tuple[ChannelRow, ...] = ()
    extras: Tuple[ExtraRow, ...] = ()
    skipped: Tuple[SkipEntry, ...] = ()

    def channels_of(self, file_id: int) -> List[ChannelRow]:
        return [c for c in self.channels if c.file_id == file_id]


@dataclass(frozen=True)
class IndexFilter:
    """
    Conjunction of optional conditions. ``overlaps`` is an inclusive
    [t0, t1] window in epoch milliseconds matched against each file's
    [start, end]; files without an absolute start/end never match it.
    """

    subject_id: Optional[str] = None
    study_id: Optional[str] = None
    device_id: Optional[str] = None
    sensor_type: Optional[str] = None
    overlaps: Optional[Tuple[int, int]] = None
    channel_label: Optional[str] = None

    def __post_init__(self):
        if self.overlaps is not None:
            t0, t1 = self.overlaps
            if t0 > t1:
                raise IndexBuildError(f"Time window start {t0} is after its end {t1}", "invalid_time_range")

    @property
    def equalities(self) -> List[Tuple[str, str]]:
        names = ("subject_id", "study_id", "device_id", "sensor_type")
        return [(name, getattr(self, name)) for name in names if getattr(self, name) is not None]


def parse_time_bound(text: Union[str, int]) -> int:
    """Epoch milliseconds from an integer or an ISO 8601 timestamp with an offset."""
    if isinstance(text, int):
        return text
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    return to_epoch_millis(parse_iso8601(text))


def _epoch_ms(text: Optional[str]) -> Optional[int]:
    stamp = parse_iso8601(text)
    return to_epoch_millis(stamp) if stamp.has_anchor else None


def _scan(path: Path, root: Path) -> Tuple[List[FileRecord], List[SkipEntry]]:
    relative = path.relative_to(root).as_posix()
    try:
        records = read_records(path)
    except (TsdfError, OSError) as e:
        code = getattr(e, "code", "unreadable_file")
        return [], [SkipEntry(relative, Severity.ERROR, code, str(e))]
    if not records:
        return [], [SkipEntry(relative, Severity.ERROR, "not_tsdf", "no file_name entries")]
    report = validate(records)
    if report.errors:
        codes = ", ".join(sorted(set(report.codes(Severity.ERROR))))
        return [], [SkipEntry(relative, Severity.ERROR, "invalid_metadata", codes)]
    skipped = []
    for record in records:
        for name in ("start_iso8601", "end_iso8601"):
            if not parse_iso8601(record.get(name)).has_anchor:
                skipped.append(
                    SkipEntry(
                        relative,
                        Severity.WARNING,
                        "local_only_timestamp",
                        f"{record.file_name}: {name} has no UTC offset; indexed without epoch time",
                    )
                )
                break
    return records, skipped


def build_index(
    root_dir: Union[str, os.PathLike],
    out: Optional[Union[str, os.PathLike]] = None,
    workers: int = 1,
) -> IndexTable:
    """
    Index every ``*.json`` below ``root_dir``.

    Files are visited in sorted relative-path order and records in document
    order, so rebuilding an unchanged tree gives identical tables. With
    ``out`` set the tables are also written there (see ``write_index``).
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IndexBuildError(f"Cannot read index root {root}", "unreadable_root")
    paths = sorted((p for p in root.rglob("*.json") if p.is_file()), key=lambda p: p.relative_to(root).as_posix())

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scanned = list(pool.map(lambda p: _scan(p, root), paths))
    else:
        scanned = [_scan(p, root) for p in paths]

    files: List[FileRow] = []
    channels: List[ChannelRow] = []
    extras: List[ExtraRow] = []
    skipped: List[SkipEntry] = []
    for path, (records, entries) in zip(paths, scanned):
        skipped.extend(entries)
        relative = path.relative_to(root).as_posix()
        for record in records:
            file_id = len(files) + 1
            files.append(
                FileRow(
                    id=file_id,
                    metadata_path=relative,
                    file_name=record.file_name,
                    subject_id=record.subject_id,
                    study_id=record.study_id,
                    device_id=record.device_id,
                    sensor_type=record.sensor_type,
                    start_epoch_ms=_epoch_ms(record.start_iso8601),
                    end_epoch_ms=_epoch_ms(record.end_iso8601),
                    rows=record.rows,
                    data_type=record.data_type,
                    bits=record.bits,
                    n_channels=len(record.channels),
                    group_id=record.group_id,
                )
            )
            for index, label in enumerate(record.channels):
                unit = record.units[index] if index < len(record.units) else None
                channels.append(ChannelRow(file_id, index, label, unit))
            for name, value in record.fields.items():
                if name not in _COLUMN_FIELDS:
                    extras.append(ExtraRow(file_id, name, json.dumps(thaw(value), ensure_ascii=False)))

    index = IndexTable(tuple(files), tuple(channels), tuple(extras), tuple(skipped))
    logger.info(f"Indexed {len(files)} file(s) from {len(paths)} document(s) under {root}, skipped {len(skipped)}")
    if out is not None:
        write_index(index, out)
    return index


def matches(row: FileRow, flt: IndexFilter, index: IndexTable) -> bool:
    for name, value in flt.equalities:
        if getattr(row, name) != value:
            return False
    if flt.overlaps is not None:
        t0, t1 = flt.overlaps
        if row.start_epoch_ms is None or row.end_epoch_ms is None:
            return False
        if row.start_epoch_ms > t1 or row.end_epoch_ms < t0:
            return False
    if flt.channel_label is not None:
        if not any(c.label == flt.channel_label for c in index.channels_of(row.id)):
            return False
    return True


def query(index: IndexTable, flt: Optional[IndexFilter] = None) -> List[FileRow]:
    """File rows matching every condition of ``flt``, in index order."""
    flt = flt or IndexFilter()
    return [row for row in index.files if matches(row, flt, index)]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Severity):
        return value.value
    return str(value)


def _write_table(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fid:
        writer = csv.writer(fid, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in astuple(row)])


def write_index(index: IndexTable, out_dir: Union[str, os.PathLike]) -> List[Path]:
    """Write files.csv, channels.csv, extras.csv, skipped.csv and schema.sql."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = (
        ("files.csv", FileRow, index.files),
        ("channels.csv", ChannelRow, index.channels),
        ("extras.csv", ExtraRow, index.extras),
        ("skipped.csv", SkipEntry, index.skipped),
    )
    written = []
    for name, row_type, rows in tables:
        path = out / name
        _write_table(path, [f.name for f in fields(row_type)], rows)
        written.append(path)
    schema = out / "schema.sql"
    schema.write_text(SCHEMA_SQL, encoding="utf-8")
    written.append(schema)
    return written


def rows_as_dicts(rows: Sequence[FileRow]) -> List[dict]:
    return [{f.name: getattr(row, f.name) for f in fields(FileRow)} for row in rows]
