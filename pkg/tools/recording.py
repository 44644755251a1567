import logging
from typing import Optional

from shared.errors import TsdfError
from tools.paths import failure, resolve_data_path
from tsdf.dataset import audit, open_recording, read_group
from tsdf.metadata import flattened_table, read_records, validate
from tsdf.timecodec import format_iso8601, parse_iso8601, rebase

logger = logging.getLogger(__name__)

MAX_SLICE_ROWS = 10_000


def validate_metadata(metadata_path: str) -> dict:
    """
    Parse, flatten and validate a TSDF metadata file.

    Args:
        metadata_path (str): Path to the metadata .json file, relative to the data root.

    Returns:
        dict: {"success": True, "ok": bool, "records": int, "violations": [...]} where each
        violation has severity, path, code and message. "ok" is False when any error was found.

    Example:
        validate_metadata(metadata_path="study/recording_metadata.json")
    """
    try:
        records = read_records(resolve_data_path(metadata_path))
        report = validate(records)
    except (TsdfError, OSError) as e:
        return failure(e)
    return {"success": True, "ok": report.ok, "records": len(records), "violations": report.to_rows()}


def describe_recording(metadata_path: str) -> dict:
    """
    Describe a recording: its files, groups and time sources, plus the flattened
    fields x files table.

    Args:
        metadata_path (str): Path to the metadata .json file, relative to the data root.

    Returns:
        dict: {"success": True, "files": [...], "groups": [...], "table": [[...]]}.

    Example:
        describe_recording(metadata_path="study/recording_metadata.json")
    """
    try:
        rec = open_recording(resolve_data_path(metadata_path))
    except (TsdfError, OSError) as e:
        return failure(e)
    groups = []
    for group in rec.groups:
        groups.append(
            {
                "group_id": group.group_id,
                "sensor_type": group.sensor_type,
                "time_source": group.time_source.kind,
                "time_file": group.time_source.record.file_name if group.time_source.record else None,
                "sampling_rate": group.time_source.sampling_rate,
                "files": [r.file_name for r in group.amplitude_records],
            }
        )
    return {
        "success": True,
        "files": [r.to_dict() for r in rec.records],
        "groups": groups,
        "table": flattened_table(rec.records),
    }


def audit_recording(metadata_path: str, tolerance_ms: Optional[float] = None) -> dict:
    """
    Run the cross-file consistency audit of a recording.

    Checks file sizes, checksums, NaN/Inf values, monotonic time, and that the last
    decoded instant of every group matches end_iso8601.

    Args:
        metadata_path (str): Path to the metadata .json file, relative to the data root.
        tolerance_ms (float, optional): End-timestamp tolerance. Defaults to one time unit
            of the encoding (or TSDF_AUDIT_TOLERANCE_MS when set).

    Returns:
        dict: {"success": True, "ok": bool, "violations": [...]}.

    Example:
        audit_recording(metadata_path="study/recording_metadata.json", tolerance_ms=500)
    """
    try:
        rec = open_recording(resolve_data_path(metadata_path))
        tolerance_ns = None if tolerance_ms is None else int(round(tolerance_ms * 1_000_000))
        report = audit(rec, tolerance_ns)
    except (TsdfError, OSError) as e:
        return failure(e)
    return {"success": True, "ok": report.ok, "violations": report.to_rows()}


def read_slice(
    metadata_path: str,
    group_id: int = 0,
    row_start: int = 0,
    row_stop: Optional[int] = None,
    file_name: Optional[str] = None,
) -> dict:
    """
    Read rows [row_start, row_stop) of one signal group.

    Only the requested rows are read from disk. At most 10000 rows are returned per call.

    Args:
        metadata_path (str): Path to the metadata .json file, relative to the data root.
        group_id (int, optional): Group to read. Defaults to 0.
        row_start (int, optional): First row. Defaults to 0.
        row_stop (int, optional): Row after the last one. Defaults to row_start + 100.
        file_name (str, optional): Read only this file of the group. Files that carry their own time
            channel are bounded by their own rows; a shorter file returns fewer rows.

    Returns:
        dict: {"success": True, "rows": [start, stop], "files": [{"file_name", "channels",
        "units", "timestamps", "values"}]} with ISO 8601 timestamps and row-major values.

    Example:
        read_slice(metadata_path="study/recording_metadata.json", group_id=0, row_start=100, row_stop=200)
    """
    if row_stop is None:
        row_stop = row_start + 100
    if row_stop - row_start > MAX_SLICE_ROWS:
        return {
            "success": False,
            "error": f"At most {MAX_SLICE_ROWS} rows per call, asked for {row_stop - row_start}",
            "code": "slice_too_large",
        }
    try:
        rec = open_recording(resolve_data_path(metadata_path))
        data = read_group(rec, group_id, (row_start, row_stop), file_name)
    except (TsdfError, OSError) as e:
        return failure(e)
    files = []
    for piece in data.slices:
        start = parse_iso8601(piece.record.start_iso8601)
        files.append(
            {
                "file_name": piece.record.file_name,
                "channels": list(piece.record.channels),
                "units": list(piece.record.units),
                "timestamps": [format_iso8601(rebase(start, t)) for t in piece.timestamps.tolist()],
                "values": piece.matrix.values.tolist(),
            }
        )
    return {"success": True, "group_id": group_id, "rows": [row_start, row_stop], "files": files}
