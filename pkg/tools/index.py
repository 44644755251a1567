import logging
from typing import Optional

from shared import config
from shared.errors import TsdfError
from shared.storage import IndexStore
from tools.paths import failure, resolve_data_path
from tsdf.indexer import IndexFilter, build_index, parse_time_bound, rows_as_dicts

logger = logging.getLogger(__name__)


def build_metadata_index(root_dir: str = ".") -> dict:
    """
    Scan a directory tree for TSDF metadata files and (re)build the stored index.

    Every *.json below root_dir is parsed and flattened. Files that are not valid TSDF
    metadata are listed in "skipped" and do not stop the scan.

    Args:
        root_dir (str, optional): Directory to scan, relative to the data root. Defaults to the data root.

    Returns:
        dict: {"success": True, "files": int, "channels": int, "skipped": [...]}.

    Example:
        build_metadata_index(root_dir="homestudy22")
    """
    try:
        index = build_index(resolve_data_path(root_dir))
        IndexStore(config.INDEX_DB_PATH).replace(index)
    except (TsdfError, OSError) as e:
        return failure(e)
    return {
        "success": True,
        "files": len(index.files),
        "channels": len(index.channels),
        "skipped": [entry.to_dict() for entry in index.skipped],
    }


def query_metadata_index(
    subject_id: Optional[str] = None,
    study_id: Optional[str] = None,
    device_id: Optional[str] = None,
    sensor_type: Optional[str] = None,
    start: Optional[str] = None,
    end: Optional[str] = None,
    channel_label: Optional[str] = None,
) -> dict:
    """
    Query the stored index. All filters are optional and combined with AND.

    Args:
        subject_id (str, optional): Exact subject identifier.
        study_id (str, optional): Exact study identifier.
        device_id (str, optional): Exact device identifier.
        sensor_type (str, optional): Exact sensor type.
        start (str, optional): Window start, ISO 8601 with offset or epoch milliseconds.
        end (str, optional): Window end. Files whose [start, end] overlaps the window match.
        channel_label (str, optional): Only files with a channel of this label.

    Returns:
        dict: {"success": True, "count": int, "files": [...]}.

    Example:
        query_metadata_index(subject_id="0713")
        query_metadata_index(start="2022-10-26T09:26:45.123+00:00", end="2022-10-26T09:27:45.123+00:00")
    """
    try:
        overlaps = None
        if start is not None or end is not None:
            if start is None or end is None:
                return {"success": False, "error": "Give both start and end", "code": "invalid_time_range"}
            overlaps = (parse_time_bound(start), parse_time_bound(end))
        flt = IndexFilter(subject_id, study_id, device_id, sensor_type, overlaps, channel_label)
        rows = IndexStore(config.INDEX_DB_PATH).query(flt)
    except (TsdfError, OSError) as e:
        return failure(e)
    return {"success": True, "count": len(rows), "files": rows_as_dicts(rows)}
