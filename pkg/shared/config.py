"""
Environment-driven settings for the TSDF toolkit.
"""
import os
from pathlib import Path
from typing import Optional

# Schema version the validator pins to; other versions only warn
METADATA_VERSION = os.environ.get("TSDF_METADATA_VERSION", "0.1")

# Audit end-timestamp tolerance override in milliseconds (unset: one time unit)
_tolerance_raw = os.environ.get("TSDF_AUDIT_TOLERANCE_MS")
AUDIT_TOLERANCE_MS: Optional[float] = float(_tolerance_raw) if _tolerance_raw else None

# Single-file size above which we warn (binary files are never split for you)
MAX_FILE_BYTES = int(os.environ.get("TSDF_MAX_FILE_BYTES", str(4 * 1024**3)))

JSON_INDENT = int(os.environ.get("TSDF_JSON_INDENT", "3"))

# MCP tools may only touch files below this directory
DATA_ROOT = Path(os.environ.get("TSDF_DATA_ROOT", os.getcwd()))

STORAGE_ROOT_DEFAULT = "/tmp/tsdf-storage" if os.name != "nt" else "./storage"
STORAGE_ROOT = Path(os.environ.get("STORAGE_ROOT", STORAGE_ROOT_DEFAULT))
INDEX_DB_PATH = STORAGE_ROOT / "tsdf_index.db"

LOG_LEVEL = os.environ.get("TSDF_LOG_LEVEL", "WARNING").upper()


def audit_tolerance_ns() -> Optional[int]:
    """Tolerance override in nanoseconds, re-read so tests can patch the env."""
    raw = os.environ.get("TSDF_AUDIT_TOLERANCE_MS")
    if raw:
        return int(round(float(raw) * 1_000_000))
    if AUDIT_TOLERANCE_MS is not None:
        return int(round(AUDIT_TOLERANCE_MS * 1_000_000))
    return None
