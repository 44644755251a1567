"""
Exceptions raised by the TSDF toolkit.

Every error carries a stable ``code`` string so the CLI, the MCP tools and the
tests can match on it without parsing messages.
"""
from typing import Any, Optional


class TsdfError(Exception):
    code = "tsdf_error"

    def __init__(self, message: str, code: Optional[str] = None, **details: Any):
        super().__init__(message)
        if code:
            self.code = code
        self.details = details

    def to_dict(self) -> dict:
        return {"success": False, "error": str(self), "code": self.code, **_jsonable(self.details)}


class MetadataParseError(TsdfError):
    code = "parse_error"

    def __init__(self, message: str, line: int = 0, column: int = 0, code: Optional[str] = None):
        super().__init__(f"{message} (line {line}, column {column})", code, line=line, column=column)
        self.line = line
        self.column = column


class MetadataEncodingError(TsdfError):
    code = "encoding_error"


class MetadataError(TsdfError):
    code = "metadata_error"


class TimestampError(TsdfError):
    code = "timestamp_error"


class BinaryLayoutError(TsdfError):
    code = "invalid_layout"


class SizeMismatchError(BinaryLayoutError):
    code = "size_mismatch"

    def __init__(self, expected: int, actual: int, file_name: Optional[str] = None):
        where = f"{file_name}: " if file_name else ""
        super().__init__(
            f"{where}expected {expected} bytes, found {actual}",
            expected=expected,
            actual=actual,
            file_name=file_name,
        )
        self.expected = expected
        self.actual = actual


class DatasetError(TsdfError):
    code = "dataset_error"


class ConversionError(TsdfError):
    code = "conversion_error"


class IndexBuildError(TsdfError):
    code = "index_error"


def _jsonable(details: dict) -> dict:
    out = {}
    for key, value in details.items():
        if isinstance(value, (str, int, float, bool)) or value is None:
            out[key] = value
        elif hasattr(value, "to_rows"):
            out[key] = value.to_rows()
        else:
            out[key] = str(value)
    return out
