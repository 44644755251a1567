"""
Raw binary sample files: headerless, multiplexed (row-first) numeric matrices.

Element (r, c) of a file with ``n`` channels of ``bits`` width starts at byte
``(r * n + c) * bits / 8``, so any row range is read with one seek.
"""
import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Tuple, Union

import numpy as np

from shared import config
from shared.errors import BinaryLayoutError, SizeMismatchError
from tsdf.metadata import BIT_WIDTHS, DATA_TYPES, ENDIANNESS, FileRecord

logger = logging.getLogger(__name__)

BINARY_SUFFIXES = (".bin", ".raw")

_KIND = {"int": "i", "uint": "u", "float": "f"}

Source = Union[str, os.PathLike, BinaryIO, bytes, bytearray]


@dataclass(frozen=True)
class BinaryLayout:
    data_type: str
    bits: int
    endianness: str
    n_channels: int
    rows: int
    scale_factors: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.data_type not in DATA_TYPES:
            raise BinaryLayoutError(f"Unknown data_type {self.data_type!r}")
        if self.bits not in BIT_WIDTHS:
            raise BinaryLayoutError(f"Unsupported bit width {self.bits}")
        if self.data_type == "float" and self.bits not in (32, 64):
            raise BinaryLayoutError(f"float data needs 32 or 64 bits, got {self.bits}")
        if self.endianness not in ENDIANNESS:
            raise BinaryLayoutError(f"Unknown endianness {self.endianness!r}")
        if self.n_channels < 1:
            raise BinaryLayoutError("A binary file needs at least one channel")
        if self.rows < 0:
            raise BinaryLayoutError("rows must be non-negative")
        if self.scale_factors is not None:
            object.__setattr__(self, "scale_factors", tuple(float(f) for f in self.scale_factors))
            if len(self.scale_factors) != self.n_channels:
                raise BinaryLayoutError(
                    f"{len(self.scale_factors)} scale factors for {self.n_channels} channels"
                )

    @classmethod
    def from_record(cls, record: FileRecord) -> "BinaryLayout":
        return cls(
            data_type=record.data_type,
            bits=record.bits,
            endianness=record.endianness,
            n_channels=len(record.channels),
            rows=record.rows,
            scale_factors=record.scale_factors,
        )

    @property
    def dtype(self) -> np.dtype:
        order = "<" if self.endianness == "little" else ">"
        return np.dtype(f"{order}{_KIND[self.data_type]}{self.bits // 8}")

    @property
    def itemsize(self) -> int:
        return self.bits // 8

    @property
    def row_bytes(self) -> int:
        return self.n_channels * self.itemsize

    @property
    def expected_size(self) -> int:
        return self.rows * self.row_bytes

    def with_rows(self, rows: int) -> "BinaryLayout":
        return BinaryLayout(self.data_type, self.bits, self.endianness, self.n_channels, rows, self.scale_factors)


@dataclass(frozen=True)
class SampleMatrix:
    """
    ``values`` are physical values (stored x scale factor). ``raw`` holds the
    stored integers for integer layouts and is None for float data.
    """

    values: np.ndarray
    raw: Optional[np.ndarray] = None
    channel_labels: Tuple[str, ...] = ()
    units: Tuple[str, ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def column(self, index: int) -> np.ndarray:
        return self.values[:, index]


@dataclass(frozen=True)
class SizeCheck:
    expected: int
    actual: int

    @property
    def ok(self) -> bool:
        return self.expected == self.actual

    def __bool__(self) -> bool:
        return self.ok


def _source_size(source: Source) -> int:
    if isinstance(source, (bytes, bytearray)):
        return len(source)
    if isinstance(source, (str, os.PathLike)):
        return os.path.getsize(source)
    position = source.tell()
    size = source.seek(0, io.SEEK_END)
    source.seek(position)
    return size


def verify_size(source: Source, layout: BinaryLayout) -> SizeCheck:
    """Compare the byte length of ``source`` with rows x channels x bits/8."""
    check = SizeCheck(layout.expected_size, _source_size(source))
    if check.actual > config.MAX_FILE_BYTES:
        logger.warning(
            f"Binary file of {check.actual} bytes exceeds the {config.MAX_FILE_BYTES}-byte guideline; "
            "consider splitting the recording"
        )
    return check


def _physical(stored: np.ndarray, layout: BinaryLayout) -> SampleMatrix:
    native = stored.astype(stored.dtype.newbyteorder("="), copy=False)
    if layout.data_type == "float":
        return SampleMatrix(values=native)
    if layout.scale_factors is not None:
        values = native.astype(np.float64) * np.asarray(layout.scale_factors, dtype=np.float64)
    else:
        values = native
    return SampleMatrix(values=values, raw=native)


def read_rows(
    source: Source,
    layout: BinaryLayout,
    row_start: int = 0,
    row_count: Optional[int] = None,
    file_name: Optional[str] = None,
) -> SampleMatrix:
    """
    Read ``row_count`` rows starting at ``row_start``.

    Only the requested bytes are read, after a single seek. The file length is
    checked against the layout first.
    """
    if row_count is None:
        row_count = layout.rows - row_start
    if row_start < 0 or row_count < 0 or row_start + row_count > layout.rows:
        raise BinaryLayoutError(
            f"Rows [{row_start}, {row_start + row_count}) outside [0, {layout.rows})",
            "row_range_out_of_bounds",
        )
    check = verify_size(source, layout)
    if not check.ok:
        raise SizeMismatchError(check.expected, check.actual, file_name)

    offset = row_start * layout.row_bytes
    nbytes = row_count * layout.row_bytes
    logger.debug(f"Reading {row_count} rows at byte {offset} from {file_name or 'buffer'}")

    if nbytes == 0:
        stored = np.empty(0, dtype=layout.dtype)
    elif isinstance(source, (bytes, bytearray)):
        stored = np.frombuffer(bytes(source[offset : offset + nbytes]), dtype=layout.dtype)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fid:
            stored = _read_block(fid, offset, nbytes, layout)
    else:
        stored = _read_block(source, offset, nbytes, layout)
    return _physical(stored.reshape(row_count, layout.n_channels), layout)


def _read_block(fid: BinaryIO, offset: int, nbytes: int, layout: BinaryLayout) -> np.ndarray:
    fid.seek(offset, io.SEEK_SET)
    buffer = fid.read(nbytes)
    if len(buffer) != nbytes:
        raise SizeMismatchError(offset + nbytes, offset + len(buffer))
    return np.frombuffer(buffer, dtype=layout.dtype)


def iter_blocks(source: Source, layout: BinaryLayout, stop: int, block_rows: int = 1 << 20):
    """Yield consecutive ``SampleMatrix`` blocks covering rows [0, stop)."""
    for start in range(0, stop, block_rows):
        yield read_rows(source, layout, start, min(block_rows, stop - start))


def _storage_dtype_info(layout: BinaryLayout) -> np.iinfo:
    return np.iinfo(layout.dtype.newbyteorder("="))


def quantize(values: np.ndarray, layout: BinaryLayout) -> np.ndarray:
    """
    Convert physical values into the layout's stored type (native byte order).

    Scaled integers round half to even; anything outside the integer range is
    refused with the offending row and channel.
    """
    values = np.asarray(values)
    if values.ndim == 1 and layout.n_channels == 1:
        values = values.reshape(-1, 1)
    if values.shape != (layout.rows, layout.n_channels):
        raise BinaryLayoutError(
            f"Matrix shape {values.shape} does not match layout ({layout.rows}, {layout.n_channels})",
            "shape_mismatch",
        )
    native = layout.dtype.newbyteorder("=")
    if layout.data_type == "float":
        return values.astype(native)

    if layout.scale_factors is not None:
        stored = np.rint(values.astype(np.float64) / np.asarray(layout.scale_factors, dtype=np.float64))
    elif values.dtype.kind in "iu":
        stored = values
    else:
        stored = values.astype(np.float64)
        fractional = np.isfinite(stored) & (stored != np.rint(stored))
        if fractional.any():
            row, channel = (int(i) for i in np.argwhere(fractional)[0])
            raise BinaryLayoutError(
                f"Value {stored[row, channel]} at row {row}, channel {channel} is not an integer",
                "non_integral_value",
                row=row,
                channel=channel,
            )

    info = _storage_dtype_info(layout)
    if stored.dtype.kind == "f":
        bad = ~np.isfinite(stored) | (stored < info.min) | (stored >= float(info.max) + 1.0)
    elif stored.size and (int(stored.min()) < info.min or int(stored.max()) > info.max):
        exact = stored.astype(object)
        bad = ((exact < info.min) | (exact > info.max)).astype(bool)
    else:
        bad = np.zeros(stored.shape, dtype=bool)
    if bad.any():
        row, channel = (int(i) for i in np.argwhere(bad)[0])
        raise BinaryLayoutError(
            f"Stored value at row {row}, channel {channel} does not fit {layout.data_type}{layout.bits}",
            "quantization_overflow",
            row=row,
            channel=channel,
        )
    return stored.astype(native)


def write_rows(matrix: Union[SampleMatrix, np.ndarray, Sequence], layout: BinaryLayout) -> bytes:
    """Serialize a rows x channels matrix into the layout's byte form."""
    if isinstance(matrix, SampleMatrix):
        # stored integers are authoritative when there is no scaling to undo
        values = matrix.raw if matrix.raw is not None and layout.scale_factors is None else matrix.values
    else:
        values = matrix
    stored = quantize(values, layout)
    return stored.astype(layout.dtype).tobytes()


def write_file(path: Union[str, os.PathLike], matrix, layout: BinaryLayout) -> int:
    data = write_rows(matrix, layout)
    Path(path).write_bytes(data)
    logger.info(f"Wrote {layout.rows} rows x {layout.n_channels} channels to {path}")
    return len(data)


def is_binary_name(file_name: str) -> bool:
    return Path(file_name).suffix.lower() in BINARY_SUFFIXES
