"""
ISO 8601 timestamps and the four timestamp encodings of TSDF time streams.

Internally every instant is an integer count of nanoseconds since the Unix
epoch. Leap seconds are not modelled.
"""
import datetime
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from shared.errors import TimestampError

logger = logging.getLogger(__name__)

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000
NS_PER_DAY = 86_400 * NS_PER_S
INT64_MAX = 2**63 - 1
INT64_MIN = -(2**63)

UNIT_NANOS = {"s": NS_PER_S, "ms": NS_PER_MS, "us": 1_000, "ns": 1}

_EPOCH_ORDINAL = datetime.date(1970, 1, 1).toordinal()

_ISO_RE = re.compile(
    r"^(?P<year>\d{4})-(?P<month>\d{2})-(?P<day>\d{2})"
    r"T(?P<hour>\d{2}):(?P<minute>\d{2}):(?P<second>\d{2})"
    r"(?:\.(?P<fraction>\d+))?"
    r"(?P<offset>Z|[+-]\d{2}:\d{2})?$"
)


class OffsetKind(str, Enum):
    KNOWN = "known"
    UTC_ONLY = "utc_only"
    LOCAL_ONLY = "local_only"


class TimeKind(str, Enum):
    RELATIVE = "relative"
    ABSOLUTE = "absolute"
    DIFFERENCE = "difference"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class Iso8601Timestamp:
    year: int
    month: int
    day: int
    hour: int
    minute: int
    second: int
    fraction: str = ""
    offset_kind: OffsetKind = OffsetKind.KNOWN
    offset_minutes: int = 0

    def __str__(self) -> str:
        return format_iso8601(self)

    @property
    def has_anchor(self) -> bool:
        return self.offset_kind is not OffsetKind.LOCAL_ONLY

    @property
    def resolution_nanos(self) -> int:
        """Smallest step the written text can express."""
        return 10 ** (9 - len(self.fraction))

    @property
    def fraction_nanos(self) -> int:
        return int(self.fraction.ljust(9, "0")) if self.fraction else 0

    def wall_clock_nanos(self) -> int:
        """Nanoseconds of the local wall-clock reading, as if it were UTC."""
        days = datetime.date(self.year, self.month, self.day).toordinal() - _EPOCH_ORDINAL
        seconds = days * 86_400 + self.hour * 3600 + self.minute * 60 + self.second
        return seconds * NS_PER_S + self.fraction_nanos


def parse_iso8601(text: str) -> Iso8601Timestamp:
    """
    Parse ``yyyy-mm-ddThh:mm:ss[.f…][±hh:mm|Z]``.

    A trailing ``Z`` means only UTC is known; no designator means only the
    local time is known. Fractions of 0 to 9 digits are kept verbatim.
    """
    if not isinstance(text, str):
        raise TimestampError(f"Timestamp must be a string, got {type(text).__name__}", "malformed_iso8601")
    match = _ISO_RE.match(text)
    if not match:
        raise TimestampError(f"Malformed ISO 8601 timestamp: {text!r}", "malformed_iso8601")
    parts = match.groupdict()
    fraction = parts["fraction"] or ""
    if len(fraction) > 9:
        raise TimestampError(f"More than 9 fractional digits in {text!r}", "fraction_too_precise")

    year, month, day = int(parts["year"]), int(parts["month"]), int(parts["day"])
    try:
        datetime.date(year, month, day)
    except ValueError as e:
        raise TimestampError(f"Invalid calendar date in {text!r}: {e}", "invalid_calendar_date")

    hour, minute, second = int(parts["hour"]), int(parts["minute"]), int(parts["second"])
    if hour > 23 or minute > 59 or second > 59:
        raise TimestampError(f"Invalid time of day in {text!r}", "invalid_time_of_day")

    offset = parts["offset"]
    if offset is None:
        kind, minutes = OffsetKind.LOCAL_ONLY, 0
    elif offset == "Z":
        kind, minutes = OffsetKind.UTC_ONLY, 0
    else:
        off_hours, off_minutes = int(offset[1:3]), int(offset[4:6])
        if off_minutes > 59:
            raise TimestampError(f"Invalid offset minutes in {text!r}", "invalid_offset")
        minutes = off_hours * 60 + off_minutes
        if minutes > 18 * 60:
            raise TimestampError(f"Offset beyond ±18:00 in {text!r}", "invalid_offset")
        if offset[0] == "-":
            if minutes == 0:
                # would be written back as +00:00
                raise TimestampError(f"Offset -00:00 in {text!r}; write +00:00 or Z", "invalid_offset")
            minutes = -minutes
        kind = OffsetKind.KNOWN

    return Iso8601Timestamp(year, month, day, hour, minute, second, fraction, kind, minutes)


def format_iso8601(t: Iso8601Timestamp) -> str:
    text = f"{t.year:04d}-{t.month:02d}-{t.day:02d}T{t.hour:02d}:{t.minute:02d}:{t.second:02d}"
    if t.fraction:
        text += f".{t.fraction}"
    if t.offset_kind is OffsetKind.UTC_ONLY:
        text += "Z"
    elif t.offset_kind is OffsetKind.KNOWN:
        sign = "-" if t.offset_minutes < 0 else "+"
        hours, minutes = divmod(abs(t.offset_minutes), 60)
        text += f"{sign}{hours:02d}:{minutes:02d}"
    return text


def to_epoch_nanos(t: Iso8601Timestamp, allow_local: bool = False) -> int:
    """
    Exact instant in nanoseconds since the Unix epoch.

    Local-only timestamps have no absolute anchor; with ``allow_local`` their
    wall-clock reading is returned as if it were UTC.
    """
    if not t.has_anchor and not allow_local:
        raise TimestampError(f"{format_iso8601(t)} has no UTC offset", "no_absolute_anchor")
    offset = t.offset_minutes * 60 * NS_PER_S if t.offset_kind is OffsetKind.KNOWN else 0
    return t.wall_clock_nanos() - offset


def to_epoch_millis(t: Iso8601Timestamp) -> int:
    # Sub-millisecond digits are dropped, not rounded
    truncated = Iso8601Timestamp(
        t.year, t.month, t.day, t.hour, t.minute, t.second,
        t.fraction[:3], t.offset_kind, t.offset_minutes,
    )
    return to_epoch_nanos(truncated) // NS_PER_MS


def from_epoch_nanos(
    nanos: int,
    offset_kind: OffsetKind = OffsetKind.UTC_ONLY,
    offset_minutes: int = 0,
    digits: Optional[int] = None,
) -> Iso8601Timestamp:
    """
    Timestamp text for an instant, rendered in the given offset.

    With ``digits`` unset, the fraction uses the fewest digits (at least 3)
    that represent the instant exactly.
    """
    nanos = int(nanos)
    local = nanos + (offset_minutes * 60 * NS_PER_S if offset_kind is OffsetKind.KNOWN else 0)
    days, rest = divmod(local, NS_PER_DAY)
    date = datetime.date.fromordinal(_EPOCH_ORDINAL + days)
    seconds, sub = divmod(rest, NS_PER_S)
    hour, rem = divmod(seconds, 3600)
    minute, second = divmod(rem, 60)

    full = f"{sub:09d}"
    if digits is None:
        fraction = full.rstrip("0")
        fraction = fraction.ljust(3, "0") if len(fraction) < 3 else fraction
    else:
        fraction = full[:digits]
    return Iso8601Timestamp(
        date.year, date.month, date.day, hour, minute, second, fraction, offset_kind, offset_minutes
    )


def rebase(t: Iso8601Timestamp, nanos: int, digits: Optional[int] = None) -> Iso8601Timestamp:
    """Render ``nanos`` in the same offset variant as ``t``."""
    if not t.has_anchor:
        return from_epoch_nanos(nanos, OffsetKind.LOCAL_ONLY, 0, digits)
    return from_epoch_nanos(nanos, t.offset_kind, t.offset_minutes, digits)


@dataclass(frozen=True)
class TimeEncoding:
    kind: TimeKind
    unit: str
    base: Iso8601Timestamp
    sampling_rate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TimeKind(self.kind))
        if self.unit not in UNIT_NANOS:
            raise TimestampError(
                f"Unknown time unit {self.unit!r}, expected one of {sorted(UNIT_NANOS)}",
                "unknown_time_unit",
            )
        if self.kind is TimeKind.UNIFORM:
            if self.sampling_rate is None or not self.sampling_rate > 0:
                raise TimestampError("Uniform sampling needs a positive sampling_rate", "missing_sampling_rate")

    @property
    def unit_nanos(self) -> int:
        return UNIT_NANOS[self.unit]

    @property
    def base_nanos(self) -> int:
        return to_epoch_nanos(self.base, allow_local=True)


def _check_range(value: int, what: str) -> None:
    if value > INT64_MAX or value < INT64_MIN:
        raise TimestampError(f"{what} {value} overflows the epoch-nanosecond range", "epoch_overflow")


def raw_to_nanos(raw: np.ndarray, unit_ns: int) -> np.ndarray:
    """Scale raw stored values to integer nanoseconds, element by element."""
    if raw.dtype.kind == "f":
        if not np.all(np.isfinite(raw)):
            raise TimestampError("Time stream contains NaN or infinite values", "invalid_time_value")
        scaled = raw.astype(np.float64) * unit_ns
        if scaled.size and np.max(np.abs(scaled)) >= 2.0**63:
            raise TimestampError("Time values overflow the epoch-nanosecond range", "epoch_overflow")
        return np.rint(scaled).astype(np.int64)
    if raw.size:
        _check_range(int(raw.max()) * unit_ns, "Time value")
        _check_range(int(raw.min()) * unit_ns, "Time value")
    return raw.astype(np.int64) * unit_ns


def decode_timestamps(
    raw: Union[Sequence, np.ndarray],
    enc: TimeEncoding,
    n: int,
    first_row: int = 0,
    carry: int = 0,
) -> np.ndarray:
    """
    Turn stored time values into ``n`` instants (int64 epoch nanoseconds).

    ``first_row`` and ``carry`` support decoding a slice: ``first_row`` is the
    row index of ``raw[0]`` (uniform sampling), ``carry`` the nanoseconds
    accumulated by the rows before the slice (difference encoding).
    """
    raw = np.asarray(raw)
    kind = enc.kind
    if kind is TimeKind.UNIFORM:
        if raw.size:
            raise TimestampError("Uniform sampling stores no timestamps", "unexpected_time_values")
        base = enc.base_nanos
        step = NS_PER_S / float(enc.sampling_rate)
        last = base + (first_row + max(n - 1, 0)) * step
        if abs(last) >= 2.0**63:
            raise TimestampError("Uniform timeline overflows the epoch-nanosecond range", "epoch_overflow")
        offsets = np.rint(np.arange(first_row, first_row + n, dtype=np.float64) * step).astype(np.int64)
        return offsets + np.int64(base)

    raw = raw.reshape(-1)
    if raw.size != n:
        raise TimestampError(f"Expected {n} time values, got {raw.size}", "time_length_mismatch")

    unit_ns = enc.unit_nanos
    if kind is TimeKind.DIFFERENCE:
        if raw.size and raw.min() < 0:
            raise TimestampError("Difference-encoded time contains a negative step", "nonmonotonic_time")
        steps = raw_to_nanos(raw, unit_ns)
        base = enc.base_nanos + carry
        if steps.size:
            # exact total; int64 cumsum would wrap silently
            _check_range(base + int(np.sum(steps.astype(object))), "Final instant")
        return np.cumsum(steps, dtype=np.int64) + np.int64(base)

    values = raw_to_nanos(raw, unit_ns)
    if kind is TimeKind.ABSOLUTE:
        return values
    base = enc.base_nanos
    if values.size:
        _check_range(base + int(values.max()), "Final instant")
        _check_range(base + int(values.min()), "First instant")
    return values + np.int64(base)


def encode_timestamps(
    instants: Union[Sequence[int], np.ndarray],
    kind: Union[TimeKind, str],
    unit: str,
    base: Iso8601Timestamp,
    sampling_rate: Optional[float] = None,
    truncate: bool = False,
    data_type: Optional[str] = None,
    bits: Optional[int] = None,
) -> np.ndarray:
    """
    Inverse of ``decode_timestamps``.

    With ``data_type``/``bits`` given, values are checked to fit that storage
    type. Float storage keeps fractional units, and each stored value must
    decode back to its instant; integer storage must be exact. ``truncate``
    skips the exactness checks.
    """
    enc = TimeEncoding(TimeKind(kind), unit, base, sampling_rate)
    instants = np.asarray(instants, dtype=np.int64).reshape(-1)

    if enc.kind is TimeKind.UNIFORM:
        expected = decode_timestamps([], enc, instants.size)
        if not np.array_equal(expected, instants):
            raise TimestampError("Instants are not uniformly sampled at the given rate", "not_uniform")
        return np.empty(0, dtype=np.int64)

    base_ns = enc.base_nanos
    if enc.kind is TimeKind.ABSOLUTE:
        deltas = instants
    elif enc.kind is TimeKind.RELATIVE:
        deltas = instants - np.int64(base_ns)
    else:
        deltas = np.diff(instants, prepend=np.int64(base_ns))
        if deltas.size and deltas.min() < 0:
            raise TimestampError("Instants decrease; difference encoding needs nondecreasing time", "nonmonotonic_time")

    unit_ns = enc.unit_nanos
    if data_type == "float":
        values = deltas.astype(np.float64) / unit_ns
    else:
        lossy = deltas % unit_ns != 0
        if lossy.any() and not truncate:
            index = int(np.argmax(lossy))
            raise TimestampError(
                f"Instant {index} is not a whole number of {unit!r}", "unit_precision_loss", index=index
            )
        # toward zero, so truncation never moves a relative instant before the start
        values = np.sign(deltas) * (np.abs(deltas) // unit_ns)

    if data_type is not None and bits is not None:
        _check_storage(values, data_type, bits)
    if data_type == "float" and not truncate:
        _check_float_exact(values, deltas, unit, bits or 64)
    return values


def _check_float_exact(values: np.ndarray, deltas: np.ndarray, unit: str, bits: int) -> None:
    # stored values must decode (element-wise rint to ns) to the same deltas
    stored = values.astype(np.dtype(f"f{bits // 8}")).astype(np.float64)
    lossy = raw_to_nanos(stored, UNIT_NANOS[unit]) != deltas
    if lossy.any():
        index = int(np.argmax(lossy))
        raise TimestampError(
            f"Instant {index} does not survive float{bits} storage in {unit!r}", "unit_precision_loss", index=index
        )


def _check_storage(values: np.ndarray, data_type: str, bits: int) -> None:
    if not values.size:
        return
    if data_type == "float":
        dtype = np.dtype(f"f{bits // 8}")
        if np.max(np.abs(values)) > np.finfo(dtype).max:
            raise TimestampError(f"Time values overflow float{bits}", "timestamp_overflow")
        return
    info = np.iinfo(np.dtype(f"{'u' if data_type == 'uint' else 'i'}{bits // 8}"))
    low, high = int(values.min()), int(values.max())
    if low < info.min or high > info.max:
        raise TimestampError(
            f"Time values [{low}, {high}] do not fit {data_type}{bits} [{info.min}, {info.max}]",
            "timestamp_overflow",
        )
