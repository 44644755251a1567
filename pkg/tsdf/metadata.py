"""
TSDF metadata documents: parsing, flattening, validation and serialization.

A metadata file is a JSON tree. Fields set closer to the root are inherited by
every ``file_name`` leaf below them; deeper values win. ``flatten`` resolves the
tree into one ``FileRecord`` per binary file, and ``serialize_metadata`` goes
the other way, hoisting shared fields back up.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath, PureWindowsPath
from types import MappingProxyType
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from shared import config
from shared.errors import MetadataEncodingError, MetadataError, MetadataParseError, TimestampError
from tsdf.timecodec import OffsetKind, parse_iso8601, to_epoch_nanos

logger = logging.getLogger(__name__)

# Table order, which is also the serialization order
MANDATORY_FIELDS = (
    "subject_id",
    "study_id",
    "device_id",
    "endianness",
    "metadata_version",
    "start_iso8601",
    "end_iso8601",
    "rows",
    "file_name",
    "channels",
    "units",
    "data_type",
    "bits",
)
OPTIONAL_FIELDS = (
    "sampling_rate",
    "compression",
    "scale_factors",
    "sensor_type",
    "checksum",
    "checksum_type",
)
RECOGNIZED_FIELDS = frozenset(MANDATORY_FIELDS + OPTIONAL_FIELDS)

# Spellings found in the wild, rewritten during flatten
FIELD_ALIASES = {"endianess": "endianness", "filename": "file_name"}

STRING_FIELDS = (
    "subject_id",
    "study_id",
    "device_id",
    "endianness",
    "metadata_version",
    "start_iso8601",
    "end_iso8601",
    "file_name",
    "data_type",
)
DATA_TYPES = ("int", "uint", "float")
BIT_WIDTHS = (8, 16, 32, 64)
ENDIANNESS = ("big", "little")
COMPRESSIONS = ("none", "relative", "absolute", "difference")

# Container keys the serializer writes; records may not use them as fields
GROUP_KEY = "signals"
FILES_KEY = "samples"


class Layout(str, Enum):
    FLAT_PER_FILE = "flat_per_file"
    GROUPED_BY_COMMON_PREFIX = "grouped_by_common_prefix"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


def _freeze(node: Any) -> Any:
    if isinstance(node, Mapping):
        return MappingProxyType({key: _freeze(value) for key, value in node.items()})
    if isinstance(node, (list, tuple)):
        return tuple(_freeze(item) for item in node)
    return node


def thaw(node: Any) -> Any:
    if isinstance(node, Mapping):
        return {key: thaw(value) for key, value in node.items()}
    if isinstance(node, (list, tuple)):
        return [thaw(item) for item in node]
    return node


@dataclass(frozen=True)
class MetadataDocument:
    """Parsed metadata tree. Mappings are read-only views, lists are tuples."""

    root: Mapping[str, Any]

    def to_dict(self) -> dict:
        return thaw(self.root)


def _line_column(text: str, offset: int) -> Tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    column = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, column


def _duplicate_offset(text: str, key: str) -> int:
    """Offset of ``key`` where it repeats inside one object."""
    stack: List[Optional[set]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == '"':
            end = i + 1
            while end < n and text[end] != '"':
                end += 2 if text[end] == "\\" else 1
            after = end + 1
            while after < n and text[after] in " \t\r\n":
                after += 1
            if stack and stack[-1] is not None and after < n and text[after] == ":":
                name = json.loads(text[i:end + 1])
                if name == key and name in stack[-1]:
                    return i
                stack[-1].add(name)
            i = end + 1
            continue
        if ch == "{":
            stack.append(set())
        elif ch == "[":
            stack.append(None)
        elif ch in "}]" and stack:
            stack.pop()
        i += 1
    return 0


def parse_metadata(text: Union[bytes, str]) -> MetadataDocument:
    """
    Parse UTF-8 metadata text into a ``MetadataDocument``.

    Integers stay integers. A field repeated inside one mapping is a parse
    error, as are NaN/Infinity literals and a root that is not a mapping.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MetadataEncodingError(f"Metadata is not valid UTF-8 at byte {e.start}: {e.reason}")
    text = text.lstrip("\ufeff")

    def unique_pairs(pairs):
        mapping = {}
        for key, value in pairs:
            if key in mapping:
                raise _DuplicateField(key)
            mapping[key] = value
        return mapping

    def reject_constant(name):
        raise ValueError(f"{name} is not valid JSON")

    try:
        root = json.loads(text, object_pairs_hook=unique_pairs, parse_constant=reject_constant)
    except json.JSONDecodeError as e:
        raise MetadataParseError(e.msg, e.lineno, e.colno)
    except _DuplicateField as e:
        line, column = _line_column(text, _duplicate_offset(text, e.key))
        raise MetadataParseError(f"Duplicate field {e.key!r}", line, column, code="duplicate_field")
    except ValueError as e:
        raise MetadataParseError(str(e), 0, 0)

    if not isinstance(root, dict):
        raise MetadataParseError("Metadata root must be a JSON object", 1, 1, code="root_not_mapping")
    return MetadataDocument(_freeze(root))


class _DuplicateField(Exception):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key


# ---------------------------------------------------------------------------
# Flattened records
# ---------------------------------------------------------------------------


def _canonical_order(fields: Mapping[str, Any]) -> Dict[str, Any]:
    ordered = {key: fields[key] for key in MANDATORY_FIELDS if key in fields}
    ordered.update((key, fields[key]) for key in OPTIONAL_FIELDS if key in fields)
    ordered.update((key, value) for key, value in fields.items() if key not in RECOGNIZED_FIELDS)
    return ordered


@dataclass(frozen=True)
class FileRecord:
    """
    One binary file with every inherited field resolved.

    ``fields`` keeps the raw values (lists as tuples); the typed properties
    below read from it and return None when a field is absent. Records are not
    checked on construction; ``validate`` reports what is wrong with them.
    """

    fields: Mapping[str, Any]
    group_id: int = 0
    path: str = "$"
    aliases: Tuple[str, ...] = ()

    def get(self, name: str, default: Any = None) -> Any:
        return self.fields.get(name, default)

    @property
    def file_name(self) -> Optional[str]:
        return self.fields.get("file_name")

    @property
    def subject_id(self) -> Optional[str]:
        return self.fields.get("subject_id")

    @property
    def study_id(self) -> Optional[str]:
        return self.fields.get("study_id")

    @property
    def device_id(self) -> Optional[str]:
        return self.fields.get("device_id")

    @property
    def endianness(self) -> Optional[str]:
        return self.fields.get("endianness")

    @property
    def metadata_version(self) -> Optional[str]:
        return self.fields.get("metadata_version")

    @property
    def start_iso8601(self) -> Optional[str]:
        return self.fields.get("start_iso8601")

    @property
    def end_iso8601(self) -> Optional[str]:
        return self.fields.get("end_iso8601")

    @property
    def rows(self) -> Optional[int]:
        return self.fields.get("rows")

    @property
    def channels(self) -> Tuple[str, ...]:
        return tuple(self.fields.get("channels") or ())

    @property
    def units(self) -> Tuple[str, ...]:
        return tuple(self.fields.get("units") or ())

    @property
    def data_type(self) -> Optional[str]:
        return self.fields.get("data_type")

    @property
    def bits(self) -> Optional[int]:
        return self.fields.get("bits")

    @property
    def compression(self) -> Optional[str]:
        return self.fields.get("compression")

    @property
    def sampling_rate(self) -> Optional[float]:
        return self.fields.get("sampling_rate")

    @property
    def scale_factors(self) -> Optional[Tuple[float, ...]]:
        value = self.fields.get("scale_factors")
        return tuple(value) if value is not None else None

    @property
    def sensor_type(self) -> Optional[str]:
        return self.fields.get("sensor_type")

    @property
    def extra_fields(self) -> Dict[str, Any]:
        return {key: value for key, value in self.fields.items() if key not in RECOGNIZED_FIELDS}

    def to_dict(self) -> dict:
        return thaw(_canonical_order(self.fields))

    def replace_fields(self, **changes: Any) -> "FileRecord":
        merged = dict(self.fields)
        merged.update(changes)
        return FileRecord(_freeze(_canonical_order(merged)), self.group_id, self.path, self.aliases)


def record_from_fields(fields: Mapping[str, Any], group_id: int = 0, path: str = "$") -> FileRecord:
    """Build a record directly from a field mapping (canonical spellings only)."""
    return FileRecord(_freeze(_canonical_order(fields)), group_id, path)


def _is_node_list(value: Any) -> bool:
    return isinstance(value, (list, tuple)) and len(value) > 0 and all(isinstance(v, Mapping) for v in value)


def _is_child(value: Any) -> bool:
    return isinstance(value, Mapping) or _is_node_list(value)


def _holds_file_name(value: Any) -> bool:
    if isinstance(value, Mapping):
        return any(FIELD_ALIASES.get(k, k) == "file_name" or _holds_file_name(v) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return any(_holds_file_name(v) for v in value)
    return False


def flatten(doc: MetadataDocument) -> List[FileRecord]:
    """
    Resolve the metadata tree into one ``FileRecord`` per ``file_name``.

    Mappings that sit side by side in one list form a group and share a
    group_id; a leaf outside any list is a group on its own. Group ids are
    numbered in document order, as are the records.
    """
    records: List[FileRecord] = []
    group_numbers: Dict[Tuple[str, str], int] = {}

    def group_for(key: Tuple[str, str]) -> int:
        if key not in group_numbers:
            group_numbers[key] = len(group_numbers)
        return group_numbers[key]

    def visit(node, inherited, inherited_aliases, path, list_key):
        local = dict(inherited)
        aliases = list(inherited_aliases)
        seen_here = {}
        for key, value in node.items():
            canonical = FIELD_ALIASES.get(key, key)
            if canonical in seen_here:
                raise MetadataError(
                    f"{path}: both {seen_here[canonical]!r} and {key!r} given", "conflicting_alias", path=path
                )
            seen_here[canonical] = key
            if canonical == "file_name" and not isinstance(value, str):
                raise MetadataError(
                    f"{path}.{key}: file_name must be a string, got {type(value).__name__}",
                    "file_name_not_string",
                    path=f"{path}.{key}",
                )
            if isinstance(value, (list, tuple)) and not _is_node_list(value) and _holds_file_name(value):
                raise MetadataError(
                    f"{path}.{key}: list mixes file entries with other values", "mixed_node_list",
                    path=f"{path}.{key}",
                )
            if _is_child(value):
                continue
            if canonical != key:
                logger.warning(f"{path}: field {key!r} read as {canonical!r}")
                if key not in aliases:
                    aliases.append(key)
            local[canonical] = value

        for key, value in node.items():
            canonical = FIELD_ALIASES.get(key, key)
            if canonical == "file_name":
                group_key = list_key if list_key is not None else ("node", path)
                records.append(
                    FileRecord(
                        MappingProxyType(_canonical_order(local)),
                        group_for(group_key),
                        path,
                        tuple(aliases),
                    )
                )
            elif isinstance(value, Mapping):
                visit(value, local, aliases, f"{path}.{key}", None)
            elif _is_node_list(value):
                child_list = ("list", f"{path}.{key}")
                for index, item in enumerate(value):
                    visit(item, local, aliases, f"{path}.{key}[{index}]", child_list)

    visit(doc.root, {}, [], "$", None)
    return records


def read_records(metadata_path: Union[str, Path]) -> List[FileRecord]:
    """Parse and flatten a metadata file."""
    return flatten(parse_metadata(Path(metadata_path).read_bytes()))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    severity: Severity
    path: str
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"severity": self.severity.value, "path": self.path, "code": self.code, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def errors(self) -> Tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.severity is Severity.ERROR)

    @property
    def warnings(self) -> Tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.severity is Severity.WARNING)

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self, severity: Optional[Severity] = None) -> List[str]:
        return [v.code for v in self.violations if severity is None or v.severity is severity]

    def merged(self, *others: "ValidationReport") -> "ValidationReport":
        violations = list(self.violations)
        for other in others:
            violations.extend(other.violations)
        return ValidationReport(tuple(violations))

    def to_rows(self) -> List[dict]:
        return [v.to_dict() for v in self.violations]

    def to_text(self) -> str:
        if not self.violations:
            return "no findings"
        return "\n".join(f"{v.severity.value}: {v.path}: [{v.code}] {v.message}" for v in self.violations)


class _Collector:
    def __init__(self):
        self.items: List[Violation] = []

    def error(self, path: str, code: str, message: str) -> None:
        self.items.append(Violation(Severity.ERROR, path, code, message))

    def warning(self, path: str, code: str, message: str) -> None:
        self.items.append(Violation(Severity.WARNING, path, code, message))


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_empty(value: Any) -> bool:
    return value is None or (isinstance(value, (str, tuple, list)) and len(value) == 0)


def _is_absolute(name: str) -> bool:
    return PurePosixPath(name).is_absolute() or PureWindowsPath(name).is_absolute()


def _validate_record(record: FileRecord, out: _Collector) -> None:
    fields = record.fields
    label = record.file_name if isinstance(record.file_name, str) else record.path

    def at(name: str) -> str:
        return f"{record.path}.{name}"

    for alias in record.aliases:
        out.warning(
            at(alias),
            f"field_alias:{alias}",
            f"{label}: {alias!r} accepted as {FIELD_ALIASES[alias]!r}",
        )

    present = set()
    for name in MANDATORY_FIELDS:
        if _is_empty(fields.get(name)):
            out.error(at(name), f"missing_mandatory:{name}", f"{label}: mandatory field {name!r} is missing")
        else:
            present.add(name)

    for name in STRING_FIELDS:
        if name in present and not isinstance(fields[name], str):
            out.error(at(name), f"ill_typed:{name}", f"{label}: {name!r} must be a string")
            present.discard(name)

    if "rows" in present and not (_is_int(fields["rows"]) and fields["rows"] >= 0):
        out.error(at("rows"), "ill_typed:rows", f"{label}: 'rows' must be a non-negative integer")

    for name in ("channels", "units"):
        if name in present and not (
            isinstance(fields[name], tuple) and all(isinstance(v, str) for v in fields[name])
        ):
            out.error(at(name), f"ill_typed:{name}", f"{label}: {name!r} must be a list of strings")
            present.discard(name)

    if "channels" in present and "units" in present and len(fields["channels"]) != len(fields["units"]):
        out.error(
            at("units"),
            "channels_units_length_mismatch",
            f"{label}: {len(fields['channels'])} channels but {len(fields['units'])} units",
        )

    if "endianness" in present and fields["endianness"] not in ENDIANNESS:
        out.error(at("endianness"), "unknown_endianness", f"{label}: endianness must be 'big' or 'little'")

    data_type = fields.get("data_type") if "data_type" in present else None
    if data_type is not None and data_type not in DATA_TYPES:
        out.error(at("data_type"), "unknown_data_type", f"{label}: unknown data_type {data_type!r}")
        data_type = None

    if "bits" in present:
        bits = fields["bits"]
        if not _is_int(bits):
            out.error(at("bits"), "ill_typed:bits", f"{label}: 'bits' must be an integer")
        elif bits not in BIT_WIDTHS:
            out.error(at("bits"), "unsupported_bits", f"{label}: unsupported bit width {bits}")
        elif data_type == "float" and bits not in (32, 64):
            out.error(at("bits"), "unsupported_bits", f"{label}: float data needs 32 or 64 bits, got {bits}")

    if "metadata_version" in present and fields["metadata_version"] != config.METADATA_VERSION:
        out.warning(
            at("metadata_version"),
            "metadata_version_unpinned",
            f"{label}: metadata_version {fields['metadata_version']!r}, validator pinned to "
            f"{config.METADATA_VERSION!r}",
        )

    stamps = {}
    for name in ("start_iso8601", "end_iso8601"):
        if name in present:
            try:
                stamps[name] = parse_iso8601(fields[name])
            except TimestampError as e:
                out.error(at(name), f"malformed_iso8601:{name}", f"{label}: {e}")
    if len(stamps) == 2 and all(s.has_anchor for s in stamps.values()):
        if to_epoch_nanos(stamps["start_iso8601"]) > to_epoch_nanos(stamps["end_iso8601"]):
            out.error(at("end_iso8601"), "start_after_end", f"{label}: end_iso8601 precedes start_iso8601")
    elif len(stamps) == 2:
        kinds = {s.offset_kind for s in stamps.values()}
        if kinds == {OffsetKind.LOCAL_ONLY} and (
            stamps["start_iso8601"].wall_clock_nanos() > stamps["end_iso8601"].wall_clock_nanos()
        ):
            out.error(at("end_iso8601"), "start_after_end", f"{label}: end_iso8601 precedes start_iso8601")

    if "file_name" in present and _is_absolute(fields["file_name"]):
        out.error(at("file_name"), "absolute_path", f"{label}: file_name must be relative to the metadata file")

    if "sampling_rate" in fields:
        rate = fields["sampling_rate"]
        if not _is_number(rate):
            out.error(at("sampling_rate"), "ill_typed:sampling_rate", f"{label}: sampling_rate must be a number")
        elif not rate > 0:
            out.error(at("sampling_rate"), "non_positive_sampling_rate", f"{label}: sampling_rate must be > 0")

    if "compression" in fields:
        compression = fields["compression"]
        if compression not in COMPRESSIONS:
            out.warning(
                at("compression"),
                "unrecognized_compression",
                f"{label}: compression {compression!r} is not one of {', '.join(COMPRESSIONS)}",
            )

    if "scale_factors" in fields:
        factors = fields["scale_factors"]
        if not (isinstance(factors, tuple) and all(_is_number(f) for f in factors)):
            out.error(at("scale_factors"), "ill_typed:scale_factors", f"{label}: scale_factors must be numbers")
        else:
            if "channels" in present and len(factors) != len(fields["channels"]):
                out.error(
                    at("scale_factors"),
                    "scale_factors_length_mismatch",
                    f"{label}: {len(factors)} scale factors for {len(fields['channels'])} channels",
                )
            if any(f == 0 for f in factors):
                out.error(at("scale_factors"), "invalid_scale_factor", f"{label}: scale factor of zero")

    for name in ("sensor_type", "checksum", "checksum_type"):
        if name in fields and not isinstance(fields[name], str):
            out.error(at(name), f"ill_typed:{name}", f"{label}: {name!r} must be a string")

    for name in fields:
        if name not in RECOGNIZED_FIELDS:
            out.warning(at(name), f"unrecognized_field:{name}", f"{label}: field {name!r} is not in the vocabulary")


def validate(records: Sequence[FileRecord]) -> ValidationReport:
    """Check flattened records; every finding goes into the report."""
    out = _Collector()
    seen: Dict[str, str] = {}
    for record in records:
        _validate_record(record, out)
        name = record.file_name
        if isinstance(name, str):
            if name in seen:
                out.error(
                    f"{record.path}.file_name",
                    "duplicate_file_name",
                    f"{name}: also described at {seen[name]}",
                )
            else:
                seen[name] = record.path
    return ValidationReport(tuple(out.items))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _common_fields(dicts: Sequence[Mapping[str, Any]], exclude: Iterable[str] = ()) -> Dict[str, Any]:
    """Fields equal (value and type) in every mapping, in first-mapping order."""
    excluded = set(exclude)
    first = dicts[0]
    common = {}
    for key, value in first.items():
        if key in excluded:
            continue
        if all(key in d and type(d[key]) is type(value) and d[key] == value for d in dicts[1:]):
            common[key] = value
    return common


def build_document(
    records: Sequence[FileRecord], layout: Union[Layout, str] = Layout.FLAT_PER_FILE
) -> Dict[str, Any]:
    """Arrange records into a metadata tree (plain dicts and lists)."""
    layout = Layout(layout)
    if not records:
        raise MetadataError("No records to serialize", "nothing_to_serialize")
    report = validate(records)
    if report.errors:
        raise MetadataError(
            f"Records do not validate: {', '.join(report.codes(Severity.ERROR))}", "invalid_records", report=report
        )

    flat = [record.to_dict() for record in records]
    if len(flat) == 1:
        return _canonical_order(flat[0])
    for record in flat:
        for reserved in (GROUP_KEY, FILES_KEY):
            if reserved in record:
                raise MetadataError(f"Field name {reserved!r} is reserved for grouping", "reserved_field_name")

    groups: Dict[int, List[dict]] = {}
    for record, fields in zip(records, flat):
        groups.setdefault(record.group_id, []).append(fields)

    if layout is Layout.FLAT_PER_FILE:
        root: Dict[str, Any] = {}
        group_nodes = [({}, members) for members in groups.values()]
    else:
        root = _common_fields(flat)
        group_nodes = []
        for members in groups.values():
            shared = _common_fields(members, exclude=set(root) | {"file_name"}) if len(groups) > 1 else {}
            group_nodes.append((shared, members))

    def leaf(fields: dict, hoisted: Mapping[str, Any]) -> dict:
        return _canonical_order({k: v for k, v in fields.items() if k not in root and k not in hoisted})

    document = _canonical_order(root)
    if len(group_nodes) == 1:
        shared, members = group_nodes[0]
        document[FILES_KEY] = [leaf(m, shared) for m in members]
    else:
        document[GROUP_KEY] = [
            {**_canonical_order(shared), FILES_KEY: [leaf(m, shared) for m in members]}
            for shared, members in group_nodes
        ]
    return document


def serialize_metadata(
    records: Sequence[FileRecord],
    layout: Union[Layout, str] = Layout.FLAT_PER_FILE,
    indent: Optional[int] = None,
) -> str:
    """
    Emit metadata text for ``records``.

    ``flat_per_file`` writes every field at the leaf; ``grouped_by_common_prefix``
    hoists fields shared by all records to the root (and, with several groups,
    fields shared within a group to the group). Group membership survives a
    parse/flatten round trip.
    """
    document = build_document(records, layout)
    return json.dumps(document, indent=config.JSON_INDENT if indent is None else indent, ensure_ascii=False) + "\n"


def flattened_table(records: Sequence[FileRecord]) -> List[List[str]]:
    """Fields x files grid; the first row holds file names, the first column field names."""
    names: List[str] = []
    for record in records:
        for key in record.fields:
            if key not in names and key != "file_name":
                names.append(key)
    names = list(_canonical_order({name: None for name in names}))
    table = [["file_name"] + [json.dumps(r.file_name, ensure_ascii=False) for r in records]]
    for name in names:
        row = [name]
        for record in records:
            row.append(json.dumps(thaw(record.fields[name]), ensure_ascii=False) if name in record.fields else "")
        table.append(row)
    return table


def render_table(table: Sequence[Sequence[str]]) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in table)


def records_equal(left: Sequence[FileRecord], right: Sequence[FileRecord]) -> bool:
    """Field-for-field equality ignoring group numbering and field order, but not grouping."""
    if len(left) != len(right):
        return False
    if any(thaw(a.fields) != thaw(b.fields) for a, b in zip(left, right)):
        return False
    pairs = {}
    for a, b in zip(left, right):
        if pairs.setdefault(a.group_id, b.group_id) != b.group_id:
            return False
    return len(set(pairs.values())) == len(pairs)
