import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from shared.errors import ConversionError
from tsdf.convert import (
    CHANNEL_ROLE,
    TIME_ROLE,
    ColumnMapping,
    CsvDialect,
    bench_storage,
    export_csv,
    format_elapsed,
    format_value,
    import_csv,
    mapping_from_header,
    parse_mapping,
    synth,
)
from tsdf.dataset import (
    FileSpec,
    SignalSpec,
    TimeSourceKind,
    audit,
    create_recording,
    open_recording,
    read_group,
)
from tsdf.timecodec import NS_PER_MS, NS_PER_S, parse_iso8601, to_epoch_nanos

START = "2020-01-01T00:00:00.000+00:00"
START_NS = to_epoch_nanos(parse_iso8601(START))

TEMPLATE = {
    "subject_id": "s1",
    "study_id": "study",
    "device_id": "dev",
    "endianness": "little",
    "metadata_version": "0.1",
    "start_iso8601": START,
}


def _csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Mapping
# ---------------------------------------------------------------------------


def test_parse_mapping():
    mapping = parse_mapping("t_ms:time:ms, x:X:m/s/s,y:Y")
    assert mapping == [
        ColumnMapping("t_ms", TIME_ROLE, "time", "ms"),
        ColumnMapping("x", CHANNEL_ROLE, "X", "m/s/s"),
        ColumnMapping("y", CHANNEL_ROLE, "Y", None),
    ]
    with pytest.raises(ConversionError) as exc:
        parse_mapping("x")
    assert exc.value.code == "invalid_mapping"


def test_mapping_from_header():
    mapping = mapping_from_header(["time [ms]", "pos [m]", "note"])
    assert [(m.role, m.label, m.unit) for m in mapping] == [
        (TIME_ROLE, "time", "ms"),
        (CHANNEL_ROLE, "pos", "m"),
        (CHANNEL_ROLE, "note", None),
    ]


def test_dialect_must_be_unambiguous():
    with pytest.raises(ConversionError) as exc:
        CsvDialect(",", ",")
    assert exc.value.code == "invalid_dialect"
    with pytest.raises(ConversionError):
        CsvDialect(";;")


# ---------------------------------------------------------------------------
# Import
# ---------------------------------------------------------------------------


def test_import_with_explicit_mapping(tmp_path):
    lines = ["t_ms,x,y,note"] + [f"{i * 10},{i * 0.5},{-i},row{i}" for i in range(100)]
    path = _csv(tmp_path, "\n".join(lines) + "\n")

    rec = import_csv(path, tmp_path / "out", TEMPLATE, mapping=parse_mapping("t_ms:time:ms,x:X:m/s/s,y:Y:m/s/s"))

    assert rec.metadata_path.name == "data_metadata.json"
    time_record, samples = rec.records
    assert time_record.file_name == "data_time.bin"
    assert time_record.compression == "relative"
    assert time_record.units == ("ms",)
    assert (time_record.data_type, time_record.bits) == ("int", 64)
    assert samples.rows == 100
    assert samples.channels == ("X", "Y")
    assert samples.end_iso8601 == "2020-01-01T00:00:00.990+00:00"

    data = read_group(rec, 0, (98, 100))
    assert data.timestamps.tolist() == [START_NS + 980 * NS_PER_MS, START_NS + 990 * NS_PER_MS]
    assert data.matrices[0].values.tolist() == [[49.0, -98.0], [49.5, -99.0]]
    assert audit(rec).ok


def test_import_then_export_gives_the_same_text(tmp_path):
    text = "time [ms],x [m/s/s],y [m/s/s]\n0,1.5,2\n10,2.5,3\n20,3.5,-4.25\n"
    rec = import_csv(_csv(tmp_path, text), tmp_path / "out", TEMPLATE)

    assert export_csv(rec, time_format="elapsed") == text
    iso = export_csv(rec, row_range=(1, 2))
    assert iso == "time,x [m/s/s],y [m/s/s]\n2020-01-01T00:00:00.010+00:00,2.5,3\n"


def test_import_with_semicolons_and_decimal_commas(tmp_path):
    text = "time [s];v [V]\n0;1,5\n0,5;2,25\n"
    dialect = CsvDialect(";", ",")
    rec = import_csv(_csv(tmp_path, text), tmp_path / "out", TEMPLATE, dialect=dialect)

    # half seconds are not whole units, so the time file stores floats
    assert rec.records[0].data_type == "float"
    assert read_group(rec, 0).timestamps.tolist() == [START_NS, START_NS + NS_PER_S // 2]
    assert export_csv(rec, time_format="elapsed", dialect=dialect) == text


def test_import_iso_time_column(tmp_path):
    text = (
        "time,v [V]\n"
        "2020-01-01T01:00:00.000+01:00,1\n"
        "2020-01-01T01:00:00.250+01:00,2\n"
    )
    template = {k: v for k, v in TEMPLATE.items() if k != "start_iso8601"}
    rec = import_csv(_csv(tmp_path, text), tmp_path / "out", template, time_compression="difference")

    record = rec.records[0]
    assert record.start_iso8601 == "2020-01-01T01:00:00.000+01:00"
    assert record.end_iso8601 == "2020-01-01T01:00:00.250+01:00"
    assert record.compression == "difference"
    assert read_group(rec, 0).timestamps.tolist() == [START_NS, START_NS + 250 * NS_PER_MS]


def test_import_without_time_column_needs_sampling_rate(tmp_path):
    path = _csv(tmp_path, "a [V],b [V]\n1,2\n3,4\n")
    with pytest.raises(ConversionError) as exc:
        import_csv(path, tmp_path / "out", TEMPLATE)
    assert exc.value.code == "absent_time_source"

    template = dict(TEMPLATE, sampling_rate=100.0, data_type="int", bits=16)
    rec = import_csv(path, tmp_path / "out", template)
    assert rec.groups[0].time_source.kind == TimeSourceKind.UNIFORM
    assert rec.records[0].end_iso8601 == "2020-01-01T00:00:00.010+00:00"
    assert read_group(rec, 0).matrices[0].raw.tolist() == [[1, 2], [3, 4]]


def test_import_header_only_gives_empty_recording(tmp_path):
    rec = import_csv(_csv(tmp_path, "time [ms],v [V]\n"), tmp_path / "out", TEMPLATE)
    assert [r.rows for r in rec.records] == [0, 0]
    assert rec.records[0].end_iso8601 == START
    assert audit(rec).ok


@pytest.mark.parametrize(
    "text, mapping, code, row",
    [
        ("", None, "missing_header", None),
        ("time [ms],v [V]\n0,1\n10\n", None, "ragged_row", 3),
        ("time [ms],v [V]\n0,1\n10,abc\n", None, "unparseable_number", 3),
        ("time [ms],v [V]\nsoon,1\n", None, "unparseable_time", 2),
        ("time [ms],v [V]\n0,1\n", "t:time:ms,v:V", "unknown_column", None),
        ("a,b,c\n0,1,2\n", "a:time:ms,b:time:ms,c:C", "ambiguous_time_source", None),
        ("a,b\n0,1\n", "a:time:ms", "no_channels", None),
        ("a,b\n0,1\n", "a:time:min,b:B", "unknown_time_unit", None),
    ],
)
def test_import_errors(tmp_path, text, mapping, code, row):
    path = _csv(tmp_path, text)
    with pytest.raises(ConversionError) as exc:
        import_csv(path, tmp_path / "out", TEMPLATE, mapping=parse_mapping(mapping) if mapping else None)
    assert exc.value.code == code
    if row is not None:
        assert exc.value.details["row"] == row


def test_import_reports_the_column_of_a_bad_cell(tmp_path):
    path = _csv(tmp_path, "time [ms],a [V],b [V]\n0,1,x\n")
    with pytest.raises(ConversionError) as exc:
        import_csv(path, tmp_path / "out", TEMPLATE)
    assert (exc.value.details["row"], exc.value.details["column"]) == (2, 3)


def test_import_strict_monotone(tmp_path):
    path = _csv(tmp_path, "time [ms],v [V]\n0,1\n0,2\n5,3\n")
    with pytest.raises(ConversionError) as exc:
        import_csv(path, tmp_path / "out", TEMPLATE, strict_monotone=True)
    assert exc.value.code == "duplicate_time"
    assert exc.value.details["row"] == 3

    rec = import_csv(path, tmp_path / "out", TEMPLATE)
    assert rec.records[1].rows == 3


def test_import_numeric_time_needs_start(tmp_path):
    template = {k: v for k, v in TEMPLATE.items() if k != "start_iso8601"}
    with pytest.raises(ConversionError) as exc:
        import_csv(_csv(tmp_path, "time [ms],v [V]\n0,1\n"), tmp_path / "out", template)
    assert exc.value.code == "missing_mandatory:start_iso8601"


def test_exported_fixture_imports_back(sensor_recording, tmp_path):
    rec = open_recording(sensor_recording)
    text = export_csv(rec, time_format="elapsed")
    assert text.splitlines()[0] == "time [s],pos [m],vel [m/s],accl [m/s/s]"

    template = {k: v for k, v in rec.records[1].to_dict().items()}
    again = import_csv(_csv(tmp_path, text, "sensor.csv"), tmp_path / "out", template)

    original = read_group(rec, 0)
    copy = read_group(again, 0)
    assert np.array_equal(copy.timestamps, original.timestamps)
    assert np.array_equal(copy.matrices[0].raw, original.matrices[0].raw)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def test_export_iso_uses_start_offset(audio_recording):
    rec = open_recording(audio_recording)
    lines = export_csv(rec, row_range=(0, 2)).splitlines()
    assert lines[0] == "time,left [unitless],right [unitless]"
    assert lines[1].startswith("2016-08-09T10:31:00.000+00:00,")
    assert lines[2].startswith("2016-08-09T10:31:00.000022676+00:00,")


def test_export_picks_one_file_of_a_time_channel_group(homestudy_recording):
    rec = open_recording(homestudy_recording)
    text = export_csv(rec, 1, (0, 2), file_name="temperature_t2.bin", time_format="elapsed")
    header, first, _ = text.splitlines()
    assert header == "time [s],temperature [deg_C]"
    assert first.startswith("0,")

    lines = export_csv(rec, 0, (0, 60714), file_name="accelerometer_t1.bin", time_format="elapsed").splitlines()
    assert len(lines) == 60715
    assert lines[-1].startswith("607143,")

    with pytest.raises(ConversionError) as exc:
        export_csv(rec, 1, (0, 2), file_name="accelerometer_t1.bin")
    assert exc.value.code == "unknown_file"

    with pytest.raises(ConversionError) as exc:
        export_csv(rec, 1, (0, 2), time_format="epoch")
    assert exc.value.code == "invalid_time_format"


def test_format_value():
    assert format_value(np.float32(0.1)) == "0.1"
    assert format_value(1e-7) == "0.0000001"
    assert format_value(np.float64(2.0)) == "2"
    assert format_value(np.int16(-7)) == "-7"
    assert format_value(np.float32(np.nan)) == "nan"
    assert format_value(1.25, ",") == "1,25"


def test_format_elapsed():
    assert format_elapsed(2_000_000, "ms") == "2"
    assert format_elapsed(-1500, "us") == "-1.5"
    assert format_elapsed(717_999_995, "s") == "0.717999995"
    assert format_elapsed(1, "s", ",") == "0,000000001"


# ---------------------------------------------------------------------------
# Synthetic recordings and the benchmark
# ---------------------------------------------------------------------------


def test_synth_is_deterministic(tmp_path):
    first = synth(tmp_path / "a", channels=2, rate=50.0, duration=2.0, seed=7)
    second = synth(tmp_path / "b", channels=2, rate=50.0, duration=2.0, seed=7)
    other = synth(tmp_path / "c", channels=2, rate=50.0, duration=2.0, seed=8)

    payload = (tmp_path / "a" / "synth_samples.bin").read_bytes()
    assert payload == (tmp_path / "b" / "synth_samples.bin").read_bytes()
    assert payload != (tmp_path / "c" / "synth_samples.bin").read_bytes()
    assert first.records[0].rows == 100
    assert first.records[0].subject_id == "synthetic7"
    assert second.metadata_path.read_text() == first.metadata_path.read_text()
    assert other.records[0].subject_id == "synthetic8"


@pytest.mark.parametrize("encoding", ["relative", "difference", "absolute"])
def test_synth_time_files(tmp_path, encoding):
    rec = synth(tmp_path, rate=10.0, duration=3.0, time_encoding=encoding, jitter=0.5, seed=3)
    time_record = rec.records[0]
    assert time_record.file_name == "synth_time.bin"
    assert time_record.compression == encoding
    assert time_record.units == ("us",)
    timestamps = read_group(rec, 0).timestamps
    assert timestamps.size == 30
    assert np.all(np.diff(timestamps) > 0)
    assert audit(rec).ok


def test_synth_integer_data_with_scale_factors(tmp_path):
    rec = synth(tmp_path, channels=2, rate=20.0, duration=1.0, data_type="int", bits=16, scale_factors=[0.01, 0.5],
                endianness="big")
    record = rec.records[0]
    assert record.scale_factors == (0.01, 0.5)
    assert record.endianness == "big"
    matrix = read_group(rec, 0).matrices[0]
    assert np.allclose(matrix.values, matrix.raw * np.array([0.01, 0.5]))
    assert audit(rec).ok


def test_synth_rejects_bad_parameters(tmp_path):
    with pytest.raises(ConversionError) as exc:
        synth(tmp_path, time_encoding="sparse")
    assert exc.value.code == "invalid_time_encoding"
    with pytest.raises(ConversionError) as exc:
        synth(tmp_path, jitter=1.0)
    assert exc.value.code == "invalid_jitter"
    with pytest.raises(ConversionError) as exc:
        synth(tmp_path, channels=0)
    assert exc.value.code == "invalid_synth_parameters"


def test_bench_small_recording(tmp_path):
    rec = synth(tmp_path, channels=3, rate=100.0, duration=10.0)
    report = bench_storage(rec)

    assert report.binary_bytes == 1000 * 3 * 4
    assert report.rows == 1000
    assert report.slice_rows == 10
    assert report.ratio == report.csv_bytes / report.binary_bytes
    assert report.ratio > 1.0
    assert "binary_bytes" in report.to_text()
    assert [row["metric"] for row in report.to_rows()][:3] == ["binary_bytes", "csv_bytes", "ratio"]


def test_bench_empty_recording(tmp_path):
    rec = synth(tmp_path, duration=0.0)
    report = bench_storage(rec)
    assert report.binary_bytes == 0
    assert report.ratio is None
    assert "undefined" in report.to_text()


def _own_clock(name, instants, rng):
    fields = {"file_name": name, "channels": ["time", "v"], "units": ["ms", "V"], "data_type": "float", "bits": 32,
              "compression": "relative"}
    return FileSpec(fields, rng.standard_normal((instants.size, 1)), instants)


def test_bench_covers_every_file_of_a_time_channel_group(tmp_path):
    rng = np.random.default_rng(5)
    fast = START_NS + np.arange(50) * 10 * NS_PER_MS
    slow = START_NS + np.arange(5) * 100 * NS_PER_MS
    signal = SignalSpec((_own_clock("fast.bin", fast, rng), _own_clock("slow.bin", slow, rng)))
    written = create_recording([signal], tmp_path, common=TEMPLATE)
    rec = open_recording(written[0])
    assert len(rec.groups) == 1

    report = bench_storage(rec)
    assert report.rows == 55
    assert report.binary_bytes == 55 * 2 * 4
    texts = [export_csv(rec, 0, file_name=name, time_format="elapsed") for name in ("fast.bin", "slow.bin")]
    assert len(texts[0].splitlines()) == 51
    assert report.csv_bytes == sum(len(text.encode("utf-8")) for text in texts)
    assert report.ratio > 1.0


@pytest.mark.slow
def test_bench_hierarchical_recording(homestudy_recording):
    report = bench_storage(open_recording(homestudy_recording))
    assert report.rows == 60714 + 607 + 1154411 + 11544
    assert report.ratio > 1.0


@pytest.mark.slow
def test_bench_text_overhead_of_float32(tmp_path):
    rec = synth(tmp_path, channels=3, rate=100.0, duration=10_000.0, data_type="float", bits=32)
    assert rec.records[0].rows == 1_000_000
    report = bench_storage(rec)
    assert report.ratio >= 2.5
