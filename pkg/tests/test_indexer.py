import json
import os
import sys
import tempfile
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.strategies import composite

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from shared.errors import IndexBuildError
from tsdf.indexer import IndexFilter, build_index, parse_time_bound, query, rows_as_dicts, write_index
from tsdf.metadata import Severity, read_records
from tsdf.timecodec import OffsetKind, format_iso8601, from_epoch_nanos, parse_iso8601, to_epoch_millis
from tests.sample_recordings import HOMESTUDY_METADATA, SENSOR_METADATA

SESSION_ONE_MS = to_epoch_millis(parse_iso8601("2022-10-26T09:26:45.123+00:00"))


def _write_json(path, document):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document) if not isinstance(document, str) else document, encoding="utf-8")


@pytest.fixture(scope="module")
def index(recordings_root):
    return build_index(recordings_root)


def test_build_index_counts(index):
    assert len(index.files) == 7
    assert len(index.channels) == 14
    assert index.skipped == ()


def test_build_index_order_and_columns(index):
    assert [row.metadata_path for row in index.files] == [
        "homestudy22/homestudy_metadata.json",
        "homestudy22/homestudy_metadata.json",
        "homestudy22/homestudy_metadata.json",
        "homestudy22/homestudy_metadata.json",
        "sensor/recording_metadata.json",
        "sensor/recording_metadata.json",
        "voice/audio_metadata.json",
    ]
    assert [row.id for row in index.files] == list(range(1, 8))

    sensor_time = index.files[4]
    assert sensor_time.file_name == "sensor_time.bin"
    assert sensor_time.start_epoch_ms == 1576759305716
    assert sensor_time.rows == 4833
    assert (sensor_time.data_type, sensor_time.bits, sensor_time.n_channels) == ("float", 32, 1)
    assert [row.group_id for row in index.files[:4]] == [0, 0, 1, 1]

    labels = [(c.channel_index, c.label, c.unit) for c in index.channels_of(6)]
    assert labels == [(0, "pos", "m"), (1, "vel", "m/s"), (2, "accl", "m/s/s")]


def test_build_index_extras_hold_remaining_fields(index):
    audio_extras = {e.field_name: e.value_text for e in index.extras if e.file_id == 7}
    assert audio_extras == {
        "endianness": '"little"',
        "metadata_version": '"0.1"',
        "sampling_rate": "44100",
        "compression": '"none"',
    }


def test_query_by_subject(index):
    rows = query(index, IndexFilter(subject_id="0713"))
    assert [row.file_name for row in rows] == ["sensor_time.bin", "sensor_samples.bin"]


def test_query_by_time_window(index):
    rows = query(index, IndexFilter(overlaps=(SESSION_ONE_MS, SESSION_ONE_MS + 60_000)))
    assert [row.file_name for row in rows] == ["accelerometer_t1.bin", "temperature_t1.bin"]


def test_query_window_edges_are_inclusive(index):
    sensor_end = index.files[4].end_epoch_ms
    rows = query(index, IndexFilter(overlaps=(sensor_end, sensor_end + 1)))
    assert [row.file_name for row in rows] == ["sensor_time.bin", "sensor_samples.bin"]


def test_query_by_channel_and_conjunction(index):
    assert len(query(index, IndexFilter(channel_label="temperature"))) == 2
    rows = query(index, IndexFilter(study_id="homestudy22", channel_label="magnitude",
                                    overlaps=(SESSION_ONE_MS, SESSION_ONE_MS)))
    assert [row.file_name for row in rows] == ["accelerometer_t1.bin"]
    assert query(index, IndexFilter(subject_id="0713", device_id="XBT7456")) == []


def test_empty_filter_returns_everything(index):
    assert len(query(index)) == 7
    assert len(query(index, IndexFilter())) == 7


def test_query_matches_a_scan_of_the_records(index, recordings_root):
    records = []
    for path in sorted(recordings_root.rglob("*.json"), key=lambda p: p.relative_to(recordings_root).as_posix()):
        records.extend(read_records(path))
    filters = [
        IndexFilter(subject_id="PD0234"),
        IndexFilter(device_id="audiotechnica02"),
        IndexFilter(channel_label="time"),
        IndexFilter(study_id="drug513trialphase2", channel_label="vel"),
    ]
    for flt in filters:
        expected = [
            r.file_name
            for r in records
            if all(r.get(name) == value for name, value in flt.equalities)
            and (flt.channel_label is None or flt.channel_label in r.channels)
        ]
        assert [row.file_name for row in query(index, flt)] == expected


def test_reversed_window_is_refused():
    with pytest.raises(IndexBuildError) as exc:
        IndexFilter(overlaps=(10, 5))
    assert exc.value.code == "invalid_time_range"


def test_parse_time_bound():
    assert parse_time_bound(1576759305716) == 1576759305716
    assert parse_time_bound("1576759305716") == 1576759305716
    assert parse_time_bound("2019-12-19T13:41:45.716+01:00") == 1576759305716


def test_rebuild_is_identical(recordings_root, tmp_path):
    first = build_index(recordings_root, tmp_path / "a")
    second = build_index(recordings_root, tmp_path / "b", workers=4)

    assert first == second
    for name in ("files.csv", "channels.csv", "extras.csv", "skipped.csv", "schema.sql"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_write_index_tables(index, tmp_path):
    written = write_index(index, tmp_path)
    assert [p.name for p in written] == ["files.csv", "channels.csv", "extras.csv", "skipped.csv", "schema.sql"]

    files = (tmp_path / "files.csv").read_text(encoding="utf-8").splitlines()
    assert files[0].startswith("id,metadata_path,file_name,subject_id")
    assert len(files) == 8
    assert "CREATE TABLE IF NOT EXISTS files" in (tmp_path / "schema.sql").read_text(encoding="utf-8")
    assert (tmp_path / "skipped.csv").read_text(encoding="utf-8") == "path,severity,code,message\n"


def test_bad_documents_are_skipped_not_fatal(tmp_path):
    _write_json(tmp_path / "good" / "sensor.json", SENSOR_METADATA)
    _write_json(tmp_path / "broken.json", '{"subject_id": ')
    _write_json(tmp_path / "notes" / "settings.json", {"theme": "dark"})
    invalid = {k: v for k, v in SENSOR_METADATA.items() if k != "rows"}
    _write_json(tmp_path / "invalid.json", invalid)

    index = build_index(tmp_path)

    assert [row.file_name for row in index.files] == ["sensor_time.bin", "sensor_samples.bin"]
    assert [(s.path, s.code) for s in index.skipped] == [
        ("broken.json", "parse_error"),
        ("invalid.json", "invalid_metadata"),
        ("notes/settings.json", "not_tsdf"),
    ]
    assert all(s.severity is Severity.ERROR for s in index.skipped)
    assert "missing_mandatory:rows" in index.skipped[1].message


def test_local_only_timestamps_are_indexed_without_epoch(tmp_path):
    document = dict(HOMESTUDY_METADATA)
    session = dict(document["multi-day_session"][0], start_iso8601="2022-10-26T09:26:45.123")
    document["multi-day_session"] = [session]
    _write_json(tmp_path / "local.json", document)

    index = build_index(tmp_path)
    assert len(index.files) == 2
    assert all(row.start_epoch_ms is None for row in index.files)
    assert all(row.end_epoch_ms is not None for row in index.files)
    assert [s.code for s in index.skipped] == ["local_only_timestamp", "local_only_timestamp"]
    assert all(s.severity is Severity.WARNING for s in index.skipped)
    assert query(index, IndexFilter(overlaps=(0, 2**62))) == []


def test_empty_directory(tmp_path):
    index = build_index(tmp_path)
    assert index.files == () and index.channels == () and index.skipped == ()


def test_missing_root(tmp_path):
    with pytest.raises(IndexBuildError) as exc:
        build_index(tmp_path / "nowhere")
    assert exc.value.code == "unreadable_root"


def test_rows_as_dicts(index):
    (row,) = rows_as_dicts(query(index, IndexFilter(device_id="audiotechnica02")))
    assert row["file_name"] == "audio_voice_089.raw"
    assert row["subject_id"] == "recruit089"
    assert row["end_epoch_ms"] - row["start_epoch_ms"] == 30_000


BASE_MS = to_epoch_millis(parse_iso8601("2020-01-01T00:00:00.000+00:00"))


def _stamp(ms, offset_minutes):
    return format_iso8601(from_epoch_nanos(ms * 1_000_000, OffsetKind.KNOWN, offset_minutes))


@composite
def metadata_documents(draw, doc_id):
    start = BASE_MS + draw(st.integers(min_value=0, max_value=6_000_000))
    end = start + draw(st.integers(min_value=0, max_value=3_600_000))
    offset = draw(st.sampled_from([0, 60, -300, 330]))
    root = {
        "subject_id": draw(st.sampled_from(["s1", "s2", "s3"])),
        "study_id": draw(st.sampled_from(["walk", "sleep"])),
        "device_id": draw(st.sampled_from(["d1", "d2"])),
        "endianness": "little",
        "metadata_version": "0.1",
        "start_iso8601": _stamp(start, offset),
        "end_iso8601": _stamp(end, offset),
        "rows": draw(st.integers(min_value=0, max_value=1000)),
        "data_type": "float",
        "bits": 32,
    }
    sensor_type = draw(st.sampled_from([None, "acc", "ppg"]))
    if sensor_type is not None:
        root["sensor_type"] = sensor_type
    files = []
    for j in range(draw(st.integers(min_value=1, max_value=3))):
        channels = draw(st.lists(st.sampled_from(["x", "y", "z", "time", "ppg"]), min_size=1, max_size=3, unique=True))
        files.append({"file_name": f"f{doc_id}_{j}.bin", "channels": channels, "units": ["u"] * len(channels)})
    if len(files) == 1:
        root.update(files[0])
    else:
        root["samples"] = files
    return root


@composite
def corpora(draw):
    count = draw(st.integers(min_value=0, max_value=5))
    return [draw(metadata_documents(i)) for i in range(count)]


@composite
def filters(draw):
    window = None
    if draw(st.booleans()):
        t0 = BASE_MS + draw(st.integers(min_value=-1_000_000, max_value=10_000_000))
        window = (t0, t0 + draw(st.integers(min_value=0, max_value=2_000_000)))
    return IndexFilter(
        subject_id=draw(st.sampled_from([None, "s1", "s2"])),
        study_id=draw(st.sampled_from([None, "walk"])),
        device_id=draw(st.sampled_from([None, "d2"])),
        sensor_type=draw(st.sampled_from([None, "acc"])),
        overlaps=window,
        channel_label=draw(st.sampled_from([None, "x", "time"])),
    )


def _scan_matches(record, flt):
    if any(record.get(name) != value for name, value in flt.equalities):
        return False
    if flt.channel_label is not None and flt.channel_label not in record.channels:
        return False
    if flt.overlaps is not None:
        start = to_epoch_millis(parse_iso8601(record.start_iso8601))
        end = to_epoch_millis(parse_iso8601(record.end_iso8601))
        return start <= flt.overlaps[1] and end >= flt.overlaps[0]
    return True


@given(corpora(), st.lists(filters(), min_size=1, max_size=5))
@settings(max_examples=100, deadline=None)
def test_queries_agree_with_a_linear_scan(documents, flts):
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for i, document in enumerate(documents):
            _write_json(root / f"doc{i}" / "meta.json", document)
        index = build_index(root)
        records = [r for i in range(len(documents)) for r in read_records(root / f"doc{i}" / "meta.json")]

        assert len(index.files) == len(records)
        for flt in flts:
            expected = [(r.file_name, r.group_id) for r in records if _scan_matches(r, flt)]
            assert [(row.file_name, row.group_id) for row in query(index, flt)] == expected
