import pytest
import sqlite3
import sys
import os

# Add the project root to sys.path to allow imports from the package
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from shared.storage import IndexStore
from tsdf.indexer import IndexFilter, IndexTable, build_index, parse_time_bound, query


@pytest.fixture
def temp_db(tmp_path):
    return tmp_path / "index" / "tsdf_index.db"


@pytest.fixture(scope="module")
def index(recordings_root):
    return build_index(recordings_root)


def test_index_store_init(temp_db):
    IndexStore(db_path=temp_db)
    assert temp_db.exists()

    with sqlite3.connect(temp_db) as conn:
        cursor = conn.execute("SELECT name FROM sqlite_master WHERE type='table' ORDER BY name")
        assert [row[0] for row in cursor.fetchall()] == ["channels", "extras", "files"]


def test_replace_and_count(temp_db, index):
    store = IndexStore(db_path=temp_db)
    assert store.count() == 0

    store.replace(index)
    assert store.count() == 7

    with sqlite3.connect(temp_db) as conn:
        assert conn.execute("SELECT COUNT(*) FROM channels").fetchone()[0] == 14
        assert conn.execute("SELECT COUNT(*) FROM extras").fetchone()[0] == len(index.extras)


def test_replace_is_idempotent(temp_db, index):
    store = IndexStore(db_path=temp_db)
    store.replace(index)
    store.replace(index)
    assert store.count() == 7
    assert store.query() == list(index.files)


def test_replace_with_empty_index_clears(temp_db, index):
    store = IndexStore(db_path=temp_db)
    store.replace(index)
    store.replace(IndexTable())
    assert store.count() == 0
    assert store.query() == []


@pytest.mark.parametrize(
    "flt",
    [
        IndexFilter(),
        IndexFilter(subject_id="0713"),
        IndexFilter(study_id="homestudy22", sensor_type="accelerometer"),
        IndexFilter(channel_label="temperature"),
        IndexFilter(channel_label="left", device_id="audiotechnica02"),
        IndexFilter(overlaps=(parse_time_bound("2022-10-26T09:30:00+00:00"), parse_time_bound("2022-10-28T11:00:00Z"))),
        IndexFilter(overlaps=(0, 1)),
    ],
)
def test_sql_query_agrees_with_in_memory_query(temp_db, index, flt):
    store = IndexStore(db_path=temp_db)
    store.replace(index)
    assert store.query(flt) == query(index, flt)


def test_channels(temp_db, index):
    store = IndexStore(db_path=temp_db)
    store.replace(index)
    (row,) = store.query(IndexFilter(device_id="audiotechnica02"))

    channels = store.channels(row.id)
    assert [(c.channel_index, c.label, c.unit) for c in channels] == [(0, "left", "unitless"), (1, "right", "unitless")]
    assert store.channels(999) == []
