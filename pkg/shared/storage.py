import logging
import sqlite3
from dataclasses import astuple
from pathlib import Path
from typing import List, Optional

from shared.config import INDEX_DB_PATH
from tsdf.indexer import SCHEMA_SQL, ChannelRow, FileRow, IndexFilter, IndexTable

logger = logging.getLogger(__name__)

_FILE_COLUMNS = (
    "id, metadata_path, file_name, subject_id, study_id, device_id, sensor_type, "
    "start_epoch_ms, end_epoch_ms, rows, data_type, bits, n_channels, group_id"
)


class IndexStore:
    """Persistent copy of a metadata index in SQLite, queried with SQL"""

    def __init__(self, db_path: Path = INDEX_DB_PATH):
        self.db_path = Path(db_path)
        self._init_db()

    def _init_db(self):
        """Initialize the database schema"""
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        with sqlite3.connect(self.db_path) as conn:
            conn.executescript(SCHEMA_SQL)
            conn.commit()

    def replace(self, index: IndexTable):
        """Drop whatever is stored and load ``index`` in its place"""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("DELETE FROM extras")
            conn.execute("DELETE FROM channels")
            conn.execute("DELETE FROM files")
            conn.executemany(
                f"INSERT INTO files ({_FILE_COLUMNS}) VALUES ({', '.join('?' * 14)})",
                [astuple(row) for row in index.files],
            )
            conn.executemany(
                "INSERT INTO channels (file_id, channel_index, label, unit) VALUES (?, ?, ?, ?)",
                [astuple(row) for row in index.channels],
            )
            conn.executemany(
                "INSERT INTO extras (file_id, field_name, value_text) VALUES (?, ?, ?)",
                [astuple(row) for row in index.extras],
            )
            conn.commit()
        logger.info(f"Stored {len(index.files)} file row(s) in {self.db_path}")

    def query(self, flt: Optional[IndexFilter] = None) -> List[FileRow]:
        """Same semantics as ``tsdf.indexer.query``, answered by SQLite"""
        flt = flt or IndexFilter()
        clauses = []
        params: list = []
        for name, value in flt.equalities:
            clauses.append(f"{name} = ?")
            params.append(value)
        if flt.overlaps is not None:
            t0, t1 = flt.overlaps
            clauses.append("start_epoch_ms IS NOT NULL AND end_epoch_ms IS NOT NULL")
            clauses.append("start_epoch_ms <= ? AND end_epoch_ms >= ?")
            params.extend([t1, t0])
        if flt.channel_label is not None:
            clauses.append("EXISTS (SELECT 1 FROM channels c WHERE c.file_id = files.id AND c.label = ?)")
            params.append(flt.channel_label)
        where = f" WHERE {' AND '.join(clauses)}" if clauses else ""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute(f"SELECT {_FILE_COLUMNS} FROM files{where} ORDER BY id", params)
            return [FileRow(*row) for row in cursor.fetchall()]

    def channels(self, file_id: int) -> List[ChannelRow]:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute(
                "SELECT file_id, channel_index, label, unit FROM channels WHERE file_id = ? ORDER BY channel_index",
                (file_id,),
            )
            return [ChannelRow(*row) for row in cursor.fetchall()]

    def count(self) -> int:
        with sqlite3.connect(self.db_path) as conn:
            return conn.execute("SELECT COUNT(*) FROM files").fetchone()[0]
