"""
Result store for gapbridge runs.
Uses SQLite for simple, file-based storage. Every write goes through one
ResultWriter so concurrent evaluation threads never interleave rows.
"""

import json
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import DATABASE_PATH


@dataclass
class RunRecord:
    """One training run, keyed by its manifest hash."""

    run_hash: str
    dataset: str
    seed: int
    gap_len: int
    config_json: str
    created_at: datetime

    @classmethod
    def from_row(cls, row: tuple) -> "RunRecord":
        return cls(
            run_hash=row[0],
            dataset=row[1],
            seed=row[2],
            gap_len=row[3],
            config_json=row[4],
            created_at=datetime.fromisoformat(row[5]),
        )

    @property
    def config(self) -> dict:
        return json.loads(self.config_json)


@dataclass
class WindowRecord:
    """Scores of one evaluation window."""

    id: Optional[int]
    run_hash: str
    variant: str
    seed: int
    window_start: int
    all_feature_mse: float
    load_mse_minmax: Optional[float]
    crps: Optional[float]
    coverage: Optional[float]
    degenerate: bool

    @classmethod
    def from_row(cls, row: tuple) -> "WindowRecord":
        return cls(
            id=row[0],
            run_hash=row[1],
            variant=row[2],
            seed=row[3],
            window_start=row[4],
            all_feature_mse=row[5],
            load_mse_minmax=row[6],
            crps=row[7],
            coverage=row[8],
            degenerate=bool(row[9]),
        )


@dataclass
class CalibrationRecord:
    """Summary of one conformal calibration run."""

    id: Optional[int]
    run_hash: str
    protocol: str
    alpha: float
    coverage: float
    width: float
    cqr_coverage: Optional[float]
    cqr_width: Optional[float]
    alpha_T: Optional[float]
    saturated: int

    @classmethod
    def from_row(cls, row: tuple) -> "CalibrationRecord":
        return cls(*row)


def get_connection(path: Optional[Path] = None) -> sqlite3.Connection:
    """Get a database connection, creating the file if needed."""
    path = Path(path) if path is not None else DATABASE_PATH
    path.parent.mkdir(parents=True, exist_ok=True)
    return sqlite3.connect(path, check_same_thread=False)


def init_database(path: Optional[Path] = None) -> None:
    """Initialize the database schema."""
    with get_connection(path) as conn:
        cursor = conn.cursor()
        cursor.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                run_hash TEXT PRIMARY KEY,
                dataset TEXT NOT NULL,
                seed INTEGER NOT NULL,
                gap_len INTEGER NOT NULL,
                config_json TEXT NOT NULL,
                created_at TEXT NOT NULL
            )
        """
        )
        cursor.execute(
            """
            CREATE TABLE IF NOT EXISTS window_metrics (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_hash TEXT NOT NULL,
                variant TEXT NOT NULL,
                seed INTEGER NOT NULL,
                window_start INTEGER NOT NULL,
                all_feature_mse REAL NOT NULL,
                load_mse_minmax REAL,
                crps REAL,
                coverage REAL,
                degenerate INTEGER NOT NULL,
                UNIQUE (run_hash, variant, seed, window_start)
            )
        """
        )
        cursor.execute(
            """
            CREATE TABLE IF NOT EXISTS calibration (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_hash TEXT NOT NULL,
                protocol TEXT NOT NULL,
                alpha REAL NOT NULL,
                coverage REAL NOT NULL,
                width REAL NOT NULL,
                cqr_coverage REAL,
                cqr_width REAL,
                alpha_T REAL,
                saturated INTEGER DEFAULT 0
            )
        """
        )
        cursor.execute(
            """
            CREATE INDEX IF NOT EXISTS idx_window_run
            ON window_metrics(run_hash, variant)
        """
        )
        conn.commit()


class ResultWriter:
    """Serialises all result writes through a single connection and lock."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else DATABASE_PATH
        init_database(self.path)
        self._lock = threading.Lock()
        self._conn = get_connection(self.path)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self) -> "ResultWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def record_run(self, run_hash: str, dataset: str, seed: int, gap_len: int, config: dict) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                """
                INSERT OR REPLACE INTO runs (run_hash, dataset, seed, gap_len, config_json, created_at)
                VALUES (?, ?, ?, ?, ?, ?)
            """,
                (
                    run_hash,
                    dataset,
                    seed,
                    gap_len,
                    json.dumps(config, sort_keys=True),
                    datetime.now().isoformat(timespec="seconds"),
                ),
            )

    def add_window_metrics(self, run_hash: str, rows: Iterable) -> int:
        """Insert WindowMetrics rows; re-running a window replaces its scores."""
        values = [
            (
                run_hash,
                r.variant,
                r.seed,
                r.window_start,
                r.all_feature_mse,
                r.load_mse_minmax,
                r.crps,
                r.coverage,
                int(r.degenerate),
            )
            for r in rows
        ]
        with self._lock, self._conn:
            self._conn.executemany(
                """
                INSERT OR REPLACE INTO window_metrics
                (run_hash, variant, seed, window_start, all_feature_mse,
                 load_mse_minmax, crps, coverage, degenerate)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """,
                values,
            )
        return len(values)

    def add_calibration(
        self,
        run_hash: str,
        protocol: str,
        alpha: float,
        coverage: float,
        width: float,
        cqr_coverage: Optional[float] = None,
        cqr_width: Optional[float] = None,
        alpha_T: Optional[float] = None,
        saturated: int = 0,
    ) -> int:
        with self._lock, self._conn:
            cursor = self._conn.execute(
                """
                INSERT INTO calibration
                (run_hash, protocol, alpha, coverage, width, cqr_coverage, cqr_width, alpha_T, saturated)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """,
                (run_hash, protocol, alpha, coverage, width, cqr_coverage, cqr_width, alpha_T, saturated),
            )
            return cursor.lastrowid


def get_runs(path: Optional[Path] = None) -> list[RunRecord]:
    with get_connection(path) as conn:
        cursor = conn.cursor()
        cursor.execute(
            """
            SELECT run_hash, dataset, seed, gap_len, config_json, created_at
            FROM runs ORDER BY created_at ASC
        """
        )
        return [RunRecord.from_row(row) for row in cursor.fetchall()]


def get_window_metrics(run_hash: str, variant: Optional[str] = None, path: Optional[Path] = None) -> list[WindowRecord]:
    """Window scores of a run, optionally for one variant, in window order."""
    query = """
        SELECT id, run_hash, variant, seed, window_start, all_feature_mse,
               load_mse_minmax, crps, coverage, degenerate
        FROM window_metrics WHERE run_hash = ?
    """
    params: tuple = (run_hash,)
    if variant is not None:
        query += " AND variant = ?"
        params += (variant,)
    query += " ORDER BY variant, seed, window_start"
    with get_connection(path) as conn:
        cursor = conn.cursor()
        cursor.execute(query, params)
        return [WindowRecord.from_row(row) for row in cursor.fetchall()]


def get_calibrations(run_hash: str, path: Optional[Path] = None) -> list[CalibrationRecord]:
    with get_connection(path) as conn:
        cursor = conn.cursor()
        cursor.execute(
            """
            SELECT id, run_hash, protocol, alpha, coverage, width,
                   cqr_coverage, cqr_width, alpha_T, saturated
            FROM calibration WHERE run_hash = ? ORDER BY id
        """,
            (run_hash,),
        )
        return [CalibrationRecord.from_row(row) for row in cursor.fetchall()]
