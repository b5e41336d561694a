import logging
import os
from pathlib import Path
from typing import Optional, Union

import aiosqlite

from errfilt.utils.utils import Utils


class Database:
    """Run ledger: one row per CLI run plus the rows each run emitted"""

    def __init__(self, db_path: Optional[Union[str, Path]] = None):
        self.db_path = Path(db_path or os.getenv("ERRFILT_DB_PATH", "data/runs.db"))
        self.connection = None
        self.logger = logging.getLogger(__name__)

    async def initialize(self):
        """Initialize the database and create tables"""
        # Ensure data directory exists
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self.connection = await aiosqlite.connect(self.db_path)
        await self.connection.execute("PRAGMA foreign_keys = ON")
        # Enable row factory for dictionary-like access
        self.connection.row_factory = aiosqlite.Row
        await self.create_tables()
        await self.migrate_database()
        self.logger.info(f"Run ledger ready at {self.db_path}")

    async def create_tables(self):
        """Create all necessary tables"""
        # One row per CLI invocation
        await self.connection.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                mode TEXT NOT NULL,
                seed TEXT NOT NULL,
                config_text TEXT NOT NULL,
                output_path TEXT,
                status TEXT NOT NULL DEFAULT 'running',
                exit_code INTEGER,
                error TEXT,
                started_at TIMESTAMP NOT NULL,
                finished_at TIMESTAMP
            )
        """)

        # Visibility sweep rows
        await self.connection.execute("""
            CREATE TABLE IF NOT EXISTS sweep_points (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                sigma2 REAL NOT NULL,
                variant TEXT NOT NULL,
                v_mc REAL,
                stderr REAL,
                v_closed_form REAL,
                abs_diff REAL,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        """)

        # QKD session rows
        await self.connection.execute("""
            CREATE TABLE IF NOT EXISTS session_results (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                filtration INTEGER NOT NULL,
                sigma2 REAL NOT NULL,
                mu REAL,
                dark_prob REAL,
                n_sifted INTEGER,
                ber REAL,
                ci95 REAL,
                verdict TEXT,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        """)

        await self.connection.execute("""
            CREATE INDEX IF NOT EXISTS idx_sweep_points_run
            ON sweep_points(run_id)
        """)

        await self.connection.execute("""
            CREATE INDEX IF NOT EXISTS idx_session_results_run
            ON session_results(run_id)
        """)

        await self.connection.commit()

    async def migrate_database(self):
        """Migrate database schema to add new columns"""
        try:
            cursor = await self.connection.execute("PRAGMA table_info(session_results)")
            columns = await cursor.fetchall()
            column_names = [column[1] for column in columns]

            # Eve analysis rows share the sessions table
            if "p_replace" not in column_names:
                await self.connection.execute(
                    "ALTER TABLE session_results ADD COLUMN p_replace REAL"
                )
                self.logger.info("Added p_replace column to session_results")

            if "yield_ratio" not in column_names:
                await self.connection.execute(
                    "ALTER TABLE session_results ADD COLUMN yield_ratio REAL"
                )
                self.logger.info("Added yield_ratio column to session_results")

            await self.connection.commit()

        except Exception as e:
            self.logger.error(f"Database migration failed: {e}")

    # Run methods
    async def start_run(self, mode: str, seed: int, config_text: str, output_path: Optional[str] = None) -> int:
        """Open a ledger entry for a run"""
        cursor = await self.connection.execute(
            """INSERT INTO runs (mode, seed, config_text, output_path, started_at)
               VALUES (?, ?, ?, ?, ?)""",
            (mode, str(seed), config_text, output_path, Utils.format_timestamp(Utils.utcnow()))
        )
        await self.connection.commit()
        return cursor.lastrowid

    async def finish_run(self, run_id: int, exit_code: int = 0, error: Optional[str] = None) -> bool:
        """Close a ledger entry"""
        status = "finished" if exit_code == 0 else "failed"
        cursor = await self.connection.execute(
            """UPDATE runs SET status = ?, exit_code = ?, error = ?, finished_at = ?
               WHERE id = ?""",
            (status, exit_code, error, Utils.format_timestamp(Utils.utcnow()), run_id)
        )
        await self.connection.commit()
        return cursor.rowcount > 0

    async def get_run(self, run_id: int) -> Optional[dict]:
        """Get a specific run"""
        async with self.connection.execute(
            "SELECT * FROM runs WHERE id = ?", (run_id,)
        ) as cursor:
            row = await cursor.fetchone()
            return dict(row) if row else None

    async def get_recent_runs(self, limit: int = 20) -> list:
        """Most recent runs first"""
        async with self.connection.execute(
            "SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)
        ) as cursor:
            rows = await cursor.fetchall()
            return [dict(row) for row in rows]

    # Result methods
    async def add_sweep_point(self, run_id: int, sigma2: float, variant: str, v_mc: float,
                              stderr: float, v_closed_form: float, abs_diff: float) -> int:
        cursor = await self.connection.execute(
            """INSERT INTO sweep_points
               (run_id, sigma2, variant, v_mc, stderr, v_closed_form, abs_diff)
               VALUES (?, ?, ?, ?, ?, ?, ?)""",
            (run_id, sigma2, variant, v_mc, stderr, v_closed_form, abs_diff)
        )
        await self.connection.commit()
        return cursor.lastrowid

    async def add_session_result(
        self, run_id: int, filtration: bool, sigma2: float, mu: Optional[float] = None,
        dark_prob: Optional[float] = None, n_sifted: Optional[int] = None, ber: Optional[float] = None,
        ci95: Optional[float] = None, verdict: Optional[str] = None,
        p_replace: Optional[float] = None, yield_ratio: Optional[float] = None,
    ) -> int:
        cursor = await self.connection.execute(
            """INSERT INTO session_results
               (run_id, filtration, sigma2, mu, dark_prob, n_sifted, ber, ci95, verdict, p_replace, yield_ratio)
               VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)""",
            (run_id, int(filtration), sigma2, mu, dark_prob, n_sifted, ber, ci95, verdict, p_replace, yield_ratio)
        )
        await self.connection.commit()
        return cursor.lastrowid

    async def get_sweep_points(self, run_id: int) -> list:
        async with self.connection.execute(
            "SELECT * FROM sweep_points WHERE run_id = ? ORDER BY id", (run_id,)
        ) as cursor:
            rows = await cursor.fetchall()
            return [dict(row) for row in rows]

    async def get_session_results(self, run_id: int) -> list:
        async with self.connection.execute(
            "SELECT * FROM session_results WHERE run_id = ? ORDER BY id", (run_id,)
        ) as cursor:
            rows = await cursor.fetchall()
            return [dict(row) for row in rows]

    async def close(self):
        """Close the database connection"""
        if self.connection:
            await self.connection.close()
            self.connection = None
            self.logger.info("Database connection closed")
