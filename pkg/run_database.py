# run_database.py
# Registro SQLite de corridas, épocas y métricas del pipeline.
# Es un registro de auditoría: nunca se usa como entrada de artefactos comparados byte a byte.

import json
import os
import sqlite3
from datetime import datetime
from typing import Any, Dict, Optional

import pandas as pd

from core.logger import get_logger

logger = get_logger(__name__)

TABLES = ('runs', 'epochs', 'metrics')


class RunDatabase:
    def __init__(self, db_path: str):
        self.db_path = db_path
        self._init_db()

    def _init_db(self) -> None:
        """Crea las tablas si no existen."""
        os.makedirs(os.path.dirname(os.path.abspath(self.db_path)), exist_ok=True)
        with sqlite3.connect(self.db_path) as conn:
            c = conn.cursor()
            c.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT,
                    method TEXT,
                    config_digest TEXT,
                    seed INTEGER,
                    status TEXT DEFAULT 'running',
                    started TEXT,
                    finished TEXT,
                    note TEXT
                );
            """)
            c.execute("""
                CREATE TABLE IF NOT EXISTS epochs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER,
                    epoch INTEGER,
                    mean_loss REAL,
                    components TEXT,
                    seconds REAL,
                    FOREIGN KEY(run_id) REFERENCES runs(id)
                );
            """)
            c.execute("""
                CREATE TABLE IF NOT EXISTS metrics (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER,
                    method TEXT,
                    split TEXT,
                    acc REAL,
                    f1 REAL,
                    n INTEGER,
                    FOREIGN KEY(run_id) REFERENCES runs(id)
                );
            """)
            conn.commit()

    # ---------------------- CORRIDAS ----------------------

    def start_run(self, command: str, method: Optional[str], config_digest: str, seed: int) -> int:
        with sqlite3.connect(self.db_path) as conn:
            c = conn.cursor()
            c.execute(
                "INSERT INTO runs (command, method, config_digest, seed, started) VALUES (?, ?, ?, ?, ?)",
                (command, method, config_digest, seed, datetime.now().strftime('%Y-%m-%d %H:%M:%S'))
            )
            conn.commit()
            return c.lastrowid

    def finish_run(self, run_id: int, status: str, note: Optional[str] = None) -> None:
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                "UPDATE runs SET status = ?, finished = ?, note = ? WHERE id = ?",
                (status, datetime.now().strftime('%Y-%m-%d %H:%M:%S'), note, run_id)
            )
            conn.commit()

    def get_runs(self, status: Optional[str] = None) -> pd.DataFrame:
        with sqlite3.connect(self.db_path) as conn:
            if status:
                return pd.read_sql('SELECT * FROM runs WHERE status = ?', conn, params=(status,))
            return pd.read_sql('SELECT * FROM runs', conn)

    # ---------------------- ÉPOCAS ----------------------

    def log_epochs(self, run_id: int, log) -> None:
        rows = [(run_id, e.epoch, e.mean_loss, json.dumps(e.components, sort_keys=True), e.seconds)
                for e in log.epochs]
        with sqlite3.connect(self.db_path) as conn:
            conn.executemany(
                "INSERT INTO epochs (run_id, epoch, mean_loss, components, seconds) VALUES (?, ?, ?, ?, ?)", rows)
            conn.commit()

    def get_epochs(self, run_id: Optional[int] = None) -> pd.DataFrame:
        with sqlite3.connect(self.db_path) as conn:
            if run_id is not None:
                return pd.read_sql('SELECT * FROM epochs WHERE run_id = ?', conn, params=(run_id,))
            return pd.read_sql('SELECT * FROM epochs', conn)

    # ---------------------- MÉTRICAS ----------------------

    def log_metrics(self, run_id: int, report) -> None:
        rows = [(run_id, report.method, name, s.acc, s.f1, s.n) for name, s in report.scores.items()]
        with sqlite3.connect(self.db_path) as conn:
            conn.executemany(
                "INSERT INTO metrics (run_id, method, split, acc, f1, n) VALUES (?, ?, ?, ?, ?, ?)", rows)
            conn.commit()

    def get_metrics(self, run_id: Optional[int] = None, method: Optional[str] = None) -> pd.DataFrame:
        query, params = 'SELECT * FROM metrics', []
        filters: Dict[str, Any] = {'run_id': run_id, 'method': method}
        clauses = [f"{k} = ?" for k, v in filters.items() if v is not None]
        if clauses:
            query += ' WHERE ' + ' AND '.join(clauses)
            params = [v for v in filters.values() if v is not None]
        with sqlite3.connect(self.db_path) as conn:
            return pd.read_sql(query, conn, params=params)

    def export_csv(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        with sqlite3.connect(self.db_path) as conn:
            for table in TABLES:
                pd.read_sql(f'SELECT * FROM {table}', conn).to_csv(os.path.join(directory, f'{table}.csv'), index=False)
        logger.info(f"[DB] Tablas exportadas a {directory}")
