"""Database schema descriptors used for identifier resolution and prompting."""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    type: str = ""


@dataclass(frozen=True)
class TableInfo:
    name: str
    columns: tuple[ColumnInfo, ...] = ()
    primary_key: tuple[str, ...] = ()
    foreign_keys: tuple[tuple[str, str, str], ...] = ()  # (column, ref_table, ref_column)


@dataclass
class SchemaDescriptor:
    """Tables visible to one query, with enough metadata to resolve bare columns."""

    tables: list[TableInfo] = field(default_factory=list)
    db_id: str = ""

    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def find_table(self, name: str) -> TableInfo | None:
        lowered = name.lower()
        for t in self.tables:
            if t.name.lower() == lowered:
                return t
        return None

    def tables_with_column(self, column: str) -> list[str]:
        """Lower-cased names of tables that declare `column` (case-insensitive)."""
        lowered = column.lower()
        hits = []
        for t in self.tables:
            if any(c.name.lower() == lowered for c in t.columns):
                hits.append(t.name.lower())
        return hits

    def to_ddl(self) -> str:
        """Render as CREATE TABLE text for prompts."""
        chunks = []
        for t in self.tables:
            cols = [f"  {c.name} {c.type}".rstrip() for c in t.columns]
            if t.primary_key:
                cols.append(f"  PRIMARY KEY ({', '.join(t.primary_key)})")
            for col, ref_table, ref_col in t.foreign_keys:
                cols.append(f"  FOREIGN KEY ({col}) REFERENCES {ref_table}({ref_col})")
            chunks.append(f"CREATE TABLE {t.name} (\n" + ",\n".join(cols) + "\n);")
        return "\n".join(chunks)

    def digest_payload(self) -> dict:
        return {
            "db_id": self.db_id,
            "tables": [
                {
                    "name": t.name,
                    "columns": [{"name": c.name, "type": c.type} for c in t.columns],
                }
                for t in self.tables
            ],
        }


def schema_from_dict(data: dict, db_id: str = "") -> SchemaDescriptor:
    tables = []
    for t in data.get("tables", []):
        columns = tuple(
            ColumnInfo(name=c["name"], type=c.get("type", "")) for c in t.get("columns", [])
        )
        pk = tuple(t.get("primary_key", []) or [])
        fks = []
        for fk in t.get("foreign_keys", []) or []:
            fks.append((fk["column"], fk["ref_table"], fk["ref_column"]))
        tables.append(
            TableInfo(name=t["name"], columns=columns, primary_key=pk, foreign_keys=tuple(fks))
        )
    return SchemaDescriptor(tables=tables, db_id=db_id or data.get("db_id", ""))


def load_schema(path: str) -> SchemaDescriptor:
    with open(path, "r", encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


def schema_from_sqlite(db_path: str, db_id: str = "") -> SchemaDescriptor:
    """Introspect a SQLite file into a SchemaDescriptor."""
    conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    try:
        cur = conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
        )
        names = [row[0] for row in cur.fetchall()]
        tables = []
        for name in names:
            cols = []
            pk = []
            for _, col_name, col_type, _, _, is_pk in conn.execute(
                f'PRAGMA table_info("{name}")'
            ).fetchall():
                cols.append(ColumnInfo(name=col_name, type=col_type or ""))
                if is_pk:
                    pk.append(col_name)
            fks = []
            for row in conn.execute(f'PRAGMA foreign_key_list("{name}")').fetchall():
                # (id, seq, ref_table, from_col, to_col, ...)
                fks.append((row[3], row[2], row[4] or ""))
            tables.append(
                TableInfo(name=name, columns=tuple(cols), primary_key=tuple(pk), foreign_keys=tuple(fks))
            )
        return SchemaDescriptor(tables=tables, db_id=db_id)
    finally:
        conn.close()
