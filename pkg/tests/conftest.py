"""Shared fixtures. The retail database is built once per session."""

from __future__ import annotations

import pytest

from corpus import build_retail_db
from sqldecomp.schema import ColumnInfo, SchemaDescriptor, TableInfo, schema_from_sqlite


@pytest.fixture(scope="session")
def db_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("dbs")
    build_retail_db(root)
    return root


@pytest.fixture(scope="session")
def retail_db(db_root):
    return db_root / "retail" / "retail.sqlite"


@pytest.fixture(scope="session")
def retail_schema(retail_db):
    return schema_from_sqlite(str(retail_db), db_id="retail")


@pytest.fixture(scope="session")
def users_schema():
    # Tiny standalone schema for the hand-checked similarity examples.
    return SchemaDescriptor(
        tables=[
            TableInfo(
                "users",
                (ColumnInfo("name"), ColumnInfo("age"), ColumnInfo("email")),
            )
        ],
        db_id="demo",
    )
