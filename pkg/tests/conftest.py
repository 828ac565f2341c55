import sqlite3

import pytest

from joltsql.schema import Column, SchemaDocument, Table


@pytest.fixture(scope="session")
def concert_schema() -> SchemaDocument:
    return SchemaDocument((
        Table("singer",
              (Column("id", "INTEGER"), Column("name", "TEXT"),
               Column("age", "INTEGER"), Column("country", "TEXT")),
              primary_key=("id",)),
        Table("concert",
              (Column("id", "INTEGER"), Column("name", "TEXT"),
               Column("year", "INTEGER"), Column("stadium_id", "INTEGER")),
              primary_key=("id",),
              foreign_keys=(("stadium_id", "stadium", "id"),)),
        Table("stadium",
              (Column("id", "INTEGER"), Column("name", "TEXT"),
               Column("capacity", "INTEGER"), Column("city", "TEXT")),
              primary_key=("id",)),
        Table("singer_in_concert",
              (Column("concert_id", "INTEGER"), Column("singer_id", "INTEGER")),
              primary_key=("concert_id", "singer_id"),
              foreign_keys=(("concert_id", "concert", "id"),
                            ("singer_id", "singer", "id"))),
    ))


@pytest.fixture
def memory_db():
    conn = sqlite3.connect(":memory:")
    yield conn
    conn.close()
