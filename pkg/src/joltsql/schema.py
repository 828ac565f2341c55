"""Database schema description and its DDL-style serialization.

The serialized text carries one marker literal per column; a SpanIndex
records the character range of every structural element so the tokenizer
can map them to token ranges later.
"""
from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field

from .errors import DbError, UnknownColumn

MARKER_TEXT = "<|marker|>"


@dataclass(frozen=True)
class Column:
    name: str
    sql_type: str
    examples: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.examples) > 2:
            raise ValueError("at most two value examples per column")


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    primary_key: tuple[str, ...] = ()
    # (local column, foreign table, foreign column)
    foreign_keys: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        names = [c.name.lower() for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in table {self.name}")

    def column_names(self) -> list[str]:
        return [c.name.lower() for c in self.columns]


@dataclass(frozen=True)
class SchemaDocument:
    tables: tuple[Table, ...]

    def __post_init__(self):
        names = [t.name.lower() for t in self.tables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate table names in schema")

    def table(self, name: str) -> Table | None:
        low = name.lower()
        for t in self.tables:
            if t.name.lower() == low:
                return t
        return None

    def has_column(self, table: str, column: str) -> bool:
        t = self.table(table)
        return t is not None and column.lower() in t.column_names()

    def all_columns(self) -> list[tuple[str, str]]:
        """(table, column) pairs in serialization order, lowercase."""
        out = []
        for t in self.tables:
            for c in t.columns:
                out.append((t.name.lower(), c.name.lower()))
        return out

    @staticmethod
    def from_json(obj: dict) -> "SchemaDocument":
        tables = []
        for t in obj["tables"]:
            cols = tuple(
                Column(c["name"], c.get("type", "TEXT"), tuple(c.get("examples", [])))
                for c in t["columns"]
            )
            tables.append(
                Table(
                    t["name"],
                    cols,
                    tuple(t.get("primary_key", [])),
                    tuple(tuple(fk) for fk in t.get("foreign_keys", [])),
                )
            )
        return SchemaDocument(tuple(tables))

    @staticmethod
    def load(path: str) -> "SchemaDocument":
        with open(path) as f:
            return SchemaDocument.from_json(json.load(f))

    def to_json(self) -> dict:
        return {
            "tables": [
                {
                    "name": t.name,
                    "columns": [
                        {"name": c.name, "type": c.sql_type, "examples": list(c.examples)}
                        for c in t.columns
                    ],
                    "primary_key": list(t.primary_key),
                    "foreign_keys": [list(fk) for fk in t.foreign_keys],
                }
                for t in self.tables
            ]
        }


@dataclass
class TableSpans:
    header: tuple[int, int]
    pk: tuple[int, int]
    fk: list[tuple[int, int]]
    footer: tuple[int, int]
    # column name -> full definition span (ends with the marker literal)
    columns: dict[str, tuple[int, int]] = field(default_factory=dict)
    # column name -> span of the marker literal itself
    markers: dict[str, tuple[int, int]] = field(default_factory=dict)

    def envelope_spans(self) -> list[tuple[int, int]]:
        return [self.header, self.pk, *self.fk, self.footer]


@dataclass
class SpanIndex:
    # table name (lowercase) -> spans
    tables: dict[str, TableSpans]

    def marker_positions(self) -> list[tuple[str, str, tuple[int, int]]]:
        """(table, column, marker span) in serialization order."""
        out = []
        for tname, ts in self.tables.items():
            for cname, span in ts.markers.items():
                out.append((tname, cname, span))
        return out

    def to_json(self) -> dict:
        return {
            t: {
                "header": list(ts.header),
                "pk": list(ts.pk),
                "fk": [list(s) for s in ts.fk],
                "footer": list(ts.footer),
                "columns": {c: list(s) for c, s in ts.columns.items()},
                "markers": {c: list(s) for c, s in ts.markers.items()},
            }
            for t, ts in self.tables.items()
        }

    @staticmethod
    def from_json(obj: dict) -> "SpanIndex":
        tables = {}
        for t, ts in obj.items():
            tables[t] = TableSpans(
                header=tuple(ts["header"]),
                pk=tuple(ts["pk"]),
                fk=[tuple(s) for s in ts["fk"]],
                footer=tuple(ts["footer"]),
                columns={c: tuple(s) for c, s in ts["columns"].items()},
                markers={c: tuple(s) for c, s in ts["markers"].items()},
            )
        return SpanIndex(tables)


def _render_examples(examples: tuple[str, ...]) -> str:
    if not examples:
        return "None"
    return ", ".join(examples)


def serialize_schema(doc: SchemaDocument, marker_text: str = MARKER_TEXT) -> tuple[str, SpanIndex]:
    """Render CREATE-TABLE-style text, one marker per column, plus spans.

    Layout is frozen: header line, one column line per column (type, then a
    `-- examples:` comment, then the marker), PRIMARY KEY line, one FOREIGN
    KEY line per fk, closing paren footer. Spans are half-open char ranges
    over the returned text and exclude the trailing newline of each line.
    """
    if not marker_text:
        raise ValueError("marker_text must be non-empty")
    parts: list[str] = []
    pos = 0
    index: dict[str, TableSpans] = {}

    def emit(line: str) -> tuple[int, int]:
        nonlocal pos
        start = pos
        parts.append(line + "\n")
        pos += len(line) + 1
        return (start, start + len(line))

    for t in doc.tables:
        header = emit(f"CREATE TABLE {t.name} (")
        col_spans: dict[str, tuple[int, int]] = {}
        marker_spans: dict[str, tuple[int, int]] = {}
        for c in t.columns:
            line = f"  {c.name} {c.sql_type.upper()} -- examples: {_render_examples(c.examples)} {marker_text}"
            span = emit(line)
            col_spans[c.name.lower()] = span
            marker_spans[c.name.lower()] = (span[1] - len(marker_text), span[1])
        pk = emit(f"  PRIMARY KEY ({', '.join(t.primary_key)})")
        fk_spans = [
            emit(f"  FOREIGN KEY ({local}) REFERENCES {ftable} ({fcol})")
            for local, ftable, fcol in t.foreign_keys
        ]
        footer = emit(")")
        index[t.name.lower()] = TableSpans(
            header=header, pk=pk, fk=fk_spans, footer=footer,
            columns=col_spans, markers=marker_spans,
        )
    text = "".join(parts)
    if text.endswith("\n"):
        text = text[:-1]
    return text, SpanIndex(index)


def sample_value_examples(db: sqlite3.Connection, table: str, column: str, limit: int = 2) -> list[str]:
    """Up to `limit` distinct non-null values in first-seen row order,
    rendered with SQL literal quoting."""
    try:
        cur = db.execute(f'SELECT "{column}" FROM "{table}"')
        seen: list = []
        for (v,) in cur:
            if v is None or v in seen:
                continue
            seen.append(v)
            if len(seen) >= limit:
                break
    except sqlite3.Error as e:
        raise DbError(str(e)) from e
    return [_quote_value(v) for v in seen]


def _quote_value(v) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    return str(v)


def label_vector(links: set[tuple[str, str]], doc: SchemaDocument) -> list[int]:
    """Binary labels, one per column in serialization order."""
    all_cols = doc.all_columns()
    known = set(all_cols)
    for pair in links:
        if (pair[0].lower(), pair[1].lower()) not in known:
            raise UnknownColumn(f"{pair[0]}.{pair[1]} not in schema")
    normalized = {(t.lower(), c.lower()) for t, c in links}
    return [1 if col in normalized else 0 for col in all_cols]
