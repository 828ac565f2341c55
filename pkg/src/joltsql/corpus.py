"""Deterministic synthetic databases and question/SQL pairs.

Questions are template-rendered English with slotted table/column/value
mentions; gold SQL is written in space-separated token form so encoding
and decoding round-trip exactly. Labels always come from the extractor,
never from the templates.
"""
from __future__ import annotations

import json
import os
import sqlite3
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .pipeline import build_training_example, example_to_json
from .schema import Column, SchemaDocument, Table, sample_value_examples
from .tokenizer import Vocab, build_vocab

_TABLE_POOL = [
    "singer", "concert", "album", "track", "student", "course", "employee",
    "department", "customer", "orders", "product", "store", "player", "team",
    "book", "author", "movie", "review", "city", "branch",
]
_NUM_COL_POOL = [
    "age", "year", "price", "score", "rating", "salary", "capacity",
    "population", "quantity", "duration", "weight", "height", "budget",
]
_TEXT_COL_POOL = [
    "name", "title", "label", "status", "genre", "grade", "color", "kind",
    "region", "owner",
]
_WORD_POOL = [
    "red", "blue", "green", "gold", "silver", "north", "south", "east",
    "west", "alpha", "beta", "gamma", "delta", "omega", "prime", "major",
    "minor", "solo", "duo", "trio",
]


@dataclass
class CorpusConfig:
    num_databases: int = 4
    tables_per_db: tuple[int, int] = (2, 3)
    columns_per_table: tuple[int, int] = (3, 5)
    rows_per_table: tuple[int, int] = (20, 50)
    examples_per_db: int = 150
    split: float = 500 / 600  # train fraction
    seed: int = 7
    templates: tuple[str, ...] = (
        "projection", "filtered", "aggregate", "join", "order_limit",
    )

    def __post_init__(self):
        for lo, hi in (self.tables_per_db, self.columns_per_table, self.rows_per_table):
            if lo > hi or lo < 1:
                raise ConfigError("ranges must be non-empty")
        if not 0 < self.split < 1:
            raise ConfigError("split must be in (0, 1)")
        if self.num_databases < 1 or self.examples_per_db < 1:
            raise ConfigError("need at least one database and one example")
        if not self.templates:
            raise ConfigError("at least one template must be enabled")

    @staticmethod
    def from_json(obj: dict) -> "CorpusConfig":
        kwargs = dict(obj)
        for key in ("tables_per_db", "columns_per_table", "rows_per_table", "templates"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return CorpusConfig(**kwargs)


def _make_schema(db_index: int, cfg: CorpusConfig,
                 rng: np.random.Generator) -> SchemaDocument:
    n_tables = int(rng.integers(cfg.tables_per_db[0], cfg.tables_per_db[1] + 1))
    table_names = list(rng.choice(_TABLE_POOL, size=n_tables, replace=False))
    tables = []
    for ti, tname in enumerate(table_names):
        n_cols = int(rng.integers(cfg.columns_per_table[0], cfg.columns_per_table[1] + 1))
        cols = [Column("id", "INTEGER")]
        fks: list[tuple[str, str, str]] = []
        if ti > 0:
            fk_col = f"{table_names[0]}_id"
            cols.append(Column(fk_col, "INTEGER"))
            fks.append((fk_col, table_names[0], "id"))
        n_num = int(rng.integers(1, max(2, (n_cols - len(cols)) // 2 + 1)))
        num_names = list(rng.choice(_NUM_COL_POOL, size=n_num, replace=False))
        n_text = n_cols - len(cols) - n_num
        text_names = list(rng.choice(_TEXT_COL_POOL, size=max(1, n_text), replace=False))
        for name in num_names:
            cols.append(Column(name, "INTEGER"))
        for name in text_names:
            cols.append(Column(name, "TEXT"))
        tables.append(Table(str(tname), tuple(cols), primary_key=("id",),
                            foreign_keys=tuple(fks)))
    return SchemaDocument(tuple(tables))


def _materialize_db(path: str, doc: SchemaDocument, cfg: CorpusConfig,
                    rng: np.random.Generator) -> SchemaDocument:
    """Create the sqlite file, fill rows, and return the schema with value
    examples sampled back from the database."""
    if os.path.exists(path):
        os.remove(path)
    conn = sqlite3.connect(path)
    try:
        row_counts: dict[str, int] = {}
        for t in doc.tables:
            cols_sql = ", ".join(f'"{c.name}" {c.sql_type}' for c in t.columns)
            pk = f", PRIMARY KEY ({', '.join(t.primary_key)})" if t.primary_key else ""
            fk = "".join(
                f', FOREIGN KEY ("{local}") REFERENCES "{ftable}" ("{fcol}")'
                for local, ftable, fcol in t.foreign_keys
            )
            conn.execute(f'CREATE TABLE "{t.name}" ({cols_sql}{pk}{fk})')
            n_rows = int(rng.integers(cfg.rows_per_table[0], cfg.rows_per_table[1] + 1))
            row_counts[t.name] = n_rows
            rows = []
            for rid in range(1, n_rows + 1):
                row = []
                for c in t.columns:
                    if c.name == "id":
                        row.append(rid)
                    elif any(fk_[0] == c.name for fk_ in t.foreign_keys):
                        parent = next(fk_[1] for fk_ in t.foreign_keys if fk_[0] == c.name)
                        row.append(int(rng.integers(1, row_counts[parent] + 1)))
                    elif c.sql_type == "INTEGER":
                        row.append(int(rng.integers(1, 100)))
                    else:
                        row.append(str(rng.choice(_WORD_POOL)))
                rows.append(tuple(row))
            ph = ", ".join("?" * len(t.columns))
            conn.executemany(f'INSERT INTO "{t.name}" VALUES ({ph})', rows)
        conn.commit()
        tables = []
        for t in doc.tables:
            cols = tuple(
                Column(c.name, c.sql_type,
                       tuple(sample_value_examples(conn, t.name, c.name)))
                for c in t.columns
            )
            tables.append(Table(t.name, cols, t.primary_key, t.foreign_keys))
    finally:
        conn.close()
    return SchemaDocument(tuple(tables))


def _numeric_columns(t: Table) -> list[str]:
    skip = {"id"} | {fk[0] for fk in t.foreign_keys}
    return [c.name for c in t.columns if c.sql_type == "INTEGER" and c.name not in skip]


def _text_columns(t: Table) -> list[str]:
    return [c.name for c in t.columns if c.sql_type == "TEXT"]


def _plain_columns(t: Table) -> list[str]:
    skip = {fk[0] for fk in t.foreign_keys}
    return [c.name for c in t.columns if c.name not in skip and c.name != "id"]


def _render_example(doc: SchemaDocument, template: str,
                    rng: np.random.Generator) -> tuple[str, str] | None:
    """(question, gold SQL) or None when the template does not apply."""
    t = doc.tables[int(rng.integers(0, len(doc.tables)))]
    if template == "projection":
        cols = _plain_columns(t)
        if not cols:
            return None
        col = str(rng.choice(cols))
        if rng.integers(0, 2) == 0:
            q = f"show the {col} of each {t.name}"
        else:
            q = f"list the {col} of every {t.name}"
        return q, f"SELECT {col} FROM {t.name}"
    if template == "filtered":
        cols, nums = _plain_columns(t), _numeric_columns(t)
        if not cols or not nums:
            return None
        col, num = str(rng.choice(cols)), str(rng.choice(nums))
        v = int(rng.integers(10, 90))
        if rng.integers(0, 2) == 0:
            q = f"show the {col} of each {t.name} whose {num} is greater than {v}"
            op = ">"
        else:
            q = f"show the {col} of each {t.name} whose {num} is less than {v}"
            op = "<"
        return q, f"SELECT {col} FROM {t.name} WHERE {num} {op} {v}"
    if template == "aggregate":
        texts = _text_columns(t)
        if not texts:
            return None
        col = str(rng.choice(texts))
        if rng.integers(0, 2) == 0:
            q = f"for each {col} count the rows of {t.name}"
        else:
            q = f"count the rows of {t.name} grouped by {col}"
        return q, f"SELECT {col} , count ( * ) FROM {t.name} GROUP BY {col}"
    if template == "join":
        if len(doc.tables) < 2:
            return None
        child = doc.tables[int(rng.integers(1, len(doc.tables)))]
        if not child.foreign_keys:
            return None
        fk_col, parent_name, _ = child.foreign_keys[0]
        parent = doc.table(parent_name)
        pcols, ccols = _plain_columns(parent), _plain_columns(child)
        if not pcols or not ccols:
            return None
        ca, cb = str(rng.choice(pcols)), str(rng.choice(ccols))
        q = f"show the {ca} of each {parent.name} together with the {cb} of its {child.name}"
        sql = (f"SELECT T1 . {ca} , T2 . {cb} FROM {parent.name} AS T1 "
               f"JOIN {child.name} AS T2 ON T1 . id = T2 . {fk_col}")
        return q, sql
    if template == "order_limit":
        cols, nums = _plain_columns(t), _numeric_columns(t)
        if not cols or not nums:
            return None
        col, num = str(rng.choice(cols)), str(rng.choice(nums))
        k = int(rng.integers(2, 6))
        if rng.integers(0, 2) == 0:
            q = f"show the {col} of the {k} {t.name} rows with the largest {num}"
            d = "DESC"
        else:
            q = f"show the {col} of the {k} {t.name} rows with the smallest {num}"
            d = "ASC"
        return q, f"SELECT {col} FROM {t.name} ORDER BY {num} {d} LIMIT {k}"
    raise ConfigError(f"unknown template {template!r}")


@dataclass
class GeneratedCorpus:
    out_dir: str
    train_path: str
    dev_path: str
    vocab_path: str
    schema_dir: str
    db_dir: str
    schemas: dict[str, SchemaDocument] = field(default_factory=dict)
    db_paths: dict[str, str] = field(default_factory=dict)


def generate_corpus(cfg: CorpusConfig, out_dir: str, max_len: int = 512) -> GeneratedCorpus:
    db_dir = os.path.join(out_dir, "dbs")
    schema_dir = os.path.join(out_dir, "schema")
    os.makedirs(db_dir, exist_ok=True)
    os.makedirs(schema_dir, exist_ok=True)

    raw: list[dict] = []  # db_id, question, gold_sql
    schemas: dict[str, SchemaDocument] = {}
    db_paths: dict[str, str] = {}
    for di in range(cfg.num_databases):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, di]))
        db_id = f"db{di:03d}"
        doc = _make_schema(di, cfg, rng)
        db_path = os.path.join(db_dir, f"{db_id}.sqlite")
        doc = _materialize_db(db_path, doc, cfg, rng)
        schemas[db_id] = doc
        db_paths[db_id] = db_path
        with open(os.path.join(schema_dir, f"{db_id}.json"), "w") as f:
            json.dump(doc.to_json(), f, indent=1)
        made = 0
        attempts = 0
        while made < cfg.examples_per_db:
            attempts += 1
            if attempts > cfg.examples_per_db * 50:
                raise ConfigError(f"could not fill templates for {db_id}")
            template = cfg.templates[int(rng.integers(0, len(cfg.templates)))]
            rendered = _render_example(doc, template, rng)
            if rendered is None:
                continue
            question, sql = rendered
            raw.append({"db_id": db_id, "question": question, "gold_sql": sql,
                        "example_id": f"{db_id}-{made:03d}"})
            made += 1

    split_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99991]))
    order = split_rng.permutation(len(raw))
    n_train = round(len(raw) * cfg.split)
    train_raw = [raw[int(i)] for i in order[:n_train]]
    dev_raw = [raw[int(i)] for i in order[n_train:]]

    # vocab covers only training-side text
    from .pipeline import PREFIX_TEMPLATE
    from .schema import serialize_schema
    texts = []
    for r in train_raw:
        texts.append(PREFIX_TEMPLATE.format(question=r["question"]))
        texts.append(r["gold_sql"])
    for db_id, doc in schemas.items():
        texts.append(serialize_schema(doc)[0])
    vocab = build_vocab(texts)
    vocab_path = os.path.join(out_dir, "vocab.json")
    vocab.save(vocab_path)

    def write_jsonl(path: str, records: list[dict]):
        with open(path, "w") as f:
            for r in records:
                ex = build_training_example(r["question"], schemas[r["db_id"]],
                                            r["gold_sql"], vocab,
                                            r["example_id"], r["db_id"])
                if len(ex.tokens.ids) > max_len:
                    raise ConfigError(
                        f"example {r['example_id']} is {len(ex.tokens.ids)} tokens "
                        f"(max {max_len})")
                f.write(json.dumps(example_to_json(ex)) + "\n")

    train_path = os.path.join(out_dir, "train.jsonl")
    dev_path = os.path.join(out_dir, "dev.jsonl")
    write_jsonl(train_path, train_raw)
    write_jsonl(dev_path, dev_raw)
    return GeneratedCorpus(out_dir, train_path, dev_path, vocab_path,
                           schema_dir, db_dir, schemas, db_paths)


def corpus_stats(jsonl_path: str) -> dict:
    n = 0
    total_cols = 0
    total_pos = 0
    with open(jsonl_path) as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            n += 1
            total_cols += len(obj["label"])
            total_pos += sum(obj["label"])
    return {
        "examples": n,
        "avg_columns": total_cols / n if n else 0.0,
        "positive_rate": total_pos / total_cols if total_cols else 0.0,
    }


def load_schemas(schema_dir: str) -> dict[str, SchemaDocument]:
    out = {}
    for fname in sorted(os.listdir(schema_dir)):
        if fname.endswith(".json"):
            out[fname[:-5]] = SchemaDocument.load(os.path.join(schema_dir, fname))
    return out
