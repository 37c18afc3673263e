"""Neighboring-dataset generation for audits.

Supports the two standard adjacency models: add/remove (unbounded; sizes
differ by one) and replace-one (bounded; equal sizes, exactly one row
differs). Beyond benign mutations, the pathological strategies inject the
values that break real implementations: NaN, +/-inf, the largest finite
double, and values outside the column's implied domain.

Everything is a pure function of (dataset, model, strategy, seed).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .canonical import canonical_dumps, canonical_loads

__all__ = [
    "ColumnSpec",
    "TabularDataset",
    "AdjacencyModel",
    "gen_synthetic",
    "gen_neighbors",
    "is_neighbor_pair",
    "ADD_REMOVE_STRATEGIES",
    "REPLACE_ONE_STRATEGIES",
]

FLOAT_MAX = float(np.finfo(np.float64).max)


@dataclass(frozen=True)
class ColumnSpec:
    """Declared attribute: integer-categorical or real, with public bounds."""

    name: str
    kind: str  # "int" | "real"
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.kind not in ("int", "real"):
            raise ValueError(f"column kind must be 'int' or 'real', got {self.kind!r}")
        if not self.lo <= self.hi:
            raise ValueError(f"column {self.name}: lo {self.lo} > hi {self.hi}")


class AdjacencyModel(enum.Enum):
    ADD_REMOVE = "add-remove"
    REPLACE_ONE = "replace-one"


class TabularDataset:
    """Column-major table with a fixed schema."""

    def __init__(self, schema: Iterable[ColumnSpec], columns: dict):
        self.schema = tuple(schema)
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        if set(columns) != set(names):
            raise ValueError(f"columns {sorted(columns)} do not match schema {names}")
        sizes = {len(v) for v in columns.values()}
        if len(sizes) > 1:
            raise ValueError("ragged columns")
        self.columns = {name: list(columns[name]) for name in names}

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __len__(self) -> int:
        return self.n_rows

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    def row(self, i: int) -> tuple:
        return tuple(self.columns[c.name][i] for c in self.schema)

    def rows(self) -> list:
        return [self.row(i) for i in range(self.n_rows)]

    def with_row_added(self, row: tuple) -> "TabularDataset":
        cols = {c.name: self.columns[c.name] + [row[j]] for j, c in enumerate(self.schema)}
        return TabularDataset(self.schema, cols)

    def with_row_removed(self, i: int) -> "TabularDataset":
        if not 0 <= i < self.n_rows:
            raise IndexError(f"row {i} out of range for {self.n_rows} rows")
        cols = {
            c.name: self.columns[c.name][:i] + self.columns[c.name][i + 1 :]
            for c in self.schema
        }
        return TabularDataset(self.schema, cols)

    def with_row_replaced(self, i: int, row: tuple) -> "TabularDataset":
        if not 0 <= i < self.n_rows:
            raise IndexError(f"row {i} out of range for {self.n_rows} rows")
        cols = {}
        for j, c in enumerate(self.schema):
            vals = list(self.columns[c.name])
            vals[i] = row[j]
            cols[c.name] = vals
        return TabularDataset(self.schema, cols)

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "schema": [
                {"name": c.name, "kind": c.kind, "lo": c.lo, "hi": c.hi} for c in self.schema
            ],
            "columns": self.columns,
        }
        return canonical_dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TabularDataset":
        doc = canonical_loads(text)
        schema = [ColumnSpec(c["name"], c["kind"], c["lo"], c["hi"]) for c in doc["schema"]]
        return cls(schema, doc["columns"])

    def to_dsv(self, sep: str = "\t") -> str:
        header = sep.join(c.name for c in self.schema)
        lines = [header]
        for i in range(self.n_rows):
            lines.append(sep.join(_cell_token(v) for v in self.row(i)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dsv(cls, text: str, schema: Iterable[ColumnSpec], sep: str = "\t") -> "TabularDataset":
        schema = tuple(schema)
        lines = [ln for ln in text.split("\n") if ln != ""]
        header = lines[0].split(sep)
        if header != [c.name for c in schema]:
            raise ValueError(f"header {header} does not match schema")
        columns = {c.name: [] for c in schema}
        for ln in lines[1:]:
            cells = ln.split(sep)
            if len(cells) != len(schema):
                raise ValueError(f"row has {len(cells)} cells, expected {len(schema)}")
            for c, cell in zip(schema, cells):
                columns[c.name].append(_cell_parse(cell, c.kind))
        return cls(schema, columns)


def _cell_token(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return repr(v)
    return str(v)


def _cell_parse(token: str, kind: str):
    if token == "NaN":
        return float("nan")
    if token == "Infinity":
        return float("inf")
    if token == "-Infinity":
        return float("-inf")
    if kind == "int":
        try:
            return int(token)
        except ValueError:
            return float(token)  # injected out-of-kind value
    return float(token)


def default_schema() -> list:
    """Two small categorical attributes, the shape used throughout the tests."""
    return [ColumnSpec("a", "int", 0, 4), ColumnSpec("b", "int", 0, 9)]


def gen_synthetic(seed: int, n: int, schema: Optional[Iterable[ColumnSpec]] = None) -> TabularDataset:
    """Seeded uniform table: integers in [lo, hi] for int columns, uniform
    reals for real columns."""
    if n < 1:
        raise ValueError("need at least one row")
    schema = tuple(default_schema() if schema is None else schema)
    if not schema:
        raise ValueError("schema must name at least one column")
    r = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), 0x5D))))
    columns = {}
    for c in schema:
        if c.kind == "int":
            columns[c.name] = [int(v) for v in r.integers(int(c.lo), int(c.hi) + 1, size=n)]
        else:
            columns[c.name] = [float(v) for v in r.uniform(c.lo, c.hi, size=n)]
    return TabularDataset(schema, columns)


def _sample_row(r: np.random.Generator, schema) -> tuple:
    row = []
    for c in schema:
        if c.kind == "int":
            row.append(int(r.integers(int(c.lo), int(c.hi) + 1)))
        else:
            row.append(float(r.uniform(c.lo, c.hi)))
    return tuple(row)


def _marginal_row(r: np.random.Generator, data: TabularDataset) -> tuple:
    """Each attribute drawn independently from the dataset's empirical
    marginal (our reading of "marginal sampling")."""
    row = []
    for c in data.schema:
        vals = data.columns[c.name]
        row.append(vals[int(r.integers(0, len(vals)))])
    return tuple(row)


def _inject_row(r: np.random.Generator, data: TabularDataset, value: float) -> tuple:
    """A fresh row with `value` planted in one (seed-chosen) column."""
    row = list(_sample_row(r, data.schema))
    col = int(r.integers(0, len(data.schema)))
    row[col] = value
    return tuple(row)


def _out_of_domain_value(data: TabularDataset, col: ColumnSpec) -> float:
    span = max(col.hi - col.lo, 1.0)
    return col.hi + 10.0 * span


ADD_REMOVE_STRATEGIES = (
    "remove_random",
    "add_uniform",
    "add_marginal",
    "add_duplicate",
    "add_float_limit",
    "add_out_of_domain",
    "add_nan",
    "add_inf",
)

REPLACE_ONE_STRATEGIES = ("replace_combined",)


def gen_neighbors(
    data: TabularDataset,
    model: AdjacencyModel,
    strategy: str,
    seed: int,
    count: int = 5,
) -> list:
    """Generate `count` neighboring pairs (data, data_prime).

    Add/remove pairs differ in size by exactly one row; replace-one pairs
    have equal sizes and exactly one differing row. Pathological strategies
    guarantee the injected value is present in data_prime.
    """
    if model is AdjacencyModel.ADD_REMOVE:
        valid = ADD_REMOVE_STRATEGIES
    else:
        valid = REPLACE_ONE_STRATEGIES
    if strategy not in valid:
        raise ValueError(f"strategy {strategy!r} not valid for {model.value}: {valid}")
    strategy_tag = int.from_bytes(hashlib.blake2b(strategy.encode(), digest_size=4).digest(), "big")
    r = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((int(seed), strategy_tag)))
    )
    pairs = []
    for _ in range(count):
        pairs.append((data, _one_neighbor(r, data, model, strategy)))
    return pairs


def _one_neighbor(r, data: TabularDataset, model: AdjacencyModel, strategy: str) -> TabularDataset:
    if model is AdjacencyModel.REPLACE_ONE:
        # remove-then-add composition on the same index
        if data.n_rows == 0:
            raise ValueError("cannot replace a row in an empty dataset")
        idx = int(r.integers(0, data.n_rows))
        new_row = _sample_row(r, data.schema)
        while new_row == data.row(idx):
            new_row = _sample_row(r, data.schema)
        return data.with_row_replaced(idx, new_row)

    if strategy == "remove_random":
        if data.n_rows == 0:
            raise ValueError("cannot remove a row from an empty dataset")
        return data.with_row_removed(int(r.integers(0, data.n_rows)))
    if strategy == "add_uniform":
        return data.with_row_added(_sample_row(r, data.schema))
    if strategy == "add_marginal":
        return data.with_row_added(_marginal_row(r, data))
    if strategy == "add_duplicate":
        return data.with_row_added(data.row(int(r.integers(0, data.n_rows))))
    if strategy == "add_float_limit":
        sign = 1.0 if r.random() < 0.5 else -1.0
        return data.with_row_added(_inject_row(r, data, sign * FLOAT_MAX))
    if strategy == "add_out_of_domain":
        col_idx = int(r.integers(0, len(data.schema)))
        value = _out_of_domain_value(data, data.schema[col_idx])
        row = list(_sample_row(r, data.schema))
        row[col_idx] = value
        return data.with_row_added(tuple(row))
    if strategy == "add_nan":
        return data.with_row_added(_inject_row(r, data, float("nan")))
    if strategy == "add_inf":
        sign = 1.0 if r.random() < 0.5 else -1.0
        return data.with_row_added(_inject_row(r, data, sign * float("inf")))
    raise ValueError(f"unknown strategy {strategy!r}")


def is_neighbor_pair(a: TabularDataset, b: TabularDataset, model: AdjacencyModel) -> bool:
    """Machine check of the adjacency predicate."""
    if model is AdjacencyModel.ADD_REMOVE:
        if abs(a.n_rows - b.n_rows) != 1:
            return False
        small, big = (a, b) if a.n_rows < b.n_rows else (b, a)
        # the smaller dataset must be the larger one minus a single row
        big_rows = [_row_key(rw) for rw in big.rows()]
        small_rows = [_row_key(rw) for rw in small.rows()]
        for i in range(len(big_rows)):
            if big_rows[:i] + big_rows[i + 1 :] == small_rows:
                return True
        # fall back to multiset comparison (row order may differ)
        from collections import Counter

        diff = Counter(big_rows) - Counter(small_rows)
        return sum(diff.values()) == 1 and not (Counter(small_rows) - Counter(big_rows))
    if a.n_rows != b.n_rows:
        return False
    differing = sum(1 for i in range(a.n_rows) if _row_key(a.row(i)) != _row_key(b.row(i)))
    return differing == 1


def _row_key(row: tuple) -> tuple:
    return tuple("NaN" if isinstance(v, float) and math.isnan(v) else v for v in row)
