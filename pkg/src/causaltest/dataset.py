"""Immutable columnar tables of observational runs."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
KINDS = (NUMERIC, CATEGORICAL)

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")


class DataError(ValueError):
    pass


class UnknownColumnError(DataError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown column {name!r}")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True, eq=False)
class Column:
    """Numeric columns hold float64 with NaN for missing; categorical columns hold str or None."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown column kind {self.kind!r}")
        if self.kind == NUMERIC:
            arr = np.array(self.values, dtype=float)
        else:
            arr = np.empty(len(self.values), dtype=object)
            for i, v in enumerate(self.values):
                arr[i] = None if v is None or (isinstance(v, float) and math.isnan(v)) else str(v)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return len(self.values)

    @property
    def missing(self) -> np.ndarray:
        if self.kind == NUMERIC:
            return np.isnan(self.values)
        return np.array([v is None for v in self.values], dtype=bool)

    @property
    def levels(self) -> list[str]:
        if self.kind != CATEGORICAL:
            raise DataError("numeric columns have no levels")
        return sorted({v for v in self.values if v is not None})

    def take(self, index) -> "Column":
        return Column(self.kind, self.values[index])

    def equals(self, other: "Column") -> bool:
        if self.kind != other.kind or len(self) != len(other):
            return False
        if self.kind == NUMERIC:
            return bool(np.array_equal(self.values, other.values, equal_nan=True))
        return list(self.values) == list(other.values)


class Dataset:
    """An immutable ordered mapping of column name to :class:`Column`."""

    def __init__(self, columns: Mapping[str, Column]):
        lengths = {len(c) for c in columns.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have differing lengths {sorted(lengths)}")
        for name in columns:
            if not name:
                raise DataError("column names must be nonempty")
        self._columns = MappingProxyType(dict(columns))
        self.row_count = lengths.pop() if lengths else 0

    @classmethod
    def from_dict(cls, data: Mapping[str, Sequence], kinds: Mapping[str, str] | None = None) -> "Dataset":
        kinds = kinds or {}
        cols = {}
        for name, values in data.items():
            kind = kinds.get(name)
            if kind is None:
                kind = CATEGORICAL if any(isinstance(v, str) for v in values) else NUMERIC
            cols[name] = Column(kind, values)
        return cls(cols)

    @property
    def columns(self) -> Mapping[str, Column]:
        return self._columns

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __getitem__(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise UnknownColumnError(name) from None

    def __len__(self):
        return self.row_count

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.names != other.names:
            return False
        return all(self[n].equals(other[n]) for n in self.names)

    def __repr__(self):
        cols = ", ".join(f"{n}:{c.kind[0]}" for n, c in self._columns.items())
        return f"Dataset({self.row_count} rows; {cols})"

    def numeric(self, name: str) -> np.ndarray:
        col = self[name]
        if col.kind != NUMERIC:
            raise DataError(f"column {name!r} is categorical")
        return col.values

    def take(self, index) -> "Dataset":
        return Dataset({n: c.take(index) for n, c in self._columns.items()})

    def select(self, names: Iterable[str]) -> "Dataset":
        return Dataset({n: self[n] for n in names})

    def drop(self, names: Iterable[str]) -> "Dataset":
        gone = set(names)
        return Dataset({n: c for n, c in self._columns.items() if n not in gone})

    def with_column(self, name: str, column: Column) -> "Dataset":
        cols = dict(self._columns)
        cols[name] = column
        return Dataset(cols)

    def complete_rows(self, names: Iterable[str]) -> tuple["Dataset", int]:
        """Drop rows with a missing value in any of ``names``; also return how many were dropped."""
        mask = np.zeros(self.row_count, dtype=bool)
        for name in names:
            mask |= self[name].missing
        if not mask.any():
            return self, 0
        return self.take(np.flatnonzero(~mask)), int(mask.sum())


def concat(parts: Sequence[Dataset]) -> Dataset:
    if not parts:
        raise DataError("nothing to concatenate")
    names = parts[0].names
    cols = {}
    for name in names:
        kind = parts[0][name].kind
        cols[name] = Column(kind, np.concatenate([p[name].values for p in parts]))
    return Dataset(cols)


def parse_number(cell: str) -> float:
    if not _NUMBER.match(cell):
        raise ValueError(cell)
    return float(cell)


def load_csv(text: str, schema: Mapping[str, str] | None = None) -> Dataset:
    """Parse RFC-4180 CSV with a header row; empty cells are missing.

    Columns absent from ``schema`` are numeric when every non-empty cell
    parses as a decimal number, categorical otherwise.
    """
    rows = list(csv.reader(io.StringIO(text)))
    while rows and not rows[-1]:
        rows.pop()
    if not rows:
        raise DataError("CSV has no header row")
    header, body = rows[0], rows[1:]
    seen = set()
    for name in header:
        if name in seen:
            raise DataError(f"duplicate column {name!r}")
        if not name:
            raise DataError("empty column name in header")
        seen.add(name)
    schema = dict(schema or {})
    for name, kind in schema.items():
        if name not in seen:
            raise DataError(f"schema references missing column {name!r}")
        if kind not in KINDS:
            raise DataError(f"schema gives unknown kind {kind!r} for {name!r}")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"row {lineno} has {len(row)} cells, expected {len(header)}")

    cols = {}
    for j, name in enumerate(header):
        cells = [row[j] for row in body]
        kind = schema.get(name)
        if kind is None:
            kind = NUMERIC if all(c == "" or _NUMBER.match(c) for c in cells) else CATEGORICAL
        if kind == NUMERIC:
            values = []
            for i, c in enumerate(cells, start=2):
                if c == "":
                    values.append(math.nan)
                    continue
                try:
                    values.append(parse_number(c))
                except ValueError:
                    raise DataError(f"row {i}: non-numeric value {c!r} in numeric column {name!r}") from None
            cols[name] = Column(NUMERIC, values)
        else:
            cols[name] = Column(CATEGORICAL, [c if c != "" else None for c in cells])
    return Dataset(cols)


def read_csv(path, schema: Mapping[str, str] | None = None) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return load_csv(fh.read(), schema)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(d: Dataset) -> str:
    """Serialize with shortest round-trip float formatting; missing values become empty cells."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(d.names)
    cols = [d[n].values for n in d.names]
    for i in range(d.row_count):
        writer.writerow([_format(c[i].item() if isinstance(c[i], np.generic) else c[i]) for c in cols])
    return buf.getvalue()


def schema_of(d: Dataset) -> dict[str, str]:
    return {n: c.kind for n, c in d.columns.items()}


def stratify(d: Dataset, by: str) -> dict[str, Dataset]:
    """Partition the rows with a non-missing ``by`` value, one stratum per level."""
    col = d[by]
    if col.kind != CATEGORICAL:
        raise DataError(f"cannot stratify by numeric column {by!r}")
    index: dict[str, list[int]] = {level: [] for level in col.levels}
    for i, v in enumerate(col.values):
        if v is not None:
            index[v].append(i)
    return {level: d.take(np.array(rows, dtype=int)) for level, rows in index.items()}


@dataclass(frozen=True)
class PositivityReport:
    variable: str
    observed_levels: list
    missing_levels: list
    per_level_counts: dict
    missing_entries: int = 0

    @property
    def ok(self) -> bool:
        return not self.missing_levels

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "observed_levels": [_level_key(x) for x in self.observed_levels],
            "missing_levels": [_level_key(x) for x in self.missing_levels],
            "per_level_counts": {_level_key(k): v for k, v in self.per_level_counts.items()},
            "missing_entries": self.missing_entries,
        }


def _level_key(level) -> str:
    if isinstance(level, tuple):
        return f"[{level[0]!r}, {level[1]!r}]"
    return str(level)


def positivity_check(d: Dataset, variable: str, required_levels: Sequence = ()) -> PositivityReport:
    """Count observations per level and list required levels that never occur.

    For numeric variables ``required_levels`` are sorted interval endpoints;
    intervals are half-open except the last, which is closed.
    """
    col = d[variable]
    missing = col.missing
    if col.kind == CATEGORICAL:
        counts: dict = {}
        for v in col.values:
            if v is not None:
                counts[v] = counts.get(v, 0) + 1
        counts = {k: counts[k] for k in sorted(counts)}
        for level in required_levels:
            counts.setdefault(level, 0)
        gaps = [lv for lv in required_levels if counts[lv] == 0]
        observed = sorted(k for k, v in counts.items() if v > 0)
    else:
        edges = sorted(float(e) for e in required_levels)
        if len(edges) < 2:
            raise DataError("numeric positivity needs at least two interval endpoints")
        x = col.values[~missing]
        counts = {}
        for k, (lo, hi) in enumerate(zip(edges, edges[1:])):
            last = k == len(edges) - 2
            inside = (x >= lo) & ((x <= hi) if last else (x < hi))
            counts[(lo, hi)] = int(inside.sum())
        gaps = [iv for iv, c in counts.items() if c == 0]
        observed = [iv for iv, c in counts.items() if c > 0]
    return PositivityReport(variable, observed, gaps, counts, int(missing.sum()))
