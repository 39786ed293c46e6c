"""Result tables, CSV serialization and metadata sidecars."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInputError


def format_value(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v
    if hasattr(v, "item"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def parse_value(text):
    try:
        n = int(text)
        if str(n) == text:  # keeps "-0" a float
            return n
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class Check:
    """One pass/fail verdict with the measured value and the threshold it was held to."""

    name: str
    passed: bool
    value: float
    threshold: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.6g} ({self.threshold})"


@dataclass
class ResultTable:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    status: str = "ok"

    def add(self, *values, **named):
        if named:
            if values:
                raise InvalidInputError("give values positionally or by name, not both")
            extra = set(named) - set(self.columns)
            if extra:
                raise InvalidInputError(f"unknown columns {sorted(extra)}")
            values = tuple(named.get(c, math.nan) for c in self.columns)
        if len(values) != len(self.columns):
            raise InvalidInputError(f"row has {len(values)} values for {len(self.columns)} columns")
        self.rows.append(tuple(values))

    def column(self, name):
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def check(self, name, passed, value, threshold):
        c = Check(name, bool(passed), float(value), threshold)
        self.checks.append(c)
        return c

    @property
    def passed(self):
        return self.status == "ok" and all(c.passed for c in self.checks)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_value(v) for v in r])
        return buf.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def read_csv(path_or_text, name="table"):
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InvalidInputError("empty CSV")
    table = ResultTable(name, rows[0])
    for r in rows[1:]:
        table.add(*(parse_value(v) for v in r))
    return table


def write_table(table: ResultTable, out_dir, extra_meta=None):
    """Write ``<name>.csv`` and ``<name>.meta.json``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{table.name}.csv"
    csv_path.write_text(table.to_csv())
    meta = dict(table.meta)
    meta.update(extra_meta or {})
    meta["csv_sha256"] = table.digest()
    meta["status"] = table.status
    meta["checks"] = [c.__dict__ for c in table.checks]
    meta_path = out / f"{table.name}.meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return [csv_path, meta_path]
