"""Command output: frozen table layouts, CSV/JSON rendering and parsing.

CSV layout::

    # seed=0
    # table=voltages
    bus,V_d,V_q,abs_V,angle
    1,1.0,0.0,1.0,0.0

    # table=...

Metadata lines start with ``#``; tables are separated by a blank line.
Key/value tables (columns ``key,value``) are merged into the top level of
the JSON form; all other tables become lists of records.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
from dataclasses import dataclass, field

__all__ = ["Table", "Output", "LAYOUTS", "fmt", "render_csv", "render_json", "parse_csv",
           "parse_json", "parse", "validate"]

KV = ("key", "value")
VOLTAGES = ("bus", "V_d", "V_q", "abs_V", "angle")

# command -> table -> frozen column order; "*" marks variable-name columns
LAYOUTS: dict[str, dict[str, tuple]] = {
    "validate": {"summary": KV},
    "solve": {"summary": KV, "voltages": VOLTAGES},
    "solve-all": {"summary": KV,
                  "solutions": ("id", "real", "singular", "residual", "arrivals", "*"),
                  "real_solutions": ("id", "*")},
    "bounds": {"bounds": KV},
    "groebner": {"summary": KV, "basis": ("index", "polynomial")},
    "loadability": {"boundary": ("V", "P_L", "Q_L")},
    "load-equivalent": {"curve": ("V", "P", "Q")},
    "moment": {"summary": KV, "voltages": VOLTAGES},
    "sdp-solve": {"summary": KV, "solution": ("index", "value")},
}

# tables that may be absent (e.g. no extraction when the relaxation is not exact)
OPTIONAL = {("moment", "voltages"), ("solve-all", "real_solutions")}


def fmt(x) -> str:
    """Shortest round-trip text for numbers; booleans as 0/1."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x + 0.0)
    return str(x)


@dataclass
class Table:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]


@dataclass
class Output:
    command: str
    seed: int
    tables: list[Table]

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def has(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)


def render_csv(out: Output) -> str:
    buf = io.StringIO()
    buf.write(f"# command={out.command}\n# seed={out.seed}\n")
    for k, t in enumerate(out.tables):
        if k:
            buf.write("\n")
        buf.write(f"# table={t.name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(t.columns)
        for r in t.rows:
            w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return fmt(v)
    return v


def render_json(out: Output) -> str:
    doc: dict = {"command": out.command, "seed": out.seed}
    for t in out.tables:
        if t.columns == KV:
            for k, v in t.rows:
                doc[k] = _json_value(v)
        else:
            doc[t.name] = {"columns": list(t.columns),
                           "rows": [[_json_value(v) for v in r] for r in t.rows]}
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def parse_csv(text: str) -> Output:
    command, seed = None, None
    tables: list[Table] = []
    current: Table | None = None
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key == "command":
                command = val
            elif key == "seed":
                seed = int(val)
            elif key == "table":
                current = Table(val, ())
                tables.append(current)
            continue
        if not line.strip():
            current = None
            continue
        if current is None:
            raise ValueError(f"data line outside a table: {line!r}")
        row = next(csv.reader([line]))
        if not current.columns:
            current.columns = tuple(row)
        else:
            if len(row) != len(current.columns):
                raise ValueError(f"table {current.name}: expected {len(current.columns)} fields")
            current.rows.append(tuple(row))
    if command is None or seed is None:
        raise ValueError("missing command or seed header")
    return Output(command, seed, tables)


def parse_json(text: str) -> Output:
    doc = json.loads(text)
    command, seed = doc.pop("command"), int(doc.pop("seed"))
    layout = LAYOUTS.get(command, {})
    kv_name = next((n for n, cols in layout.items() if cols == KV), "summary")
    tables: list[Table] = []
    kv = Table(kv_name, KV)
    for k, v in doc.items():
        if isinstance(v, dict) and "columns" in v:
            tables.append(Table(k, tuple(v["columns"]), [tuple(r) for r in v["rows"]]))
        else:
            kv.rows.append((k, v))
    if kv.rows or kv_name in layout:
        tables.insert(0, kv)
    return Output(command, seed, tables)


def parse(text: str) -> Output:
    return parse_json(text) if text.lstrip().startswith("{") else parse_csv(text)


def validate(out: Output) -> None:
    """Raise ``ValueError`` unless ``out`` matches the frozen layout of its command."""
    layout = LAYOUTS.get(out.command)
    if layout is None:
        raise ValueError(f"unknown command {out.command!r}")
    names = [t.name for t in out.tables]
    for name in names:
        if name not in layout:
            raise ValueError(f"unexpected table {name!r} for {out.command}")
    for name, cols in layout.items():
        if name not in names:
            if (out.command, name) in OPTIONAL:
                continue
            raise ValueError(f"missing table {name!r}")
        t = out.table(name)
        fixed = cols[:-1] if cols[-1] == "*" else cols
        if tuple(t.columns[:len(fixed)]) != fixed or (cols[-1] != "*" and len(t.columns) != len(cols)):
            raise ValueError(f"table {name!r} has columns {t.columns}, expected {cols}")
        for r in t.rows:
            if len(r) != len(t.columns):
                raise ValueError(f"ragged row in {name!r}")
        for col in fixed:
            if col in ("key", "value", "polynomial", "bus", "index", "id"):
                continue
            for r in t.records():
                float(r[col])
