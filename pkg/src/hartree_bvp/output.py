"""CSV and JSON emission of diagnostics rows and run summaries.

Floats are written with ``repr``, which is the shortest decimal string that
reads back to the same double, so a CSV round trip is bit-exact. Complex
columns (the virial ones) are written as Python complex literals such as
``0.25-1.5j``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SCHEMA, format_config
from .diagnostics import CSV_COLUMNS, VIRIAL_TERMS, DiagnosticsRow

TRUNCATION_MARKER = "#TRUNCATED"
COMPLEX_COLUMNS = ("virial_lhs", "virial_rhs", "virial_res")
INT_COLUMNS = ("step", "picard_iters")


class EmitError(OSError):
    """Writing an output file failed; the message names the path."""


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (complex, np.complexfloating)):
        v = complex(v)
        return repr(v).strip("()")
    return repr(float(v))


def _parse_value(column: str, text: str):
    if column in INT_COLUMNS:
        return int(text)
    if column in COMPLEX_COLUMNS:
        return complex(text)
    return float(text)


def _open(path: Path, mode: str = "w"):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="")
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_csv(rows, path, truncated_at: float | None = None, reason: str = "") -> Path:
    """Write rows under the fixed header; optionally end with a truncation marker row.

    The marker row has the full column count: the marker, the time at which
    the run stopped, the reason, and empty cells.
    """
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([format_value(v) for v in r.csv_values()])
        if truncated_at is not None:
            marker = [TRUNCATION_MARKER, format_value(truncated_at), reason]
            w.writerow(marker + [""] * (len(CSV_COLUMNS) - len(marker)))
    return path


@dataclass
class CsvContents:
    rows: list
    truncated: bool
    truncated_at: float | None = None
    reason: str = ""


def read_csv(path) -> CsvContents:
    """Read a diagnostics CSV back into rows (virial term breakdown is not stored)."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise EmitError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            if rec and rec[0] == TRUNCATION_MARKER:
                return CsvContents(rows, True, float(rec[1]), rec[2])
            values = {c: _parse_value(c, x) for c, x in zip(CSV_COLUMNS, rec)}
            rows.append(DiagnosticsRow(**values))
    return CsvContents(rows, False)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": _jsonable(v.real), "im": _jsonable(v.imag)}
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def row_dict(r: DiagnosticsRow) -> dict:
    d = {c: getattr(r, c) for c in CSV_COLUMNS}
    d["apriori_lhs"] = r.apriori_lhs
    d["apriori_rhs"] = r.apriori_rhs
    d["virial_terms"] = {name: r.virial_terms.get(name, 0j) for name in VIRIAL_TERMS}
    return d


def write_json(obj, path) -> Path:
    path = Path(path)
    with _open(path) as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")
    return path


def emit(rows, fmt: str, path, truncated_at: float | None = None, reason: str = "") -> Path:
    """Write diagnostics rows as ``csv`` or ``json``."""
    if fmt == "csv":
        return write_csv(rows, path, truncated_at, reason)
    if fmt == "json":
        doc = {"columns": list(CSV_COLUMNS), "rows": [row_dict(r) for r in rows]}
        if truncated_at is not None:
            doc["truncated"] = {"t": truncated_at, "reason": reason}
        return write_json(doc, path)
    raise ValueError(f"unknown output format {fmt!r}")


def config_echo(cfg) -> dict:
    """Flat ``key -> text`` view of a config, the same strings the parser reads."""
    lines = format_config(cfg).splitlines()
    out = {}
    for line in lines:
        key, _, value = line.partition(" = ")
        if key in SCHEMA:
            out[key] = value
    return out


def virial_breakdown(rows) -> dict:
    """Per-term max modulus and final value of the eight virial right-side terms."""
    out = {}
    for name in VIRIAL_TERMS:
        vals = [r.virial_terms.get(name, 0j) for r in rows]
        out[name] = {
            "max_abs": max((abs(v) for v in vals), default=0.0),
            "final": vals[-1] if vals else 0j,
        }
    return out
