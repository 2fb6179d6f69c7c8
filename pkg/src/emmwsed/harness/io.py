"""CSV / JSON-lines output of experiment records."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

FORMATS = ("csv", "jsonl")


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return format(v, ".9g")
    return v


def _json_value(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return None if math.isnan(v) else float(format(v, ".9g"))
    return v


def render_results(records, record_type, fmt: str = "csv") -> str:
    """Serialize records of one dataclass type; columns follow the field order."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    names = [f.name for f in dataclasses.fields(record_type)]
    rows = [[getattr(r, n) for n in names] for r in records]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(names)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()
    return "".join(json.dumps(dict(zip(names, map(_json_value, row))), allow_nan=False) + "\n"
                   for row in rows)


def emit_results(records, path, record_type, fmt: str = "csv") -> Path:
    path = Path(path)
    text = render_results(records, record_type, fmt)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path, record_type, fmt: str = "csv") -> list:
    """Parse a file written by :func:`emit_results` back into records."""
    types = {f.name: f.type for f in dataclasses.fields(record_type)}

    def conv(name, v):
        t = str(types[name])
        if v is None:
            return math.nan
        if "float" in t:
            return float(v)
        if "int" in t:
            return int(v)
        return v

    text = Path(path).read_text()
    if fmt == "csv":
        rows = list(csv.DictReader(io.StringIO(text, newline="")))
    else:
        rows = [json.loads(line) for line in text.splitlines() if line]
    return [record_type(**{k: conv(k, v) for k, v in row.items()}) for row in rows]
