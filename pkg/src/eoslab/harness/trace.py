"""Trace rows, CSV serialisation and JSON reports."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import List, Optional

__all__ = [
    "TraceRow",
    "TRACE_COLUMNS",
    "write_csv",
    "read_csv",
    "dumps_csv",
    "loads_csv",
    "write_table",
    "trace_to_json",
    "trace_from_json",
    "write_report",
    "read_report",
    "SCHEMA",
]

SCHEMA = 1


@dataclass
class TraceRow:
    t: int
    train_loss: float
    test_loss: Optional[float] = None
    w_norm: Optional[float] = None
    eff_lr: Optional[float] = None
    two_over_eff_lr: Optional[float] = None
    sph_sharpness: Optional[float] = None
    # "phi" when measured at the projection, "theta" at the iterate
    sharpness_at: str = ""
    h: Optional[float] = None
    u: Optional[float] = None
    misalignment: Optional[float] = None
    dist_to_target: Optional[float] = None


TRACE_COLUMNS = [f.name for f in fields(TraceRow)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool,)) or isinstance(v, int):
        return str(int(v))
    # repr gives the shortest string that round-trips
    return repr(float(v))


def _parse(name, s):
    if name == "t":
        return int(s)
    if name == "sharpness_at":
        return s
    if s == "":
        return None
    return float(s)


def write_table(fh, columns, rows):
    """Write dict-like or dataclass rows as CSV with the given header."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r) if hasattr(r, "__dataclass_fields__") else r
        w.writerow([_fmt(d[c]) for c in columns])


def dumps_csv(rows: List[TraceRow]):
    buf = io.StringIO()
    write_table(buf, TRACE_COLUMNS, rows)
    return buf.getvalue()


def loads_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace header {header}")
    return [TraceRow(**{c: _parse(c, s) for c, s in zip(header, rec)}) for rec in reader]


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(dumps_csv(rows))


def read_csv(path):
    with open(path, newline="") as fh:
        return loads_csv(fh.read())


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def trace_to_json(rows):
    return [{k: _json_safe(v) for k, v in asdict(r).items()} for r in rows]


def trace_from_json(items):
    out = []
    for d in items:
        d = {k: (float(v) if isinstance(v, str) and k != "sharpness_at" else v) for k, v in d.items()}
        out.append(TraceRow(**d))
    return out


def write_report(path, report: dict):
    report = dict(report)
    report.setdefault("schema", SCHEMA)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _default(o):
    try:
        import numpy as np

        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_report(path):
    with open(path) as fh:
        rep = json.load(fh)
    if rep.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {rep.get('schema')!r}")
    return rep
