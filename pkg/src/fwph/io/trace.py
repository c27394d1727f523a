"""CSV traces, one row per outer iteration."""
from __future__ import annotations

import csv
import io

HEADER = ["iter", "wall_s", "phi", "best_phi", "residual", "milp_solves", "vertices", "flags"]


def _num(v) -> str:
    return repr(float(v))


def trace_rows(records):
    for r in records:
        yield [str(r.k), f"{r.wall:.6f}", _num(r.phi), _num(r.best_phi), _num(r.residual),
               str(r.milp_solves), str(r.vertices), ";".join(r.flags)]


def write_trace(records, path_or_file) -> None:
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "w", newline="") as fh:
            write_trace(records, fh)
        return
    w = csv.writer(path_or_file, lineterminator="\n")
    w.writerow(HEADER)
    w.writerows(trace_rows(records))


def trace_text(records) -> str:
    buf = io.StringIO()
    write_trace(records, buf)
    return buf.getvalue()


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != HEADER:
            raise ValueError(f"unexpected trace header {rd.fieldnames}")
        return list(rd)
