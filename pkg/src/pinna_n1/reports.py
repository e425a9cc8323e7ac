"""CSV report writers and readers.

Every file starts with two comment lines: the schema name and version,
then a JSON echo of the configuration that produced it. Floats are
written with ``repr`` so values round-trip exactly and identical runs give
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ._io import atomic_write_text
from .experiments import JND_OCTAVE_RANGE, ErrorReport, OverlapRow, jnd_annotation

SCHEMA_VERSION = 1

RUN_COLUMNS = ("dataset", "model", "protocol", "size", "seed", "rms_hz", "rms_octave", "n_test", "n_train")
SUMMARY_COLUMNS = (
    "dataset", "model", "protocol", "size", "n_runs", "rms_hz", "rms_octave", "n_test", "jnd", "seeds", "note",
)
CURVE_COLUMNS = ("dataset", "model", "size", "n_runs", "mean_rms_hz", "sem_rms_hz", "mean_rms_octave", "jnd")
OVERLAP_COLUMNS = (
    "feature", "overlap", "n_bins", "bin_width", "a_min", "a_max", "a_mean", "b_min", "b_max", "b_mean",
)
EXTRACTION_COLUMNS = (
    "subject_id", "ear", "p1_hz", "p1_db", "n1_hz", "n1_db", "depth_db", "prominent", "retained", "status",
)


class ReportError(ValueError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render(schema: str, columns: Sequence[str], rows: Iterable[Sequence], config: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: pinna-n1/{schema} v{SCHEMA_VERSION}\n")
    buf.write("# config: " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path: str | Path, schema: str, columns: Sequence[str], rows: Iterable[Sequence], config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, render(schema, columns, rows, config))
    return path


def read_csv(path: str | Path) -> tuple[str, dict, list[dict]]:
    """Return (schema, config, rows) of a file written by :func:`write_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 3 or not lines[0].startswith("# schema: ") or not lines[1].startswith("# config: "):
        raise ReportError(f"{path}: not a pinna-n1 report")
    schema = lines[0][len("# schema: "):]
    config = json.loads(lines[1][len("# config: "):])
    rows = list(csv.DictReader(lines[2:]))
    return schema, config, rows


def run_rows(reports: Iterable[ErrorReport]) -> list[tuple]:
    rows = []
    for rep in reports:
        for r in rep.runs:
            rows.append((rep.dataset, rep.model, rep.protocol, r.size, r.seed, r.rms_hz, r.rms_octave, r.n_test, r.n_train))
    return rows


def summary_rows(reports: Iterable[ErrorReport]) -> list[tuple]:
    return [
        (
            rep.dataset, rep.model, rep.protocol, rep.size, len(rep.runs), rep.rms_hz, rep.rms_octave,
            rep.n_test, rep.jnd, " ".join(str(s) for s in rep.seeds), rep.note,
        )
        for rep in reports
    ]


def overlap_rows(rows: Iterable[OverlapRow]) -> list[tuple]:
    return [
        (r.feature, r.overlap, r.n_bins, r.bin_width, r.a_min, r.a_max, r.a_mean, r.b_min, r.b_max, r.b_mean)
        for r in rows
    ]


def curves_from_runs(rows: Sequence[dict]) -> list[tuple]:
    """Mean and standard error of RMS per (dataset, model, size), sizes ascending."""
    groups: dict[tuple[str, str, int], list[tuple[float, float]]] = {}
    for r in rows:
        if not r.get("size"):
            continue
        key = (r["dataset"], r["model"], int(r["size"]))
        groups.setdefault(key, []).append((float(r["rms_hz"]), float(r["rms_octave"])))
    if not groups:
        raise ReportError("no sized runs found; plot data needs sweep or leave-one-out runs")
    out = []
    for key in sorted(groups):
        v = np.array(groups[key])
        n = len(v)
        sem = float(np.std(v[:, 0], ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        mo = float(v[:, 1].mean())
        out.append((key[0], key[1], key[2], n, float(v[:, 0].mean()), sem, mo, jnd_annotation(mo)))
    return out


def table1_rows(
    methods: Sequence[str], datasets: Sequence[str], cells: dict[tuple[str, str], Optional[ErrorReport]]
) -> tuple[list[str], list[tuple]]:
    """Rows are methods, column pairs are datasets (RMS Hz, octave); missing cells are N/A."""
    columns = ["method"]
    for d in datasets:
        columns += [f"{d}_rms_hz", f"{d}_octave"]
    rows = []
    for m in methods:
        row: list = [m]
        for d in datasets:
            rep = cells.get((m, d))
            row += ["N/A", "N/A"] if rep is None else [rep.rms_hz, rep.rms_octave]
        rows.append(tuple(row))
    return columns, rows


JND_NOTE = f"JND for N1 is {JND_OCTAVE_RANGE[0]}-{JND_OCTAVE_RANGE[1]} octave"
