"""CSV ingestion and export, and report serialization."""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimators import Dataset, EstimateReport
from .graph import MGraph, parse_graph

MISSING = {"", "na", "nan"}
SIG_DIGITS = 10


class DataError(ValueError):
    """Unreadable or inconsistent data file."""


@dataclass(frozen=True)
class ColumnBinding:
    """Header names for each role. ``R=None`` derives selection from ``Y``."""

    W: tuple = ()
    Z: tuple = ()
    A: str = "A"
    R: str | None = "R"
    Y: str = "Y"

    def __post_init__(self):
        object.__setattr__(self, "W", tuple(self.W))
        object.__setattr__(self, "Z", tuple(self.Z))
        names = self.columns
        if len(set(names)) != len(names):
            dup = sorted({c for c in names if names.count(c) > 1})
            raise DataError(f"column(s) bound to more than one role: {dup}")

    @property
    def columns(self):
        return list(self.W) + list(self.Z) + [self.A] + ([self.R] if self.R else []) + [self.Y]


def _is_missing(text):
    return text.strip().lower() in MISSING


def read_csv(path, binding: ColumnBinding = ColumnBinding(), *, covariates=None) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    Missing outcomes may be written as an empty field, ``NA`` or ``NaN``
    (any case). Without a bound selection column, ``R`` is 1 exactly where
    ``Y`` is present. ``covariates`` optionally lists extra numeric columns to
    keep; by default every column other than the roles is kept when it parses.
    """
    text = Path(path).read_text() if not hasattr(path, "read") else path.read()
    reader = csv.reader(_io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty file") from None
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    derive_r = binding.R is None or binding.R not in header
    if binding.R is not None and binding.R not in header and binding.R != "R":
        raise DataError(f"bound column {binding.R!r} not in header")
    required = [c for c in binding.columns if not (derive_r and c == binding.R)]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"bound column(s) {missing} not in header")
    roles = {binding.A, binding.Y} | ({binding.R} if not derive_r else set())
    keep = [c for c in header if c in required or covariates is None or c in covariates]
    if covariates is not None:
        absent = sorted(set(covariates) - set(header))
        if absent:
            raise DataError(f"column(s) {absent} not in header")
    idx = {c: header.index(c) for c in keep}
    rows = [r for r in reader if any(x.strip() for x in r)]
    if not rows:
        raise DataError("no data rows")
    values = {c: np.empty(len(rows)) for c in keep}
    optional_bad = set()
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(row)}")
        for c in keep:
            raw = row[idx[c]]
            if _is_missing(raw):
                if c == binding.Y:
                    values[c][i - 1] = np.nan
                    continue
                if c in required:
                    raise DataError(f"row {i}: missing value in column {c!r}")
                optional_bad.add(c)
                continue
            try:
                values[c][i - 1] = float(raw)
            except ValueError:
                if c in required:
                    raise DataError(f"row {i}: cannot parse {raw!r} in column {c!r}") from None
                optional_bad.add(c)
                continue
            if c in roles - {binding.Y} and values[c][i - 1] not in (0.0, 1.0):
                raise DataError(f"row {i}: column {c!r} must be 0 or 1, found {raw!r}")
    for c in optional_bad:
        values.pop(c)
    Y = values.pop(binding.Y)
    if derive_r:
        R = (~np.isnan(Y)).astype(float)
    else:
        R = values.pop(binding.R)
        for i, (r, y) in enumerate(zip(R, Y), start=1):
            if r == 0 and not np.isnan(y):
                raise DataError(f"row {i}: outcome present although {binding.R}=0")
            if r == 1 and np.isnan(y):
                raise DataError(f"row {i}: outcome missing although {binding.R}=1")
    r_name = binding.R or "R"
    if derive_r and r_name in values:
        raise DataError(f"cannot derive selection column {r_name!r}: name already in use")
    cols = dict(values)
    cols[r_name] = R
    cols[binding.Y] = Y
    return Dataset(cols, exposure=binding.A, outcome=binding.Y, selection=r_name)


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return "" if not np.isfinite(x) else repr(float(x))
    return str(x)


def write_csv(data: Dataset, path=None, columns=None) -> str:
    """Write ``data`` with full float precision; missing outcomes become ``""``."""
    names = list(columns) if columns else list(data.columns)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    binary = {data.exposure, data.selection}
    for i in range(data.n):
        w.writerow([str(int(data.columns[c][i])) if c in binary else _cell(data.columns[c][i])
                    for c in names])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_graph(path) -> MGraph:
    return parse_graph(Path(path).read_text())


def _round(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.{SIG_DIGITS}g}") if math.isfinite(x) else None
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round(v) for v in x]
    return x


def dumps_json(obj) -> bytes:
    """Canonical JSON: rounded floats, NaN as null, insertion-ordered fields."""
    return (json.dumps(_round(obj), indent=2, allow_nan=False) + "\n").encode()


def _report_dict(rep: EstimateReport, include_eif):
    d = rep.to_dict(include_eif=include_eif)
    d["diagnostics"] = _round(d["diagnostics"])
    return d


def _summary_dict(summary):
    return {
        "scenario": summary.config.name,
        "config": summary.config.to_dict(),
        "psi_true": summary.psi_true,
        "psi_true_se": summary.psi_true_se,
        "truth_source": summary.truth_source,
        "sd_y": summary.sd_y,
        "estimators": [dataclasses.asdict(r) for r in summary.rows],
        "failures": {k: list(v) for k, v in summary.failures.items() if v},
    }


REPORT_FIELDS = ("method", "pair", "n", "psi", "se", "ci_lo", "ci_hi", "warnings")


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not math.isfinite(v) else f"{v:.{SIG_DIGITS}g}"
    if isinstance(v, (list, tuple)):
        return "; ".join(str(x) for x in v)
    return str(v)


def write_report(obj, fmt="json", include_eif=False) -> bytes:
    """Serialize estimate report(s) or a Monte Carlo summary.

    ``obj`` is an :class:`EstimateReport`, a list of them, or an
    ``McSummary``. JSON keeps a fixed field order; CSV has one row per
    report or estimator. Floats carry 10 significant digits.
    """
    from .simulate import McSummary

    if fmt not in ("json", "csv"):
        raise ValueError(f"format must be 'json' or 'csv', got {fmt!r}")
    if isinstance(obj, McSummary):
        if fmt == "json":
            return dumps_json(_summary_dict(obj))
        rows = [dataclasses.asdict(r) for r in obj.rows]
        for r in rows:
            r["psi_true"] = obj.psi_true
        fields = list(rows[0]) if rows else []
    else:
        reports = [obj] if isinstance(obj, EstimateReport) else list(obj)
        if fmt == "json":
            return dumps_json({"reports": [_report_dict(r, include_eif) for r in reports]})
        rows = [r.to_dict() for r in reports]
        fields = list(REPORT_FIELDS)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_csv_value(_round(r[f]) if not isinstance(r[f], str) else r[f])
                    for f in fields])
    return buf.getvalue().encode()
