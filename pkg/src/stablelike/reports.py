"""Deterministic serialization of study reports.

JSON output is canonical — keys sorted, two-space indent, floats in shortest
round-trip form — so identical (config, seed) runs produce byte-identical
files.  Wall-clock metadata never enters report files; it goes to the
run_meta.json side-channel only.  CSV outputs use a fixed, versioned column
order so downstream tooling can rely on positions.
"""

import csv
import json
import os
import platform
import sys
import time

import numpy as np

from .errors import ParameterError

REPORT_SCHEMA = "stablelike-report-v1"

# one row per study cell; order is part of the interface
CSV_COLUMNS = ("study", "R", "t", "k", "f_id", "estimate", "stderr", "ratio",
               "pass")

# one row per consolidated check in a summary table
SUMMARY_COLUMNS = ("study", "pass", "fitted_constant", "n_rows", "seed")


def canonical(obj):
    """Recursively coerce a report object into plain JSON-stable types."""
    if isinstance(obj, dict):
        return {_key(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise ParameterError(
        f"report value {obj!r} of type {type(obj).__name__} is not serializable")


def _key(k):
    if isinstance(k, str):
        return k
    if isinstance(k, (bool, np.bool_)):
        return "true" if k else "false"
    if isinstance(k, (int, np.integer)):
        return str(int(k))
    if isinstance(k, (float, np.floating)):
        return repr(float(k))
    raise ParameterError(f"report key {k!r} is not serializable")


def dump_json(report):
    """Canonical JSON text for a report (sorted keys, trailing newline)."""
    return json.dumps(canonical(report), sort_keys=True, indent=2) + "\n"


def write_json_report(report, path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(dump_json(report))
    return path


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_rows_csv(rows, path, columns=CSV_COLUMNS):
    """Fixed-column CSV of study cell rows; an empty list yields header only."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            extra = set(row) - set(columns)
            if extra:
                raise ParameterError(
                    f"row carries unknown columns {sorted(extra)}")
            writer.writerow([_cell(row.get(col)) for col in columns])
    return path


def _fitted_constant(report):
    """One representative constant per report, scanned in a fixed key order."""
    for key in ("c_bias", "c1", "fitted_constant"):
        if key in report and report[key] is not None:
            val = report[key]
            if isinstance(val, (list, tuple, np.ndarray)):
                return float(max(val)) if len(val) else None
            return float(val)
    if report.get("c_values"):
        return float(report["c_values"][0])
    return None


def emit_summary(reports, path=None):
    """Consolidate reports into one row per check plus an overall verdict.

    Every report must be a mapping with a pass flag and a study (or
    check_name) identifier; anything else is a schema mismatch.  Returns
    {"rows": [...], "pass": bool}; with a path, also writes the CSV
    (header-only when the report list is empty).
    """
    rows = []
    overall = True
    for rep in reports:
        if not isinstance(rep, dict) or "pass" not in rep \
                or not ("study" in rep or "check_name" in rep):
            raise ParameterError(
                "summary input must be report dicts with study/check_name "
                "and pass fields")
        study = rep.get("study") or rep.get("check_name")
        rows.append({
            "study": study,
            "pass": bool(rep["pass"]),
            "fitted_constant": _fitted_constant(rep),
            "n_rows": len(rep["rows"]) if isinstance(rep.get("rows"), list)
            else None,
            "seed": rep.get("seed"),
        })
        overall = overall and bool(rep["pass"])
    if path is not None:
        write_rows_csv(rows, path, columns=SUMMARY_COLUMNS)
    return {"rows": rows, "pass": bool(overall)}


def write_run_meta(out_dir, extra=None):
    """Timestamped environment record, kept out of the deterministic reports."""
    meta = {
        "schema": REPORT_SCHEMA,
        "created_unix": time.time(),
        "created_iso": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime()),
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
    }
    try:
        import scipy

        meta["scipy"] = scipy.__version__
    except ImportError:
        pass
    if extra:
        meta.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_meta.json")
    with open(path, "w") as fh:
        json.dump(canonical(meta), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path
