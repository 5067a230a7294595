"""Evaluation report schema: a small JSON document listing per-missingness
accuracies and optional (C, Q) sensitivity results, with a validating parser
so downstream tooling can rely on its shape."""

from __future__ import annotations

import csv
import json

from .errors import DataError

REPORT_FORMAT = "mts-cluster-kernel-report"
REPORT_VERSION = 1


def build_report(pattern, missing_results, sweep_results=None, clustering=None):
    """Assemble the report document.

    ``missing_results`` is a list of {"p": float, "accuracy": float};
    ``sweep_results`` a list of {"c_max": int, "q": int, "accuracy": float};
    ``clustering`` an optional {"k", "ca", "ari"} block.
    """
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "pattern": pattern,
        "missing": [{"p": float(r["p"]), "accuracy": float(r["accuracy"])}
                    for r in missing_results],
    }
    if sweep_results is not None:
        doc["sweep"] = [{"c_max": int(r["c_max"]), "q": int(r["q"]),
                         "accuracy": float(r["accuracy"])} for r in sweep_results]
    if clustering is not None:
        doc["clustering"] = {"k": int(clustering["k"]), "ca": float(clustering["ca"]),
                             "ari": float(clustering["ari"])}
    return doc


def save_report(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_report(path):
    """Parse and validate a report file; raises DataError on schema violations."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != REPORT_FORMAT:
        raise DataError(f"{path}: not an evaluation report")
    if doc.get("version") != REPORT_VERSION:
        raise DataError(f"{path}: unsupported report version {doc.get('version')!r}")
    if not isinstance(doc.get("pattern"), str):
        raise DataError(f"{path}: missing 'pattern' field")
    missing = doc.get("missing")
    if not isinstance(missing, list) or not missing:
        raise DataError(f"{path}: 'missing' must be a nonempty list")
    for row in missing:
        if not isinstance(row, dict) or not {"p", "accuracy"} <= set(row):
            raise DataError(f"{path}: malformed missing-level entry {row!r}")
        if not (isinstance(row["p"], (int, float)) and isinstance(row["accuracy"], (int, float))):
            raise DataError(f"{path}: non-numeric missing-level entry {row!r}")
    for row in doc.get("sweep", []):
        if not isinstance(row, dict) or not {"c_max", "q", "accuracy"} <= set(row):
            raise DataError(f"{path}: malformed sweep entry {row!r}")
    return doc


def save_accuracy_csv(missing_results, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "accuracy"])
        for row in missing_results:
            writer.writerow([row["p"], row["accuracy"]])
