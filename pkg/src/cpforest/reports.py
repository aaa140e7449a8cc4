"""CSV/JSON writers for experiment report bundles.

Table layouts mirror the published result tables: forced-prediction metrics,
observed-unconfidence means, average prediction-set sizes per confidence
level, and long-format validity curves for plotting elsewhere.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .data import LABEL_NAMES
from .evaluation import GROUPS, ExperimentReport


def _pct(x: float) -> str:
    return f"{x * 100:.2f}"


def _f4(x: float) -> str:
    return f"{x:.4f}"


def _f6(x: float) -> str:
    return f"{x:.6f}"


def metrics_rows(report: ExperimentReport, feature_set: str) -> list[dict]:
    rows = []
    for technique, method in (("rf_lcmicp", "conformal"), ("conventional_rf", "baseline")):
        m = report.mean_metrics(method)
        rows.append(
            {
                "technique": technique,
                "feature_set": feature_set,
                "accuracy_pct": _pct(m.accuracy),
                "sensitivity_pct": _pct(m.sensitivity),
                "specificity_pct": _pct(m.specificity),
                "f1": _f4(m.f1),
            }
        )
    return rows


def ou_rows(report: ExperimentReport, feature_set: str) -> list[dict]:
    ou = report.mean_ou()
    return [{"feature_set": feature_set, **{g: _f4(ou[g]) for g in GROUPS}}]


def n_rows(report: ExperimentReport, feature_set: str) -> list[dict]:
    mean_n = report.mean_n()
    deltas = report.config.table_deltas
    rows = []
    for group in GROUPS:
        row = {"group": group, "feature_set": feature_set}
        for j, d in enumerate(deltas):
            row[f"conf_{round((1 - d) * 100)}"] = _f4(float(mean_n[group][j]))
        rows.append(row)
    return rows


def validity_rows(report: ExperimentReport, feature_set: str, imbalance_pct: int, method: str) -> list[dict]:
    errors = report.mean_errors(method)
    name = {"conformal": "rf_lcmicp", "baseline": "conventional_rf"}[method]
    rows = []
    for j, delta in enumerate(report.config.delta_grid):
        for label in (1, 0):
            rows.append(
                {
                    "feature_set": feature_set,
                    "imbalance_pct": str(imbalance_pct),
                    "method": name,
                    "class": LABEL_NAMES[label],
                    "delta": _f4(float(delta)),
                    "error_rate": _f6(float(errors[j, label])),
                }
            )
    return rows


def write_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
