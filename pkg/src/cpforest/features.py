"""Device-state recordings: CSV parsing and per-application feature aggregation.

A recording holds one pre-launch snapshot of the device state plus a time
series of snapshots taken while the application was exercised. Each
application is collapsed into a single feature vector by one of six
aggregations over the series (optionally differenced against the pre-launch
snapshot).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import BENIGN, MALICIOUS, DataError, Dataset, Instance

logger = logging.getLogger(__name__)

# Full recorded schema, by category. Battery readings and the *Diff columns
# (derivable from their Total counterparts) are excluded from modelling.
RECORDED_FEATURES = (
    "Battery_IsCharging",
    "Battery_Voltage",
    "Battery_Temp",
    "Battery_Level",
    "Battery_LevelDiff",
    "Binder_Transaction",
    "Binder_Reply",
    "Binder_Acquire",
    "Binder_Release",
    "Binder_ActiveNodes",
    "Binder_TotalNodes",
    "Binder_ActiveRef",
    "Binder_TotalRef",
    "Binder_ActiveDeath",
    "Binder_TotalDeath",
    "Binder_ActiveTransaction",
    "Binder_TotalTransaction",
    "Binder_ActiveTransactionComplete",
    "Binder_TotalTransactionComplete",
    "Binder_TotalNodesDiff",
    "Binder_TotalRefDiff",
    "Binder_TotalDeathDiff",
    "Binder_TotalTransactionDiff",
    "Binder_TotalTransactionCompleteDiff",
    "CPU_User",
    "CPU_System",
    "CPU_Idle",
    "CPU_Other",
    "Memory_Active",
    "Memory_Inactive",
    "Memory_Mapped",
    "Memory_FreePages",
    "Memory_AnonPages",
    "Memory_FilePages",
    "Memory_DirtyPages",
    "Memory_WritebackPages",
    "Network_TotalTXPackets",
    "Network_TotalTXBytes",
    "Network_TotalRXPackets",
    "Network_TotalRXBytes",
    "Network_TotalTXPacketsDiff",
    "Network_TotalTXBytesDiff",
    "Network_TotalRXPacketsDiff",
    "Network_TotalRXBytesDiff",
    "Permissions_TotalPermissions",
)

AGGREGATIONS = ("mean", "meandiff", "mediandiff", "mindiff", "maxdiff", "std")


def is_excluded_feature(name: str) -> bool:
    """Battery readings and derived *Diff columns are dropped at parse time."""
    return name.startswith("Battery_") or name.endswith("Diff")


def default_schema() -> tuple[str, ...]:
    """The modelled feature columns: everything recorded minus exclusions."""
    return tuple(f for f in RECORDED_FEATURES if not is_excluded_feature(f))


@dataclass(frozen=True)
class AppRecording:
    """Pre-launch snapshot plus an interaction time series for one application.

    `pre_state` has shape (d,), `series` has shape (ticks, d); columns follow
    `schema` order.
    """

    app_id: str
    label: int
    pre_state: np.ndarray
    series: np.ndarray
    schema: tuple[str, ...]


@dataclass
class ParseReport:
    apps_total: int = 0
    apps_skipped: int = 0
    rows_rejected: int = 0

    def as_dict(self) -> dict:
        return {
            "apps_total": self.apps_total,
            "apps_skipped": self.apps_skipped,
            "rows_rejected": self.rows_rejected,
        }


class RecordingFormatError(DataError):
    """A recordings file violates the documented layout.

    Carries the 1-based line number and the parse report accumulated up to the
    failure so callers can still persist it.
    """

    def __init__(self, message: str, line: int | None = None, report: ParseReport | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.report = report if report is not None else ParseReport()


def parse_recordings(
    path,
    schema: Sequence[str] | None = None,
    strict: bool = True,
) -> tuple[list[AppRecording], ParseReport]:
    """Read a recordings CSV into one AppRecording per application.

    Layout: header ``app_id,label,phase,tick,<feature columns...>`` with
    ``label`` in {0,1}, ``phase`` in {pre,run} and ``tick`` a non-negative
    integer (0 for the pre row). Excluded columns (Battery_*, *Diff) may be
    present and are ignored. Applications without both a pre row and at least
    one run row are skipped with a warning. Malformed rows raise
    RecordingFormatError when `strict`, otherwise they are counted in the
    report and skipped.
    """
    schema = tuple(schema) if schema is not None else default_schema()
    report = ParseReport()

    def fail(message, line):
        raise RecordingFormatError(message, line=line, report=report)

    def bad_row(message, line):
        report.rows_rejected += 1
        if strict:
            fail(message, line)
        logger.warning("recordings %s: line %d rejected: %s", path, line, message)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            fail("empty file", 1)
        fixed = ["app_id", "label", "phase", "tick"]
        if header[: len(fixed)] != fixed:
            fail(f"header must start with {','.join(fixed)}", 1)
        columns = header[len(fixed) :]
        missing = [f for f in schema if f not in columns]
        if missing:
            fail(f"schema mismatch, missing feature columns: {', '.join(missing)}", 1)
        for c in columns:
            if c not in schema and not is_excluded_feature(c):
                fail(f"unknown feature column {c!r}", 1)
        col_idx = [len(fixed) + columns.index(f) for f in schema]

        # app_id -> [label, pre_values | None, [(tick, values), ...]]
        apps: dict[str, list] = {}
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                bad_row(f"expected {len(header)} fields, got {len(row)}", line_no)
                continue
            app_id = row[0]
            if row[1] not in ("0", "1"):
                bad_row(f"label must be 0 or 1, got {row[1]!r}", line_no)
                continue
            label = int(row[1])
            phase = row[2]
            if phase not in ("pre", "run"):
                bad_row(f"phase must be 'pre' or 'run', got {phase!r}", line_no)
                continue
            try:
                tick = int(row[3])
            except ValueError:
                bad_row(f"tick must be an integer, got {row[3]!r}", line_no)
                continue
            if tick < 0 or (phase == "pre") != (tick == 0):
                bad_row(f"tick {tick} inconsistent with phase {phase!r}", line_no)
                continue
            try:
                values = np.array([float(row[i]) for i in col_idx], dtype=np.float64)
            except ValueError:
                bad_row("non-numeric feature value", line_no)
                continue
            entry = apps.setdefault(app_id, [label, None, []])
            if entry[0] != label:
                bad_row(f"conflicting label for app {app_id!r}", line_no)
                continue
            if phase == "pre":
                if entry[1] is not None:
                    bad_row(f"duplicate pre row for app {app_id!r}", line_no)
                    continue
                entry[1] = values
            else:
                entry[2].append((tick, values))

    recordings = []
    report.apps_total = len(apps)
    for app_id, (label, pre, ticks) in apps.items():
        if pre is None or not ticks:
            report.apps_skipped += 1
            reason = "no pre-state row" if pre is None else "no interaction rows"
            logger.warning("recordings %s: app %r skipped (%s)", path, app_id, reason)
            continue
        ticks.sort(key=lambda t: t[0])
        series = np.stack([v for _, v in ticks])
        recordings.append(AppRecording(app_id, label, pre, series, schema))
    return recordings, report


def aggregate(rec: AppRecording, kind: str) -> Instance:
    """Collapse one recording into a feature vector.

    mean:       mean of the series
    meandiff:   mean of the series minus the pre-launch state
    mediandiff: median minus the pre-launch state
    mindiff:    minimum minus the pre-launch state
    maxdiff:    maximum minus the pre-launch state
    std:        sample standard deviation (n-1 denominator; 0 for one tick)
    """
    if rec.series.shape[0] == 0:
        raise DataError(f"app {rec.app_id!r}: empty series")
    s = rec.series
    if kind == "mean":
        vec = s.mean(axis=0)
    elif kind == "meandiff":
        vec = s.mean(axis=0) - rec.pre_state
    elif kind == "mediandiff":
        vec = np.median(s, axis=0) - rec.pre_state
    elif kind == "mindiff":
        vec = s.min(axis=0) - rec.pre_state
    elif kind == "maxdiff":
        vec = s.max(axis=0) - rec.pre_state
    elif kind == "std":
        vec = s.std(axis=0, ddof=1) if s.shape[0] > 1 else np.zeros(s.shape[1])
    else:
        raise DataError(f"unknown aggregation {kind!r}; expected one of {AGGREGATIONS}")
    return Instance(vec, rec.label, rec.app_id)


def build_feature_dataset(recs: Sequence[AppRecording], kind: str) -> Dataset:
    """One dataset row per application, labels and ids carried over."""
    if not recs:
        raise DataError("no recordings to aggregate")
    schema = recs[0].schema
    for rec in recs:
        if rec.schema != schema:
            raise DataError(f"app {rec.app_id!r}: schema differs from the first recording")
    instances = [aggregate(rec, kind) for rec in recs]
    X = np.stack([inst.features for inst in instances])
    y = np.array([inst.label for inst in instances], dtype=np.int64)
    ids = tuple(inst.id for inst in instances)
    return Dataset(X, y, ids, schema)
