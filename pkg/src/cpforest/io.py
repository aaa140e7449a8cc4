"""File formats: dataset CSVs and the serialized model bundle.

Dataset CSV: header ``id,label,<feature names...>`` (the label column may be
absent for unlabeled instances). Model bundle: a single versioned JSON file
holding the forest, the per-class calibration scores, the normalization
parameters and the training configuration echo; floats survive the round
trip exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conformal import CalibrationScores, ConformalForest
from .data import BENIGN, DataError, Dataset, NormalizationParams
from .forest import RandomForest

MODEL_FORMAT = "cpforest-model"
MODEL_VERSION = 1


def save_dataset_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["id"] + (["label"] if dataset.y is not None else []) + list(dataset.feature_names)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [dataset.ids[i]]
            if dataset.y is not None:
                row.append(str(int(dataset.y[i])))
            row.extend(repr(float(v)) for v in dataset.X[i])
            writer.writerow(row)


def load_dataset_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file") from None
        if not header or header[0] != "id":
            raise DataError(f"{path}: first column must be 'id'")
        labelled = len(header) > 1 and header[1] == "label"
        names = tuple(header[2:] if labelled else header[1:])
        ids, labels, rows = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0])
            try:
                if labelled:
                    labels.append(int(row[1]))
                    rows.append([float(v) for v in row[2:]])
                else:
                    rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}: line {line_no}: {exc}") from None
    X = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))
    y = np.array(labels, dtype=np.int64) if labelled else None
    return Dataset(X, y, tuple(ids), names)


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to score new instances consistently with training."""

    model: ConformalForest
    normalization: NormalizationParams
    feature_names: tuple[str, ...]
    config: dict


def save_model(path, bundle: ModelBundle) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "feature_names": list(bundle.feature_names),
        "normalization": {
            "mins": bundle.normalization.mins.tolist(),
            "maxs": bundle.normalization.maxs.tolist(),
        },
        "denominator": bundle.model.denominator,
        "tie_break": bundle.model.tie_break,
        "calibration": bundle.model.calibration.to_dict(),
        "forest": bundle.model.forest.to_dict(),
        "config": bundle.config,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path) -> ModelBundle:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unrecognized model format")
    model = ConformalForest(
        forest=RandomForest.from_dict(doc["forest"]),
        calibration=CalibrationScores.from_dict(doc["calibration"]),
        denominator=doc["denominator"],
        tie_break=int(doc.get("tie_break", BENIGN)),
    )
    params = NormalizationParams(np.array(doc["normalization"]["mins"]), np.array(doc["normalization"]["maxs"]))
    return ModelBundle(model, params, tuple(doc["feature_names"]), dict(doc.get("config", {})))
