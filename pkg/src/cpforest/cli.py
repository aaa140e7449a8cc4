"""Command-line entry point: ingest recordings, train, predict, reproduce reports.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal invariant violation. Every command writes a single manifest.json
into its output directory; `cpforest rerun <manifest>` replays the recorded
invocation, which reproduces all non-timing outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .conformal import ConformalForest, calibration_scores, class_pvalues, forced_predictions, prediction_sets
from .data import (
    BENIGN,
    MALICIOUS,
    LABEL_NAMES,
    DataError,
    calibration_split,
    normalize,
    rng_from,
    spawn_seed,
)
from .evaluation import DEFAULT_DELTA_GRID, TABLE_DELTAS, ExperimentConfig, run_experiment
from .features import AGGREGATIONS, RecordingFormatError, build_feature_dataset, default_schema, parse_recordings
from .forest import train_forest
from .io import ModelBundle, load_dataset_csv, load_model, save_dataset_csv, save_model
from .reports import metrics_rows, n_rows, ou_rows, validity_rows, write_csv, write_manifest
from .synthetic import make_two_gaussians

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

REGIMES = {25: (4500, 1500), 10: (4500, 500)}
SYNTHETIC_POOL = {"n_benign": 4816, "n_malicious": 1866, "dim": 8, "separation": 1.4}
_POOL_STREAM = 9999

EXPERIMENTS = ("table2", "table3", "table4", "table5", "table6", "table7", "fig1", "fig2")
FIG_FEATURE_SETS = ("meandiff", "mediandiff", "maxdiff")

TRAIN_CONFIG_DEFAULTS = {
    "calibration_fraction": 0.2,
    "trees": 100,
    "mtry": "auto",
    "min_leaf": 1,
    "bootstrap": True,
    "denominator": "plus_one",
    "tie_break": "benign",
    "seed": 0,
    "deltas": (0.05, 0.1, 0.15, 0.2),
}


class ConfigError(ValueError):
    """A configuration file or flag combination is invalid."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_config_value(key: str, raw: str):
    raw = raw.strip()
    if key == "calibration_fraction":
        return float(raw)
    if key in ("trees", "min_leaf", "seed"):
        return int(raw)
    if key == "mtry":
        return "auto" if raw == "auto" else int(raw)
    if key == "bootstrap":
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ConfigError(f"bootstrap must be true or false, got {raw!r}")
    if key == "denominator":
        if raw in ("plus_one", "literal"):
            return raw
        raise ConfigError(f"denominator must be plus_one or literal, got {raw!r}")
    if key == "tie_break":
        if raw in LABEL_NAMES:
            return raw
        raise ConfigError(f"tie_break must be benign or malicious, got {raw!r}")
    if key == "deltas":
        values = tuple(float(v) for v in raw.split(","))
        if any(not 0 <= v < 1 for v in values):
            raise ConfigError(f"deltas must lie in [0,1), got {raw!r}")
        return values
    raise ConfigError(f"unknown configuration key {key!r}")


def load_train_config(path=None) -> dict:
    """Flat ``key = value`` file with '#' comments; unknown keys are rejected."""
    cfg = dict(TRAIN_CONFIG_DEFAULTS)
    if path is None:
        return cfg
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {line_no}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        try:
            cfg[key] = _parse_config_value(key, raw)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: line {line_no}: {exc}") from None
    if not 0.0 < cfg["calibration_fraction"] < 1.0:
        raise ConfigError("calibration_fraction must be in (0,1)")
    if cfg["trees"] < 1 or cfg["min_leaf"] < 1:
        raise ConfigError("trees and min_leaf must be >= 1")
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(command: str, argv: list[str], config: dict, artifacts: list[str], elapsed: float, extra=None) -> dict:
    doc = {
        "tool": "cpforest",
        "version": __version__,
        "command": command,
        "argv": argv,
        "config": config,
        "artifacts": sorted(artifacts),
        "elapsed_seconds": round(elapsed, 3),
    }
    if extra:
        doc.update(extra)
    return doc


def cmd_ingest(args, argv) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    schema = default_schema()
    if args.schema:
        schema = tuple(json.loads(Path(args.schema).read_text(encoding="utf-8")))
    report_path = out / "parse_report.json"
    try:
        recordings, report = parse_recordings(args.input, schema=schema)
    except RecordingFormatError as exc:
        doc = exc.report.as_dict()
        doc["error"] = {"line": exc.line, "message": str(exc)}
        report_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        raise
    artifacts = ["parse_report.json"]
    for kind in AGGREGATIONS:
        dataset = build_feature_dataset(recordings, kind)
        save_dataset_csv(out / f"{kind}.csv", dataset)
        artifacts.append(f"{kind}.csv")
    report_path.write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")
    config = {"input": str(args.input), "schema_size": len(schema)}
    write_manifest(out / "manifest.json", _manifest("ingest", argv, config, artifacts, time.perf_counter() - t0))
    print(f"ingested {report.apps_total} apps ({report.apps_skipped} skipped) -> {out}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args)
    dataset = load_dataset_csv(args.dataset)
    if dataset.y is None:
        raise DataError(f"{args.dataset}: training data must have a label column")
    train, _, params = normalize(dataset)
    plan = calibration_split(train, cfg["calibration_fraction"], rng_from(cfg["seed"], 0))
    proper = train.take(plan.proper_training)
    calib = train.take(plan.calibration)
    forest = train_forest(
        proper,
        n_trees=cfg["trees"],
        seed=spawn_seed(cfg["seed"], 1),
        mtry=None if cfg["mtry"] == "auto" else cfg["mtry"],
        min_leaf=cfg["min_leaf"],
        bootstrap=cfg["bootstrap"],
        jobs=args.jobs,
    )
    scores = calibration_scores(forest.posterior(calib.X), calib.y)
    model = ConformalForest(forest, scores, cfg["denominator"], LABEL_NAMES.index(cfg["tie_break"]))
    bundle = ModelBundle(model, params, train.feature_names, {**cfg, "deltas": list(cfg["deltas"])})
    save_model(out / "model.json", bundle)
    write_manifest(
        out / "manifest.json",
        _manifest("train", argv, {**cfg, "deltas": list(cfg["deltas"])}, ["model.json"], time.perf_counter() - t0),
    )
    print(f"trained {cfg['trees']} trees on {proper.n} instances, calibrated on {calib.n} -> {out / 'model.json'}")
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    t0 = time.perf_counter()
    bundle = load_model(args.model)
    instances = load_dataset_csv(args.instances)
    if instances.dim != len(bundle.feature_names):
        raise DataError(
            f"dimension mismatch: model expects {len(bundle.feature_names)} features, "
            f"instances have {instances.dim}"
        )
    deltas = tuple(args.delta) if args.delta else tuple(bundle.config.get("deltas", TABLE_DELTAS))
    X = bundle.normalization.transform(instances.X)
    pvals = class_pvalues(bundle.model.calibration, bundle.model.forest.posterior(X), bundle.model.denominator)
    labels, confidence, credibility = forced_predictions(pvals, bundle.model.tie_break)
    masks = {d: prediction_sets(pvals, d) for d in deltas}

    lines = []
    for i in range(instances.n):
        record = {
            "app_id": instances.ids[i],
            "p_benign": float(pvals[i, BENIGN]),
            "p_malicious": float(pvals[i, MALICIOUS]),
        }
        for d in deltas:
            record[f"set@{d:g}"] = [LABEL_NAMES[j] for j in (BENIGN, MALICIOUS) if masks[d][i, j]]
        record["forced_label"] = LABEL_NAMES[int(labels[i])]
        record["confidence"] = float(confidence[i])
        record["credibility"] = float(credibility[i])
        if args.threshold_malicious_p is not None:
            record["alert"] = bool(pvals[i, MALICIOUS] > args.threshold_malicious_p)
        lines.append(json.dumps(record))

    if args.out:
        out = _out_dir(args)
        (out / "predictions.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        config = {"deltas": list(deltas), "threshold_malicious_p": args.threshold_malicious_p}
        write_manifest(
            out / "manifest.json",
            _manifest("predict", argv, config, ["predictions.jsonl"], time.perf_counter() - t0),
        )
        print(f"wrote {len(lines)} predictions -> {out / 'predictions.jsonl'}")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


def _experiment_config(args, regime: int, feature_kind: str, delta_grid) -> ExperimentConfig:
    return ExperimentConfig(
        train_counts=REGIMES[regime],
        test_counts=(300, 300),
        calibration_fraction=0.2,
        n_trees=100,
        repetitions=args.repetitions,
        delta_grid=tuple(delta_grid),
        table_deltas=TABLE_DELTAS,
        root_seed=args.seed,
        feature_kind=feature_kind,
        jobs=args.jobs,
    )


def _load_feature_pools(args, feature_sets) -> dict:
    if args.synthetic:
        pool = make_two_gaussians(seed=spawn_seed(args.seed, _POOL_STREAM), **SYNTHETIC_POOL)
        return {"synthetic": pool}
    data_dir = Path(args.data)
    pools = {}
    for kind in feature_sets:
        path = data_dir / f"{kind}.csv"
        if not path.exists():
            raise DataError(f"missing dataset file {path}; run `cpforest ingest` first")
        pools[kind] = load_dataset_csv(path)
    return pools


def cmd_reproduce(args, argv) -> int:
    t0 = time.perf_counter()
    name = args.experiment
    out = _out_dir(args)
    is_fig = name in ("fig1", "fig2")
    table_regime = {"table2": 25, "table3": 10, "table4": 25, "table5": 10, "table6": 25, "table7": 10}
    if not is_fig and args.imbalance is not None and args.imbalance != table_regime[name]:
        raise ConfigError(
            f"{name} is defined for the {table_regime[name]}% malicious regime; drop --imbalance or use the matching table"
        )

    if args.synthetic:
        feature_sets = ["synthetic"]
    elif is_fig:
        feature_sets = [args.feature_set] if args.feature_set else list(FIG_FEATURE_SETS)
    else:
        feature_sets = [args.feature_set] if args.feature_set else list(AGGREGATIONS)
    pools = _load_feature_pools(args, feature_sets)

    rows = []
    if is_fig:
        regimes = [args.imbalance] if args.imbalance else [25, 10]
        method = "conformal" if name == "fig1" else "baseline"
        for kind in feature_sets:
            for regime in regimes:
                cfg = _experiment_config(args, regime, kind, DEFAULT_DELTA_GRID)
                report = run_experiment(cfg, pools[kind])
                rows.extend(validity_rows(report, kind, regime, method))
    else:
        regime = table_regime[name]
        maker = {"table2": metrics_rows, "table3": metrics_rows, "table4": ou_rows, "table5": ou_rows, "table6": n_rows, "table7": n_rows}[name]
        for kind in feature_sets:
            cfg = _experiment_config(args, regime, kind, TABLE_DELTAS)
            report = run_experiment(cfg, pools[kind])
            rows.extend(maker(report, kind))

    csv_name = f"{name}.csv"
    write_csv(out / csv_name, rows)
    config = {
        "experiment": name,
        "feature_sets": feature_sets,
        "repetitions": args.repetitions,
        "root_seed": args.seed,
        "synthetic": bool(args.synthetic),
    }
    extra = {"generator": SYNTHETIC_POOL} if args.synthetic else None
    write_manifest(out / "manifest.json", _manifest("reproduce", argv, config, [csv_name], time.perf_counter() - t0, extra))
    print(f"wrote {out / csv_name} ({len(rows)} rows)")
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    recorded = doc.get("argv")
    if not recorded or recorded[0] == "rerun":
        raise ConfigError(f"{args.manifest}: manifest does not carry a replayable command")
    print(f"replaying: cpforest {' '.join(recorded)}")
    return main(recorded)


def build_parser() -> _Parser:
    parser = _Parser(prog="cpforest", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cpforest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a recordings CSV into six aggregated feature datasets")
    p.add_argument("input", help="recordings CSV (app_id,label,phase,tick,<features...>)")
    p.add_argument("--schema", help="JSON list of feature columns to keep (default: built-in schema)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="split, train the forest, calibrate, and persist the model")
    p.add_argument("dataset", help="labelled dataset CSV (id,label,<features...>)")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int, default=None, help="override the configured root seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="emit JSON-lines predictions for new instances")
    p.add_argument("instances", help="instances CSV (id[,label],<features...>)")
    p.add_argument("--model", required=True, help="model.json produced by train")
    p.add_argument("--delta", type=float, action="append", help="significance level (repeatable)")
    p.add_argument("--threshold-malicious-p", type=float, default=None, help="alert when p_malicious exceeds this")
    p.add_argument("--out", default=None, help="output directory (default: print to stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("reproduce", help="run a named report experiment and write its CSV")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--data", help="directory of ingested feature datasets")
    p.add_argument("--synthetic", action="store_true", help="use generated two-Gaussian data instead of a corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--feature-set", choices=AGGREGATIONS, default=None, help="restrict to one feature set")
    p.add_argument("--imbalance", type=int, choices=(25, 10), default=None, help="restrict figures to one regime")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("manifest", help="manifest.json from a previous run")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "reproduce" and not args.synthetic and not args.data:
        print("cpforest reproduce: error: provide --data DIR or --synthetic", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"cpforest: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"cpforest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violation or bug
        print(f"cpforest: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
