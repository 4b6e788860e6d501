"""Command-line pipeline: split | score | build | tune | refine | report.

Every command is driven by one JSON run config (--config) and is idempotent
for fixed inputs and seeds; outputs embed the config hash and are written
atomically. Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
3 partial grid (some cells failed).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from .data import (FLOAT_FMT, load_split_bundle, parse_csv, parse_libsvm,
                   save_split_bundle, stratified_split)
from .metrics import MetricsReport
from .refine import RefineConfig
from .runconfig import ConfigError, RunConfig, atomic_output, load_run_config
from .sampler import build_coreset, coreset_to_csv
from .sensitivity import compute_scores, scores_to_csv
from .tuner import (TrialResult, compare_to_baselines, refine_best, run_grid,
                    trials_to_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


class UsageError(Exception):
    pass


class ArtifactMissingError(RuntimeError):
    """A downstream command ran before its upstream producer."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="coretune",
                     description="Coreset construction and tuning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("split", "parse the dataset and write train/validation/test splits"),
            ("score", "compute sensitivity scores for the train split"),
            ("build", "build one coreset from the configured sampler knobs"),
            ("tune", "grid-search the sampler parameters"),
            ("refine", "refine the best tuned coreset via active sampling"),
            ("report", "write the baselines comparison and ratio-F1 curves")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the JSON run config")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override split.seed, grid.base_seed, and build.seed")
        cmd.add_argument("--workers", type=int, default=None,
                         help="worker processes for tune")
        cmd.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE",
                         help="override a config field (dotted path, JSON value)")
    return parser


def _log(cfg: RunConfig, message: str) -> None:
    # Timestamps live only here, never in artifacts.
    os.makedirs(cfg.output_dir, exist_ok=True)
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(os.path.join(cfg.output_dir, "run.log"), "a") as fh:
        fh.write(f"{stamp} {message}\n")
    print(message, file=sys.stderr)


def _load_dataset(cfg: RunConfig):
    spec = cfg.raw["dataset"]
    path = spec["path"]
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    if spec["format"] == "libsvm":
        return parse_libsvm(path, dimension_hint=spec.get("dimension_hint"))
    return parse_csv(path, spec["label_column"], bool(spec.get("has_header", True)))


def _splits_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.output_dir, "splits")


def _load_splits(cfg: RunConfig):
    try:
        return load_split_bundle(_splits_dir(cfg))
    except FileNotFoundError:
        raise ArtifactMissingError(
            f"no splits under {_splits_dir(cfg)}; run the split command first"
        ) from None


def cmd_split(cfg: RunConfig) -> int:
    dataset = _load_dataset(cfg)
    bundle = stratified_split(dataset, cfg.split_fractions, cfg.split_seed)
    save_split_bundle(bundle, _splits_dir(cfg), cfg.split_seed,
                      cfg.split_fractions,
                      extra={"config_hash": cfg.config_hash(),
                             "source": cfg.dataset_path})
    sizes = {name: split.n for name, split in zip(bundle.names, bundle)}
    _log(cfg, f"split: wrote {sizes} to {_splits_dir(cfg)}")
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    bundle, _ = _load_splits(cfg)
    scores = compute_scores(cfg.provider, bundle.train, **cfg.provider_params)
    out = os.path.join(cfg.output_dir, "scores.csv")
    with atomic_output(out) as tmp:
        scores_to_csv(scores, bundle.train.point_ids, tmp,
                      header_comment=f"config_hash={cfg.config_hash()}")
    _log(cfg, f"score: provider={cfg.provider} n={bundle.train.n} -> {out}")
    return EXIT_OK


def cmd_build(cfg: RunConfig) -> int:
    bundle, _ = _load_splits(cfg)
    train = bundle.train
    config = cfg.build_config(train.n, len(train.classes))
    scores = compute_scores(cfg.provider, train, **cfg.provider_params)
    coreset = build_coreset(train, scores, config)
    out = os.path.join(cfg.output_dir, "coreset.csv")
    with atomic_output(out) as tmp:
        coreset_to_csv(coreset, tmp,
                       header_comment=f"config_hash={cfg.config_hash()} "
                                      f"sampler={json.dumps(config.to_dict(), sort_keys=True)}")
    _log(cfg, f"build: m={config.coreset_size} unique={coreset.n_unique} -> {out}")
    return EXIT_OK


def _best_config_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.output_dir, "best_config.json")


def _metrics_to_dict(report: MetricsReport) -> dict:
    return report.to_dict()


def _metrics_from_dict(d: dict) -> MetricsReport:
    return MetricsReport(f1=d["f1"], balanced_accuracy=d["balanced_accuracy"],
                         accuracy=d["accuracy"], roc_auc=d["roc_auc"],
                         average_precision=d["average_precision"],
                         confusion=(d["tp"], d["fp"], d["tn"], d["fn"]))


def cmd_tune(cfg: RunConfig) -> int:
    bundle, _ = _load_splits(cfg)
    grid = cfg.grid_spec()
    result = run_grid(bundle, grid, cfg.train_config(), workers=cfg.workers)
    trials_out = os.path.join(cfg.output_dir, "trials.csv")
    with atomic_output(trials_out) as tmp:
        trials_to_csv(result, tmp,
                      header_comment=f"config_hash={cfg.config_hash()}")
    best = result.best
    best_record = {
        "config_hash": cfg.config_hash(),
        "provider": best.provider,
        "provider_params": cfg.provider_params,
        "cell_index": best.cell_index,
        "repeat": best.repeat,
        "seed": best.seed,
        "coreset_ratio": best.coreset_ratio,
        "regularization": best.regularization,
        "vanilla": best.vanilla,
        "sampler": best.config.to_dict(),
        "validation": _metrics_to_dict(best.validation),
        "test": _metrics_to_dict(best.test),
    }
    with atomic_output(_best_config_path(cfg)) as tmp:
        with open(tmp, "w") as fh:
            json.dump(best_record, fh, indent=1, sort_keys=True)
            fh.write("\n")
    _log(cfg, f"tune: {len(result.trials)} trials, {len(result.failures)} failed "
              f"cells; best validation F1 {best.validation.f1:.4f} "
              f"-> {trials_out}")
    if result.failures:
        _log(cfg, f"tune: partial grid; first failure: {result.failures[0].error}")
        return EXIT_PARTIAL
    return EXIT_OK


def _load_best(cfg: RunConfig) -> TrialResult:
    path = _best_config_path(cfg)
    if not os.path.exists(path):
        raise ArtifactMissingError(
            f"no best-config record at {path}; run the tune command first")
    with open(path) as fh:
        record = json.load(fh)
    from .sampler import SamplerConfig
    from .tuner import CoresetStats

    sampler = record["sampler"]
    config = SamplerConfig(
        coreset_size=int(sampler["coreset_size"]),
        det_ratio=float(sampler["det_ratio"]),
        weight_strategy=sampler["weight_strategy"],
        class_allocation=(sampler["class_allocation"]
                          if sampler["class_allocation"] == "proportional"
                          else {int(k): float(v)
                                for k, v in sampler["class_allocation"].items()}),
        seed=int(sampler["seed"]))
    return TrialResult(
        cell_index=int(record["cell_index"]), repeat=int(record["repeat"]),
        seed=int(record["seed"]), provider=record["provider"], config=config,
        coreset_ratio=float(record["coreset_ratio"]),
        regularization=float(record["regularization"]),
        validation=_metrics_from_dict(record["validation"]),
        test=_metrics_from_dict(record["test"]),
        coreset_stats=CoresetStats(0, 0.0, ()),
        vanilla=bool(record["vanilla"]))


def cmd_refine(cfg: RunConfig) -> int:
    bundle, _ = _load_splits(cfg)
    best = _load_best(cfg)
    refine_cfg = cfg.refine_config()
    if refine_cfg is None:
        refine_cfg = RefineConfig(batch_size=max(1, bundle.train.n // 20))
    outcome = refine_best(bundle, best, refine_cfg, cfg.train_config(),
                          provider_params=cfg.provider_params)
    coreset_out = os.path.join(cfg.output_dir, "refined_coreset.csv")
    with atomic_output(coreset_out) as tmp:
        coreset_to_csv(outcome.coreset, tmp,
                       header_comment=f"config_hash={cfg.config_hash()} "
                                      f"decision={outcome.trace.decision}")
    trace_out = os.path.join(cfg.output_dir, "refine_trace.csv")
    from .refine import trace_to_csv
    with atomic_output(trace_out) as tmp:
        trace_to_csv(outcome.trace, tmp,
                     header_comment=f"config_hash={cfg.config_hash()}")
    _log(cfg, f"refine: {outcome.trace.decision} after "
              f"{len(outcome.trace.rounds)} rounds; validation F1 "
              f"{outcome.result.validation.f1:.4f} -> {coreset_out}")
    return EXIT_OK


def _load_trial_rows(cfg: RunConfig) -> list[dict]:
    path = os.path.join(cfg.output_dir, "trials.csv")
    if not os.path.exists(path):
        raise ArtifactMissingError(
            f"no trials table at {path}; run the tune command first")
    rows = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(dict(zip(header, line.split(","))))
    return rows


def cmd_report(cfg: RunConfig) -> int:
    bundle, _ = _load_splits(cfg)
    rows = _load_trial_rows(cfg)
    best = _load_best(cfg)
    comparison = compare_to_baselines(bundle, best, cfg.train_config(),
                                      provider_params=cfg.provider_params)
    comp_out = os.path.join(cfg.output_dir, "comparison.csv")
    with atomic_output(comp_out) as tmp:
        with open(tmp, "w") as fh:
            fh.write(f"# config_hash={cfg.config_hash()}\n")
            fh.write("method,split,balanced_accuracy,f1,roc_auc\n")
            for row in comparison:
                fh.write(f"{row.method},{row.split},"
                         f"{FLOAT_FMT % row.balanced_accuracy},"
                         f"{FLOAT_FMT % row.f1},{FLOAT_FMT % row.roc_auc}\n")
    curves = _curves_from_rows(rows)
    curve_out = os.path.join(cfg.output_dir, "curves.csv")
    with atomic_output(curve_out) as tmp:
        with open(tmp, "w") as fh:
            fh.write(f"# config_hash={cfg.config_hash()}\n")
            fh.write("coreset_ratio,method,split,f1\n")
            for ratio, method, split, f1_value in curves:
                fh.write(f"{FLOAT_FMT % ratio},{method},{split},"
                         f"{FLOAT_FMT % f1_value}\n")
    _log(cfg, f"report: wrote {comp_out} and {curve_out}")
    return EXIT_OK


def _curves_from_rows(rows: list[dict]) -> list[tuple[float, str, str, float]]:
    """Recompute the tuned/vanilla F1-vs-ratio curve from the trials table."""
    cells: dict[int, dict] = {}
    for row in rows:
        idx = int(row["cell_index"])
        cell = cells.setdefault(idx, {
            "ratio": float(row["coreset_ratio"]),
            "vanilla": row["vanilla"] == "1",
            "mean_val_f1": float(row["mean_validation_f1"]),
            "test_f1": []})
        cell["test_f1"].append(float(row["test_f1"]))
    curves = []
    for ratio in sorted({c["ratio"] for c in cells.values()}):
        at_ratio = {i: c for i, c in cells.items() if c["ratio"] == ratio}
        best_idx = min(at_ratio, key=lambda i: (-at_ratio[i]["mean_val_f1"], i))
        tuned = at_ratio[best_idx]
        curves.append((ratio, "tuned", "validation", tuned["mean_val_f1"]))
        curves.append((ratio, "tuned", "test", float(np.mean(tuned["test_f1"]))))
        vanilla = [c for c in at_ratio.values() if c["vanilla"]]
        if vanilla:
            curves.append((ratio, "vanilla", "validation", vanilla[0]["mean_val_f1"]))
            curves.append((ratio, "vanilla", "test",
                           float(np.mean(vanilla[0]["test_f1"]))))
    return curves


COMMANDS = {
    "split": cmd_split,
    "score": cmd_score,
    "build": cmd_build,
    "tune": cmd_tune,
    "refine": cmd_refine,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_run_config(args.config, overrides=args.override,
                              seed=args.seed, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactMissingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
