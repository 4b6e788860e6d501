"""Grid search over the coreset sampling parameters.

Every grid cell builds one coreset, trains one model, and records validation
and test metrics from that same model. Cells are ranked by mean validation F1
over repeats; test metrics are reported but never influence the ranking. The
vanilla configuration (no deterministic inclusion, inverse-probability
weights, proportional allocation) is injected for every coreset ratio so the
tuned-vs-vanilla comparison always happens within a single run.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import FLOAT_FMT, SplitBundle
from .learners import TrainConfig, decision_scores, train
from .metrics import MetricsReport, classification_report
from .refine import RefineConfig, RefineTrace, refine
from .sampler import (AllocationError, Coreset, SamplerConfig,
                      StrategyInfeasibleError, build_coreset)
from .sensitivity import SensitivityScores, compute_scores


@dataclass(frozen=True)
class GridSpec:
    """The search space over sampling parameters."""

    coreset_ratios: tuple[float, ...]
    det_ratios: tuple[float, ...] = (0.0,)
    weight_strategies: tuple[str, ...] = ("inv",)
    class_allocations: tuple = ("proportional",)
    sensitivity_provider: str = "leverage"
    provider_params: dict = field(default_factory=dict)
    repeats: int = 1
    base_seed: int = 0
    regularizations: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "coreset_ratios", tuple(self.coreset_ratios))
        object.__setattr__(self, "det_ratios", tuple(self.det_ratios))
        object.__setattr__(self, "weight_strategies", tuple(self.weight_strategies))
        object.__setattr__(self, "class_allocations",
                           tuple(_freeze_allocation(a) for a in self.class_allocations))
        if self.regularizations is not None:
            object.__setattr__(self, "regularizations", tuple(self.regularizations))
        for name in ("coreset_ratios", "det_ratios", "weight_strategies",
                     "class_allocations"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        if any(not (0 < r <= 1) for r in self.coreset_ratios):
            raise ValueError("coreset ratios must lie in (0, 1]")
        if any(not (0 <= r < 1) for r in self.det_ratios):
            raise ValueError("deterministic ratios must lie in [0, 1)")
        for strategy in self.weight_strategies:
            if strategy not in ("keep", "inv", "prop"):
                raise ValueError(f"unknown weight strategy {strategy!r}")
        for alloc in self.class_allocations:
            if isinstance(alloc, tuple):
                fractions = [v for _, v in alloc]
                if any(v <= 0 for v in fractions) or \
                        abs(sum(fractions) - 1.0) > 1e-9:
                    raise ValueError(f"class allocation {dict(alloc)} must have "
                                     "positive fractions summing to 1")
            elif alloc != "proportional":
                raise ValueError(f"bad class allocation {alloc!r}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def _freeze_allocation(alloc):
    if isinstance(alloc, dict):
        return tuple(sorted((int(k), float(v)) for k, v in alloc.items()))
    return alloc


def _thaw_allocation(alloc):
    return dict(alloc) if isinstance(alloc, tuple) else alloc


def allocation_label(alloc) -> str:
    alloc = _thaw_allocation(alloc)
    if isinstance(alloc, dict):
        return json.dumps({str(k): v for k, v in sorted(alloc.items())})
    return str(alloc)


@dataclass(frozen=True)
class Cell:
    """One grid configuration (before seeding and repeats)."""

    index: int
    coreset_ratio: float
    det_ratio: float
    weight_strategy: str
    class_allocation: tuple | str
    regularization: float | None
    vanilla: bool = False

    def key(self):
        return (self.coreset_ratio, self.det_ratio, self.weight_strategy,
                self.class_allocation, self.regularization)


@dataclass(frozen=True)
class CoresetStats:
    unique_points: int
    total_weight: float
    per_class_counts: tuple[tuple[int, int], ...]

    @staticmethod
    def of(coreset: Coreset) -> "CoresetStats":
        return CoresetStats(coreset.n_unique, coreset.total_weight,
                            tuple(sorted(coreset.per_class_counts().items())))


@dataclass(frozen=True)
class TrialResult:
    """Metrics of one (cell, repeat) evaluation; validation and test come
    from the same trained model."""

    cell_index: int
    repeat: int
    seed: int
    provider: str
    config: SamplerConfig
    coreset_ratio: float
    regularization: float
    validation: MetricsReport
    test: MetricsReport
    coreset_stats: CoresetStats
    vanilla: bool = False


@dataclass(frozen=True)
class FailedCell:
    cell_index: int
    repeat: int
    seed: int
    error: str


@dataclass(frozen=True)
class CellSummary:
    cell: Cell
    mean_validation_f1: float
    mean_test_f1: float
    completed: int


@dataclass
class GridSearchResult:
    trials: list[TrialResult]
    failures: list[FailedCell]
    summaries: list[CellSummary]
    provider: str
    provider_params: dict

    @property
    def best(self) -> TrialResult:
        if not self.trials:
            raise RuntimeError("grid search produced no successful trials")
        return self.trials[0]


def vanilla_config(coreset_ratio: float, class_counts: dict[int, int],
                   seed: int = 0) -> SamplerConfig:
    """The untuned baseline: no deterministic inclusion, inverse-probability
    weights, proportional class allocation."""
    if not (0 < coreset_ratio <= 1):
        raise ValueError(f"coreset_ratio must lie in (0, 1], got {coreset_ratio}")
    n = int(sum(class_counts.values()))
    m = coreset_size_for(coreset_ratio, n, len(class_counts))
    return SamplerConfig(coreset_size=m, det_ratio=0.0, weight_strategy="inv",
                         class_allocation="proportional", seed=seed)


def coreset_size_for(ratio: float, n: int, n_classes: int) -> int:
    """round(ratio * n), clamped to [n_classes, n]."""
    return int(min(n, max(n_classes, round(ratio * n))))


def enumerate_cells(grid: GridSpec) -> list[Cell]:
    """Vanilla cells (one per coreset ratio) followed by the Cartesian
    product of the grid axes, deduplicated keeping the first occurrence."""
    regs = grid.regularizations if grid.regularizations is not None else (None,)
    cells: list[Cell] = []
    seen = set()
    for ratio in grid.coreset_ratios:
        cell = Cell(len(cells), ratio, 0.0, "inv", "proportional", None,
                    vanilla=True)
        if cell.key() not in seen:
            seen.add(cell.key())
            cells.append(cell)
    for ratio, det, strategy, alloc, reg in itertools.product(
            grid.coreset_ratios, grid.det_ratios, grid.weight_strategies,
            grid.class_allocations, regs):
        cell = Cell(len(cells), ratio, det, strategy, alloc, reg)
        if cell.key() in seen:
            continue
        seen.add(cell.key())
        cells.append(cell)
    return cells


def _evaluate_config(splits: SplitBundle, scores: SensitivityScores,
                     config: SamplerConfig, train_config: TrainConfig,
                     regularization: float | None):
    """Build -> train -> evaluate; shared by grid cells and baselines."""
    coreset = build_coreset(splits.train, scores, config)
    features, labels, weights = coreset.materialize(splits.train)
    cfg = train_config
    if regularization is not None:
        cfg = replace(train_config, regularization=regularization)
    model = train(features, labels, weights, cfg)
    val = classification_report(
        splits.validation.labels, decision_scores(model, splits.validation.features))
    test = classification_report(
        splits.test.labels, decision_scores(model, splits.test.features))
    return coreset, model, val, test, cfg


def _run_cell(splits, scores, cell: Cell, repeat: int, seed: int,
              train_config: TrainConfig):
    train_split = splits.train
    n_classes = len(train_split.classes)
    m = coreset_size_for(cell.coreset_ratio, train_split.n, n_classes)
    config = SamplerConfig(coreset_size=m, det_ratio=cell.det_ratio,
                           weight_strategy=cell.weight_strategy,
                           class_allocation=_thaw_allocation(cell.class_allocation),
                           seed=seed)
    try:
        coreset, _, val, test, cfg = _evaluate_config(
            splits, scores, config, train_config, cell.regularization)
    except (AllocationError, StrategyInfeasibleError) as exc:
        return FailedCell(cell.index, repeat, seed, str(exc))
    return TrialResult(cell.index, repeat, seed, scores.provider_name, config,
                       cell.coreset_ratio, cfg.regularization, val, test,
                       CoresetStats.of(coreset), vanilla=cell.vanilla)


_WORKER_CTX: dict = {}


def _worker_init(splits, scores, cells, train_config, repeats, base_seed):
    _WORKER_CTX["args"] = (splits, scores, cells, train_config, repeats, base_seed)


def _worker_task(flat_index: int):
    splits, scores, cells, train_config, repeats, base_seed = _WORKER_CTX["args"]
    cell = cells[flat_index // repeats]
    repeat = flat_index % repeats
    return _run_cell(splits, scores, cell, repeat, base_seed + flat_index,
                     train_config)


def run_grid(splits: SplitBundle, grid: GridSpec, train_config: TrainConfig,
             workers: int = 1) -> GridSearchResult:
    """Evaluate every cell x repeat and rank by mean validation F1.

    The seed of the trial with flat index i (cell-major, repeats within a
    cell) is base_seed + i, so a fixed GridSpec is fully reproducible.
    Infeasible cells are recorded as failures and excluded from the ranking;
    the run continues.
    """
    scores = compute_scores(grid.sensitivity_provider, splits.train,
                            **grid.provider_params)
    cells = enumerate_cells(grid)
    n_tasks = len(cells) * grid.repeats
    if workers > 1 and n_tasks > 1:
        with ProcessPoolExecutor(
                max_workers=workers, initializer=_worker_init,
                initargs=(splits, scores, cells, train_config, grid.repeats,
                          grid.base_seed)) as pool:
            chunk = max(1, n_tasks // (workers * 8))
            outcomes = list(pool.map(_worker_task, range(n_tasks), chunksize=chunk))
    else:
        _worker_init(splits, scores, cells, train_config, grid.repeats,
                     grid.base_seed)
        outcomes = [_worker_task(i) for i in range(n_tasks)]

    trials = [o for o in outcomes if isinstance(o, TrialResult)]
    failures = [o for o in outcomes if isinstance(o, FailedCell)]

    by_cell: dict[int, list[TrialResult]] = {}
    for t in trials:
        by_cell.setdefault(t.cell_index, []).append(t)
    summaries = []
    for cell in cells:
        group = by_cell.get(cell.index)
        if not group:
            continue
        summaries.append(CellSummary(
            cell,
            float(np.mean([t.validation.f1 for t in group])),
            float(np.mean([t.test.f1 for t in group])),
            len(group)))
    summaries.sort(key=lambda s: (-s.mean_validation_f1, s.cell.index))
    rank_of = {s.cell.index: r for r, s in enumerate(summaries)}
    trials.sort(key=lambda t: (rank_of[t.cell_index], t.repeat))
    return GridSearchResult(trials, failures, summaries, grid.sensitivity_provider,
                            dict(grid.provider_params))


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    split: str
    balanced_accuracy: float
    f1: float
    roc_auc: float


def compare_to_baselines(splits: SplitBundle, best: TrialResult,
                         train_config: TrainConfig,
                         provider_params: dict | None = None) -> list[ComparisonRow]:
    """Tuned vs vanilla vs uniform-sampling vs full-data training rows.

    All coresets use the best trial's size and seed; tuned and vanilla share
    the best trial's sensitivity provider, while the random baseline samples
    uniformly. Full-data training appears exactly once per split.
    """
    train_split = splits.train
    scores = compute_scores(best.provider, train_split, **(provider_params or {}))
    uniform = compute_scores("uniform", train_split)
    base = vanilla_config(best.coreset_ratio,
                          {int(c): int(np.sum(train_split.labels == c))
                           for c in train_split.classes}, seed=best.seed)
    base = replace(base, coreset_size=best.config.coreset_size)

    rows: list[ComparisonRow] = []

    def add(method: str, val: MetricsReport, test: MetricsReport):
        for split_name, report in (("validation", val), ("test", test)):
            rows.append(ComparisonRow(method, split_name, report.balanced_accuracy,
                                      report.f1, report.roc_auc))

    _, _, val, test, _ = _evaluate_config(splits, scores, best.config,
                                          train_config, best.regularization)
    add("tuned", val, test)
    _, _, val, test, _ = _evaluate_config(splits, scores, base, train_config, None)
    add("vanilla", val, test)
    _, _, val, test, _ = _evaluate_config(splits, uniform, base, train_config, None)
    add("random", val, test)
    model = train(train_split.features, train_split.labels, train_split.weights,
                  train_config)
    add("full",
        classification_report(splits.validation.labels,
                              decision_scores(model, splits.validation.features)),
        classification_report(splits.test.labels,
                              decision_scores(model, splits.test.features)))
    return rows


@dataclass
class RefinedBest:
    result: TrialResult
    trace: RefineTrace
    coreset: Coreset


def refine_best(splits: SplitBundle, best: TrialResult,
                refine_config: RefineConfig, train_config: TrainConfig,
                provider_params: dict | None = None) -> RefinedBest:
    """Rebuild the best coreset, refine it, and re-evaluate the winner."""
    scores = compute_scores(best.provider, splits.train, **(provider_params or {}))
    coreset = build_coreset(splits.train, scores, best.config)
    cfg = replace(train_config, regularization=best.regularization)
    refined, trace = refine(splits.train, splits.validation, coreset, cfg,
                            refine_config)
    features, labels, weights = refined.materialize(splits.train)
    model = train(features, labels, weights, cfg)
    val = classification_report(
        splits.validation.labels, decision_scores(model, splits.validation.features))
    test = classification_report(
        splits.test.labels, decision_scores(model, splits.test.features))
    result = TrialResult(best.cell_index, best.repeat, best.seed, best.provider,
                         best.config, best.coreset_ratio, best.regularization,
                         val, test, CoresetStats.of(refined), vanilla=best.vanilla)
    return RefinedBest(result, trace, refined)


def curve_rows(result: GridSearchResult) -> list[tuple[float, str, str, float]]:
    """(coreset_ratio, method, split, f1) rows for ratio-vs-F1 plots."""
    rows = []
    ratios = sorted({s.cell.coreset_ratio for s in result.summaries})
    for ratio in ratios:
        at_ratio = [s for s in result.summaries if s.cell.coreset_ratio == ratio]
        tuned = min(at_ratio, key=lambda s: (-s.mean_validation_f1, s.cell.index))
        rows.append((ratio, "tuned", "validation", tuned.mean_validation_f1))
        rows.append((ratio, "tuned", "test", tuned.mean_test_f1))
        vanilla = [s for s in at_ratio if s.cell.vanilla]
        if vanilla:
            rows.append((ratio, "vanilla", "validation",
                         vanilla[0].mean_validation_f1))
            rows.append((ratio, "vanilla", "test", vanilla[0].mean_test_f1))
    return rows


TRIAL_COLUMNS = ("rank", "cell_index", "repeat", "seed", "provider",
                 "coreset_ratio", "coreset_size", "det_ratio", "weight_strategy",
                 "class_allocation", "regularization", "vanilla",
                 "mean_validation_f1",
                 "validation_f1", "validation_balanced_accuracy",
                 "validation_accuracy", "validation_roc_auc",
                 "validation_average_precision",
                 "test_f1", "test_balanced_accuracy", "test_accuracy",
                 "test_roc_auc", "test_average_precision",
                 "tp", "fp", "tn", "fn",
                 "unique_points", "total_weight", "per_class_counts")


def trials_to_csv(result: GridSearchResult, path,
                  header_comment: str | None = None) -> None:
    mean_f1 = {s.cell.index: s.mean_validation_f1 for s in result.summaries}
    rank = {s.cell.index: r for r, s in enumerate(result.summaries)}
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(TRIAL_COLUMNS) + "\n")
        for t in result.trials:
            alloc = allocation_label(t.config.class_allocation).replace(",", ";")
            counts = json.dumps(dict(t.coreset_stats.per_class_counts)).replace(",", ";")
            row = [rank[t.cell_index], t.cell_index, t.repeat, t.seed, t.provider,
                   FLOAT_FMT % t.coreset_ratio, t.config.coreset_size,
                   FLOAT_FMT % t.config.det_ratio, t.config.weight_strategy,
                   alloc, FLOAT_FMT % t.regularization, int(t.vanilla),
                   FLOAT_FMT % mean_f1[t.cell_index],
                   FLOAT_FMT % t.validation.f1,
                   FLOAT_FMT % t.validation.balanced_accuracy,
                   FLOAT_FMT % t.validation.accuracy,
                   FLOAT_FMT % t.validation.roc_auc,
                   FLOAT_FMT % t.validation.average_precision,
                   FLOAT_FMT % t.test.f1,
                   FLOAT_FMT % t.test.balanced_accuracy,
                   FLOAT_FMT % t.test.accuracy,
                   FLOAT_FMT % t.test.roc_auc,
                   FLOAT_FMT % t.test.average_precision,
                   *t.test.confusion,
                   t.coreset_stats.unique_points,
                   FLOAT_FMT % t.coreset_stats.total_weight,
                   counts]
            fh.write(",".join(str(v) for v in row) + "\n")
