"""Weighted coreset construction from sensitivity scores.

The tunable knobs: how the coreset budget is split across classes
(proportional to class sizes, or an explicit fraction map), what share of each
class budget is filled deterministically with the highest-probability points,
and how weights are assigned when deterministic and sampled points are merged
(``keep`` / ``inv`` / ``prop``).

Each class is treated as an independent sampling problem: scores are
restricted to the class and renormalized, the class budget plays the role of
the sample size m in the weight formulas, and residual sampling happens on the
class minus its deterministic set. Sampling is with replacement; repeated
draws of one point are folded into its weight, with the multiplicity kept in
``counts``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FLOAT_FMT, largest_remainder
from .sensitivity import ProbabilityVector, SensitivityScores

WEIGHT_STRATEGIES = ("keep", "inv", "prop")

PROVENANCE_DETERMINISTIC = "deterministic"
PROVENANCE_SAMPLED = "sampled"
PROVENANCE_ACTIVE = "active"  # used by the refinement loop


class AllocationError(ValueError):
    pass


class StrategyInfeasibleError(ValueError):
    """A weight strategy cannot produce positive weights for a class."""


@dataclass(frozen=True)
class SamplerConfig:
    """Tunable sampling parameters for one coreset build."""

    coreset_size: int
    det_ratio: float = 0.0
    weight_strategy: str = "inv"
    class_allocation: str | dict[int, float] = "proportional"
    seed: int = 0

    def __post_init__(self):
        if self.coreset_size < 1:
            raise ValueError("coreset_size must be >= 1")
        if not (0.0 <= self.det_ratio < 1.0):
            raise ValueError(f"det_ratio must lie in [0, 1), got {self.det_ratio}")
        if self.weight_strategy not in WEIGHT_STRATEGIES:
            raise ValueError(f"weight_strategy must be one of {WEIGHT_STRATEGIES}, "
                             f"got {self.weight_strategy!r}")
        if isinstance(self.class_allocation, dict):
            alloc = {int(k): float(v) for k, v in self.class_allocation.items()}
            if any(v <= 0 for v in alloc.values()):
                raise ValueError("explicit class fractions must be positive")
            if abs(sum(alloc.values()) - 1.0) > 1e-9:
                raise ValueError("explicit class fractions must sum to 1")
            object.__setattr__(self, "class_allocation", alloc)
        elif self.class_allocation != "proportional":
            raise ValueError("class_allocation must be 'proportional' or a "
                             "class -> fraction map")

    def to_dict(self) -> dict:
        alloc = self.class_allocation
        if isinstance(alloc, dict):
            alloc = {str(k): v for k, v in sorted(alloc.items())}
        return {
            "coreset_size": self.coreset_size,
            "det_ratio": self.det_ratio,
            "weight_strategy": self.weight_strategy,
            "class_allocation": alloc,
            "seed": self.seed,
        }


@dataclass
class Coreset:
    """A weighted subset of the training data.

    point_ids are unique; sampling multiplicity is folded into weights and
    recorded in ``counts``. ``provenance`` tags each point as deterministic,
    sampled, or active (added by refinement).
    """

    point_ids: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=object)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.point_ids)
        for name in ("weights", "labels", "provenance", "counts"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        if len(np.unique(self.point_ids)) != n:
            raise ValueError("coreset point_ids must be unique")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("coreset weights must be finite and > 0")
        valid = {PROVENANCE_DETERMINISTIC, PROVENANCE_SAMPLED, PROVENANCE_ACTIVE}
        if not set(self.provenance.tolist()) <= valid:
            raise ValueError(f"provenance tags must be within {valid}")

    @property
    def n_unique(self) -> int:
        return len(self.point_ids)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def per_class_counts(self) -> dict[int, int]:
        classes, counts = np.unique(self.labels, return_counts=True)
        return {int(c): int(k) for c, k in zip(classes, counts)}

    def materialize(self, train: Dataset):
        """Gather (features, labels, weights) rows from the source train set.

        Checks that the coreset labels still agree with the source.
        """
        rows = train.subset_by_ids(self.point_ids)
        if not np.array_equal(rows.labels, self.labels):
            raise ValueError("coreset labels disagree with the source dataset")
        return rows.features, self.labels, self.weights


def allocate_class_budgets(m: int, class_counts: dict[int, int],
                           policy: str | dict[int, float]) -> dict[int, int]:
    """Split the coreset budget across classes.

    Proportional policy follows class sizes; an explicit map gives each class
    a fraction of m. Budgets are rounded by largest remainder, clipped at each
    class population (overflow redistributes to classes with spare capacity by
    the same rule), and kept >= 1 per class. Budgets sum to min(m, n).
    """
    classes = sorted(int(c) for c in class_counts)
    counts = np.array([class_counts[c] for c in classes], dtype=np.int64)
    if len(classes) == 0:
        raise AllocationError("no classes to allocate")
    if np.any(counts < 1):
        raise AllocationError("every class must have at least one point")
    if m < len(classes):
        raise AllocationError(f"budget m={m} is smaller than the number of "
                              f"classes ({len(classes)})")
    if isinstance(policy, dict):
        policy = {int(k): float(v) for k, v in policy.items()}
        missing = [c for c in classes if c not in policy]
        if missing:
            raise AllocationError(f"allocation map is missing classes {missing}")
        quotas = np.array([policy[c] for c in classes], dtype=np.float64)
    elif policy == "proportional":
        quotas = counts.astype(np.float64)
    else:
        raise AllocationError(f"unknown allocation policy {policy!r}")

    target = min(int(m), int(counts.sum()))
    budgets = largest_remainder(quotas, target)
    # Clip at class populations; redistribute overflow to classes with room.
    while True:
        over = budgets > counts
        if not np.any(over):
            break
        excess = int((budgets[over] - counts[over]).sum())
        budgets[over] = counts[over]
        room = counts - budgets
        open_quotas = np.where((room > 0) & ~over, quotas, 0.0)
        if open_quotas.sum() <= 0:
            open_quotas = np.where(room > 0, room.astype(np.float64), 0.0)
        extra = largest_remainder(open_quotas, excess)
        budgets = np.minimum(budgets + extra, counts)
        if budgets.sum() == target:
            break
    # Largest-remainder can starve a tiny class; budgets must stay positive.
    while np.any(budgets == 0):
        needy = int(np.argmin(budgets))
        donor = int(np.argmax(np.where(budgets > 1, budgets, -1)))
        if budgets[donor] <= 1:
            raise AllocationError("cannot give every class a positive budget")
        budgets[needy] += 1
        budgets[donor] -= 1
    return {c: int(b) for c, b in zip(classes, budgets)}


def select_deterministic(probs: ProbabilityVector, budget: int, det_ratio: float,
                         point_ids: np.ndarray | None = None) -> np.ndarray:
    """Positions of the floor(det_ratio * budget) highest-probability points.

    Ties break by ascending point_id (the position itself when ids are not
    given). det_ratio < 1 keeps the deterministic set strictly smaller than
    the budget.
    """
    if not (0.0 <= det_ratio < 1.0):
        raise ValueError("det_ratio must lie in [0, 1)")
    k = int(np.floor(det_ratio * budget))
    if k >= budget:
        raise ValueError("deterministic set must stay below the budget")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    p = probs.probabilities
    ids = np.arange(len(p)) if point_ids is None else np.asarray(point_ids)
    order = np.lexsort((ids, -p))
    return np.sort(order[:k])


def sample_residual(probs: ProbabilityVector, q_positions: np.ndarray, draws: int,
                    rng: np.random.Generator) -> dict[int, int]:
    """Draw ``draws`` points i.i.d. with replacement from outside Q.

    Probabilities over the complement of Q are renormalized to sum 1; the
    result maps sampled positions to multiplicities summing to ``draws``.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    p = probs.probabilities.copy()
    mask = np.ones(len(p), dtype=bool)
    mask[np.asarray(q_positions, dtype=np.int64)] = False
    residual = np.flatnonzero(mask)
    if len(residual) == 0 or p[residual].sum() <= 0:
        raise ValueError("no residual probability mass outside the deterministic set")
    rp = p[residual] / p[residual].sum()
    picks = rng.choice(len(residual), size=draws, replace=True, p=rp)
    positions, counts = np.unique(residual[picks], return_counts=True)
    return {int(pos): int(c) for pos, c in zip(positions, counts)}


def assign_weights(strategy: str, q_positions: np.ndarray, counts: dict[int, int],
                   probs: ProbabilityVector, m: int, source_weights: np.ndarray,
                   prev_w: float) -> dict[int, float]:
    """Weight the deterministic set Q and the sampled multiset.

    ``probs`` and ``m`` are the sampling problem's probability vector and
    size (the class probabilities and class budget when sampling per class);
    ``prev_w`` is the total source weight of the problem's points.

    keep: Q keeps its source weights; sampled points get inverse-probability
        weights under the residual-renormalized probabilities, scaled so their
        sum equals prev_w minus the deterministic mass.
    inv:  every point, deterministic or sampled, gets the importance-sampling
        weight count * w(p) / (Pr(p) * m) under the problem probabilities.
    prop: Q collectively receives (|Q|/m) * prev_w split proportionally to
        source weights; the sampled side receives the complement, split
        proportionally to its inverse-probability weights.
    """
    if strategy not in WEIGHT_STRATEGIES:
        raise ValueError(f"unknown weight strategy {strategy!r}")
    q_positions = np.asarray(q_positions, dtype=np.int64)
    if set(q_positions.tolist()) & set(counts):
        raise ValueError("deterministic set and sampled counts must be disjoint")
    p = probs.probabilities
    w = np.asarray(source_weights, dtype=np.float64)
    out: dict[int, float] = {}
    sampled = sorted(counts)

    if strategy == "inv":
        for q in q_positions:
            out[int(q)] = w[q] / (p[q] * m)
        for pos in sampled:
            out[pos] = counts[pos] * w[pos] / (p[pos] * m)
        return out

    # keep and prop share the residual-renormalized inverse-probability shape.
    mask = np.ones(len(p), dtype=bool)
    mask[q_positions] = False
    residual_mass = p[mask].sum()
    raw = {pos: counts[pos] * w[pos] / (p[pos] / residual_mass) for pos in sampled}
    raw_total = sum(raw.values())

    if strategy == "keep":
        det_mass = float(w[q_positions].sum())
        remaining = prev_w - det_mass
        if remaining <= 0 or raw_total <= 0:
            raise StrategyInfeasibleError(
                f"keep: deterministic weights ({det_mass}) exhaust the weight "
                f"budget ({prev_w})")
        for q in q_positions:
            out[int(q)] = float(w[q])
        scale = remaining / raw_total
        for pos in sampled:
            out[pos] = raw[pos] * scale
        return out

    # prop
    q_share = len(q_positions) / m
    det_target = q_share * prev_w
    if len(q_positions):
        det_w = w[q_positions]
        det_sum = det_w.sum()
        if det_sum <= 0:
            raise StrategyInfeasibleError(
                "prop: deterministic points carry zero source weight")
        for q, wq in zip(q_positions, det_w):
            out[int(q)] = det_target * wq / det_sum
    if raw_total <= 0:
        raise StrategyInfeasibleError("prop: sampled side has zero raw weight")
    sampled_target = (1.0 - q_share) * prev_w
    for pos in sampled:
        out[pos] = sampled_target * raw[pos] / raw_total
    return out


def build_coreset(data: Dataset, scores: SensitivityScores, config: SamplerConfig,
                  rng: np.random.Generator | None = None) -> Coreset:
    """Build a weighted coreset: allocate per-class budgets, then per class
    select the deterministic set, sample the residual, and assign weights.

    Pure given (data, scores, config, seed): per-class sub-streams are derived
    from the generator so classes could sample independently. Output rows are
    ordered by class id then point_id.
    """
    if len(scores) != data.n:
        raise ValueError(f"scores cover {len(scores)} points, dataset has {data.n}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    classes = data.classes
    class_counts = {int(c): int(np.sum(data.labels == c)) for c in classes}
    budgets = allocate_class_budgets(config.coreset_size, class_counts,
                                     config.class_allocation)
    class_seeds = rng.integers(0, 2**63 - 1, size=len(classes))

    ids_out: list[np.ndarray] = []
    weights_out: list[np.ndarray] = []
    labels_out: list[np.ndarray] = []
    prov_out: list[np.ndarray] = []
    counts_out: list[np.ndarray] = []

    for cls, cls_seed in zip(classes, class_seeds):
        cls = int(cls)
        pos = np.flatnonzero(data.labels == cls)
        ids_c = data.point_ids[pos]
        w_c = data.weights[pos]
        v_c = scores.values[pos]
        probs_c = ProbabilityVector(v_c / v_c.sum())
        budget = budgets[cls]
        q = select_deterministic(probs_c, budget, config.det_ratio, point_ids=ids_c)
        draws = budget - len(q)
        counts = sample_residual(probs_c, q, draws, np.random.default_rng(cls_seed))
        try:
            weight_map = assign_weights(config.weight_strategy, q, counts, probs_c,
                                        budget, w_c, float(w_c.sum()))
        except StrategyInfeasibleError as exc:
            raise StrategyInfeasibleError(f"class {cls}: {exc}") from exc

        rows = ([(int(ids_c[i]), weight_map[int(i)], PROVENANCE_DETERMINISTIC, 1)
                 for i in q]
                + [(int(ids_c[i]), weight_map[i], PROVENANCE_SAMPLED, counts[i])
                   for i in sorted(counts)])
        rows.sort(key=lambda r: r[0])
        ids_out.append(np.array([r[0] for r in rows], dtype=np.int64))
        weights_out.append(np.array([r[1] for r in rows], dtype=np.float64))
        labels_out.append(np.full(len(rows), cls, dtype=np.int64))
        prov_out.append(np.array([r[2] for r in rows], dtype=object))
        counts_out.append(np.array([r[3] for r in rows], dtype=np.int64))

    coreset = Coreset(np.concatenate(ids_out), np.concatenate(weights_out),
                      np.concatenate(labels_out), np.concatenate(prov_out),
                      np.concatenate(counts_out))
    return coreset


def coreset_to_csv(coreset: Coreset, path, header_comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("point_id,class,weight,provenance,count\n")
        for pid, cls, w, prov, cnt in zip(coreset.point_ids, coreset.labels,
                                          coreset.weights, coreset.provenance,
                                          coreset.counts):
            fh.write(f"{int(pid)},{int(cls)},{FLOAT_FMT % w},{prov},{int(cnt)}\n")


def coreset_from_csv(path) -> Coreset:
    ids, classes, weights, prov, counts = [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("point_id"):
                continue
            pid, cls, w, p, cnt = line.split(",")
            ids.append(int(pid))
            classes.append(int(cls))
            weights.append(float(w))
            prov.append(p)
            counts.append(int(cnt))
    return Coreset(np.array(ids), np.array(weights), np.array(classes),
                   np.array(prov, dtype=object), np.array(counts))


def config_to_json(config: SamplerConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
