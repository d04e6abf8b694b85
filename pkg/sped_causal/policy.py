# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Treatment assignment rules learned from doubly robust scores.

A policy assigns every unit one treatment; its value is the mean score of
the assigned treatments. Policy trees are found by exhaustive search over
axis-aligned splits at midpoints between adjacent observed values.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import joblib
import numpy as np
import pandas as pd
import scipy.stats

from sped_causal import artifacts
from sped_causal.data import (
    DEFAULT_TREATMENTS,
    TREATMENT_COLUMN,
    UNIT_ID_COLUMN,
    CatalogueError,
    ParameterError,
    TreatmentCatalogue,
    make_folds,
)

LOG = logging.getLogger(__name__)

GAMMA_PREFIX = "gamma_"
TIE_TOLERANCE = 1e-9
MAX_EVALUATIONS = 10**9
DEFAULT_FOLDS = 10
OBSERVED_BASELINE = "observed"
LEARNED_BASELINE = "learned"
ALL_PREFIX = "all:"

DEFAULT_COSTS = {
    "no_sped": 20_000.0,
    "counseling": 20_000.0,
    "academic_support": 20_000.0,
    "individual_therapy": 5_000.0,
    "inclusion": 20_000.0,
    "semi_segregation": 24_500.0,
    "full_segregation": 75_000.0,
}


class PolicyError(Exception):
    """A policy cannot be learned or evaluated."""


class SearchBudgetError(PolicyError):
    """The exhaustive tree search would exceed its evaluation budget."""


def cost_table_default() -> TreatmentCatalogue:
    """Annual cost per student of every placement, in CHF."""
    costs = tuple(DEFAULT_COSTS[t] for t in DEFAULT_TREATMENTS)
    return TreatmentCatalogue(DEFAULT_TREATMENTS, costs)


def _ties(a: float, b: float) -> bool:
    return abs(a - b) <= TIE_TOLERANCE * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class PolicyNode:
    """A split on ``feature <= threshold`` or, without feature, a leaf."""

    treatment: Optional[str] = None
    feature: Optional[str] = None
    threshold: float = 0.0
    left: Optional["PolicyNode"] = None
    right: Optional["PolicyNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def leaves(self) -> List[str]:
        if self.is_leaf:
            return [self.treatment]
        return self.left.leaves() + self.right.leaves()

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"treatment": self.treatment}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PolicyNode":
        if "feature" not in payload:
            return cls(treatment=payload["treatment"])
        return cls(
            feature=payload["feature"],
            threshold=float(payload["threshold"]),
            left=cls.from_dict(payload["left"]),
            right=cls.from_dict(payload["right"]),
        )


@dataclass(frozen=True)
class PolicyTree:
    """A fitted assignment tree over named features."""

    root: PolicyNode
    depth: int
    trained_on: Tuple[str, ...]
    treatments: Tuple[str, ...]
    value: float = float("nan")

    def predict(self, Z: np.ndarray) -> np.ndarray:
        """Treatment label of every row of Z (columns as ``trained_on``)."""
        Z = np.asarray(Z, dtype=np.float64)
        out = np.empty(Z.shape[0], dtype=object)

        def walk(node: PolicyNode, rows: np.ndarray):
            if node.is_leaf:
                out[rows] = node.treatment
                return
            go_left = Z[rows, self.trained_on.index(node.feature)] <= node.threshold
            walk(node.left, rows[go_left])
            walk(node.right, rows[~go_left])

        walk(self.root, np.arange(Z.shape[0]))
        return out

    def describe(self) -> str:
        lines = []

        def walk(node: PolicyNode, indent: str):
            if node.is_leaf:
                lines.append(f"{indent}assign {node.treatment}")
                return
            lines.append(f"{indent}if {node.feature} <= {node.threshold:g}:")
            walk(node.left, indent + "    ")
            lines.append(f"{indent}else:  # {node.feature} > {node.threshold:g}")
            walk(node.right, indent + "    ")

        walk(self.root, "")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "trained_on": list(self.trained_on),
            "treatments": list(self.treatments),
            "value": self.value,
            "tree": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PolicyTree":
        return cls(
            root=PolicyNode.from_dict(payload["tree"]),
            depth=int(payload["depth"]),
            trained_on=tuple(payload["trained_on"]),
            treatments=tuple(payload["treatments"]),
            value=float(payload["value"]),
        )


@dataclass(frozen=True)
class _Candidate:
    total: float
    node: PolicyNode
    distinct: frozenset
    key: Tuple = ()

    def beats(self, other: Optional["_Candidate"]) -> bool:
        if other is None:
            return True
        if _ties(self.total, other.total):
            return (len(self.distinct), *self.key) < (len(other.distinct), *other.key)
        return self.total > other.total


class _Search:
    """Exhaustive search state shared by every node of one fit."""

    def __init__(self, Z, gamma, names, labels, min_leaf):
        self.Z = Z
        self.gamma = gamma
        self.names = names
        self.labels = labels
        self.min_leaf = min_leaf
        self.feature_order = sorted(range(len(names)), key=lambda j: names[j])
        self.rank = {j: r for r, j in enumerate(self.feature_order)}

    def _first_best(self, sums: np.ndarray) -> np.ndarray:
        """Index of the first entry tied with the row maximum."""
        # Leaf treatments ignore sibling leaves; fewer distinct treatments only
        # breaks ties between whole subtrees.
        best = sums.max(axis=-1, keepdims=True)
        tied = sums >= best - TIE_TOLERANCE * np.maximum(1.0, np.abs(best))
        return np.argmax(tied, axis=-1)

    def leaf(self, rows: np.ndarray) -> _Candidate:
        sums = self.gamma[rows].sum(axis=0)
        d = int(self._first_best(sums))
        label = self.labels[d]
        return _Candidate(float(sums[d]), PolicyNode(treatment=label), frozenset([label]))

    def _splits(self, rows: np.ndarray, j: int):
        """Sorted rows and the valid split positions on feature j."""
        order = rows[np.argsort(self.Z[rows, j], kind="stable")]
        values = self.Z[order, j]
        m = order.size
        positions = np.arange(self.min_leaf - 1, m - self.min_leaf)
        if positions.size:
            positions = positions[values[positions] < values[positions + 1]]
        return order, values, positions

    def stump(self, rows: np.ndarray) -> _Candidate:
        """Best depth-1 tree, vectorised over split positions."""
        best = None
        for j in self.feature_order:
            order, values, positions = self._splits(rows, j)
            if positions.size == 0:
                continue
            cumulative = np.cumsum(self.gamma[order], axis=0)
            left = cumulative[positions]
            right = cumulative[-1] - left
            left_d = self._first_best(left)
            right_d = self._first_best(right)
            idx = np.arange(positions.size)
            totals = left[idx, left_d] + right[idx, right_d]
            thresholds = 0.5 * (values[positions] + values[positions + 1])
            distinct = 1 + (left_d != right_d)
            # best within this feature: highest total, then fewer treatments, then threshold
            top = totals.max()
            tied = totals >= top - TIE_TOLERANCE * max(1.0, abs(top))
            pick = np.lexsort((thresholds, distinct, ~tied))[0]
            a, b = self.labels[left_d[pick]], self.labels[right_d[pick]]
            candidate = _Candidate(
                float(totals[pick]),
                PolicyNode(
                    feature=self.names[j],
                    threshold=float(thresholds[pick]),
                    left=PolicyNode(treatment=a),
                    right=PolicyNode(treatment=b),
                ),
                frozenset([a, b]),
                (self.rank[j], float(thresholds[pick])),
            )
            if candidate.beats(best):
                best = candidate
        return best if best is not None else self.leaf(rows)

    def best_for_feature(self, rows: np.ndarray, depth: int, j: int) -> Optional[_Candidate]:
        best = None
        order, values, positions = self._splits(rows, j)
        for s in positions:
            left = self.best(order[: s + 1], depth - 1)
            right = self.best(order[s + 1 :], depth - 1)
            threshold = float(0.5 * (values[s] + values[s + 1]))
            candidate = _Candidate(
                left.total + right.total,
                PolicyNode(
                    feature=self.names[j], threshold=threshold, left=left.node, right=right.node
                ),
                left.distinct | right.distinct,
                (self.rank[j], threshold),
            )
            if candidate.beats(best):
                best = candidate
        return best

    def best(self, rows: np.ndarray, depth: int) -> _Candidate:
        if depth == 0:
            return self.leaf(rows)
        if depth == 1:
            return self.stump(rows)
        best = None
        for j in self.feature_order:
            candidate = self.best_for_feature(rows, depth, j)
            if candidate is not None and candidate.beats(best):
                best = candidate
        return best if best is not None else self.leaf(rows)


def _root_feature(search: _Search, depth: int, j: int) -> Optional[_Candidate]:
    return search.best_for_feature(np.arange(search.Z.shape[0]), depth, j)


def search_size(Z: np.ndarray, depth: int) -> float:
    """Upper bound on split evaluations of an exhaustive search."""
    unique = sum(np.unique(Z[:, j]).size for j in range(Z.shape[1]))
    return float(unique) ** depth


def fit_policy_tree(
    Z: np.ndarray,
    gamma: np.ndarray,
    depth: int = 2,
    feature_names: Optional[Sequence[str]] = None,
    labels: Optional[Sequence[str]] = None,
    treatments: Optional[Sequence[str]] = None,
    min_leaf: int = 1,
    max_evaluations: float = MAX_EVALUATIONS,
    n_jobs: int = 1,
) -> PolicyTree:
    """Find the value-maximising assignment tree of a fixed depth.

    Every node splits whenever some split leaves ``min_leaf`` units on both
    sides. Totals within a relative 1e-9 tie; ties go to fewer distinct
    treatments, then the lexicographically first feature, then the smaller
    threshold. A leaf takes the first candidate treatment attaining the
    maximum.

    :param Z: n x q numeric policy variables
    :param gamma: n x D scores, columns as ``labels``
    :param depth: 1, 2 or 3
    :param feature_names: names of the Z columns
    :param labels: treatment label of every gamma column
    :param treatments: candidate treatments, every label when omitted
    :param min_leaf: minimum units per leaf
    :param max_evaluations: budget on the search size
    :param n_jobs: joblib workers over root features
    :raises PolicyError: if Z is empty
    :raises SearchBudgetError: if the search exceeds max_evaluations
    """
    Z = np.asarray(Z, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0 or Z.shape[1] == 0:
        raise PolicyError("Policy variables Z are empty")
    if depth not in (1, 2, 3):
        raise ParameterError(f"depth={depth} must be 1, 2 or 3")
    if gamma.shape[0] != Z.shape[0]:
        raise ParameterError("Z and scores must have the same rows")
    names = list(feature_names or [f"z{j}" for j in range(Z.shape[1])])
    labels = list(labels or [str(d) for d in range(gamma.shape[1])])
    if len(names) != Z.shape[1] or len(labels) != gamma.shape[1]:
        raise ParameterError("Names must match the columns of Z and scores")
    treatments = list(treatments or labels)
    unknown = [t for t in treatments if t not in labels]
    if unknown:
        raise CatalogueError(f"Candidate treatments {unknown} have no scores")
    if len(set(treatments)) < 2:
        raise ParameterError("A policy needs at least two candidate treatments")
    if min_leaf < 1:
        raise ParameterError("min_leaf must be at least 1")
    budget = search_size(Z, depth)
    if budget > max_evaluations:
        raise SearchBudgetError(
            f"Depth {depth} search over {Z.shape[1]} features needs ~{budget:.3g} evaluations "
            f"(limit {max_evaluations:.3g}); use fewer or coarser features"
        )

    columns = [labels.index(t) for t in treatments]
    search = _Search(Z, gamma[:, columns], names, treatments, min_leaf)
    rows = np.arange(Z.shape[0])
    if depth == 1:
        best = search.stump(rows)
    else:
        per_feature = joblib.Parallel(n_jobs=n_jobs)(
            joblib.delayed(_root_feature)(search, depth, j) for j in search.feature_order
        )
        best = None
        for candidate in per_feature:
            if candidate is not None and candidate.beats(best):
                best = candidate
        if best is None:
            best = search.leaf(rows)
    tree = PolicyTree(best.node, depth, tuple(names), tuple(treatments), best.total / Z.shape[0])
    LOG.info("Depth-%d policy tree with value %.4f", depth, tree.value)
    return tree


@dataclass(frozen=True)
class PolicyEvaluation:
    """Value, treatment shares and cost of an assignment."""

    value: float
    share_per_treatment: Dict[str, float]
    total_cost: Optional[float] = None
    cost_ratio_vs_actual: Optional[float] = None
    reallocated_share: Optional[float] = None
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "n": self.n,
            "total_cost": self.total_cost,
            "cost_ratio_vs_actual": self.cost_ratio_vs_actual,
            "reallocated_share": self.reallocated_share,
            **{f"share:{t}": s for t, s in self.share_per_treatment.items()},
        }


def policy_value(
    assignment: Sequence[str],
    gamma: np.ndarray,
    labels: Sequence[str],
    costs: Optional[Mapping[str, float]] = None,
    actual: Optional[Sequence[str]] = None,
) -> PolicyEvaluation:
    """Mean score of the assigned treatments.

    :param assignment: treatment label of every unit
    :param gamma: n x D scores, columns as ``labels``
    :param costs: annual cost per label; enables total cost
    :param actual: the observed assignment, for cost ratio and reallocation share
    :raises CatalogueError: if a unit is assigned an unknown treatment
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    labels = list(labels)
    assignment = [str(a) for a in assignment]
    unknown = sorted(set(assignment) - set(labels))
    if unknown:
        raise CatalogueError(f"Assignment to unknown treatments {unknown}")
    if len(assignment) != gamma.shape[0]:
        raise ParameterError("Need exactly one assignment per unit")
    index = np.array([labels.index(a) for a in assignment], dtype=np.int64)
    n = index.size
    value = float(gamma[np.arange(n), index].mean())
    shares = {label: float(np.mean(index == d)) for d, label in enumerate(labels)}

    total_cost = ratio = reallocated = None
    if costs is not None:
        missing = sorted(set(assignment) - set(costs))
        if missing:
            raise CatalogueError(f"No cost for {missing}")
        total_cost = float(sum(costs[a] for a in assignment))
    if actual is not None:
        actual = [str(a) for a in actual]
        reallocated = float(np.mean([a != b for a, b in zip(assignment, actual)]))
        if costs is not None:
            ratio = total_cost / float(sum(costs[a] for a in actual))
    return PolicyEvaluation(value, shares, total_cost, ratio, reallocated, n)


@dataclass(frozen=True)
class BaselineComparison:
    baseline: str
    learned_value: float
    baseline_value: float
    difference: float
    se: float
    t_stat: float
    p_value: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class PolicyValidation:
    """Out-of-fold assignments and their comparison with baseline policies."""

    assignment: np.ndarray
    value: float
    comparisons: Tuple[BaselineComparison, ...]
    trees: Tuple[PolicyTree, ...] = ()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(c) for c in self.comparisons])


def _difference_test(diff: np.ndarray) -> Tuple[float, float, float, bool]:
    se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
    if not se > 0:
        mean = float(diff.mean())
        return se, float("nan"), 1.0 if mean == 0 else 0.0, True
    result = scipy.stats.ttest_1samp(diff, 0.0)
    return se, float(result.statistic), float(result.pvalue), False


def validate_policy(
    Z: np.ndarray,
    gamma: np.ndarray,
    depth: int = 2,
    feature_names: Optional[Sequence[str]] = None,
    labels: Optional[Sequence[str]] = None,
    treatments: Optional[Sequence[str]] = None,
    observed: Optional[Sequence[str]] = None,
    baselines: Optional[Sequence[str]] = None,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    **tree_options,
) -> PolicyValidation:
    """Cross-validate a policy tree against baseline policies.

    Trees are trained on K-1 folds and assign the left-out fold. The per-unit
    difference between the score of the out-of-fold assignment and the score
    under a baseline is tested against zero with a one-sample t-test.
    Baselines are ``all:<treatment>``, ``observed`` and ``learned``.

    :raises ParameterError: if folds < 2 or a baseline is unknown
    """
    Z = np.asarray(Z, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    labels = list(labels or [str(d) for d in range(gamma.shape[1])])
    treatments = list(treatments or labels)
    if folds < 2:
        raise ParameterError("Policy validation needs at least two folds")
    if baselines is None:
        baselines = [f"{ALL_PREFIX}{t}" for t in treatments]
        if observed is not None:
            baselines.append(OBSERVED_BASELINE)

    assignment = np.empty(Z.shape[0], dtype=object)
    trees = []
    for _, train, test in make_folds(Z.shape[0], folds, seed=seed, stratify=False).splits():
        tree = fit_policy_tree(
            Z[train],
            gamma[train],
            depth,
            feature_names,
            labels,
            treatments,
            **tree_options,
        )
        assignment[test] = tree.predict(Z[test])
        trees.append(tree)
    rows = np.arange(Z.shape[0])
    learned = gamma[rows, [labels.index(a) for a in assignment]]

    comparisons = []
    for baseline in baselines:
        if baseline == OBSERVED_BASELINE:
            if observed is None:
                raise ParameterError("The observed baseline needs the observed assignment")
            reference = gamma[rows, [labels.index(str(a)) for a in observed]]
        elif baseline == LEARNED_BASELINE:
            reference = learned.copy()
        elif baseline.startswith(ALL_PREFIX) and baseline[len(ALL_PREFIX) :] in labels:
            reference = gamma[:, labels.index(baseline[len(ALL_PREFIX) :])]
        else:
            raise ParameterError(f"Unknown baseline {baseline!r}")
        diff = learned - reference
        se, t_stat, p_value, degenerate = _difference_test(diff)
        comparisons.append(
            BaselineComparison(
                baseline=baseline,
                learned_value=float(learned.mean()),
                baseline_value=float(reference.mean()),
                difference=float(diff.mean()),
                se=se,
                t_stat=t_stat,
                p_value=p_value,
                degenerate=degenerate,
            )
        )
    return PolicyValidation(assignment, float(learned.mean()), tuple(comparisons), tuple(trees))


@dataclass(frozen=True, eq=False)
class PolicyScores:
    """Scores with the policy variables and observed treatments of the same units."""

    unit_ids: Tuple[str, ...]
    observed: Tuple[str, ...]
    Z: np.ndarray
    feature_names: Tuple[str, ...]
    gamma: np.ndarray
    labels: Tuple[str, ...]

    def features(self, names: Sequence[str]) -> np.ndarray:
        unknown = [name for name in names if name not in self.feature_names]
        if unknown:
            raise ParameterError(f"Unknown policy variables {unknown}")
        return self.Z[:, [self.feature_names.index(name) for name in names]]


def load_policy_scores(path) -> PolicyScores:
    """Read ``unit_id, treatment, <Z columns>, gamma_<label>...`` CSV."""
    frame = pd.read_csv(path, dtype={UNIT_ID_COLUMN: str, TREATMENT_COLUMN: str})
    missing = {UNIT_ID_COLUMN, TREATMENT_COLUMN} - set(frame.columns)
    if missing:
        raise ParameterError(f"Policy scores {path} lack columns {sorted(missing)}")
    score_columns = [c for c in frame.columns if c.startswith(GAMMA_PREFIX)]
    if len(score_columns) < 2:
        raise ParameterError(f"Policy scores {path} need at least two {GAMMA_PREFIX}* columns")
    feature_names = [
        c for c in frame.columns if c not in (UNIT_ID_COLUMN, TREATMENT_COLUMN, *score_columns)
    ]
    return PolicyScores(
        unit_ids=tuple(frame[UNIT_ID_COLUMN]),
        observed=tuple(frame[TREATMENT_COLUMN]),
        Z=frame[feature_names].to_numpy(dtype=np.float64),
        feature_names=tuple(feature_names),
        gamma=frame[score_columns].to_numpy(dtype=np.float64),
        labels=tuple(c[len(GAMMA_PREFIX) :] for c in score_columns),
    )


def write_policy_scores(path, scores: PolicyScores) -> Path:
    frame = pd.DataFrame(
        {UNIT_ID_COLUMN: list(scores.unit_ids), TREATMENT_COLUMN: list(scores.observed)}
    )
    for j, name in enumerate(scores.feature_names):
        frame[name] = scores.Z[:, j]
    for d, label in enumerate(scores.labels):
        frame[f"{GAMMA_PREFIX}{label}"] = scores.gamma[:, d]
    return artifacts.write_frame(path, frame)


def load_costs(path) -> Dict[str, float]:
    """Read a ``treatment,cost`` CSV."""
    frame = pd.read_csv(path, dtype={TREATMENT_COLUMN: str})
    if set(frame.columns) != {TREATMENT_COLUMN, "cost"}:
        raise ParameterError(f"Cost table {path} needs exactly the columns treatment,cost")
    costs = dict(zip(frame[TREATMENT_COLUMN], frame["cost"].astype(float)))
    if any(not c > 0 for c in costs.values()):
        raise ParameterError("Costs must be strictly positive")
    return costs


@dataclass(frozen=True)
class SpilloverFunction:
    """Piecewise-linear expected outcome of mainstream students by SEN share."""

    breakpoints: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        x = np.asarray(self.breakpoints, dtype=np.float64)
        y = np.asarray(self.values, dtype=np.float64)
        if x.size < 2 or x.size != y.size:
            raise ParameterError("A spillover table needs at least two (share, value) points")
        if (np.diff(x) <= 0).any() or x[0] < 0 or x[-1] > 1:
            raise ParameterError("Spillover shares must increase strictly within [0, 1]")
        if (np.diff(y) > 0).any():
            raise ParameterError("Spillover functions must be non-increasing in the SEN share")

    def __call__(self, share: float) -> float:
        if not self.breakpoints[0] <= share <= self.breakpoints[-1]:
            raise ParameterError(
                f"SEN share {share:g} is outside the spillover table "
                f"[{self.breakpoints[0]:g}, {self.breakpoints[-1]:g}]"
            )
        return float(np.interp(share, self.breakpoints, self.values))

    @classmethod
    def flat(cls, value: float = 0.0) -> "SpilloverFunction":
        return cls((0.0, 1.0), (value, value))

    @classmethod
    def from_csv(cls, path) -> "SpilloverFunction":
        """Read a ``share,value`` CSV."""
        frame = pd.read_csv(path)
        if list(frame.columns) != ["share", "value"]:
            raise ParameterError(f"Spillover table {path} needs the columns share,value")
        return cls(tuple(frame["share"].astype(float)), tuple(frame["value"].astype(float)))


@dataclass(frozen=True)
class ReallocationInputs:
    n_mainstream: int
    n_reallocated: int
    n_classrooms: int
    avg_class_size: float
    sen_share_before: float
    policy_gain_per_reallocated: float
    spillover_sen: SpilloverFunction = field(default_factory=SpilloverFunction.flat)
    spillover_nonsen: SpilloverFunction = field(default_factory=SpilloverFunction.flat)

    def __post_init__(self):
        if not 0.0 <= self.sen_share_before <= 1.0:
            raise ParameterError("The SEN share before reallocation must lie in [0, 1]")
        if self.n_classrooms < 1 or self.avg_class_size <= 0:
            raise ParameterError("Classrooms and class size must be positive")
        if self.n_reallocated < 0 or self.n_mainstream < 0:
            raise ParameterError("Student counts must be non-negative")


@dataclass(frozen=True)
class ReallocationEffect:
    """Per-student effect of moving students into mainstream classrooms."""

    sen_share_after: float
    delta_share: float
    direct: float
    spillover_sen: float
    spillover_nonsen: float
    spillover: float
    combined: float
    population_weighted: float


def reallocation_welfare(inputs: ReallocationInputs) -> ReallocationEffect:
    """Trade the gain of reallocated students against classroom spillovers.

    The SEN share of a classroom rises by ``(n_reallocated / n_classrooms) /
    avg_class_size``. The direct gain is that increase times the policy gain
    per reallocated student; the spillover is the change of the spillover
    functions averaged over SEN and non-SEN mainstream students.

    :raises ParameterError: if the new SEN share leaves [0, 1]
    """
    delta = inputs.n_reallocated / inputs.n_classrooms / inputs.avg_class_size
    after = inputs.sen_share_before + delta
    if not 0.0 <= after <= 1.0:
        raise ParameterError(f"The SEN share after reallocation ({after:g}) leaves [0, 1]")
    before = inputs.sen_share_before
    sen = inputs.spillover_sen(after) - inputs.spillover_sen(before)
    nonsen = inputs.spillover_nonsen(after) - inputs.spillover_nonsen(before)
    spillover = before * sen + (1.0 - before) * nonsen
    direct = delta * inputs.policy_gain_per_reallocated
    students = inputs.n_reallocated + inputs.n_mainstream
    weighted = 0.0
    if students:
        weighted = (
            inputs.n_reallocated * inputs.policy_gain_per_reallocated
            + inputs.n_mainstream * spillover
        ) / students
    return ReallocationEffect(
        sen_share_after=after,
        delta_share=delta,
        direct=direct,
        spillover_sen=sen,
        spillover_nonsen=nonsen,
        spillover=spillover,
        combined=direct + spillover,
        population_weighted=weighted,
    )
