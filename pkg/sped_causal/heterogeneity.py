# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Effect heterogeneity from per-unit contrast scores.

Group effects regress the scores on level indicators, conditional effects
along a continuous moderator smooth them with a Gaussian kernel, and
individual effects are out-of-fold ensemble predictions of the scores.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
import pandas as pd
import statsmodels.api as sm

from sped_causal import learners
from sped_causal.data import Dataset, FoldAssignment, ParameterError

LOG = logging.getLogger(__name__)

Z_95 = 1.96
BANDWIDTH_FACTOR = 0.9
N_BANDWIDTHS = 20
MIN_DISTINCT_Z = 10
KERNEL_BLOCK = 500
SMD_THRESHOLD = 0.2
N_QUANTILES = 5


@dataclass(frozen=True)
class GateLevel:
    level: str
    n: int
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    p_value: float


@dataclass(frozen=True)
class GateDifference:
    level: str
    other: str
    difference: float
    se: float
    p_value: float


@dataclass(frozen=True)
class GateResult:
    """Group average effects with heteroscedasticity-robust inference."""

    group_var: str
    levels: Tuple[str, ...]
    estimates: Tuple[GateLevel, ...]
    diff_tests: Tuple[GateDifference, ...] = ()
    note: str = ""

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([vars(e) for e in self.estimates])
        frame.insert(0, "group_var", self.group_var)
        return frame

    def diff_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(t) for t in self.diff_tests],
            columns=["level", "other", "difference", "se", "p_value"],
        )


def gate(
    ate_scores: np.ndarray, groups: Sequence, group_var: str = "group"
) -> GateResult:
    """Regress the scores on one indicator per level, without intercept.

    Coefficients are the level means of the scores; standard errors are HC1.
    Every pair of levels gets a difference test.

    :raises ParameterError: if a level has fewer than two units
    """
    scores = np.asarray(ate_scores, dtype=np.float64)
    labels = np.asarray([str(g) for g in groups])
    if labels.shape != scores.shape:
        raise ParameterError("Need exactly one group label per score")
    levels = tuple(sorted(set(labels.tolist())))
    sizes = {level: int((labels == level).sum()) for level in levels}
    small = [level for level, size in sizes.items() if size < 2]
    if small:
        raise ParameterError(f"Levels {small} of {group_var} have fewer than two units")
    dummies = np.column_stack([(labels == level).astype(np.float64) for level in levels])
    fit = sm.OLS(scores, dummies).fit(cov_type="HC1")
    params, bse, pvalues = np.asarray(fit.params), np.asarray(fit.bse), np.asarray(fit.pvalues)
    estimates = tuple(
        GateLevel(
            level=level,
            n=sizes[level],
            point=float(params[i]),
            se=float(bse[i]),
            ci_lo=float(params[i] - Z_95 * bse[i]),
            ci_hi=float(params[i] + Z_95 * bse[i]),
            p_value=float(pvalues[i]),
        )
        for i, level in enumerate(levels)
    )
    diffs = []
    for i, j in itertools.combinations(range(len(levels)), 2):
        contrast = np.zeros(len(levels))
        contrast[i], contrast[j] = 1.0, -1.0
        test = fit.t_test(contrast)
        diffs.append(
            GateDifference(
                level=levels[i],
                other=levels[j],
                difference=float(np.squeeze(test.effect)),
                se=float(np.squeeze(test.sd)),
                p_value=float(np.squeeze(test.pvalue)),
            )
        )
    note = ""
    if len(levels) == 1:
        note = f"{group_var} has a single level; the GATE is the ATE"
        LOG.warning(note)
    return GateResult(group_var, levels, estimates, tuple(diffs), note)


@dataclass(frozen=True, eq=False)
class CateCurve:
    """Kernel regression of the scores along one moderator."""

    grid: np.ndarray
    values: np.ndarray
    se: np.ndarray
    bandwidth: float
    cv_bandwidth: float
    fitted: np.ndarray = field(default_factory=lambda: np.empty(0))
    gaps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    @property
    def lo(self) -> np.ndarray:
        return self.values - Z_95 * self.se

    @property
    def hi(self) -> np.ndarray:
        return self.values + Z_95 * self.se

    def to_frame(self) -> pd.DataFrame:
        """Plot data: grid, value, lo, hi."""
        return pd.DataFrame(
            {"grid": self.grid, "value": self.values, "lo": self.lo, "hi": self.hi}
        )


def _kernel_weights(points: np.ndarray, z: np.ndarray, bandwidth: float) -> np.ndarray:
    u = (points[:, None] - z[None, :]) / bandwidth
    return np.exp(-0.5 * u * u)


def silverman_bandwidth(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    sd = z.std(ddof=1)
    iqr = np.subtract(*np.percentile(z, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return float(0.9 * spread * z.size ** (-0.2))


def loo_cv_error(scores: np.ndarray, z: np.ndarray, bandwidth: float) -> float:
    """Leave-one-out squared error of the Nadaraya-Watson fit."""
    total, counted = 0.0, 0
    for start in range(0, z.size, KERNEL_BLOCK):
        rows = np.arange(start, min(start + KERNEL_BLOCK, z.size))
        weights = _kernel_weights(z[rows], z, bandwidth)
        weights[np.arange(rows.size), rows] = 0.0
        mass = weights.sum(axis=1)
        ok = mass > 0
        predicted = weights[ok] @ scores / mass[ok]
        total += float(((scores[rows[ok]] - predicted) ** 2).sum())
        counted += int(ok.sum())
    return total / counted if counted else float("inf")


def cv_bandwidth(scores: np.ndarray, z: np.ndarray) -> float:
    """Minimiser of the leave-one-out error over a log grid around Silverman's rule."""
    reference = silverman_bandwidth(z)
    candidates = np.geomspace(0.1 * reference, 10.0 * reference, N_BANDWIDTHS)
    errors = [loo_cv_error(scores, z, h) for h in candidates]
    return float(candidates[int(np.argmin(errors))])


def _smooth(
    points: np.ndarray, z: np.ndarray, scores: np.ndarray, bandwidth: float, keep_weights=False
):
    values = np.full(points.size, np.nan)
    weights_sq = []
    mass_ok = np.zeros(points.size, dtype=bool)
    for start in range(0, points.size, KERNEL_BLOCK):
        rows = slice(start, min(start + KERNEL_BLOCK, points.size))
        weights = _kernel_weights(points[rows], z, bandwidth)
        mass = weights.sum(axis=1)
        ok = mass > 0
        normalized = np.zeros_like(weights)
        normalized[ok] = weights[ok] / mass[ok, None]
        values[rows] = np.where(ok, normalized @ scores, np.nan)
        mass_ok[rows] = ok
        if keep_weights:
            weights_sq.append(normalized**2)
    return values, np.vstack(weights_sq) if keep_weights else None, mass_ok


def kernel_cate(
    ate_scores: np.ndarray,
    z: np.ndarray,
    grid_size: int = 50,
    bandwidth: Optional[float] = None,
    grid: Optional[np.ndarray] = None,
) -> CateCurve:
    """Nadaraya-Watson regression of the scores on z with a Gaussian kernel.

    The bandwidth is 0.9 times the leave-one-out optimum unless given. The
    pointwise standard error at g is ``sqrt(sum_i w_i(g)^2 e_i^2)`` with
    residuals ``e`` of the fit at the sample points. Grid points without
    kernel mass are NaN and flagged in ``gaps``.

    :raises ParameterError: if z has fewer than 10 distinct values
    """
    scores = np.asarray(ate_scores, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if scores.shape != z.shape:
        raise ParameterError("Scores and moderator must have the same length")
    if grid is None:
        grid = np.linspace(z.min(), z.max(), grid_size)
    grid = np.asarray(grid, dtype=np.float64)

    if np.ptp(z) == 0:
        LOG.warning("The moderator is constant; the curve is the overall mean")
        mean = float(scores.mean())
        se = float(scores.std(ddof=1) / np.sqrt(scores.size))
        return CateCurve(
            grid=grid,
            values=np.full(grid.size, mean),
            se=np.full(grid.size, se),
            bandwidth=float("inf"),
            cv_bandwidth=float("inf"),
            fitted=np.full(z.size, mean),
            gaps=np.zeros(grid.size, dtype=bool),
        )
    if np.unique(z).size < MIN_DISTINCT_Z:
        raise ParameterError(f"The moderator needs at least {MIN_DISTINCT_Z} distinct values")

    optimum = cv_bandwidth(scores, z) if bandwidth is None else float(bandwidth)
    h = BANDWIDTH_FACTOR * optimum if bandwidth is None else optimum
    fitted, _, _ = _smooth(z, z, scores, h)
    residuals = scores - np.where(np.isnan(fitted), scores, fitted)
    values, weights_sq, ok = _smooth(grid, z, scores, h, keep_weights=True)
    se = np.where(ok, np.sqrt(weights_sq @ residuals**2), np.nan)
    gaps = ~ok
    if gaps.any():
        LOG.warning("%d grid points have no kernel mass", int(gaps.sum()))
    LOG.debug("Kernel CATE with bandwidth %g (cross-validated %g)", h, optimum)
    return CateCurve(grid, values, se, h, optimum, fitted, gaps)


@dataclass(frozen=True, eq=False)
class IateVector:
    """Out-of-fold predictions of the per-unit contrast score."""

    values: np.ndarray
    learner_report: Tuple[Tuple[int, learners.EnsembleWeights], ...] = ()


def _iate_fold(k, train, test, blocks, scores, specs, options, seed):
    ensemble = learners.fit_ensemble(
        learners.select_rows(blocks, train),
        scores[train],
        specs,
        task="regression",
        seed=seed + 1000 * k,
        **options,
    )
    return test, ensemble.predict(learners.select_rows(blocks, test)), (k, ensemble.weights)


def iate_dr_learner(
    features: Union[Dataset, Mapping[str, np.ndarray]],
    ate_scores: np.ndarray,
    folds: FoldAssignment,
    specs: Sequence[learners.LearnerSpec],
    seed: int = 0,
    n_jobs: int = 1,
    **options,
) -> IateVector:
    """Predict every unit's contrast score from models trained on the other folds.

    :param features: a dataset (its covariates are the ``base`` block) or
        named feature blocks aligned with the scores
    :param ate_scores: per-unit contrast scores
    :param folds: the folds the nuisances were cross-fitted on
    :param specs: candidate learner specifications
    :param options: forwarded to fit_ensemble (inner_folds, top_n, weighting)
    """
    if isinstance(features, Dataset):
        features = {learners.BASE_BLOCK: features.X}
    scores = np.asarray(ate_scores, dtype=np.float64)
    if folds.n != scores.size:
        raise ParameterError("Folds and scores must cover the same units")
    results = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_iate_fold)(k, train, test, features, scores, specs, options, seed)
        for k, train, test in folds.splits()
    )
    values = np.empty(scores.size)
    reports = []
    for test, predicted, report in results:
        values[test] = predicted
        reports.append(report)
    return IateVector(values, tuple(reports))


@dataclass(frozen=True, eq=False)
class QuintileProfile:
    """Units grouped by predicted effect and the covariate contrast of the extremes."""

    quintile_of: np.ndarray
    covariate_names: Tuple[str, ...]
    means: np.ndarray
    smd: np.ndarray
    flagged: Tuple[str, ...]
    zero_variance: Tuple[str, ...] = ()
    reverse: bool = False

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            self.means.T,
            columns=[f"mean_q{q}" for q in range(1, N_QUANTILES + 1)],
        )
        frame.insert(0, "covariate", list(self.covariate_names))
        frame["smd"] = self.smd
        frame["flagged"] = [name in self.flagged for name in self.covariate_names]
        return frame


def classify_quintiles(
    iate: Union[IateVector, np.ndarray],
    X: np.ndarray,
    covariate_names: Sequence[str],
    unit_ids: Optional[Sequence[str]] = None,
    reverse: bool = False,
) -> QuintileProfile:
    """Rank units into effect quintiles and compare the top and bottom one.

    Ties in the predicted effect are ordered by unit id. The standardized mean
    difference of covariate j is ``(mean_Q5 - mean_Q1) / sqrt((var_Q5 + var_Q1)/2)``;
    with ``reverse`` the lowest predictions form the fifth quintile.

    :raises ParameterError: with fewer than five units
    """
    values = np.asarray(iate.values if isinstance(iate, IateVector) else iate, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n = values.size
    if n < N_QUANTILES:
        raise ParameterError(f"Need at least {N_QUANTILES} units for quintiles")
    if X.shape[0] != n or X.shape[1] != len(covariate_names):
        raise ParameterError("X must have one row per unit and one column per name")
    if unit_ids is None:
        unit_ids = [f"{i:012d}" for i in range(n)]
    key = -values if reverse else values
    order = np.lexsort((np.asarray([str(u) for u in unit_ids]), key))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    quintile_of = rank * N_QUANTILES // n + 1

    means = np.vstack([X[quintile_of == q].mean(axis=0) for q in range(1, N_QUANTILES + 1)])
    top, bottom = X[quintile_of == N_QUANTILES], X[quintile_of == 1]
    var_top = top.var(axis=0, ddof=1) if top.shape[0] > 1 else top.var(axis=0)
    var_bottom = bottom.var(axis=0, ddof=1) if bottom.shape[0] > 1 else bottom.var(axis=0)
    pooled = np.sqrt((var_top + var_bottom) / 2.0)
    zero = pooled == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        smd = np.where(zero, 0.0, (top.mean(axis=0) - bottom.mean(axis=0)) / pooled)
    names = tuple(covariate_names)
    flagged = tuple(name for name, s in zip(names, smd) if abs(s) > SMD_THRESHOLD)
    zero_variance = tuple(name for name, z in zip(names, zero) if z)
    if zero_variance:
        LOG.info("Zero pooled variance for %s; SMD set to 0", list(zero_variance))
    return QuintileProfile(quintile_of, names, means, smd, flagged, zero_variance, reverse)
