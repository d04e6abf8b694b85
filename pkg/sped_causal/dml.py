# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Cross-fitted nuisances, doubly robust scores and effect inference.

For every fold the generalized propensity score and the per-treatment
conditional means are learned on the other folds and predicted on the fold,
so every nuisance prediction of a unit comes from models that never saw it.
The scores combine both nuisances; averaging them gives potential-outcome
means and contrasts with one-sample t-test inference.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
import pandas as pd
import pydantic
import scipy.stats

from sped_causal import artifacts, learners
from sped_causal.data import (
    Dataset,
    FoldAssignment,
    ParameterError,
    TreatmentCatalogue,
    make_folds,
)

LOG = logging.getLogger(__name__)

Z_95 = 1.96
TILTINGS = ("ate", "ato")
ESTIMANDS = ("APO", "ATE", "ATET", "ATO")
TRIMMING_KINDS = ("none", "crump", "sturmer")
CRUMP_ALPHAS = (0.001, 0.005, 0.01)
STURMER_ALPHAS = (0.01, 0.033, 0.05, 0.1)

P_HAT_FILE = "p_hat.csv"
MU_HAT_FILE = "mu_hat.csv"
FOLDS_FILE = "folds.csv"
ENSEMBLES_FILE = "ensembles.json"


class EstimationError(Exception):
    """Nuisances or scores cannot support the requested estimate."""


class CrossFitError(EstimationError):
    """A training complement lacks units of some treatment."""


class TrimmingError(EstimationError):
    """Trimming removed every unit of a treatment arm."""


def project_to_simplex(p_hat: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip to [epsilon, 1 - epsilon] and renormalise rows to sum to one.

    Entries that renormalisation would push below epsilon are pinned at
    epsilon and the remaining mass is spread over the others.
    """
    p = np.clip(np.asarray(p_hat, dtype=np.float64), epsilon, 1.0 - epsilon)
    if p.shape[1] * epsilon >= 1.0:
        raise ParameterError(f"epsilon={epsilon} is too large for {p.shape[1]} treatments")
    pinned = np.zeros(p.shape, dtype=bool)
    for _ in range(p.shape[1]):
        free_mass = 1.0 - epsilon * pinned.sum(axis=1)
        free_sum = np.where(pinned, 0.0, p).sum(axis=1)
        scaled = np.where(pinned, epsilon, p * (free_mass / free_sum)[:, None])
        newly = ~pinned & (scaled < epsilon)
        if not newly.any():
            return scaled
        pinned |= newly
    return np.where(pinned, epsilon, scaled)


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Out-of-fold propensities and conditional means for one outcome."""

    p_hat: np.ndarray
    mu_hat: np.ndarray
    folds: Optional[FoldAssignment] = None
    outcome: str = ""
    unit_ids: Tuple[str, ...] = ()
    epsilon: float = learners.DEFAULT_EPSILON
    ensemble_reports: Tuple[Tuple[int, str, learners.EnsembleWeights], ...] = ()

    def __post_init__(self):
        if self.p_hat.shape != self.mu_hat.shape or self.p_hat.ndim != 2:
            raise ParameterError("p_hat and mu_hat must both be n x D")
        if not np.isfinite(self.mu_hat).all():
            raise EstimationError("Conditional mean predictions are not finite")
        if (self.p_hat <= 0).any() or not np.allclose(self.p_hat.sum(axis=1), 1.0, atol=1e-9):
            raise EstimationError("Propensity rows must be positive and sum to one")

    @property
    def n(self) -> int:
        return self.p_hat.shape[0]

    @classmethod
    def from_arrays(
        cls,
        p_hat: np.ndarray,
        mu_hat: np.ndarray,
        epsilon: Optional[float] = None,
        **kwargs,
    ) -> "NuisanceFit":
        """Wrap externally supplied nuisances, e.g. oracle truths.

        The propensities are used as given unless ``epsilon`` is set, in which
        case they are clipped and projected like cross-fitted ones.
        """
        p_hat = np.asarray(p_hat, dtype=np.float64)
        if epsilon is not None:
            p_hat = project_to_simplex(p_hat, epsilon)
            kwargs["epsilon"] = epsilon
        return cls(p_hat=p_hat, mu_hat=np.asarray(mu_hat, dtype=np.float64), **kwargs)


def _fit_fold(
    k: int,
    train: np.ndarray,
    test: np.ndarray,
    blocks: Mapping[str, np.ndarray],
    y: np.ndarray,
    D: np.ndarray,
    catalogue: TreatmentCatalogue,
    specs: Sequence[learners.LearnerSpec],
    options: Mapping,
    seed: int,
):
    counts = np.bincount(D[train], minlength=catalogue.n_arms)
    thin = [catalogue.labels[d] for d in np.flatnonzero(counts < 2)]
    if thin:
        raise CrossFitError(
            f"Fold {k}: the training complement has fewer than 2 units of {thin}; "
            "use stratified folds or fewer folds"
        )
    train_blocks = learners.select_rows(blocks, train)
    test_blocks = learners.select_rows(blocks, test)
    p = np.empty((test.size, catalogue.n_arms))
    mu = np.empty((test.size, catalogue.n_arms))
    reports = []
    for d, label in enumerate(catalogue.labels):
        propensity = learners.fit_ensemble(
            train_blocks,
            (D[train] == d).astype(np.float64),
            specs,
            task="probability",
            seed=seed + 1000 * k + 2 * d,
            **options,
        )
        p[:, d] = propensity.predict(test_blocks)
        reports.append((k, f"propensity:{label}", propensity.weights))

        arm = np.flatnonzero(D[train] == d)
        outcome = learners.fit_ensemble(
            learners.select_rows(train_blocks, arm),
            y[train][arm],
            specs,
            task="regression",
            seed=seed + 1000 * k + 2 * d + 1,
            **options,
        )
        mu[:, d] = outcome.predict(test_blocks)
        reports.append((k, f"outcome:{label}", outcome.weights))
    return test, p, mu, reports


def crossfit_nuisances(
    dataset: Dataset,
    specs: Sequence[learners.LearnerSpec],
    outcome: Optional[str] = None,
    blocks: Optional[Mapping[str, np.ndarray]] = None,
    K: int = 5,
    seed: int = 0,
    stratify: bool = True,
    inner_folds: int = 5,
    top_n: int = learners.DEFAULT_TOP_N,
    weighting: str = "inverse_mse",
    epsilon: float = learners.DEFAULT_EPSILON,
    n_jobs: int = 1,
) -> NuisanceFit:
    """Cross-fit the propensity and outcome ensembles of one outcome.

    Args:
        dataset: the validated dataset; units with the outcome unobserved are
            left out.
        specs: candidate learner specifications.
        outcome: outcome name, the first outcome when omitted.
        blocks: extra feature blocks aligned with the dataset rows; ``base``
            is always the covariate matrix.
        K: number of folds.
        seed: seed of the fold split and of the learners.
        stratify: stratify folds by treatment.
        inner_folds: folds used to score the specifications.
        top_n: specifications retained per ensemble.
        weighting: ensemble weighting scheme.
        epsilon: propensity clip.
        n_jobs: joblib workers over folds.

    Returns:
        The out-of-fold nuisances, rows ordered as the observed units.

    Raises:
        CrossFitError: if a training complement has fewer than two units of
            some treatment.
    """
    outcome = outcome or dataset.outcome_names[0]
    observed = dataset.outcome(outcome).observed
    subset = dataset.restrict_to_observed(outcome)
    all_blocks = {name: np.asarray(block)[observed] for name, block in (blocks or {}).items()}
    all_blocks[learners.BASE_BLOCK] = subset.X
    y = subset.outcome(outcome).values
    folds = make_folds(subset.n, K, subset.D, seed=seed, stratify=stratify)
    options = {
        "inner_folds": inner_folds,
        "top_n": top_n,
        "weighting": weighting,
        "epsilon": epsilon,
    }
    LOG.info("Cross-fitting %s on %d units with K=%d", outcome, subset.n, K)
    results = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_fit_fold)(
            k, train, test, all_blocks, y, subset.D, subset.catalogue, specs, options, seed
        )
        for k, train, test in folds.splits()
    )
    p_hat = np.empty((subset.n, subset.n_arms))
    mu_hat = np.empty((subset.n, subset.n_arms))
    reports = []
    for test, p, mu, fold_reports in results:
        p_hat[test] = p
        mu_hat[test] = mu
        reports.extend(fold_reports)
    return NuisanceFit(
        p_hat=project_to_simplex(p_hat, epsilon),
        mu_hat=mu_hat,
        folds=folds,
        outcome=outcome,
        unit_ids=subset.unit_ids,
        epsilon=epsilon,
        ensemble_reports=tuple(reports),
    )


@dataclass(frozen=True)
class TrimmingScheme:
    """Propensity-based trimming rule, written ``none``, ``crump(a)`` or ``sturmer(a)``."""

    kind: str = "none"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in TRIMMING_KINDS:
            raise ParameterError(f"Unknown trimming {self.kind!r}, expected {TRIMMING_KINDS}")
        if self.kind != "none" and not 0.0 < self.alpha < 0.5:
            raise ParameterError(f"Trimming alpha={self.alpha} must lie in (0, 0.5)")

    @classmethod
    def parse(cls, text: str) -> "TrimmingScheme":
        text = (text or "none").strip().lower()
        if text == "none":
            return cls()
        match = re.fullmatch(r"(crump|sturmer)\(\s*([0-9.eE+-]+)\s*\)", text)
        if not match:
            raise ParameterError(f"Cannot parse trimming scheme {text!r}")
        return cls(match.group(1), float(match.group(2)))

    def __str__(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}({self.alpha:g})"


def apply_trimming(
    p_hat: np.ndarray,
    D: np.ndarray,
    scheme: Union[TrimmingScheme, str] = "none",
    labels: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """Mask of the units surviving a trimming scheme.

    Crump drops a unit whose smallest propensity is below alpha. Stuermer drops
    a unit of arm d whose own propensity is below the alpha-quantile of the
    arm-d propensities among arm-d units.

    :raises TrimmingError: if an arm loses every unit
    """
    if isinstance(scheme, str):
        scheme = TrimmingScheme.parse(scheme)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    D = np.asarray(D)
    keep = np.ones(p_hat.shape[0], dtype=bool)
    if scheme.kind == "crump":
        keep = p_hat.min(axis=1) >= scheme.alpha
    elif scheme.kind == "sturmer":
        own = p_hat[np.arange(D.size), D]
        for d in np.unique(D):
            arm = D == d
            keep[arm] = own[arm] >= np.quantile(own[arm], scheme.alpha)
    labels = labels or [str(d) for d in range(p_hat.shape[1])]
    emptied = [labels[d] for d in np.unique(D) if not keep[D == d].any()]
    if emptied:
        raise TrimmingError(f"Trimming {scheme} removes every unit of {emptied}")
    if scheme.kind != "none":
        LOG.info("Trimming %s drops %d of %d units", scheme, int((~keep).sum()), keep.size)
    return keep


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Per-unit doubly robust scores of every treatment."""

    gamma: np.ndarray
    keep_mask: np.ndarray
    tilting: str
    catalogue: TreatmentCatalogue
    D: np.ndarray
    atet_scores: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    outcome: str = ""
    trimming: str = "none"
    normalized: bool = False
    unit_ids: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_used(self) -> int:
        return int(self.keep_mask.sum())

    def kept(self) -> "ScoreMatrix":
        """The same scores restricted to surviving units."""
        keep = self.keep_mask
        return ScoreMatrix(
            gamma=self.gamma[keep],
            keep_mask=np.ones(self.n_used, dtype=bool),
            tilting=self.tilting,
            catalogue=self.catalogue,
            D=self.D[keep],
            atet_scores={pair: v[keep] for pair, v in self.atet_scores.items()},
            outcome=self.outcome,
            trimming=self.trimming,
            normalized=self.normalized,
            unit_ids=tuple(np.asarray(self.unit_ids, dtype=object)[keep]) if self.unit_ids else (),
        )

    def contrast(self, d: int, d_prime: int) -> np.ndarray:
        """Per-unit score difference between two treatments, all rows."""
        return self.gamma[:, d] - self.gamma[:, d_prime]


def build_scores(
    nuisance: NuisanceFit,
    Y: np.ndarray,
    D: np.ndarray,
    tilting: str = "ate",
    keep_mask: Optional[np.ndarray] = None,
    catalogue: Optional[TreatmentCatalogue] = None,
    normalized: bool = False,
    trimming: Union[TrimmingScheme, str] = "none",
) -> ScoreMatrix:
    """Doubly robust scores.

    ``gamma[i, d] = mu(d, X_i) + 1(D_i = d) (Y_i - mu(d, X_i)) / p_d(X_i)``.
    With ``ato`` tilting every row is multiplied by the harmonic-mean weight
    ``h(x) = 1 / sum_k 1/p_k(x)`` divided by its mean over kept units. With
    ``normalized`` the inverse propensity weights of each treatment cell are
    rescaled to average one over kept units.

    :param nuisance: out-of-fold nuisances aligned with Y and D
    :param Y: observed outcome of the nuisance rows
    :param D: treatment index of the nuisance rows
    :param tilting: "ate" or "ato"
    :param keep_mask: surviving units, all units when omitted
    :param catalogue: treatment labels, positional labels when omitted
    :param normalized: Hajek-normalise the weights within treatment cells
    :param trimming: the scheme that produced keep_mask, for reporting
    """
    if tilting not in TILTINGS:
        raise ParameterError(f"Unknown tilting {tilting!r}, expected one of {TILTINGS}")
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.int64)
    n, n_arms = nuisance.p_hat.shape
    if Y.shape != (n,) or D.shape != (n,):
        raise ParameterError("Y and D must align with the nuisance rows")
    if np.isnan(Y).any():
        raise EstimationError("Scores need the outcome observed on every nuisance row")
    if catalogue is None:
        catalogue = TreatmentCatalogue(tuple(str(d) for d in range(n_arms)))
    keep = np.ones(n, dtype=bool) if keep_mask is None else np.asarray(keep_mask, dtype=bool)
    p, mu = nuisance.p_hat, nuisance.mu_hat

    treated = D[:, None] == np.arange(n_arms)[None, :]
    weight = treated / p
    if normalized:
        cell_mean = weight[keep].mean(axis=0)
        weight = weight / np.where(cell_mean > 0, cell_mean, 1.0)
    gamma = mu + weight * (Y[:, None] - mu)

    atet = {}
    if tilting == "ato":
        h = 1.0 / (1.0 / p).sum(axis=1)
        gamma = gamma * (h / h[keep].mean())[:, None]
    else:
        shares = treated[keep].mean(axis=0)
        for d in range(n_arms):
            if shares[d] == 0:
                continue
            for d_prime in range(n_arms):
                if d_prime == d:
                    continue
                residual = Y - mu[:, d_prime]
                atet[(d, d_prime)] = (
                    treated[:, d] * residual
                    - p[:, d] / p[:, d_prime] * treated[:, d_prime] * residual
                ) / shares[d]
    if not np.isfinite(gamma[keep]).all():
        raise EstimationError("Scores are not finite on kept units")
    return ScoreMatrix(
        gamma=gamma,
        keep_mask=keep,
        tilting=tilting,
        catalogue=catalogue,
        D=D,
        atet_scores=atet,
        outcome=nuisance.outcome,
        trimming=str(trimming),
        normalized=normalized,
        unit_ids=nuisance.unit_ids,
    )


class EffectEstimate(pydantic.BaseModel):
    """Point estimate with one-sample t-test inference."""

    estimand: str = pydantic.Field(description="APO, ATE, ATET or ATO")
    d: str = pydantic.Field(description="Treatment")
    d_prime: Optional[str] = pydantic.Field(description="Comparison treatment", default=None)
    outcome: str = pydantic.Field(description="Outcome name", default="")
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    n_used: int
    t_stat: float = float("nan")
    p_value: float = float("nan")
    trimming: str = "none"
    degenerate: bool = False

    @property
    def ci95(self) -> Tuple[float, float]:
        return self.ci_lo, self.ci_hi


def mean_inference(values: np.ndarray) -> Dict[str, float]:
    """Mean, standard error, 95% interval and t-test of a score vector."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    point = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n))
    degenerate = not se > 0
    if degenerate:
        t_stat, p_value = float("nan"), float("nan")
    else:
        t_stat = point / se
        p_value = float(2.0 * scipy.stats.t.sf(abs(t_stat), df=n - 1))
    return {
        "point": point,
        "se": se,
        "ci_lo": point - Z_95 * se,
        "ci_hi": point + Z_95 * se,
        "n_used": n,
        "t_stat": t_stat,
        "p_value": p_value,
        "degenerate": degenerate,
    }


def estimate(
    scores: ScoreMatrix, estimand: str, d: str, d_prime: Optional[str] = None
) -> EffectEstimate:
    """Average the kept scores of one estimand.

    :param scores: the score matrix
    :param estimand: APO (one treatment), ATE, ATET or ATO (two treatments)
    :param d: treatment label
    :param d_prime: comparison label for contrasts
    :raises EstimationError: if fewer than two units are kept
    """
    if estimand not in ESTIMANDS:
        raise ParameterError(f"Unknown estimand {estimand!r}, expected one of {ESTIMANDS}")
    expected_tilting = "ato" if estimand == "ATO" else "ate"
    if scores.tilting != expected_tilting:
        raise ParameterError(f"{estimand} needs {expected_tilting} tilted scores")
    i = scores.catalogue.index(d)
    if estimand != "APO":
        if d_prime is None:
            raise ParameterError(f"{estimand} needs a comparison treatment")
        j = scores.catalogue.index(d_prime)
    keep = scores.keep_mask
    if keep.sum() < 2:
        raise EstimationError("Fewer than two units survive; cannot estimate a variance")
    if estimand == "APO":
        values = scores.gamma[keep, i]
        d_prime = None
    elif estimand == "ATET":
        if (i, j) not in scores.atet_scores:
            raise EstimationError(f"No kept unit received {d}; ATET is undefined")
        values = scores.atet_scores[(i, j)][keep]
    else:
        values = scores.contrast(i, j)[keep]
    result = EffectEstimate(
        estimand=estimand,
        d=d,
        d_prime=d_prime,
        outcome=scores.outcome,
        trimming=scores.trimming,
        **mean_inference(values),
    )
    if result.degenerate:
        LOG.warning("%s %s/%s has zero standard error", estimand, d, d_prime)
    return result


def default_pairs(catalogue: TreatmentCatalogue) -> List[Tuple[str, str]]:
    labels = catalogue.labels
    return [(a, b) for i, a in enumerate(labels) for b in labels[i + 1 :]]


def estimate_all(
    scores: ScoreMatrix, pairs: Optional[Sequence[Tuple[str, str]]] = None
) -> List[EffectEstimate]:
    """APOs of every treatment and the contrasts of every pair.

    Under ``ate`` tilting each pair yields ATE and ATET; under ``ato``
    tilting each pair yields ATO.
    """
    pairs = list(pairs) if pairs else default_pairs(scores.catalogue)
    results = []
    if scores.tilting == "ato":
        for d, d_prime in pairs:
            results.append(estimate(scores, "ATO", d, d_prime))
        return results
    for label in scores.catalogue.labels:
        results.append(estimate(scores, "APO", label))
    for d, d_prime in pairs:
        results.append(estimate(scores, "ATE", d, d_prime))
        results.append(estimate(scores, "ATET", d, d_prime))
    return results


def relative_difference(
    with_text: Union[EffectEstimate, float], without_text: Union[EffectEstimate, float]
) -> float:
    """(with - without) / |without| for two estimates of the same estimand."""
    a = with_text.point if isinstance(with_text, EffectEstimate) else float(with_text)
    b = without_text.point if isinstance(without_text, EffectEstimate) else float(without_text)
    if b == 0:
        raise ParameterError("Relative difference to a zero estimate is undefined")
    return (a - b) / abs(b)


ESTIMATE_COLUMNS = [
    "estimand",
    "d",
    "d_prime",
    "outcome",
    "point",
    "se",
    "ci_lo",
    "ci_hi",
    "n_used",
    "trimming",
    "t_stat",
    "p_value",
    "degenerate",
]


def estimates_frame(estimates: Sequence[EffectEstimate]) -> pd.DataFrame:
    """Tidy table with one row per estimand."""
    rows = [e.model_dump() for e in estimates]
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)


def save_nuisance(fit: NuisanceFit, catalogue: TreatmentCatalogue, directory) -> List[Path]:
    """Persist a nuisance fit as CSV matrices plus the ensemble reports."""
    directory = Path(directory)
    labels = list(catalogue.labels)
    meta = {
        "outcome": fit.outcome,
        "epsilon": fit.epsilon,
        "catalogue": labels,
        "K": fit.folds.K if fit.folds else None,
        "seed": fit.folds.seed if fit.folds else None,
    }
    paths = [
        artifacts.write_matrix(directory / P_HAT_FILE, fit.p_hat, labels, meta, fit.unit_ids),
        artifacts.write_matrix(directory / MU_HAT_FILE, fit.mu_hat, labels, meta, fit.unit_ids),
    ]
    if fit.folds is not None:
        paths.append(
            artifacts.write_matrix(
                directory / FOLDS_FILE,
                fit.folds.fold_of,
                ["fold"],
                {"K": fit.folds.K, "seed": fit.folds.seed, "stratified": fit.folds.stratified},
                fit.unit_ids,
            )
        )
    reports = [
        {"fold": k, "target": target, **weights.to_dict()}
        for k, target, weights in fit.ensemble_reports
    ]
    paths.append(artifacts.write_json(directory / ENSEMBLES_FILE, reports))
    return paths


def load_nuisance(directory) -> NuisanceFit:
    directory = Path(directory)
    p = artifacts.read_matrix(directory / P_HAT_FILE)
    mu = artifacts.read_matrix(directory / MU_HAT_FILE)
    folds = None
    if (directory / FOLDS_FILE).is_file():
        stored = artifacts.read_matrix(directory / FOLDS_FILE)
        folds = FoldAssignment(
            fold_of=stored.values[:, 0].astype(np.int64),
            K=int(stored.meta["K"]),
            seed=int(stored.meta["seed"]),
            stratified=bool(stored.meta["stratified"]),
        )
    return NuisanceFit(
        p_hat=p.values,
        mu_hat=mu.values,
        folds=folds,
        outcome=p.meta["outcome"],
        unit_ids=tuple(p.index or ()),
        epsilon=float(p.meta["epsilon"]),
    )
