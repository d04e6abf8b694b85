# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Learner specifications, fitted models and the cross-validated ensemble.

Every nuisance function is predicted by an ensemble of the most predictive
specifications. A specification names a learner kind, its hyperparameters
and the feature block it consumes (``base``, ``base+diagnosis``, ...).
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pydantic

from sped_causal import forest, linear
from sped_causal.data import ParameterError

LOG = logging.getLogger(__name__)

BASE_BLOCK = "base"
BLOCK_JOINER = "+"
TASKS = ("regression", "probability")
WEIGHTINGS = ("inverse_mse", "equal")
DEFAULT_TOP_N = 5
DEFAULT_EPSILON = 0.01


class LearnerError(Exception):
    """A learner could not be fitted or applied."""


class EnsembleError(LearnerError):
    """No specification of an ensemble could be fitted."""


class LearnerSpec(pydantic.BaseModel):
    """One learner configuration on one feature block."""

    model_config = pydantic.ConfigDict(frozen=True)

    kind: Literal["elastic_net", "lasso", "random_forest"] = pydantic.Field(
        description="Learner family"
    )
    mixing: float = pydantic.Field(
        description="Elastic-net l1 weight, ignored for the lasso", default=0.5, ge=0, le=1
    )
    lambda_grid: Optional[Tuple[float, ...]] = pydantic.Field(
        description="Explicit penalty grid, a log grid from lambda_max when omitted",
        default=None,
    )
    n_lambda: int = pydantic.Field(description="Size of the default grid", default=100, ge=1)
    n_trees: int = pydantic.Field(
        description="Trees per forest", default=forest.DEFAULT_N_TREES, ge=1
    )
    mtry: Optional[int] = pydantic.Field(
        description="Features tried per split, task default when omitted", default=None, ge=1
    )
    min_leaf: int = pydantic.Field(
        description="Minimum leaf size", default=forest.DEFAULT_MIN_LEAF, ge=1
    )
    feature_set_id: str = pydantic.Field(
        description="Feature blocks joined by '+'", default=BASE_BLOCK, min_length=1
    )

    @property
    def effective_mixing(self) -> float:
        return 1.0 if self.kind == "lasso" else self.mixing

    @property
    def name(self) -> str:
        if self.kind == "elastic_net":
            return f"elastic_net({self.mixing:g})@{self.feature_set_id}"
        return f"{self.kind}@{self.feature_set_id}"


def default_specs(
    blocks: Sequence[str] = (BASE_BLOCK,),
    kinds: Sequence[str] = ("elastic_net", "lasso", "random_forest"),
    n_trees: int = forest.DEFAULT_N_TREES,
) -> List[LearnerSpec]:
    """The methods x feature-blocks grid."""
    return [
        LearnerSpec(kind=kind, feature_set_id=block, n_trees=n_trees)
        for block in blocks
        for kind in kinds
    ]


def assemble_features(blocks: Mapping[str, np.ndarray], feature_set_id: str) -> np.ndarray:
    """Horizontally stack the blocks named by ``a+b+c``."""
    parts = []
    for name in feature_set_id.split(BLOCK_JOINER):
        name = name.strip()
        if name not in blocks:
            raise LearnerError(f"Unknown feature block {name!r}, have {sorted(blocks)}")
        block = np.asarray(blocks[name], dtype=np.float64)
        parts.append(block[:, None] if block.ndim == 1 else block)
    return np.hstack(parts)


def select_rows(blocks: Mapping[str, np.ndarray], index: np.ndarray) -> Dict[str, np.ndarray]:
    return {name: np.asarray(block)[index] for name, block in blocks.items()}


Model = Union[linear.ElasticNetModel, forest.RandomForestModel]


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A specification with its fitted state and cross-validated error."""

    spec: LearnerSpec
    model: Model
    task: str
    cv_mse: float

    def predict(self, blocks: Mapping[str, np.ndarray]) -> np.ndarray:
        prediction = self.model.predict(assemble_features(blocks, self.spec.feature_set_id))
        if self.task == "probability":
            prediction = np.clip(prediction, 0.0, 1.0)
        return prediction

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.model_dump(mode="json"),
            "task": self.task,
            "cv_mse": self.cv_mse,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "FittedModel":
        spec = LearnerSpec(**payload["spec"])
        if spec.kind == "random_forest":
            model = forest.RandomForestModel.from_dict(payload["model"])
        else:
            model = linear.ElasticNetModel.from_dict(payload["model"])
        return cls(spec, model, payload["task"], float(payload["cv_mse"]))


def fit_model(
    spec: LearnerSpec,
    blocks: Mapping[str, np.ndarray],
    y: np.ndarray,
    task: str = "regression",
    inner_folds: int = 5,
    seed: int = 0,
    n_jobs: int = 1,
) -> FittedModel:
    """Fit one specification and score it.

    Linear learners are scored by the minimum of their lambda cross-validation
    curve over ``inner_folds`` folds, forests by their held-out error over the
    same number of folds.
    """
    if task not in TASKS:
        raise ParameterError(f"Unknown task {task!r}, expected one of {TASKS}")
    X = assemble_features(blocks, spec.feature_set_id)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "random_forest":
        model = forest.fit_random_forest(
            X,
            y,
            task=task,
            n_trees=spec.n_trees,
            mtry=spec.mtry,
            min_leaf=spec.min_leaf,
            seed=seed,
            n_jobs=n_jobs,
        )
        cv_mse = forest.cross_validated_mse(
            X,
            y,
            inner_folds,
            seed=seed,
            task=task,
            n_trees=spec.n_trees,
            mtry=spec.mtry,
            min_leaf=spec.min_leaf,
            n_jobs=n_jobs,
        )
    else:
        model = linear.fit_elastic_net(
            X,
            y,
            mixing=spec.effective_mixing,
            lambda_grid_=spec.lambda_grid,
            cv_folds=inner_folds,
            seed=seed,
            n_lambda=spec.n_lambda,
        )
        cv_mse = model.cv_mse
    if not np.isfinite(cv_mse):
        raise LearnerError(f"{spec.name} has no finite cross-validated error")
    return FittedModel(spec, model, task, float(cv_mse))


@dataclass(frozen=True)
class EnsembleWeights:
    """Specifications ranked by cross-validated MSE and the retained weights."""

    ranked: Tuple[Tuple[LearnerSpec, float], ...]
    weights: Tuple[float, ...]
    scheme: str = "inverse_mse"
    failed: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "ranked": [{"spec": spec.name, "cv_mse": mse} for spec, mse in self.ranked],
            "weights": list(self.weights),
            "scheme": self.scheme,
            "failed": list(self.failed),
        }


def ensemble_weights(cv_mse: Sequence[float], scheme: str = "inverse_mse") -> np.ndarray:
    """Weights over already-selected specifications.

    Inverse-MSE weights are proportional to 1/mse; if some MSE is exactly
    zero the weight is split equally among those specifications.
    """
    if scheme not in WEIGHTINGS:
        raise ParameterError(f"Unknown weighting {scheme!r}, expected one of {WEIGHTINGS}")
    mse = np.asarray(cv_mse, dtype=np.float64)
    if mse.size == 0:
        raise ParameterError("No specification to weight")
    if scheme == "equal":
        return np.full(mse.size, 1.0 / mse.size)
    perfect = mse <= 0
    if perfect.any():
        return perfect / perfect.sum()
    inverse = 1.0 / mse
    return inverse / inverse.sum()


class Ensemble(NamedTuple):
    """Weighted combination of the retained fitted models."""

    models: Tuple[FittedModel, ...]
    weights: EnsembleWeights
    task: str
    epsilon: float = DEFAULT_EPSILON

    def predict(self, blocks: Mapping[str, np.ndarray]) -> np.ndarray:
        prediction = np.zeros(np.asarray(next(iter(blocks.values()))).shape[0])
        for model, weight in zip(self.models, self.weights.weights):
            prediction += weight * model.predict(blocks)
        if self.task == "probability":
            prediction = np.clip(prediction, self.epsilon, 1.0 - self.epsilon)
        return prediction


def fit_ensemble(
    blocks: Mapping[str, np.ndarray],
    y: np.ndarray,
    specs: Sequence[LearnerSpec],
    inner_folds: int = 5,
    task: str = "regression",
    top_n: int = DEFAULT_TOP_N,
    weighting: str = "inverse_mse",
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
    n_jobs: int = 1,
) -> Ensemble:
    """Fit every specification and combine the most predictive ones.

    :param blocks: named feature blocks, all with the same rows
    :param y: target of the nuisance function
    :param specs: candidate specifications
    :param inner_folds: folds used for cross-validated scoring
    :param task: "regression" or "probability"
    :param top_n: number of retained specifications
    :param weighting: "inverse_mse" or "equal"
    :param epsilon: probability clip applied to the combined prediction
    :param seed: base seed; specification i uses seed + i
    :param n_jobs: joblib workers for forest growing
    :raises ParameterError: if there is no specification, top_n < 1 or
        inner_folds < 2
    :raises EnsembleError: if every specification fails
    """
    if not specs:
        raise ParameterError("An ensemble needs at least one specification")
    if top_n < 1:
        raise ParameterError("top_n must be at least 1")
    if inner_folds < 2:
        raise ParameterError(f"inner_folds={inner_folds} must be at least 2")
    fitted, failed = [], []
    for i, spec in enumerate(specs):
        try:
            fitted.append(
                fit_model(spec, blocks, y, task, inner_folds, seed=seed + i, n_jobs=n_jobs)
            )
        except (LearnerError, ValueError, np.linalg.LinAlgError) as e:
            LOG.warning("Excluding specification %s: %s", spec.name, e)
            failed.append(spec.name)
    if not fitted:
        raise EnsembleError(f"All {len(specs)} specifications failed")

    order = sorted(range(len(fitted)), key=lambda i: (fitted[i].cv_mse, i))
    ranked = tuple((fitted[i].spec, fitted[i].cv_mse) for i in order)
    retained = tuple(fitted[i] for i in order[:top_n])
    weights = ensemble_weights([m.cv_mse for m in retained], weighting)
    LOG.debug(
        "Ensemble of %s with weights %s",
        [m.spec.name for m in retained],
        np.round(weights, 4).tolist(),
    )
    return Ensemble(
        models=retained,
        weights=EnsembleWeights(
            ranked, tuple(float(w) for w in weights), weighting, tuple(failed)
        ),
        task=task,
        epsilon=epsilon,
    )


def ensemble_to_dict(ensemble: Ensemble) -> dict:
    return {
        "task": ensemble.task,
        "epsilon": ensemble.epsilon,
        "weights": ensemble.weights.to_dict(),
        "models": [model.to_dict() for model in ensemble.models],
    }


def ensemble_from_dict(payload: Mapping) -> Ensemble:
    """Rebuild an ensemble whose predictions match the persisted one exactly."""
    models = tuple(FittedModel.from_dict(m) for m in payload["models"])
    weights = payload["weights"]
    specs = {m.spec.name: m.spec for m in models}
    ranked = tuple(
        (specs[r["spec"]], float(r["cv_mse"])) for r in weights["ranked"] if r["spec"] in specs
    )
    return Ensemble(
        models=models,
        weights=EnsembleWeights(
            ranked, tuple(weights["weights"]), weights["scheme"], tuple(weights["failed"])
        ),
        task=payload["task"],
        epsilon=float(payload["epsilon"]),
    )
