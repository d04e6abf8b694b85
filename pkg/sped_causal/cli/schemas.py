# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0
"""Pydantic schemas of the run configuration and of command summaries."""

from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Tuple

import pydantic
from pydantic import BaseModel, BeforeValidator, Field, field_validator

from sped_causal import config
from sped_causal.dml import TrimmingScheme
from sped_causal.learners import WEIGHTINGS

SECTIONS = ("paths", "run", "text", "fit", "effects", "policy", "iv", "welfare")
PAIR_SEPARATOR = ":"


OptionalPath = Annotated[Optional[Path], BeforeValidator(config.blank_to_none)]
OptionalStr = Annotated[Optional[str], BeforeValidator(config.blank_to_none)]
OptionalInt = Annotated[Optional[int], BeforeValidator(config.blank_to_none)]
OptionalFloat = Annotated[Optional[float], BeforeValidator(config.blank_to_none)]
NameList = Annotated[List[str], BeforeValidator(config.split_list)]
LearnerKinds = Annotated[
    List[Literal["elastic_net", "lasso", "random_forest"]], BeforeValidator(config.split_list)
]


class PathsConfig(BaseModel):
    """Locations of the inputs and of the run directory."""

    data: OptionalPath = Field(default=None, description="Dataset directory or CSV")
    text: OptionalPath = Field(default=None, description="Text records, directory or CSV")
    reference: OptionalPath = Field(default=None, description="Labelled reference corpus")
    authors: OptionalPath = Field(default=None, description="id,author CSV")
    output: OptionalPath = Field(default=None, description="Run directory")
    scores: OptionalPath = Field(default=None, description="Policy score CSV")
    costs: OptionalPath = Field(default=None, description="treatment,cost CSV")


class RunSection(BaseModel):
    seed: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)


class TextConfig(BaseModel):
    """Preprocessing, weighting and keyness options."""

    stemmer: Literal["snowball", "none"] = "snowball"
    stopwords: OptionalPath = Field(
        default=None, description="One stopword per line, the built-in German list when unset"
    )
    bigrams: bool = True
    min_term_freq: int = Field(default=350, ge=0)
    min_doc_freq: int = Field(default=150, ge=0)
    bound_percentile: float = Field(default=0.999, ge=0, le=1)
    lexicon_bigrams: bool = True
    author_measure: Literal["chi2", "g2", "pmi", "freq", "tfidf_freq"] = "chi2"
    author_top_k: int = Field(default=40, ge=1)
    author_check: bool = False


class FitConfig(BaseModel):
    """Cross-fitting and ensemble options."""

    n_folds: int = Field(default=5, ge=2)
    stratify: bool = True
    inner_folds: int = Field(default=5, ge=2)
    top_n: int = Field(default=5, ge=1)
    weighting: str = "inverse_mse"
    learners: LearnerKinds = Field(default=["elastic_net", "lasso", "random_forest"], min_length=1)
    feature_sets: NameList = Field(default=["base"], min_length=1)
    n_trees: int = Field(default=200, ge=1)
    epsilon: float = Field(default=0.01, gt=0, lt=0.5)

    @field_validator("weighting")
    @classmethod
    def _weighting(cls, value: str) -> str:
        if value not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        return value

    @property
    def blocks(self) -> List[str]:
        """Every feature block named by the feature sets."""
        names = []
        for feature_set in self.feature_sets:
            for name in feature_set.split("+"):
                if name.strip() not in names:
                    names.append(name.strip())
        return names


class EffectsConfig(BaseModel):
    """Estimands, trimming and heterogeneity analyses."""

    pairs: List[Tuple[str, str]] = Field(
        default=[], description="d:d' comparisons, every pair when empty"
    )
    trimming: str = "none"
    tilting: Literal["ate", "ato"] = "ate"
    gate: NameList = Field(default=[], description="Discrete moderators")
    cate: NameList = Field(default=[], description="Continuous moderators")
    cate_grid_size: int = Field(default=50, ge=2)
    iate: bool = False
    normalized: bool = False

    @field_validator("pairs", mode="before")
    @classmethod
    def _pairs(cls, value: Any) -> Any:
        if isinstance(value, str):
            pairs = []
            for item in config.split_list(value):
                parts = item.split(PAIR_SEPARATOR)
                if len(parts) != 2 or not all(parts):
                    raise ValueError(f"Pair {item!r} must be written d{PAIR_SEPARATOR}d'")
                pairs.append(tuple(parts))
            return pairs
        return value

    @field_validator("trimming")
    @classmethod
    def _trimming(cls, value: str) -> str:
        return str(TrimmingScheme.parse(value))


class PolicyConfig(BaseModel):
    depth: int = Field(default=2, ge=1, le=3)
    features: NameList = Field(default=[], description="Policy variables, all Z when empty")
    treatments: NameList = Field(default=[], description="Candidates, every arm when empty")
    folds: int = Field(default=10, ge=2)
    min_leaf: int = Field(default=1, ge=1)
    max_evaluations: float = Field(default=1e9, gt=0)
    baselines: NameList = Field(default=[])


class IvConfig(BaseModel):
    """School-year deviation instrument and 2SLS options."""

    outcome: OptionalStr = None
    treated: OptionalStr = Field(default=None, description="Label of the treated placement")
    control: OptionalStr = Field(default=None, description="Label of the comparison placement")
    school: OptionalStr = Field(default=None, description="School column, cluster id if unset")
    year: str = "year"
    covariates: NameList = []
    leave_one_out: bool = False
    cell_weighted: bool = True
    reference: Literal["year", "school"] = "year"
    cluster: bool = False
    weak_threshold: float = Field(default=10.0, gt=0)

    @field_validator("year", mode="before")
    @classmethod
    def _year(cls, value: Any) -> Any:
        return config.blank_to_none(value) or "year"


class WelfareConfig(BaseModel):
    """Inputs of the reallocation welfare calculation."""

    n_mainstream: OptionalInt = Field(default=None, ge=0)
    n_reallocated: OptionalInt = Field(default=None, ge=0)
    n_classrooms: OptionalInt = Field(default=None, ge=1)
    avg_class_size: OptionalFloat = Field(default=None, gt=0)
    sen_share_before: OptionalFloat = Field(default=None, ge=0, le=1)
    policy_gain: OptionalFloat = None
    spillover_sen: OptionalPath = None
    spillover_nonsen: OptionalPath = None

    def missing(self) -> List[str]:
        required = (
            "n_mainstream",
            "n_reallocated",
            "n_classrooms",
            "avg_class_size",
            "sen_share_before",
            "policy_gain",
        )
        return [name for name in required if getattr(self, name) is None]


class RunConfig(BaseModel):
    """Validated configuration of one command invocation."""

    paths: PathsConfig = Field(default_factory=PathsConfig)
    run: RunSection = Field(default_factory=RunSection)
    text: TextConfig = Field(default_factory=TextConfig)
    fit: FitConfig = Field(default_factory=FitConfig)
    effects: EffectsConfig = Field(default_factory=EffectsConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    iv: IvConfig = Field(default_factory=IvConfig)
    welfare: WelfareConfig = Field(default_factory=WelfareConfig)

    @classmethod
    def from_flat(cls, flat: Mapping[str, str]) -> "RunConfig":
        """Build from a flat key=value mapping.

        :raises ConfigError: if a value does not validate
        """
        options = config.context_compat(config.get_options(flat, *SECTIONS))
        try:
            return cls(**options)
        except pydantic.ValidationError as e:
            raise config.ConfigError(f"Invalid configuration: {e}") from e

    def section(self, *names: str) -> Dict[str, Any]:
        """JSON-ready dump of some sections, recorded in stage manifests."""
        dump = self.model_dump(mode="json")
        return {name: dump[name] for name in names}


class StageSummary(BaseModel):
    """What a command did, printed in the requested format."""

    stage: str = Field(description="Pipeline stage")
    out: str = Field(description="Run directory")
    outputs: List[str] = Field(default=[], description="Artifacts written")
    details: Dict[str, Any] = Field(default={}, description="Stage specific figures")
