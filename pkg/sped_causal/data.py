# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Data model, ingestion, validation and fold assignment."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import pydantic

from sped_causal import config

LOG = logging.getLogger(__name__)

DATA_FILE = "data.csv"
SCHEMA_FILE = "schema.cfg"
UNIT_ID_COLUMN = "unit_id"
TREATMENT_COLUMN = "treatment"
INSTRUMENT_COLUMN = "instrument"
CLUSTER_COLUMN = "cluster_id"
FLOAT_FORMAT = "%.17g"

DEFAULT_TREATMENTS = (
    "no_sped",
    "counseling",
    "academic_support",
    "individual_therapy",
    "inclusion",
    "semi_segregation",
    "full_segregation",
)


class DataError(Exception):
    """Base error for data that cannot be used for estimation."""


class SchemaError(DataError):
    """A column named by the schema is missing or has the wrong type."""


class CatalogueError(DataError, ValueError):
    """A treatment label is not part of the catalogue."""


class ValidityError(DataError):
    """The dataset violates an estimation invariant."""


class ParameterError(ValueError):
    """An operation was called with parameters outside its domain."""


@dataclass(frozen=True)
class TreatmentCatalogue:
    """Ordered set of mutually exclusive treatments, with optional costs."""

    labels: Tuple[str, ...]
    costs: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ParameterError("A treatment catalogue needs at least two labels")
        if any(not label for label in labels):
            raise ParameterError("Treatment labels must be non-empty")
        if len(set(labels)) != len(labels):
            raise ParameterError(f"Treatment labels are not unique: {labels}")
        if self.costs is not None:
            costs = tuple(float(cost) for cost in self.costs)
            if len(costs) != len(labels):
                raise ParameterError("Every treatment label needs exactly one cost")
            if any(not np.isfinite(cost) or cost <= 0 for cost in costs):
                raise ParameterError("Treatment costs must be strictly positive")
            object.__setattr__(self, "costs", costs)

    @property
    def n_arms(self) -> int:
        """Number of treatments D."""
        return len(self.labels)

    def index(self, label: str) -> int:
        """Position of a label in the catalogue."""
        try:
            return self.labels.index(label)
        except ValueError:
            raise CatalogueError(
                f"Treatment {label!r} is not in the catalogue {list(self.labels)}"
            ) from None

    def indices(self, labels: Sequence[str]) -> np.ndarray:
        """Vectorised index lookup."""
        lookup = {label: i for i, label in enumerate(self.labels)}
        unknown = sorted({str(label) for label in labels} - lookup.keys())
        if unknown:
            raise CatalogueError(
                f"Treatments {unknown} are not in the catalogue {list(self.labels)}"
            )
        return np.array([lookup[str(label)] for label in labels], dtype=np.int64)

    def cost_of(self, label: str) -> float:
        """Annual cost of a treatment."""
        if self.costs is None:
            raise ParameterError("The catalogue carries no costs")
        return self.costs[self.index(label)]

    def with_costs(self, costs: Mapping[str, float]) -> "TreatmentCatalogue":
        """Return a copy of the catalogue carrying the given per-label costs."""
        missing = [label for label in self.labels if label not in costs]
        if missing:
            raise ParameterError(f"No cost given for {missing}")
        return TreatmentCatalogue(self.labels, tuple(costs[label] for label in self.labels))


@dataclass(frozen=True)
class Outcome:
    """One outcome vector with its observed mask; unobserved entries are NaN."""

    name: str
    values: np.ndarray
    observed: np.ndarray

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())


def _frozen(array: np.ndarray, dtype=None) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Unit-level covariates, treatments and outcomes.

    The dataset is immutable after construction: every array is a read-only
    copy, so it can be shared across parallel workers.
    """

    X: np.ndarray
    columns: Tuple[str, ...]
    D: np.ndarray
    catalogue: TreatmentCatalogue
    outcomes: Tuple[Outcome, ...]
    unit_ids: Tuple[str, ...]
    z_names: Tuple[str, ...] = ()
    instrument: Optional[np.ndarray] = None
    cluster_id: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "X", _frozen(self.X, np.float64))
        object.__setattr__(self, "D", _frozen(self.D, np.int64))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "z_names", tuple(self.z_names))
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(
            self,
            "outcomes",
            tuple(
                Outcome(o.name, _frozen(o.values, np.float64), _frozen(o.observed, bool))
                for o in self.outcomes
            ),
        )
        if self.instrument is not None:
            object.__setattr__(self, "instrument", _frozen(self.instrument, np.float64))
        if self.cluster_id is not None:
            object.__setattr__(self, "cluster_id", _frozen(self.cluster_id, object))
        self.validate()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_arms(self) -> int:
        return self.catalogue.n_arms

    @property
    def outcome_names(self) -> Tuple[str, ...]:
        return tuple(o.name for o in self.outcomes)

    @property
    def Z(self) -> np.ndarray:
        """Matrix of the interpretable heterogeneity / policy variables."""
        return self.columns_of(self.z_names)

    def validate(self) -> None:
        """Check the dataset invariants.

        :raises ValidityError: if an invariant is violated
        """
        n = self.X.shape[0]
        if self.X.ndim != 2 or len(self.columns) != self.X.shape[1]:
            raise ValidityError("Covariate matrix and column names do not match")
        if len(set(self.columns)) != len(self.columns):
            raise ValidityError("Covariate names are not unique")
        if np.isnan(self.X).any():
            raise ValidityError("Covariates contain missing values; flag them for imputation")
        if self.D.shape != (n,) or len(self.unit_ids) != n:
            raise ValidityError("Treatment vector and unit ids must have one entry per unit")
        if n and (self.D.min() < 0 or self.D.max() >= self.n_arms):
            raise ValidityError("Treatment index outside the catalogue")
        unknown = set(self.z_names) - set(self.columns)
        if unknown:
            raise ValidityError(f"Heterogeneity variables {sorted(unknown)} are not covariates")
        if not self.outcomes:
            raise ValidityError("A dataset needs at least one outcome")
        for outcome in self.outcomes:
            if outcome.values.shape != (n,) or outcome.observed.shape != (n,):
                raise ValidityError(f"Outcome {outcome.name} has the wrong length")
            counts = np.bincount(self.D[outcome.observed], minlength=self.n_arms)
            thin = [self.catalogue.labels[d] for d in np.flatnonzero(counts < 2)]
            if thin:
                raise ValidityError(
                    f"Outcome {outcome.name}: arms {thin} have fewer than 2 observed units"
                )
        for name, extra in (("instrument", self.instrument), ("cluster_id", self.cluster_id)):
            if extra is not None and extra.shape != (n,):
                raise ValidityError(f"{name} must have one entry per unit")

    def outcome(self, name: str) -> Outcome:
        """Look up an outcome by name."""
        for outcome in self.outcomes:
            if outcome.name == name:
                return outcome
        raise SchemaError(f"Unknown outcome {name!r}, expected one of {self.outcome_names}")

    def column(self, name: str) -> np.ndarray:
        """One covariate column by name."""
        try:
            return self.X[:, self.columns.index(name)]
        except ValueError:
            raise SchemaError(f"Unknown covariate {name!r}") from None

    def columns_of(self, names: Sequence[str]) -> np.ndarray:
        """Covariate sub-matrix in the order of ``names``."""
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.column(name) for name in names])

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.D, minlength=self.n_arms)

    def select(self, mask: np.ndarray) -> "Dataset":
        """Subset of units; the result is validated again."""
        mask = np.asarray(mask)
        return Dataset(
            X=self.X[mask],
            columns=self.columns,
            D=self.D[mask],
            catalogue=self.catalogue,
            outcomes=tuple(
                Outcome(o.name, o.values[mask], o.observed[mask]) for o in self.outcomes
            ),
            unit_ids=tuple(np.asarray(self.unit_ids, dtype=object)[mask]),
            z_names=self.z_names,
            instrument=None if self.instrument is None else self.instrument[mask],
            cluster_id=None if self.cluster_id is None else self.cluster_id[mask],
        )

    def restrict_to_observed(self, name: str) -> "Dataset":
        """Units whose outcome ``name`` is observed."""
        observed = self.outcome(name).observed
        if observed.all():
            return self
        LOG.info(
            "Outcome %s observed for %d of %d units, restricting", name, observed.sum(), self.n
        )
        return self.select(observed)

    def complete_outcomes(self) -> "Dataset":
        """Units observed on every outcome."""
        observed = np.logical_and.reduce([o.observed for o in self.outcomes])
        LOG.info("%d of %d units observed on every outcome", observed.sum(), self.n)
        return self.select(observed)


class DatasetSchema(pydantic.BaseModel):
    """Column roles of an input CSV."""

    treatment: str = pydantic.Field(description="Column holding the treatment label")
    outcomes: List[str] = pydantic.Field(description="Outcome columns", min_length=1)
    unit_id: Optional[str] = pydantic.Field(description="Unit id column", default=None)
    covariates: Optional[List[str]] = pydantic.Field(
        description="Covariate columns, all remaining columns when omitted", default=None
    )
    categorical: List[str] = pydantic.Field(
        description="Covariates expanded into one indicator per level", default=[]
    )
    impute: List[str] = pydantic.Field(
        description="Covariates imputed by missing-indicator and zero-fill", default=[]
    )
    heterogeneity: List[str] = pydantic.Field(
        description="Interpretable heterogeneity and policy variables", default=[]
    )
    instrument: Optional[str] = pydantic.Field(description="Instrument column", default=None)
    cluster: Optional[str] = pydantic.Field(description="Cluster id column", default=None)
    catalogue: Optional[List[str]] = pydantic.Field(
        description="Ordered treatment labels, sorted observed labels when omitted",
        default=None,
    )
    costs: Optional[List[float]] = pydantic.Field(
        description="Per-label annual costs aligned with the catalogue", default=None
    )

    @pydantic.field_validator("unit_id", "instrument", "cluster", mode="before")
    @classmethod
    def _blank(cls, value):
        return config.blank_to_none(value)

    @pydantic.field_validator(
        "outcomes", "categorical", "impute", "heterogeneity", "catalogue", "costs",
        mode="before",
    )
    @classmethod
    def _split(cls, value):
        return config.split_list(value)

    @pydantic.field_validator("covariates", mode="before")
    @classmethod
    def _split_optional(cls, value):
        return config.split_list(config.blank_to_none(value))

    @classmethod
    def from_config(cls, source: Union[Path, str, Mapping[str, str]]) -> "DatasetSchema":
        """Build a schema from a ``schema.cfg`` file or a flat key=value mapping.

        Keys live in the ``columns`` and ``catalogue`` sections
        (``columns.treatment``, ``catalogue.labels``, ...).
        """
        flat = source if isinstance(source, Mapping) else config.read_config(source)
        options = config.context_compat(config.get_options(flat, "columns", "catalogue"))
        values = dict(options.get("columns", {}))
        catalogue = options.get("catalogue", {})
        if "labels" in catalogue:
            values["catalogue"] = catalogue["labels"]
        if "costs" in catalogue:
            values["costs"] = catalogue["costs"]
        try:
            return cls(**values)
        except pydantic.ValidationError as e:
            raise config.ConfigError(f"Invalid dataset schema: {e}") from e

    def to_config(self) -> Dict[str, object]:
        """Flat key=value mapping, the inverse of from_config."""
        flat: Dict[str, object] = {
            "columns.treatment": self.treatment,
            "columns.outcomes": self.outcomes,
        }
        for key in ("unit_id", "covariates", "instrument", "cluster"):
            value = getattr(self, key)
            if value is not None:
                flat[f"columns.{key.replace('_', '-')}"] = value
        for key in ("categorical", "impute", "heterogeneity"):
            if getattr(self, key):
                flat[f"columns.{key}"] = getattr(self, key)
        if self.catalogue is not None:
            flat["catalogue.labels"] = self.catalogue
        if self.costs is not None:
            flat["catalogue.costs"] = [FLOAT_FORMAT % cost for cost in self.costs]
        return flat


@dataclass
class LoadReport:
    """What ingestion changed on the way in."""

    rows_read: int = 0
    rows_dropped: int = 0
    columns_expanded: Dict[str, List[str]] = field(default_factory=dict)
    missing_indicators: List[str] = field(default_factory=list)


def _require(frame: pd.DataFrame, names: Sequence[str], role: str) -> None:
    missing = [name for name in names if name not in frame.columns]
    if missing:
        raise SchemaError(f"Missing {role} column(s) {missing}")


def _expand_covariates(
    frame: pd.DataFrame, schema: DatasetSchema, covariates: Sequence[str], report: LoadReport
) -> pd.DataFrame:
    """One-hot expand categorical columns and impute flagged ones."""
    expanded = {}
    for name in covariates:
        column = frame[name]
        if name in schema.categorical:
            levels = sorted(column.dropna().astype(str).unique())
            names = []
            for level in levels:
                dummy = f"{name}={level}"
                indicator = (column.astype(str) == level).astype(np.float64)
                expanded[dummy] = indicator.where(column.notna())
                names.append(dummy)
            report.columns_expanded[name] = names
            if name in schema.impute:
                for dummy in names:
                    expanded[dummy] = expanded[dummy].fillna(0.0)
                expanded[f"{name}_missing"] = column.isna().astype(np.float64)
                report.missing_indicators.append(f"{name}_missing")
            continue
        try:
            values = pd.to_numeric(column)
        except (TypeError, ValueError):
            raise SchemaError(
                f"Covariate {name!r} is not numeric; declare it categorical"
            ) from None
        if name in schema.impute:
            # Missingness interacts with the value: zero where missing.
            expanded[name] = values.fillna(0.0).astype(np.float64)
            expanded[f"{name}_missing"] = values.isna().astype(np.float64)
            report.missing_indicators.append(f"{name}_missing")
        else:
            expanded[name] = values.astype(np.float64)
    return pd.DataFrame(expanded, index=frame.index)


def load_dataset(
    path: Union[Path, str], schema: Union[DatasetSchema, Mapping[str, str], Path, str, None] = None
) -> Tuple[Dataset, LoadReport]:
    """Read a CSV file into a validated Dataset.

    :param path: a CSV file, or a dataset directory holding data.csv and schema.cfg
    :param schema: column roles; read from the directory's schema.cfg when omitted
    :return: the dataset and a report of dropped rows and expanded columns
    :raises SchemaError: if a column named by the schema is missing
    :raises CatalogueError: if a treatment label is not in the catalogue
    :raises ValidityError: if an arm has fewer than two observed units
    """
    path = Path(path)
    if path.is_dir():
        if schema is None:
            schema = path / SCHEMA_FILE
        path = path / DATA_FILE
    if not path.is_file():
        raise DataError(f"Data file {path} does not exist")
    if schema is None:
        raise config.ConfigError(f"No schema given for {path}")
    if not isinstance(schema, DatasetSchema):
        schema = DatasetSchema.from_config(schema)

    text_columns = [c for c in (schema.treatment, schema.unit_id, schema.cluster) if c]
    frame = pd.read_csv(
        path, encoding="utf-8", dtype={name: str for name in text_columns}, keep_default_na=True
    )
    report = LoadReport(rows_read=len(frame))

    roles = [schema.treatment, *schema.outcomes]
    roles += [c for c in (schema.unit_id, schema.instrument, schema.cluster) if c]
    _require(frame, roles, "role")
    covariates = schema.covariates
    if covariates is None:
        covariates = [c for c in frame.columns if c not in roles]
    _require(frame, covariates, "covariate")
    _require(frame, schema.categorical + schema.impute, "covariate")
    unknown_z = sorted(set(schema.heterogeneity) - set(frame.columns))
    if unknown_z:
        raise SchemaError(f"Missing heterogeneity column(s) {unknown_z}")

    costs = tuple(schema.costs) if schema.costs else None
    if schema.catalogue:
        catalogue = TreatmentCatalogue(tuple(schema.catalogue), costs)
    else:
        catalogue = TreatmentCatalogue(
            tuple(sorted(frame[schema.treatment].dropna().unique())), costs
        )

    covariate_frame = _expand_covariates(frame, schema, covariates, report)
    keep = frame[schema.treatment].notna() & covariate_frame.notna().all(axis=1)
    if schema.instrument:
        keep &= frame[schema.instrument].notna()
    if schema.cluster:
        keep &= frame[schema.cluster].notna()
    report.rows_dropped = int((~keep).sum())
    if report.rows_dropped:
        LOG.warning("Dropping %d rows with missing unflagged values", report.rows_dropped)
    frame = frame[keep]
    covariate_frame = covariate_frame[keep]

    z_names = []
    for name in schema.heterogeneity:
        z_names.extend(report.columns_expanded.get(name, [name]))

    outcomes = []
    for name in schema.outcomes:
        values = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
        outcomes.append(Outcome(name, values, ~np.isnan(values)))

    unit_ids = frame[schema.unit_id] if schema.unit_id else frame.index.astype(str)
    dataset = Dataset(
        X=covariate_frame.to_numpy(dtype=np.float64),
        columns=tuple(covariate_frame.columns),
        D=catalogue.indices(list(frame[schema.treatment])),
        catalogue=catalogue,
        outcomes=tuple(outcomes),
        unit_ids=tuple(unit_ids),
        z_names=tuple(z_names),
        instrument=(
            frame[schema.instrument].to_numpy(dtype=np.float64) if schema.instrument else None
        ),
        cluster_id=frame[schema.cluster].to_numpy(dtype=object) if schema.cluster else None,
    )
    LOG.info(
        "Loaded %d units, %d covariates, %d arms from %s",
        dataset.n,
        dataset.p,
        dataset.n_arms,
        path,
    )
    return dataset, report


def save_dataset(dataset: Dataset, directory: Union[Path, str]) -> Path:
    """Persist a dataset as ``data.csv`` + ``schema.cfg``.

    The written files load back into identical matrices, and writing the
    reloaded dataset reproduces the same bytes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    columns: Dict[str, object] = {
        UNIT_ID_COLUMN: list(dataset.unit_ids),
        TREATMENT_COLUMN: [dataset.catalogue.labels[d] for d in dataset.D],
    }
    for outcome in dataset.outcomes:
        columns[outcome.name] = outcome.values
    for i, name in enumerate(dataset.columns):
        columns[name] = dataset.X[:, i]
    if dataset.instrument is not None:
        columns[INSTRUMENT_COLUMN] = dataset.instrument
    if dataset.cluster_id is not None:
        columns[CLUSTER_COLUMN] = [str(c) for c in dataset.cluster_id]
    pd.DataFrame(columns).to_csv(
        directory / DATA_FILE,
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
        encoding="utf-8",
    )

    schema = DatasetSchema(
        treatment=TREATMENT_COLUMN,
        outcomes=list(dataset.outcome_names),
        unit_id=UNIT_ID_COLUMN,
        covariates=list(dataset.columns),
        heterogeneity=list(dataset.z_names),
        instrument=INSTRUMENT_COLUMN if dataset.instrument is not None else None,
        cluster=CLUSTER_COLUMN if dataset.cluster_id is not None else None,
        catalogue=list(dataset.catalogue.labels),
        costs=list(dataset.catalogue.costs) if dataset.catalogue.costs else None,
    )
    config.write_config(directory / SCHEMA_FILE, schema.to_config())
    return directory


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Assignment of every unit to exactly one of K folds."""

    fold_of: np.ndarray
    K: int
    seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fold_of", _frozen(self.fold_of, np.int64))
        if self.fold_of.size and (self.fold_of.min() < 0 or self.fold_of.max() >= self.K):
            raise ParameterError(f"Fold labels must lie in [0, {self.K})")

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)

    def test_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def splits(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        """Yield ``(k, train_index, test_index)`` for every fold."""
        for k in range(self.K):
            yield k, self.train_index(k), self.test_index(k)


def make_folds(
    n: int,
    K: int,
    D: Optional[np.ndarray] = None,
    seed: int = 0,
    stratify: bool = True,
) -> FoldAssignment:
    """Randomly split n units into K folds of (almost) equal size.

    Units are shuffled and dealt round-robin. When stratifying, the shuffled
    units of each arm are dealt one arm after the other, continuing the
    round-robin offset, so both the fold sizes and the per-arm counts per fold
    differ by at most one.

    :param n: number of units
    :param K: number of folds, 2 <= K <= n
    :param D: treatment index vector, required when stratifying
    :param seed: seed of the permutation
    :param stratify: deal units arm by arm
    :raises ParameterError: if K is out of range
    """
    if K < 2 or K > n:
        raise ParameterError(f"Fold count K={K} must satisfy 2 <= K <= n={n}")
    rng = np.random.default_rng(seed)
    stratified = stratify and D is not None
    if stratified:
        D = np.asarray(D)
        if D.shape != (n,):
            raise ParameterError("Treatment vector must have n entries")
        order = np.concatenate(
            [rng.permutation(np.flatnonzero(D == arm)) for arm in np.unique(D)]
        )
    else:
        order = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % K
    LOG.debug("Built %d folds over %d units (stratified=%s)", K, n, stratified)
    return FoldAssignment(fold_of=fold_of, K=K, seed=seed, stratified=stratified)
