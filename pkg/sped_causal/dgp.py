# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Synthetic populations with known potential outcomes.

Two designs are available. ``multiarm`` draws covariates, a latent diagnosis
that shifts both the multinomial-logit assignment and the outcome, and one
potential outcome per arm; the diagnosis is only revealed through generated
text, so text features act as confounders. ``iv`` draws a binary placement
driven by school-year preferences and by an unobserved factor that also
moves the outcome, with a constant effect for every complier.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
import pydantic
from scipy.stats import norm

from sped_causal import artifacts, config, iv, text
from sped_causal.data import DEFAULT_TREATMENTS, Dataset, Outcome, TreatmentCatalogue, save_dataset

LOG = logging.getLogger(__name__)

OUTCOME = "y"
TEXT_DIR = "text"
DATASET_DIR = "dataset"
TRUTH_FILE = "truth.csv"
REFERENCE_FILE = "reference.csv"
AUTHORS_FILE = "authors.csv"
IV_TREATMENTS = ("inclusion", "semi_segregation")
MIN_PROPENSITY = 1e-6

SYLLABLES = (
    "ba", "ber", "da", "dorn", "fa", "gel", "hal", "ka", "kel", "lin", "lo", "mar",
    "mo", "nal", "pra", "ri", "rup", "sa", "schu", "sel", "ta", "tor", "wal", "zo",
)  # fmt: skip


class DgpError(Exception):
    """The generating process is misspecified or degenerate."""


class DgpSpec(pydantic.BaseModel):
    """Parameters of a synthetic population."""

    design: Literal["multiarm", "iv"] = pydantic.Field(
        description="multiarm (confounded D-arm assignment) or iv (school-year instrument)",
        default="multiarm",
    )
    n: int = pydantic.Field(description="Units", default=4000, ge=10)
    arms: int = pydantic.Field(description="Treatment arms D", default=3, ge=2, le=7)
    p: int = pydantic.Field(description="Gaussian covariates", default=20, ge=1)
    seed: int = pydantic.Field(description="Seed of every draw", default=0)
    propensity_covariates: int = pydantic.Field(
        description="Covariates entering the assignment model", default=3, ge=1
    )
    propensity_strength: float = pydantic.Field(
        description="Scale of the multinomial-logit coefficients", default=0.5, ge=0
    )
    outcome_covariates: int = pydantic.Field(
        description="Covariates entering the baseline outcome", default=5, ge=1
    )
    theta: Literal["constant", "step", "linear_z", "two_group"] = pydantic.Field(
        description="Shape of the unit effect of one arm step", default="constant"
    )
    theta_value: float = pydantic.Field(description="Effect size", default=0.5)
    noise_sd: float = pydantic.Field(description="Outcome noise", default=1.0, ge=0)
    text: bool = pydantic.Field(description="Generate text records", default=True)
    text_confounding: float = pydantic.Field(
        description="Scale of the diagnosis shifts of assignment and outcome", default=0.5, ge=0
    )
    n_diagnoses: int = pydantic.Field(description="Latent diagnoses", default=16, ge=2, le=16)
    vocab_per_diagnosis: int = pydantic.Field(default=30, ge=1)
    common_vocab: int = pydantic.Field(default=200, ge=1)
    doc_length: int = pydantic.Field(description="Mean tokens per document", default=120, ge=5)
    key_share: float = pydantic.Field(
        description="Share of tokens drawn from the own diagnosis", default=0.3, gt=0, lt=1
    )
    leakage: float = pydantic.Field(
        description="Share of tokens drawn from other diagnoses", default=0.02, ge=0, lt=1
    )
    n_reference_docs: int = pydantic.Field(
        description="Labelled documents of the reference corpus", default=800, ge=0
    )
    n_authors: int = pydantic.Field(default=5, ge=1)
    author_signature: float = pydantic.Field(
        description="Share of tokens from the author's signature words", default=0.05, ge=0, lt=1
    )
    n_schools: int = pydantic.Field(default=40, ge=2)
    n_years: int = pydantic.Field(default=5, ge=1)
    instrument_strength: float = pydantic.Field(
        description="Spread of the school-year placement preferences", default=1.0, ge=0
    )
    late: float = pydantic.Field(description="Effect of the IV placement", default=-0.45)
    selection: float = pydantic.Field(
        description="Loading of the unobserved factor in the outcome", default=0.5
    )

    @pydantic.model_validator(mode="after")
    def _check(self):
        if self.propensity_covariates > self.p or self.outcome_covariates > self.p:
            raise ValueError("Model covariates cannot exceed p")
        if self.key_share + self.leakage + self.author_signature >= 1:
            raise ValueError("Token shares must leave room for common words")
        return self

    @classmethod
    def from_config(cls, source: Union[Path, str, Mapping[str, str]]) -> "DgpSpec":
        """Read the ``dgp`` section of a key=value file (``dgp.n = 4000``)."""
        flat = source if isinstance(source, Mapping) else config.read_config(source)
        options = config.context_compat(config.get_options(flat, "dgp")).get("dgp", {})
        try:
            return cls(**options)
        except pydantic.ValidationError as e:
            raise config.ConfigError(f"Invalid simulation spec: {e}") from e

    @property
    def labels(self) -> Tuple[str, ...]:
        return IV_TREATMENTS if self.design == "iv" else DEFAULT_TREATMENTS[: self.arms]


@dataclass(frozen=True, eq=False)
class OracleTruth:
    """Population quantities of one draw."""

    labels: Tuple[str, ...]
    apo: Dict[str, float]
    ate: Dict[Tuple[str, str], float]
    atet: Dict[Tuple[str, str], float]
    gate: Dict[Tuple[str, str, str], float]
    theta: np.ndarray
    potential: np.ndarray
    propensity: np.ndarray
    mu: np.ndarray
    diagnosis: np.ndarray
    late: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        rows = [("APO", d, "", "", v) for d, v in self.apo.items()]
        rows += [("ATE", a, b, "", v) for (a, b), v in self.ate.items()]
        rows += [("ATET", a, b, "", v) for (a, b), v in self.atet.items()]
        rows += [("GATE", a, b, g, v) for (a, b, g), v in self.gate.items()]
        if self.late is not None:
            rows.append(("LATE", self.labels[1], self.labels[0], "", self.late))
        return pd.DataFrame(rows, columns=["estimand", "d", "d_prime", "group", "value"])


@dataclass(frozen=True, eq=False)
class SimulationResult:
    dataset: Dataset
    truth: OracleTruth
    corpus: Optional[pd.DataFrame] = None
    reference: Optional[pd.DataFrame] = None
    spec: Optional[DgpSpec] = None


@dataclass
class _Vocabulary:
    diagnosis: List[List[str]] = field(default_factory=list)
    common: List[str] = field(default_factory=list)
    authors: List[List[str]] = field(default_factory=list)


def _make_words(rng: np.random.Generator, count: int, stemmer) -> List[str]:
    """Distinct syllable words on which the stemmer is the identity."""
    words, seen = [], set()
    for _ in range(200 * count):
        if len(words) == count:
            return words
        n_syllables = int(rng.integers(2, 5))
        word = "".join(SYLLABLES[i] for i in rng.integers(0, len(SYLLABLES), n_syllables))
        if word in seen or word in text.GERMAN_STOPWORDS or stemmer(word) != word:
            continue
        seen.add(word)
        words.append(word)
    raise DgpError(f"Could not build {count} distinct words")


def _vocabulary(spec: DgpSpec, rng: np.random.Generator) -> _Vocabulary:
    total = spec.n_diagnoses * spec.vocab_per_diagnosis + spec.common_vocab + 5 * spec.n_authors
    words = _make_words(rng, total, text.default_stemmer())
    vocab = _Vocabulary()
    k = spec.vocab_per_diagnosis
    for d in range(spec.n_diagnoses):
        vocab.diagnosis.append(words[d * k : (d + 1) * k])
    start = spec.n_diagnoses * k
    vocab.common = words[start : start + spec.common_vocab]
    start += spec.common_vocab
    vocab.authors = [words[start + 5 * a : start + 5 * (a + 1)] for a in range(spec.n_authors)]
    return vocab


def _document(
    spec: DgpSpec, vocab: _Vocabulary, rng: np.random.Generator, diagnosis: int, author: int
) -> str:
    stopwords = sorted(text.GERMAN_STOPWORDS)
    length = max(5, int(rng.poisson(spec.doc_length)))
    draws = rng.uniform(size=length)
    others = [d for d in range(spec.n_diagnoses) if d != diagnosis]
    pieces = []
    for i, u in enumerate(draws):
        if u < spec.key_share:
            pool = vocab.diagnosis[diagnosis]
        elif u < spec.key_share + spec.leakage:
            pool = vocab.diagnosis[others[int(rng.integers(len(others)))]]
        elif u < spec.key_share + spec.leakage + spec.author_signature:
            pool = vocab.authors[author]
        else:
            pool = vocab.common
        pieces.append(pool[int(rng.integers(len(pool)))])
        extra = rng.uniform()
        if extra < 0.3:
            pieces.append(stopwords[int(rng.integers(len(stopwords)))])
        elif extra < 0.33:
            pieces.append(str(int(rng.integers(1990, 2030))))
        if i % 12 == 11:
            pieces[-1] += "."
    pieces[0] = pieces[0].capitalize()
    return " ".join(pieces)


def _corpus(spec, vocab, rng, diagnosis, authors, ids) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "id": list(ids),
            "text": [
                _document(spec, vocab, rng, int(d), int(a)) for d, a in zip(diagnosis, authors)
            ],
            "author": [f"author{a:02d}" for a in authors],
        }
    )


def _theta(spec: DgpSpec, X: np.ndarray, z: np.ndarray, group: np.ndarray) -> np.ndarray:
    if spec.theta == "constant":
        return np.full(X.shape[0], spec.theta_value)
    if spec.theta == "step":
        return spec.theta_value * (X[:, 0] > 0)
    if spec.theta == "linear_z":
        return spec.theta_value * z
    return np.where(group == 1, 0.2, -0.1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def _truth(labels, potential, propensity, mu, D, group, theta, diagnosis, late=None):
    n_arms = len(labels)
    apo = {labels[d]: float(potential[:, d].mean()) for d in range(n_arms)}
    ate, atet, gate = {}, {}, {}
    for a in range(n_arms):
        for b in range(n_arms):
            if a == b:
                continue
            pair = (labels[a], labels[b])
            ate[pair] = apo[labels[a]] - apo[labels[b]]
            treated = D == a
            if treated.any():
                atet[pair] = float((potential[treated, a] - potential[treated, b]).mean())
            for g in np.unique(group):
                in_group = group == g
                gate[(*pair, str(int(g)))] = float(
                    (potential[in_group, a] - potential[in_group, b]).mean()
                )
    return OracleTruth(
        labels=tuple(labels),
        apo=apo,
        ate=ate,
        atet=atet,
        gate=gate,
        theta=theta,
        potential=potential,
        propensity=propensity,
        mu=mu,
        diagnosis=diagnosis,
        late=late,
    )


def _unit_ids(n: int, prefix: str = "u") -> List[str]:
    width = len(str(n - 1))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _draw_categorical(rng: np.random.Generator, probabilities: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(probabilities, axis=1)
    u = rng.uniform(size=probabilities.shape[0])
    return np.minimum((u[:, None] > cumulative).sum(axis=1), probabilities.shape[1] - 1)


def _multiarm(spec: DgpSpec, rng: np.random.Generator):
    n, labels = spec.n, spec.labels
    X = rng.standard_normal((n, spec.p))
    z = rng.uniform(size=n)
    group = rng.integers(0, 2, size=n)
    diagnosis = rng.integers(0, spec.n_diagnoses, size=n)
    propensity_shift = spec.text_confounding * rng.standard_normal((spec.n_diagnoses, spec.arms))
    outcome_shift = spec.text_confounding * rng.standard_normal(spec.n_diagnoses)

    coef = spec.propensity_strength * rng.standard_normal((spec.propensity_covariates, spec.arms))
    coef[:, 0] = 0.0
    propensity_shift[:, 0] = 0.0
    logits = X[:, : spec.propensity_covariates] @ coef
    if spec.text:
        logits = logits + propensity_shift[diagnosis]
    propensity = _softmax(logits)
    if propensity.min() < MIN_PROPENSITY:
        raise DgpError(
            f"Propensities as small as {propensity.min():.2g}; reduce propensity_strength"
        )
    D = _draw_categorical(rng, propensity)

    beta = 0.5 * rng.standard_normal(spec.outcome_covariates)
    baseline = X[:, : spec.outcome_covariates] @ beta
    if spec.text:
        baseline = baseline + outcome_shift[diagnosis]
    theta = _theta(spec, X, z, group)
    mu = baseline[:, None] + np.arange(spec.arms)[None, :] * theta[:, None]
    noise = spec.noise_sd * rng.standard_normal(n)
    potential = mu + noise[:, None]
    y = potential[np.arange(n), D]

    columns = [f"x{j + 1}" for j in range(spec.p)] + ["z", "group"]
    dataset = Dataset(
        X=np.column_stack([X, z, group]),
        columns=tuple(columns),
        D=D,
        catalogue=TreatmentCatalogue(labels),
        outcomes=(Outcome(OUTCOME, y, np.ones(n, dtype=bool)),),
        unit_ids=tuple(_unit_ids(n)),
        z_names=("z", "group"),
    )
    truth = _truth(labels, potential, propensity, mu, D, group, theta, diagnosis)
    return dataset, truth


def _iv(spec: DgpSpec, rng: np.random.Generator):
    n, labels = spec.n, spec.labels
    X = rng.standard_normal((n, spec.p))
    z = rng.uniform(size=n)
    group = rng.integers(0, 2, size=n)
    diagnosis = rng.integers(0, spec.n_diagnoses, size=n)
    school = rng.integers(0, spec.n_schools, size=n)
    year = rng.integers(0, spec.n_years, size=n)
    preference = spec.instrument_strength * rng.standard_normal((spec.n_schools, spec.n_years))
    latent = rng.standard_normal(n)

    index = preference[school, year] + 0.5 * X[:, 0] + latent
    D = (index > 0).astype(np.int64)
    # propensity given observables integrates the latent factor out
    p1 = norm.cdf(preference[school, year] + 0.5 * X[:, 0])
    propensity = np.column_stack([1.0 - p1, p1])

    beta = 0.5 * rng.standard_normal(spec.outcome_covariates)
    baseline = X[:, : spec.outcome_covariates] @ beta
    theta = np.full(n, spec.late)
    mu = baseline[:, None] + np.array([0.0, 1.0])[None, :] * theta[:, None]
    noise = spec.noise_sd * rng.standard_normal(n) + spec.selection * latent
    potential = mu + noise[:, None]
    y = potential[np.arange(n), D]

    instrument = iv.build_deviation_instrument(D, school, year, leave_one_out=True).raw
    columns = [f"x{j + 1}" for j in range(spec.p)] + ["z", "group", "year"]
    dataset = Dataset(
        X=np.column_stack([X, z, group, year]),
        columns=tuple(columns),
        D=D,
        catalogue=TreatmentCatalogue(labels),
        outcomes=(Outcome(OUTCOME, y, np.ones(n, dtype=bool)),),
        unit_ids=tuple(_unit_ids(n)),
        z_names=("z", "group"),
        instrument=instrument,
        cluster_id=np.array([f"s{s:03d}" for s in school], dtype=object),
    )
    truth = _truth(labels, potential, propensity, mu, D, group, theta, diagnosis, spec.late)
    return dataset, truth


def generate(spec: DgpSpec) -> SimulationResult:
    """Draw a population, its oracle truths and its text records.

    :raises DgpError: if the assignment model is degenerate
    """
    rng = np.random.default_rng(spec.seed)
    if spec.design == "iv":
        dataset, truth = _iv(spec, rng)
    else:
        dataset, truth = _multiarm(spec, rng)

    corpus = reference = None
    if spec.text:
        text_rng = np.random.default_rng([spec.seed, 1])
        vocab = _vocabulary(spec, text_rng)
        authors = text_rng.integers(0, spec.n_authors, size=spec.n)
        corpus = _corpus(spec, vocab, text_rng, truth.diagnosis, authors, dataset.unit_ids)
        if spec.n_reference_docs:
            ref_diagnosis = np.arange(spec.n_reference_docs) % spec.n_diagnoses
            ref_authors = text_rng.integers(0, spec.n_authors, size=spec.n_reference_docs)
            reference = _corpus(
                spec,
                vocab,
                text_rng,
                ref_diagnosis,
                ref_authors,
                _unit_ids(spec.n_reference_docs, "r"),
            )
            reference.insert(2, "label", [f"diag{d + 1:02d}" for d in ref_diagnosis])
    LOG.info(
        "Simulated %d units, %d arms (%s design)", dataset.n, dataset.n_arms, spec.design
    )
    return SimulationResult(dataset, truth, corpus, reference, spec)


def write_simulation(result: SimulationResult, out_dir) -> List[Path]:
    """Write the dataset directory, truths, text records and reference corpus."""
    out_dir = Path(out_dir)
    paths = [save_dataset(result.dataset, out_dir / DATASET_DIR)]
    paths.append(artifacts.write_frame(out_dir / TRUTH_FILE, result.truth.to_frame()))
    if result.corpus is not None:
        text_dir = out_dir / TEXT_DIR
        text_dir.mkdir(parents=True, exist_ok=True)
        for unit, body in zip(result.corpus["id"], result.corpus["text"]):
            (text_dir / f"{unit}.txt").write_text(body + "\n", encoding="utf-8")
        paths.append(text_dir)
        paths.append(
            artifacts.write_frame(out_dir / AUTHORS_FILE, result.corpus[["id", "author"]])
        )
    if result.reference is not None:
        paths.append(artifacts.write_frame(out_dir / REFERENCE_FILE, result.reference))
    return paths
