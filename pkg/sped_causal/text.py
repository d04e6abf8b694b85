# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Text records to confounder features.

Raw per-unit reports are tokenized into onegrams and bigrams, counted into a
sparse document-term matrix, bounded by frequency or tf-idf, and summarised
into keyness lexicons and per-document diagnosis shares. Nothing in this
module draws random numbers except the author classifier, which is seeded.
"""

import functools
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse
from nltk.stem.snowball import SnowballStemmer

from sped_causal import artifacts, forest
from sped_causal.data import ParameterError

LOG = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"[^\W\d_]+")
BIGRAM_JOINER = " "

WEIGHTINGS = ("raw", "tf", "tfidf", "tf_then_tfidf")
COUNT_WEIGHTINGS = ("raw", "tf")

KEYNESS_MEASURES = ("freq", "tfidf_freq", "chi2", "g2", "pmi")
KEYNESS_TOP_K = {"freq": 40, "tfidf_freq": 60, "chi2": 40, "g2": 40, "pmi": 40}
MAX_DIAGNOSES = 16
HOT_SD_MULTIPLIER = 1.5

DEFAULT_MIN_TERM_FREQ = 350
DEFAULT_MIN_DOC_FREQ = 150
DEFAULT_BOUND_PERCENTILE = 0.999

GERMAN_STOPWORDS = frozenset(
    """
    aber alle allem allen aller alles als also am an ander andere anderem anderen anderer
    anderes auch auf aus bei bin bis bist da damit dann das dass dein deine dem den denn der
    des dessen dich die dies diese diesem diesen dieser dieses dir doch dort du durch ein eine
    einem einen einer eines er es etwas euch euer eure für gegen gewesen hab habe haben hat
    hatte hatten hier hin hinter ich ihm ihn ihnen ihr ihre ihrem ihren ihrer im in indem ins
    ist jede jedem jeden jeder jedes jene jetzt kann kein keine keinem keinen keiner man
    manche mein meine mich mir mit muss nach nicht nichts noch nun nur ob oder ohne sehr sein
    seine sich sie sind so solche soll sollte sondern sonst über um und uns unser unter viel
    vom von vor war waren warst was weil weiter welche wenn werde werden wie wieder will wir
    wird wo wollen wurde wurden zu zum zur zwar zwischen
    """.split()
)

Stemmer = Callable[[str], str]


def identity_stemmer(token: str) -> str:
    return token


def default_stemmer(language: str = "german") -> Stemmer:
    """Snowball stemmer applied until the token stops changing.

    Stemming a stem can shorten it again; iterating to a fixed point keeps
    preprocessing idempotent on its own output.
    """
    snowball = SnowballStemmer(language)

    @functools.lru_cache(maxsize=1 << 16)
    def stem(token: str) -> str:
        for _ in range(len(token) + 1):
            stemmed = snowball.stem(token)
            if stemmed == token:
                break
            token = stemmed
        return token

    return stem


def document_types(tokens: Sequence[str], bigrams: bool = True) -> List[str]:
    """Onegrams followed by the bigrams of adjacent tokens."""
    types = list(tokens)
    if bigrams:
        types.extend(f"{a}{BIGRAM_JOINER}{b}" for a, b in zip(tokens, tokens[1:]))
    return types


@dataclass(frozen=True)
class TokenizedCorpus:
    """Preprocessed token lists aligned with unit ids."""

    docs: Tuple[Tuple[str, ...], ...]
    doc_ids: Tuple[str, ...]
    bigrams: bool = True

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def empty(self) -> Tuple[bool, ...]:
        """Documents where no token survived preprocessing."""
        return tuple(not doc for doc in self.docs)

    @functools.cached_property
    def vocab(self) -> Tuple[str, ...]:
        """Sorted unique types over onegrams and bigrams."""
        types = set()
        for doc in self.docs:
            types.update(document_types(doc, self.bigrams))
        return tuple(sorted(types))

    def types_of(self, i: int) -> List[str]:
        return document_types(self.docs[i], self.bigrams)


def preprocess(
    raw_docs: Sequence[str],
    stopword_list: Iterable[str] = GERMAN_STOPWORDS,
    stemmer: Optional[Stemmer] = None,
    doc_ids: Optional[Sequence[str]] = None,
    bigrams: bool = True,
) -> TokenizedCorpus:
    """Lowercase, strip stopwords, digits and punctuation, and stem.

    :param raw_docs: one string per unit
    :param stopword_list: words removed before and after stemming
    :param stemmer: token to token map, the iterated Snowball stemmer by default
    :param doc_ids: unit ids, positional ids when omitted
    :param bigrams: whether types include bigrams of adjacent surviving tokens
    :raises ParameterError: on an empty corpus or an empty stopword list
    """
    if len(raw_docs) == 0:
        raise ParameterError("Cannot preprocess an empty corpus")
    stop = frozenset(word.lower() for word in stopword_list)
    if not stop:
        raise ParameterError("The stopword list is empty")
    if doc_ids is None:
        doc_ids = [str(i) for i in range(len(raw_docs))]
    if len(doc_ids) != len(raw_docs):
        raise ParameterError("Need exactly one id per document")
    stemmer = stemmer or default_stemmer()

    docs = []
    for raw in raw_docs:
        tokens = []
        for word in TOKEN_PATTERN.findall(str(raw).lower()):
            if word in stop:
                continue
            stemmed = stemmer(word)
            if stemmed and stemmed not in stop:
                tokens.append(stemmed)
        docs.append(tuple(tokens))
    corpus = TokenizedCorpus(tuple(docs), tuple(str(i) for i in doc_ids), bigrams)
    n_empty = sum(corpus.empty)
    if n_empty:
        LOG.info("%d of %d documents are empty after preprocessing", n_empty, len(docs))
    return corpus


@dataclass(frozen=True)
class CorpusReport:
    """Per-document averages after preprocessing."""

    n_docs: int
    n_empty: int
    mean_tokens: float
    mean_onegram_types: float
    mean_types: float


def corpus_report(corpus: TokenizedCorpus) -> CorpusReport:
    tokens = [len(doc) for doc in corpus.docs]
    onegram_types = [len(set(doc)) for doc in corpus.docs]
    types = [len(set(corpus.types_of(i))) for i in range(corpus.n_docs)]
    return CorpusReport(
        n_docs=corpus.n_docs,
        n_empty=sum(corpus.empty),
        mean_tokens=float(np.mean(tokens)),
        mean_onegram_types=float(np.mean(onegram_types)),
        mean_types=float(np.mean(types)),
    )


@dataclass(frozen=True, eq=False)
class DocumentTermMatrix:
    """Sparse documents x types matrix of counts or weights."""

    counts: scipy.sparse.csr_matrix
    vocab: Tuple[str, ...]
    weighting: str = "raw"
    doc_ids: Tuple[str, ...] = ()
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ParameterError(f"Unknown weighting {self.weighting!r}")
        if self.counts.shape[1] != len(self.vocab):
            raise ParameterError("Vocabulary does not match the matrix width")

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def n_terms(self) -> int:
        return self.counts.shape[1]

    def dense(self) -> np.ndarray:
        return self.counts.toarray().astype(np.float64)


def build_dtm(corpus: TokenizedCorpus) -> DocumentTermMatrix:
    """Count every type of every document.

    Columns follow the sorted vocabulary, so the matrix does not depend on
    document order beyond the row order itself.
    """
    if corpus.n_docs == 0:
        raise ParameterError("Cannot build a document-term matrix of an empty corpus")
    vocab = corpus.vocab
    column = {token: j for j, token in enumerate(vocab)}
    rows, cols, data = [], [], []
    for i in range(corpus.n_docs):
        for token, count in sorted(Counter(corpus.types_of(i)).items()):
            rows.append(i)
            cols.append(column[token])
            data.append(count)
    counts = scipy.sparse.csr_matrix(
        (np.asarray(data, dtype=np.int64), (np.asarray(rows), np.asarray(cols))),
        shape=(corpus.n_docs, len(vocab)),
        dtype=np.int64,
    )
    LOG.debug("Document-term matrix %d x %d", counts.shape[0], counts.shape[1])
    return DocumentTermMatrix(counts, vocab, "raw", corpus.doc_ids)


def _select_columns(
    dtm: DocumentTermMatrix,
    keep: np.ndarray,
    weighting: str,
    matrix: Optional[scipy.sparse.spmatrix] = None,
    **metadata,
) -> DocumentTermMatrix:
    matrix = dtm.counts if matrix is None else matrix
    keep_index = np.flatnonzero(keep)
    return DocumentTermMatrix(
        counts=scipy.sparse.csr_matrix(matrix[:, keep_index]),
        vocab=tuple(dtm.vocab[j] for j in keep_index),
        weighting=weighting,
        doc_ids=dtm.doc_ids,
        metadata={**dtm.metadata, **metadata},
    )


def _require_counts(dtm: DocumentTermMatrix, allowed: Sequence[str] = ("raw",)) -> None:
    if dtm.weighting not in allowed:
        raise ParameterError(
            f"Expected a {' or '.join(allowed)} matrix, got weighting {dtm.weighting!r}"
        )


def bound_tf(
    dtm: DocumentTermMatrix,
    min_term_freq: int = DEFAULT_MIN_TERM_FREQ,
    min_doc_freq: int = DEFAULT_MIN_DOC_FREQ,
) -> DocumentTermMatrix:
    """Keep types with enough occurrences in enough documents."""
    _require_counts(dtm)
    term_freq = np.asarray(dtm.counts.sum(axis=0)).ravel()
    doc_freq = np.asarray((dtm.counts > 0).sum(axis=0)).ravel()
    keep = (term_freq >= min_term_freq) & (doc_freq >= min_doc_freq)
    if not keep.any():
        LOG.warning(
            "No type appears %d times in %d documents; the bounded matrix is empty",
            min_term_freq,
            min_doc_freq,
        )
    return _select_columns(
        dtm, keep, "tf", min_term_freq=int(min_term_freq), min_doc_freq=int(min_doc_freq)
    )


def tfidf_scores(dtm: DocumentTermMatrix) -> scipy.sparse.csr_matrix:
    """count * ln(n_docs / df), without smoothing or bounding."""
    _require_counts(dtm, COUNT_WEIGHTINGS)
    doc_freq = np.asarray((dtm.counts > 0).sum(axis=0)).ravel().astype(np.float64)
    idf = np.zeros_like(doc_freq)
    present = doc_freq > 0
    idf[present] = np.log(dtm.n_docs / doc_freq[present])
    return scipy.sparse.csr_matrix(dtm.counts.astype(np.float64) @ scipy.sparse.diags(idf))


def weight_tfidf(
    dtm: DocumentTermMatrix, bound_percentile: float = DEFAULT_BOUND_PERCENTILE
) -> DocumentTermMatrix:
    """Weight by tf-idf and keep types whose best score reaches the bound.

    The bound is the ``bound_percentile`` quantile (linear interpolation) of
    all non-zero scores of the matrix.
    """
    _require_counts(dtm)
    if not 0.0 < bound_percentile <= 1.0:
        raise ParameterError("bound_percentile must lie in (0, 1]")
    scores = tfidf_scores(dtm)
    nonzero = scores.data[scores.data > 0]
    if nonzero.size == 0:
        LOG.warning("All tf-idf scores are zero; keeping every column")
        return _select_columns(
            dtm, np.ones(dtm.n_terms, bool), "tfidf", scores, bound_percentile=bound_percentile
        )
    threshold = float(np.quantile(nonzero, bound_percentile))
    column_max = scores.max(axis=0).toarray().ravel()
    keep = column_max >= threshold
    return _select_columns(
        dtm,
        keep,
        "tfidf",
        scores,
        bound_percentile=bound_percentile,
        tfidf_threshold=threshold,
    )


def weight_tf_then_tfidf(
    dtm: DocumentTermMatrix,
    min_term_freq: int = DEFAULT_MIN_TERM_FREQ,
    min_doc_freq: int = DEFAULT_MIN_DOC_FREQ,
) -> DocumentTermMatrix:
    """Select the most frequent types first, then weight them by tf-idf."""
    bounded = bound_tf(dtm, min_term_freq, min_doc_freq)
    scores = tfidf_scores(bounded)
    return _select_columns(bounded, np.ones(bounded.n_terms, bool), "tf_then_tfidf", scores)


@dataclass(frozen=True)
class KeynessResult:
    """Ranked key tokens per class for one measure."""

    measure: str
    classes: Tuple[str, ...]
    ranked: Dict[str, List[Tuple[str, float]]]
    empty_classes: Tuple[str, ...] = ()

    def tokens(self, label: str) -> List[str]:
        return [token for token, _ in self.ranked[label]]


def _class_counts(dtm: DocumentTermMatrix, labels: Sequence[str]):
    labels = np.asarray([str(label) for label in labels])
    if labels.shape != (dtm.n_docs,):
        raise ParameterError("Need exactly one label per document")
    classes = tuple(sorted(set(labels.tolist())))
    member = scipy.sparse.csr_matrix(
        (np.ones(dtm.n_docs), ([classes.index(label) for label in labels], np.arange(dtm.n_docs))),
        shape=(len(classes), dtm.n_docs),
    )
    return classes, member


def keyness_scores(
    dtm: DocumentTermMatrix, labels: Sequence[str], measure: str
) -> Tuple[Tuple[str, ...], np.ndarray, np.ndarray]:
    """Keyness of every type for every class, from the 2x2 table of counts.

    The table crosses the type against all other types, and the class against
    the remaining documents.

    :return: classes, a classes x types score matrix, and the mask of types
        over-represented in each class
    """
    _require_counts(dtm, COUNT_WEIGHTINGS)
    if measure not in KEYNESS_MEASURES:
        raise ParameterError(f"Unknown keyness measure {measure!r}")
    classes, member = _class_counts(dtm, labels)
    a = np.asarray((member @ dtm.counts.astype(np.float64)).todense())
    type_total = a.sum(axis=0, keepdims=True)
    class_total = a.sum(axis=1, keepdims=True)
    total = a.sum()
    b = type_total - a
    rest_total = total - class_total
    over = (a > 0) & (a * rest_total > b * class_total)

    with np.errstate(divide="ignore", invalid="ignore"):
        if measure == "freq":
            scores = a
        elif measure == "tfidf_freq":
            scores = np.asarray((member @ tfidf_scores(dtm)).todense())
        elif measure == "chi2":
            numerator = total * (a * (rest_total - b) - (class_total - a) * b) ** 2
            denominator = type_total * (total - type_total) * class_total * rest_total
            scores = np.where(denominator > 0, numerator / denominator, 0.0)
        elif measure == "g2":
            observed = (a, class_total - a, b, rest_total - b)
            expected = (
                type_total * class_total / total,
                (total - type_total) * class_total / total,
                type_total * rest_total / total,
                (total - type_total) * rest_total / total,
            )
            g2 = np.zeros_like(a)
            for o, e in zip(observed, expected):
                g2 += np.where(o > 0, o * np.log(o / e), 0.0)
            sign = np.where(a >= expected[0], 1.0, -1.0)
            scores = sign * 2.0 * g2
        else:
            scores = np.where(
                a > 0, np.log(a * total / (type_total * class_total)), -np.inf
            )
    return classes, scores, over


def _top_k(scores: np.ndarray, candidates: np.ndarray, vocab: np.ndarray, top_k: int):
    index = np.flatnonzero(candidates)
    order = np.lexsort((vocab[index], -scores[index]))
    return [(str(vocab[index[j]]), float(scores[index[j]])) for j in order[:top_k]]


def keyness(
    dtm: DocumentTermMatrix, labels: Sequence[str], measure: str, top_k: int
) -> KeynessResult:
    """Rank the key types of every class.

    ``freq`` and ``tfidf_freq`` rank every type present in the class; ``chi2``,
    ``g2`` and ``pmi`` rank the types over-represented in it. Ties are broken by
    score descending, then type lexicographically.

    :raises ParameterError: with fewer than two classes or top_k < 1
    """
    if top_k < 1:
        raise ParameterError("top_k must be at least 1")
    classes, scores, over = keyness_scores(dtm, labels, measure)
    if len(classes) < 2:
        raise ParameterError("Keyness needs at least two classes")
    vocab = np.asarray(dtm.vocab, dtype=object).astype(str)
    ranked, empty = {}, []
    for c, label in enumerate(classes):
        present = np.asarray(scores[c] > 0) if measure in ("freq", "tfidf_freq") else over[c]
        ranked[label] = _top_k(scores[c], present, vocab, top_k) if vocab.size else []
        if not ranked[label]:
            empty.append(label)
    if empty:
        LOG.warning("No %s key tokens for classes %s", measure, empty)
    return KeynessResult(measure, classes, ranked, tuple(empty))


@dataclass(frozen=True)
class KeynessLexicon:
    """Union of the per-measure key tokens of every diagnosis."""

    diagnoses: Tuple[str, ...]
    tokens_of: Dict[str, FrozenSet[str]]
    provenance: Dict[str, Dict[str, Tuple[str, ...]]]

    @property
    def size(self) -> int:
        return sum(len(tokens) for tokens in self.tokens_of.values())

    def to_dict(self) -> dict:
        return {
            "diagnoses": list(self.diagnoses),
            "provenance": {
                d: {t: list(m) for t, m in sorted(self.provenance[d].items())}
                for d in self.diagnoses
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "KeynessLexicon":
        provenance = {
            d: {t: tuple(m) for t, m in tokens.items()}
            for d, tokens in payload["provenance"].items()
        }
        return cls(
            diagnoses=tuple(payload["diagnoses"]),
            tokens_of={d: frozenset(provenance[d]) for d in payload["diagnoses"]},
            provenance=provenance,
        )


def build_lexicon(
    dtm: DocumentTermMatrix,
    labels: Sequence[str],
    top_k: Optional[Mapping[str, int]] = None,
    include_bigrams: bool = True,
) -> KeynessLexicon:
    """Take the union of the key tokens selected by every measure.

    :param dtm: raw counts of the labelled corpus
    :param labels: diagnosis of every document, at most 16 distinct values
    :param top_k: per-measure selection sizes, KEYNESS_TOP_K by default
    :param include_bigrams: whether bigram types may enter the lexicon
    """
    top_k = {**KEYNESS_TOP_K, **(top_k or {})}
    if len(set(map(str, labels))) > MAX_DIAGNOSES:
        raise ParameterError(f"At most {MAX_DIAGNOSES} diagnoses are supported")
    if not include_bigrams:
        dtm = _select_columns(
            dtm, np.array([BIGRAM_JOINER not in t for t in dtm.vocab], bool), dtm.weighting
        )
    provenance: Dict[str, Dict[str, List[str]]] = {}
    diagnoses: Tuple[str, ...] = ()
    for measure in KEYNESS_MEASURES:
        result = keyness(dtm, labels, measure, top_k[measure])
        diagnoses = result.classes
        for label in result.classes:
            selected = provenance.setdefault(label, {})
            for token in result.tokens(label):
                selected.setdefault(token, []).append(measure)
    lexicon = KeynessLexicon(
        diagnoses=diagnoses,
        tokens_of={d: frozenset(provenance[d]) for d in diagnoses},
        provenance={d: {t: tuple(m) for t, m in provenance[d].items()} for d in diagnoses},
    )
    LOG.info("Lexicon of %d tokens over %d diagnoses", lexicon.size, len(diagnoses))
    return lexicon


@dataclass(frozen=True, eq=False)
class DiagnosisShares:
    """Per-document diagnosis proportions and their hot encoding."""

    diagnoses: Tuple[str, ...]
    shares: np.ndarray
    hot: np.ndarray
    raw: np.ndarray
    empty: np.ndarray
    doc_ids: Tuple[str, ...] = ()

    def columns(self, prefix: str = "share") -> List[str]:
        return [f"{prefix}:{d}" for d in self.diagnoses]


def diagnosis_shares(corpus: TokenizedCorpus, lexicon: KeynessLexicon) -> DiagnosisShares:
    """Share of each document's lexicon tokens belonging to each diagnosis.

    ``raw`` holds the matched frequency over the document's type count,
    bigrams included when the corpus has them; the shares renormalise it to
    sum to one. Documents matching no lexicon token get an all-zero row and
    are flagged in ``empty``.
    """
    if lexicon.size == 0:
        raise ParameterError("The lexicon is empty")
    n, k = corpus.n_docs, len(lexicon.diagnoses)
    matched = np.zeros((n, k))
    for i in range(n):
        counts = Counter(corpus.types_of(i))
        for j, diagnosis in enumerate(lexicon.diagnoses):
            tokens = lexicon.tokens_of[diagnosis]
            matched[i, j] = sum(count for token, count in counts.items() if token in tokens)
    lengths = np.array([len(corpus.types_of(i)) for i in range(n)], dtype=np.float64)
    totals = matched.sum(axis=1)
    empty = totals == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(lengths[:, None] > 0, matched / lengths[:, None], 0.0)
        shares = np.where(empty[:, None], 0.0, matched / totals[:, None])
    threshold = shares.mean(axis=1) + HOT_SD_MULTIPLIER * shares.std(axis=1)
    hot = (shares > threshold[:, None]).astype(np.int64)
    if empty.any():
        LOG.info("%d documents match no lexicon token", int(empty.sum()))
    return DiagnosisShares(lexicon.diagnoses, shares, hot, raw, empty, corpus.doc_ids)


def strip_author_keyness(
    dtm: DocumentTermMatrix, author_ids: Sequence[str], measure: str = "chi2", top_k: int = 40
) -> DocumentTermMatrix:
    """Remove the types that are key for any author."""
    if len(set(map(str, author_ids))) < 2:
        raise ParameterError("Stripping author keyness needs at least two authors")
    result = keyness(dtm, author_ids, measure, top_k)
    removed = set()
    for label in result.classes:
        removed.update(result.tokens(label))
    keep = np.array([token not in removed for token in dtm.vocab], bool)
    LOG.info("Removing %d author-key types", len(removed))
    return _select_columns(dtm, keep, dtm.weighting, removed_author_types=len(removed))


def author_classification_error(
    dtm: DocumentTermMatrix,
    author_ids: Sequence[str],
    n_trees: int = 100,
    min_leaf: int = 1,
    seed: int = 0,
    n_jobs: int = 1,
) -> float:
    """Out-of-bag error of a forest predicting the author from the text.

    One probability forest per author is grown on the document-term matrix;
    each document is assigned the author with the highest out-of-bag
    probability. Documents never out of bag are skipped.
    """
    authors = sorted(set(map(str, author_ids)))
    if len(authors) < 2:
        raise ParameterError("Author classification needs at least two authors")
    truth = np.array([authors.index(str(a)) for a in author_ids])
    X = dtm.dense()
    oob = np.full((dtm.n_docs, len(authors)), np.nan)
    for k in range(len(authors)):
        model = forest.fit_random_forest(
            X,
            (truth == k).astype(np.float64),
            task="probability",
            n_trees=n_trees,
            min_leaf=min_leaf,
            seed=seed + k,
            n_jobs=n_jobs,
        )
        oob[:, k] = model.oob_prediction
    scored = ~np.isnan(oob).any(axis=1)
    predicted = np.argmax(np.where(np.isnan(oob), -np.inf, oob), axis=1)
    error = float(np.mean(predicted[scored] != truth[scored]))
    LOG.info("Author out-of-bag error %.3f over %d documents", error, int(scored.sum()))
    return error


def align_to_units(
    matrix: np.ndarray, doc_ids: Sequence[str], unit_ids: Sequence[str]
) -> np.ndarray:
    """Reorder document rows to follow unit ids; units without text get zeros."""
    position = {str(doc): i for i, doc in enumerate(doc_ids)}
    aligned = np.zeros((len(unit_ids), matrix.shape[1]))
    missing = 0
    for i, unit in enumerate(unit_ids):
        j = position.get(str(unit))
        if j is None:
            missing += 1
        else:
            aligned[i] = matrix[j]
    if missing:
        LOG.warning("%d units have no text record", missing)
    return aligned


def read_corpus(path) -> pd.DataFrame:
    """Read a corpus as an ``id,text`` frame.

    A directory holds one UTF-8 file per unit named after the unit id; a file
    is a CSV with ``id`` and ``text`` columns and possibly more (``label``,
    ``author``).
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file())
        return pd.DataFrame(
            {"id": [p.stem for p in files], "text": [p.read_text("utf-8") for p in files]}
        )
    if not path.is_file():
        raise artifacts.ArtifactError(f"Corpus {path} does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = {"id", "text"} - set(frame.columns)
    if missing:
        raise ParameterError(f"Corpus CSV {path} lacks columns {sorted(missing)}")
    return frame


def save_dtm(dtm: DocumentTermMatrix, path) -> Path:
    """Persist as a (row, col, value) triplet CSV, a vocab file and a sidecar."""
    path = Path(path)
    coo = dtm.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    frame = pd.DataFrame(
        {"row": coo.row[order], "col": coo.col[order], "value": coo.data[order]}
    )
    artifacts.write_frame(path, frame)
    path.with_suffix(".vocab").write_text(
        "".join(f"{token}\n" for token in dtm.vocab), encoding="utf-8"
    )
    artifacts.write_json(
        artifacts.sidecar_path(path),
        {
            "weighting": dtm.weighting,
            "shape": list(dtm.counts.shape),
            "doc_ids": list(dtm.doc_ids),
            "metadata": dtm.metadata,
        },
        indent=None,
    )
    return path


def load_dtm(path) -> DocumentTermMatrix:
    path = Path(path)
    meta = artifacts.read_json(artifacts.sidecar_path(path))
    frame = pd.read_csv(path, encoding="utf-8")
    vocab = tuple(path.with_suffix(".vocab").read_text("utf-8").splitlines())
    integer = meta["weighting"] in COUNT_WEIGHTINGS
    counts = scipy.sparse.csr_matrix(
        (
            frame["value"].to_numpy(dtype=np.int64 if integer else np.float64),
            (frame["row"].to_numpy(), frame["col"].to_numpy()),
        ),
        shape=tuple(meta["shape"]),
    )
    return DocumentTermMatrix(
        counts, vocab, meta["weighting"], tuple(meta["doc_ids"]), meta["metadata"]
    )


def save_lexicon(lexicon: KeynessLexicon, path) -> Path:
    return artifacts.write_json(path, lexicon.to_dict())


def load_lexicon(path) -> KeynessLexicon:
    return KeynessLexicon.from_dict(artifacts.read_json(path))
