# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path
from typing import Dict

import click
import pandas as pd

from sped_causal import text
from sped_causal.artifacts import StageRecorder, write_json, write_matrix
from sped_causal.cli.common import (
    click_option_config,
    click_option_format,
    click_option_out,
    click_option_seed,
    click_option_threads,
    display,
    handle_errors,
    load_run_config,
    output_dir,
    relative,
    require_path,
    stage_logging,
)
from sped_causal.cli.schemas import RunConfig, StageSummary, TextConfig
from sped_causal.data import ParameterError, load_dataset

logger = logging.getLogger(__name__)

FEATURES_DIR = "features"
DTM_FILE = "dtm.csv"
LEXICON_FILE = "lexicon.json"
REPORT_FILE = "corpus_report.json"
DATASET_DEFAULT = "dataset"
TEXT_DEFAULT = "text"
REFERENCE_DEFAULT = "reference.csv"
AUTHORS_DEFAULT = "authors.csv"


def block_path(out: Path, name: str) -> Path:
    """CSV holding the unit-aligned feature block ``name``."""
    return out / FEATURES_DIR / f"{name}.csv"


def default_input(configured, out: Path, name: str):
    """The configured path, or the file the upstream stage leaves in the run directory."""
    if configured is not None:
        return configured
    candidate = out / name
    return candidate if candidate.exists() else None


def read_stopwords(options: TextConfig):
    if options.stopwords is None:
        return text.GERMAN_STOPWORDS
    path = require_path(options.stopwords, "stopword list")
    return [line.strip() for line in path.read_text("utf-8").splitlines() if line.strip()]


def tokenize(frame: pd.DataFrame, options: TextConfig) -> text.TokenizedCorpus:
    stemmer = text.default_stemmer() if options.stemmer == "snowball" else text.identity_stemmer
    return text.preprocess(
        list(frame["text"]),
        read_stopwords(options),
        stemmer,
        doc_ids=list(frame["id"]),
        bigrams=options.bigrams,
    )


def build_blocks(
    run_config: RunConfig,
    corpus: text.TokenizedCorpus,
    reference: pd.DataFrame,
    authors: Dict[str, str],
) -> tuple:
    """Feature blocks of every document, keyed by block name.

    :return: blocks as name -> (matrix, column names), the document-term
        matrix, the lexicon and summary figures
    """
    options = run_config.text
    if "label" not in reference.columns:
        raise ParameterError("The reference corpus needs a label column")
    details = {}
    reference_corpus = tokenize(reference, options)
    lexicon = text.build_lexicon(
        text.build_dtm(reference_corpus),
        list(reference["label"]),
        include_bigrams=options.lexicon_bigrams,
    )
    details["lexicon_tokens"] = lexicon.size
    shares = text.diagnosis_shares(corpus, lexicon)

    dtm = text.build_dtm(corpus)
    if authors:
        author_ids = [authors.get(doc, "") for doc in corpus.doc_ids]
        dtm = text.strip_author_keyness(
            dtm, author_ids, options.author_measure, options.author_top_k
        )
        if options.author_check:
            bounded = text.bound_tf(dtm, options.min_term_freq, options.min_doc_freq)
            if bounded.n_terms:
                details["author_oob_error"] = text.author_classification_error(
                    bounded, author_ids, seed=run_config.run.seed, n_jobs=run_config.run.threads
                )
            else:
                logger.warning("No term survives the bounds, skipping the author check")
    tf = text.bound_tf(dtm, options.min_term_freq, options.min_doc_freq)
    tfidf = text.weight_tfidf(dtm, options.bound_percentile)
    tf_tfidf = text.weight_tf_then_tfidf(dtm, options.min_term_freq, options.min_doc_freq)
    details["vocabulary"] = dtm.n_terms
    details["tf_terms"] = tf.n_terms
    details["tfidf_terms"] = tfidf.n_terms

    blocks = {
        "diagnosis": (shares.shares, shares.columns("share")),
        "diagnosis_hot": (shares.hot, shares.columns("hot")),
        "tf": (tf.dense(), [f"tf:{t}" for t in tf.vocab]),
        "tfidf": (tfidf.dense(), [f"tfidf:{t}" for t in tfidf.vocab]),
        "tf_tfidf": (tf_tfidf.dense(), [f"tf_tfidf:{t}" for t in tf_tfidf.vocab]),
    }
    return blocks, dtm, lexicon, details


@click.command("featurize")
@click_option_config
@click_option_seed
@click_option_threads
@click_option_out
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Dataset directory")
@click.option("--text", "text_path", type=click.Path(path_type=Path), default=None)
@click.option("--reference", type=click.Path(path_type=Path), default=None)
@click.option("--authors", type=click.Path(path_type=Path), default=None)
@click_option_format
@handle_errors
def featurize(config_path, seed, threads, out, data, text_path, reference, authors, format):
    """Turn text records into diagnosis shares and document-term features."""
    run_config = load_run_config(
        config_path,
        [
            ("run.seed", seed),
            ("run.threads", threads),
            ("paths.output", out),
            ("paths.data", data),
            ("paths.text", text_path),
            ("paths.reference", reference),
            ("paths.authors", authors),
        ],
    )
    out = output_dir(run_config)
    paths = run_config.paths
    data_path = require_path(default_input(paths.data, out, DATASET_DEFAULT), "dataset")
    text_path = require_path(default_input(paths.text, out, TEXT_DEFAULT), "text records")
    reference_path = require_path(
        default_input(paths.reference, out, REFERENCE_DEFAULT), "reference corpus"
    )
    authors_path = default_input(paths.authors, out, AUTHORS_DEFAULT)
    inputs = [data_path, text_path, reference_path] + ([authors_path] if authors_path else [])

    with stage_logging(out), StageRecorder(
        out, "featurize", run_config.run.seed, run_config.section("text"), inputs
    ) as recorder:
        dataset, _ = load_dataset(data_path)
        records = text.read_corpus(text_path)
        corpus = tokenize(records, run_config.text)
        reference_frame = text.read_corpus(reference_path)
        author_map = {}
        if authors_path is not None:
            frame = pd.read_csv(authors_path, dtype=str, keep_default_na=False)
            author_map = dict(zip(frame["id"], frame["author"]))

        blocks, dtm, lexicon, details = build_blocks(
            run_config, corpus, reference_frame, author_map
        )
        for name, (matrix, columns) in blocks.items():
            if not columns:
                logger.warning("Feature block %s has no columns and is not written", name)
                continue
            aligned = text.align_to_units(matrix, corpus.doc_ids, dataset.unit_ids)
            recorder.add_output(
                write_matrix(
                    block_path(out, name),
                    aligned,
                    columns,
                    {"block": name, "seed": run_config.run.seed},
                    dataset.unit_ids,
                )
            )
        dtm_path = text.save_dtm(dtm, out / FEATURES_DIR / DTM_FILE)
        recorder.add_output(dtm_path, dtm_path.with_suffix(".vocab"))
        recorder.add_output(text.save_lexicon(lexicon, out / FEATURES_DIR / LEXICON_FILE))
        report = text.corpus_report(corpus)
        recorder.add_output(write_json(out / FEATURES_DIR / REPORT_FILE, vars(report)))
        details.update(vars(report))

    display(
        StageSummary(
            stage="featurize",
            out=str(out),
            outputs=relative(recorder.outputs, out),
            details=details,
        ),
        format,
    )
