# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import click
import numpy as np
import pandas as pd

from sped_causal import dml, heterogeneity, learners, policy
from sped_causal.artifacts import (
    ArtifactError,
    StageRecorder,
    StaleArtifactError,
    read_matrix,
    write_frame,
)
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
    verify_if_recorded,
)
from sped_causal.cli.featurize import DATASET_DEFAULT, block_path, default_input
from sped_causal.cli.schemas import RunConfig, StageSummary
from sped_causal.data import Dataset, FoldAssignment, TreatmentCatalogue, load_dataset

logger = logging.getLogger(__name__)

NUISANCE_DIR = "nuisance"
EFFECTS_DIR = "effects"
ESTIMATES_FILE = "estimates.csv"
POLICY_SCORES_TEMPLATE = "policy-scores-{outcome}.csv"


def nuisance_dir(out: Path, outcome: str) -> Path:
    return out / NUISANCE_DIR / outcome


def policy_scores_path(out: Path, outcome: str) -> Path:
    return out / EFFECTS_DIR / POLICY_SCORES_TEMPLATE.format(outcome=outcome)


def load_blocks(
    out: Path, names: Sequence[str], unit_ids: Sequence[str]
) -> Dict[str, np.ndarray]:
    """Read feature blocks written by featurize, checking their row order."""
    blocks = {}
    for name in names:
        path = block_path(out, name)
        if not path.is_file():
            raise ArtifactError(f"Feature block {name} was not produced by featurize")
        matrix = read_matrix(path)
        if tuple(matrix.index or ()) != tuple(unit_ids):
            raise StaleArtifactError(f"Feature block {name} does not match the dataset units")
        blocks[name] = matrix.values
    return blocks


def load_input_dataset(run_config: RunConfig, out: Path) -> Tuple[Path, Dataset]:
    data_path = require_path(
        default_input(run_config.paths.data, out, DATASET_DEFAULT), "dataset"
    )
    if run_config.paths.data is None:
        verify_if_recorded(out, "simulate")
    dataset, _ = load_dataset(data_path)
    return data_path, dataset


def _check_pairs(pairs: Sequence[Tuple[str, str]], catalogue: TreatmentCatalogue) -> None:
    for d, d_prime in pairs:
        catalogue.index(d)
        catalogue.index(d_prime)


@click.command("fit")
@click_option_config
@click_option_seed
@click_option_threads
@click_option_out
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Dataset directory")
@click.option("--outcome", "outcomes", multiple=True, help="Outcomes to fit, all by default")
@click.option("-K", "--folds", type=int, default=None, help="Cross-fitting folds")
@click.option("--feature-sets", default=None, help="Comma separated, e.g. base,base+diagnosis")
@click_option_format
@handle_errors
def fit(config_path, seed, threads, out, data, outcomes, folds, feature_sets, format):
    """Cross-fit propensity and outcome ensembles."""
    run_config = load_run_config(
        config_path,
        [
            ("run.seed", seed),
            ("run.threads", threads),
            ("paths.output", out),
            ("paths.data", data),
            ("fit.n-folds", folds),
            ("fit.feature-sets", feature_sets),
        ],
    )
    out = output_dir(run_config)
    options = run_config.fit
    extra = [name for name in options.blocks if name != learners.BASE_BLOCK]
    data_path, dataset = load_input_dataset(run_config, out)
    inputs = [data_path]
    if extra:
        verify_if_recorded(out, "featurize", required=True)
        inputs += [block_path(out, name) for name in extra]
    outcomes = list(outcomes) or list(dataset.outcome_names)
    seed = run_config.run.seed

    details = {}
    with stage_logging(out), StageRecorder(
        out, "fit", seed, run_config.section("fit"), inputs
    ) as recorder:
        blocks = load_blocks(out, extra, dataset.unit_ids)
        specs = learners.default_specs(options.feature_sets, options.learners, options.n_trees)
        logger.info("Fitting %d specifications for %s", len(specs), ", ".join(outcomes))
        for outcome in outcomes:
            nuisance = dml.crossfit_nuisances(
                dataset,
                specs,
                outcome,
                blocks,
                K=options.n_folds,
                seed=seed,
                stratify=options.stratify,
                inner_folds=options.inner_folds,
                top_n=options.top_n,
                weighting=options.weighting,
                epsilon=options.epsilon,
                n_jobs=run_config.run.threads,
            )
            recorder.add_output(
                *dml.save_nuisance(nuisance, dataset.catalogue, nuisance_dir(out, outcome))
            )
            details[outcome] = {
                "units": nuisance.n,
                "min_propensity": float(nuisance.p_hat.min()),
            }

    display(
        StageSummary(
            stage="fit", out=str(out), outputs=relative(recorder.outputs, out), details=details
        ),
        format,
    )


def _heterogeneity(
    run_config: RunConfig,
    out: Path,
    subset: Dataset,
    scores: dml.ScoreMatrix,
    nuisance: dml.NuisanceFit,
    pairs: Sequence[Tuple[str, str]],
) -> List[Path]:
    """GATE, CATE and IATE files of one outcome, every pair."""
    options = run_config.effects
    keep = scores.keep_mask
    kept = scores.kept()
    outcome = scores.outcome
    written = []
    for d, d_prime in pairs:
        contrast = kept.contrast(subset.catalogue.index(d), subset.catalogue.index(d_prime))
        tag = f"{outcome}-{d}-{d_prime}"
        frames, diffs = [], []
        for name in options.gate:
            result = heterogeneity.gate(contrast, subset.column(name)[keep], name)
            frames.append(result.to_frame())
            diffs.append(result.diff_frame().assign(group_var=name))
        if frames:
            written.append(write_frame(out / EFFECTS_DIR / f"gate-{tag}.csv", pd.concat(frames)))
            written.append(
                write_frame(out / EFFECTS_DIR / f"gate-diff-{tag}.csv", pd.concat(diffs))
            )
        for name in options.cate:
            curve = heterogeneity.kernel_cate(
                contrast, subset.column(name)[keep], grid_size=options.cate_grid_size
            )
            written.append(
                write_frame(out / EFFECTS_DIR / f"cate-{tag}-{name}.csv", curve.to_frame())
            )
        if options.iate:
            if nuisance.folds is None:
                raise ArtifactError("Individual effects need the cross-fitting folds")
            folds = FoldAssignment(
                fold_of=nuisance.folds.fold_of[keep],
                K=nuisance.folds.K,
                seed=nuisance.folds.seed,
                stratified=nuisance.folds.stratified,
            )
            specs = learners.default_specs(
                [learners.BASE_BLOCK], run_config.fit.learners, run_config.fit.n_trees
            )
            iate = heterogeneity.iate_dr_learner(
                {learners.BASE_BLOCK: subset.X[keep]},
                contrast,
                folds,
                specs,
                seed=run_config.run.seed,
                n_jobs=run_config.run.threads,
                inner_folds=run_config.fit.inner_folds,
                top_n=run_config.fit.top_n,
                weighting=run_config.fit.weighting,
            )
            profile = heterogeneity.classify_quintiles(
                iate, subset.X[keep], subset.columns, kept.unit_ids
            )
            units = pd.DataFrame(
                {
                    "unit_id": list(kept.unit_ids),
                    "iate": iate.values,
                    "quintile": profile.quintile_of,
                }
            )
            written.append(write_frame(out / EFFECTS_DIR / f"iate-{tag}.csv", units))
            written.append(
                write_frame(out / EFFECTS_DIR / f"quintiles-{tag}.csv", profile.to_frame())
            )
    return written


@click.command("effects")
@click_option_config
@click_option_seed
@click_option_threads
@click_option_out
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Dataset directory")
@click.option("--outcome", "outcomes", multiple=True, help="Outcomes, all fitted by default")
@click.option(
    "--pair", "pairs", nargs=2, multiple=True, help="Treatment pair d d', every pair by default"
)
@click.option("--trimming", default=None, help="none, crump(a) or sturmer(a)")
@click.option("--tilting", type=click.Choice(dml.TILTINGS), default=None)
@click.option("--gate", multiple=True, help="Discrete moderator, repeatable")
@click.option("--cate", multiple=True, help="Continuous moderator, repeatable")
@click.option("--iate/--no-iate", default=None, help="Out-of-fold individual effects")
@click_option_format
@handle_errors
def effects(
    config_path,
    seed,
    threads,
    out,
    data,
    outcomes,
    pairs,
    trimming,
    tilting,
    gate,
    cate,
    iate,
    format,
):
    """Doubly robust effects, heterogeneity and policy scores."""
    run_config = load_run_config(
        config_path,
        [
            ("run.seed", seed),
            ("run.threads", threads),
            ("paths.output", out),
            ("paths.data", data),
            ("effects.trimming", trimming),
            ("effects.tilting", tilting),
            ("effects.gate", gate or None),
            ("effects.cate", cate or None),
            ("effects.iate", iate),
        ],
    )
    out = output_dir(run_config)
    options = run_config.effects
    verify_if_recorded(out, "fit", required=True)
    data_path, dataset = load_input_dataset(run_config, out)
    catalogue = dataset.catalogue
    pairs = [tuple(pair) for pair in pairs] or list(options.pairs) or dml.default_pairs(catalogue)
    _check_pairs(pairs, catalogue)
    if not outcomes:
        outcomes = [o for o in dataset.outcome_names if nuisance_dir(out, o).is_dir()]
    inputs = [data_path] + [nuisance_dir(out, o) for o in outcomes]
    scheme = dml.TrimmingScheme.parse(options.trimming)

    estimates = []
    details = {"pairs": [f"{d}:{d_prime}" for d, d_prime in pairs]}
    with stage_logging(out), StageRecorder(
        out, "effects", run_config.run.seed, run_config.section("effects"), inputs
    ) as recorder:
        for outcome in outcomes:
            nuisance = dml.load_nuisance(nuisance_dir(out, outcome))
            subset = dataset.restrict_to_observed(outcome)
            if tuple(subset.unit_ids) != tuple(nuisance.unit_ids):
                raise StaleArtifactError(
                    f"Nuisances of {outcome} do not match the dataset, rerun fit"
                )
            y = subset.outcome(outcome).values
            keep = dml.apply_trimming(nuisance.p_hat, subset.D, scheme, catalogue.labels)
            ate_scores = dml.build_scores(
                nuisance, y, subset.D, "ate", keep, catalogue, options.normalized, scheme
            )
            scores = ate_scores
            if options.tilting == "ato":
                scores = dml.build_scores(
                    nuisance, y, subset.D, "ato", keep, catalogue, options.normalized, scheme
                )
            results = dml.estimate_all(scores, pairs)
            estimates.extend(results)
            details[outcome] = {
                "units": ate_scores.n_used,
                "dropped": ate_scores.n - ate_scores.n_used,
            }

            recorder.add_output(
                *_heterogeneity(run_config, out, subset, ate_scores, nuisance, pairs)
            )
            kept = ate_scores.kept()
            scores_out = policy.PolicyScores(
                unit_ids=kept.unit_ids,
                observed=tuple(catalogue.labels[d] for d in kept.D),
                Z=subset.Z[keep],
                feature_names=subset.z_names,
                gamma=kept.gamma,
                labels=catalogue.labels,
            )
            recorder.add_output(
                policy.write_policy_scores(policy_scores_path(out, outcome), scores_out)
            )
        frame = dml.estimates_frame(estimates)
        recorder.add_output(write_frame(out / EFFECTS_DIR / ESTIMATES_FILE, frame))

    display(
        StageSummary(
            stage="effects", out=str(out), outputs=relative(recorder.outputs, out), details=details
        ),
        format,
    )
