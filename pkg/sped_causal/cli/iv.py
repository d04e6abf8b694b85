# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path

import click
import numpy as np
import pandas as pd

from sped_causal import iv
from sped_causal.artifacts import StageRecorder, write_frame
from sped_causal.cli.common import (
    click_option_config,
    click_option_format,
    click_option_out,
    click_option_seed,
    display,
    handle_errors,
    load_run_config,
    output_dir,
    relative,
    stage_logging,
)
from sped_causal.cli.estimate import load_input_dataset
from sped_causal.cli.schemas import StageSummary
from sped_causal.data import ParameterError, SchemaError

logger = logging.getLogger(__name__)

IV_DIR = "iv"


@click.command("iv")
@click_option_config
@click_option_seed
@click_option_out
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Dataset directory")
@click.option("--outcome", default=None, help="Outcome, the first one by default")
@click.option("--treated", default=None, help="Label of the treated placement")
@click.option("--control", default=None, help="Label of the comparison placement")
@click.option("--school", default=None, help="School column, the cluster id by default")
@click.option("--year", default=None, help="Year column")
@click.option("--cluster/--no-cluster", default=None, help="Cluster standard errors by school")
@click_option_format
@handle_errors
def iv_late(
    config_path, seed, out, data, outcome, treated, control, school, year, cluster, format
):
    """2SLS effect of a binary placement, instrumented by school-year deviations."""
    run_config = load_run_config(
        config_path,
        [
            ("run.seed", seed),
            ("paths.output", out),
            ("paths.data", data),
            ("iv.outcome", outcome),
            ("iv.treated", treated),
            ("iv.control", control),
            ("iv.school", school),
            ("iv.year", year),
            ("iv.cluster", cluster),
        ],
    )
    out = output_dir(run_config)
    options = run_config.iv
    data_path, dataset = load_input_dataset(run_config, out)
    catalogue = dataset.catalogue
    outcome = options.outcome or dataset.outcome_names[0]
    treated_label = options.treated or catalogue.labels[1]
    control_label = options.control or next(
        label for label in catalogue.labels if label != treated_label
    )
    if treated_label == control_label:
        raise ParameterError("Treated and comparison placements must differ")
    treated_index = catalogue.index(treated_label)
    control_index = catalogue.index(control_label)

    observed = dataset.outcome(outcome)
    keep = observed.observed & np.isin(dataset.D, [treated_index, control_index])
    if options.school is not None:
        schools = dataset.column(options.school)
    elif dataset.cluster_id is not None:
        schools = dataset.cluster_id
    else:
        raise SchemaError("No school column configured and the dataset has no cluster ids")
    D = (dataset.D[keep] == treated_index).astype(np.float64)
    y = observed.values[keep]
    school_ids = np.asarray(schools)[keep]
    year_ids = dataset.column(options.year)[keep]
    covariates = dataset.columns_of(options.covariates)[keep] if options.covariates else None
    clusters = school_ids if options.cluster else None
    logger.info(
        "%s vs %s on %s: %d of %d units",
        treated_label,
        control_label,
        outcome,
        keep.sum(),
        keep.size,
    )

    with stage_logging(out), StageRecorder(
        out, "iv", run_config.run.seed, run_config.section("iv"), [data_path]
    ) as recorder:
        instrument = iv.build_deviation_instrument(
            D,
            school_ids,
            year_ids,
            covariates,
            leave_one_out=options.leave_one_out,
            cell_weighted=options.cell_weighted,
            reference=options.reference,
        )
        estimate = iv.two_sls(
            y,
            D,
            instrument.adjusted,
            covariates,
            cluster=clusters,
            weak_threshold=options.weak_threshold,
            d=treated_label,
            d_prime=control_label,
            outcome=outcome,
        )
        blocks = [] if covariates is None else [("+".join(options.covariates), covariates)]
        first_stage = iv.first_stage_table(D, instrument.adjusted, blocks, clusters)

        recorder.add_output(
            write_frame(out / IV_DIR / "late.csv", pd.DataFrame([estimate.model_dump()]))
        )
        recorder.add_output(write_frame(out / IV_DIR / "first_stage.csv", first_stage))
        units = instrument.to_frame()
        units.insert(0, "unit_id", np.asarray(dataset.unit_ids, dtype=object)[keep])
        recorder.add_output(write_frame(out / IV_DIR / "instrument.csv", units))

    details = {
        "late": estimate.point,
        "se": estimate.se,
        "first_stage_f": estimate.first_stage_f,
        "weak_instrument": estimate.weak_instrument,
        "units": estimate.n_used,
    }
    display(
        StageSummary(
            stage="iv", out=str(out), outputs=relative(recorder.outputs, out), details=details
        ),
        format,
    )
