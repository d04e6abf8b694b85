# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import logging

import click

from sped_causal import config, dgp
from sped_causal.artifacts import StageRecorder
from sped_causal.cli.common import (
    click_option_config,
    click_option_format,
    click_option_out,
    click_option_seed,
    display,
    handle_errors,
    output_dir,
    relative,
    stage_logging,
)
from sped_causal.cli.schemas import RunConfig, StageSummary

logger = logging.getLogger(__name__)


@click.command("simulate")
@click_option_config
@click_option_seed
@click_option_out
@click.option("--design", type=click.Choice(["multiarm", "iv"]), default=None)
@click.option("-n", "--units", type=int, default=None, help="Units to draw")
@click_option_format
@handle_errors
def simulate(config_path, seed, out, design, units, format):
    """Draw a synthetic population with its oracle truths and text records."""
    flat = config.read_config(config_path) if config_path is not None else {}
    flat = config.override(flat, [("dgp.seed", seed), ("dgp.design", design), ("dgp.n", units)])
    spec = dgp.DgpSpec.from_config(flat)
    flat = config.override(flat, [("paths.output", out), ("run.seed", spec.seed)])
    run_config = RunConfig.from_flat(config.apply_defaults(flat))
    out = output_dir(run_config)
    inputs = [config_path] if config_path is not None else []

    with stage_logging(out), StageRecorder(
        out, "simulate", spec.seed, {"dgp": spec.model_dump(mode="json")}, inputs
    ) as recorder:
        result = dgp.generate(spec)
        recorder.add_output(*dgp.write_simulation(result, out))

    dataset = result.dataset
    details = {
        "design": spec.design,
        "units": dataset.n,
        "arms": list(dataset.catalogue.labels),
        "arm_counts": [int(c) for c in dataset.arm_counts()],
    }
    if result.corpus is not None:
        details["documents"] = len(result.corpus)
    display(
        StageSummary(
            stage="simulate",
            out=str(out),
            outputs=relative(recorder.outputs, out),
            details=details,
        ),
        format,
    )
