# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import contextlib
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Iterable, Iterator, Optional, Tuple

import click
import prettytable
import pydantic

from sped_causal import config, log
from sped_causal.artifacts import MANIFEST_TEMPLATE, ArtifactError, RunManifest, verify_upstream
from sped_causal.cli.schemas import RunConfig, StageSummary
from sped_causal.data import DataError, ParameterError
from sped_causal.dgp import DgpError
from sped_causal.dml import EstimationError
from sped_causal.learners import LearnerError
from sped_causal.policy import PolicyError

logger = logging.getLogger(__name__)

VALUE_FORMAT = "value"
JSON_FORMAT = "json"
JSON_INDENT_FORMAT = "json-indent"
TABLE_FORMAT = "table"

EXIT_CONFIG = 2
EXIT_DATA = 3

CONFIG_ERRORS = (config.ConfigError, pydantic.ValidationError)
DATA_ERRORS = (
    DataError,
    ParameterError,
    EstimationError,
    ArtifactError,
    PolicyError,
    LearnerError,
    DgpError,
)

click_option_format = click.option(
    "-f",
    "--format",
    default=JSON_FORMAT,
    type=click.Choice([VALUE_FORMAT, TABLE_FORMAT, JSON_FORMAT, JSON_INDENT_FORMAT]),
    help="Output format",
)
click_option_config = click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="key=value configuration file",
)
click_option_seed = click.option("--seed", type=int, default=None, help="Seed of every draw")
click_option_threads = click.option(
    "--threads", type=int, default=None, help="Parallel workers, all cores by default"
)
click_option_out = click.option(
    "-o",
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Run directory",
)


def handle_errors(func):
    """Map package errors onto exit codes: 2 for configuration, 3 for data."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CONFIG_ERRORS as e:
            logger.error("Configuration error: %s", e)
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except DATA_ERRORS as e:
            logger.error("%s: %s", type(e).__name__, e)
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


def load_run_config(
    config_path: Optional[Path], overrides: Iterable[Tuple[str, object]] = ()
) -> RunConfig:
    """Read the config file, apply command line overrides and defaults."""
    flat = config.read_config(config_path) if config_path is not None else {}
    flat = config.override(flat, overrides)
    return RunConfig.from_flat(config.apply_defaults(flat))


def output_dir(run_config: RunConfig) -> Path:
    """The run directory, created if needed.

    :raises ConfigError: if neither --out nor paths.output is given
    """
    out = run_config.paths.output
    if out is None:
        raise config.ConfigError("No output directory, pass --out or set paths.output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def require_path(path: Optional[Path], what: str) -> Path:
    """:raises ConfigError: if a required input is unset or does not exist"""
    if path is None:
        raise config.ConfigError(f"No {what} given")
    if not path.exists():
        raise config.ConfigError(f"The {what} {path} does not exist")
    return path


@contextlib.contextmanager
def stage_logging(out: Path) -> Iterator[None]:
    """Record the stage in the run directory's log file."""
    handler = log.setup_logging(out / log.RUN_LOG_NAME)
    try:
        yield
    finally:
        log.teardown_logging(handler)


def display(summary: StageSummary, format: str) -> None:
    """Print a stage summary in the requested format."""
    if format == TABLE_FORMAT:
        table = prettytable.PrettyTable()
        table.title = f"{summary.stage} ({summary.out})"
        table.field_names = ["Item", "Value"]
        table.align = "l"
        for key, value in summary.details.items():
            table.add_row([key, _render(value)])
        for output in summary.outputs:
            table.add_row(["output", output])
        click.echo(table.get_string())
    elif format == VALUE_FORMAT:
        for key, value in summary.details.items():
            click.echo(f"{key}: {_render(value)}")
        for output in summary.outputs:
            click.echo(output)
    elif format in (JSON_FORMAT, JSON_INDENT_FORMAT):
        indent = 2 if format == JSON_INDENT_FORMAT else None
        click.echo(json.dumps(summary.model_dump(mode="json"), indent=indent))


def _render(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, dict):
        return ", ".join(f"{k}={_render(v)}" for k, v in value.items())
    return str(value)


def relative(paths: Iterable[Path], out: Path) -> list:
    """Output paths relative to the run directory, for summaries."""
    names = []
    for path in paths:
        try:
            names.append(Path(path).resolve().relative_to(out.resolve()).as_posix())
        except ValueError:
            names.append(str(path))
    return sorted(set(names))


def verify_if_recorded(out: Path, stage: str, required: bool = False) -> Optional[RunManifest]:
    """Check the outputs of an upstream stage that ran in this run directory.

    :raises ArtifactError: if ``required`` and the stage never ran here
    :raises StaleArtifactError: if a recorded output changed
    """
    if not required and not (out / MANIFEST_TEMPLATE.format(stage=stage)).is_file():
        return None
    return verify_upstream(out, stage)
