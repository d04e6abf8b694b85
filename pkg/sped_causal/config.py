# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Key=value configuration files.

Every stage of the pipeline reads a UTF-8 file of ``section.key = value``
lines. Keys use hyphens as separators (``fit.n-folds``); they are remapped to
underscores before the values reach the pydantic models that validate them.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import psutil

LOG = logging.getLogger(__name__)

UNSET = ""


class ConfigError(Exception):
    """Raised when a configuration file is missing, malformed or invalid."""

    pass


def _available_threads() -> str:
    """Number of logical cores, used when no thread count is configured."""
    return str(psutil.cpu_count(logical=True) or 1)


DEFAULT_CONFIG = {
    # Paths
    "paths.data": UNSET,
    "paths.text": UNSET,
    "paths.reference": UNSET,
    "paths.authors": UNSET,
    "paths.output": UNSET,
    "paths.scores": UNSET,
    "paths.costs": UNSET,
    # Run
    "run.seed": "0",
    "run.threads": _available_threads,
    # Text features
    "text.stemmer": "snowball",
    "text.stopwords": UNSET,
    "text.bigrams": "true",
    "text.min-term-freq": "350",
    "text.min-doc-freq": "150",
    "text.bound-percentile": "0.999",
    "text.lexicon-bigrams": "true",
    "text.author-measure": "chi2",
    "text.author-top-k": "40",
    "text.author-check": "false",
    # Nuisance fitting
    "fit.n-folds": "5",
    "fit.stratify": "true",
    "fit.inner-folds": "5",
    "fit.top-n": "5",
    "fit.weighting": "inverse_mse",
    "fit.learners": "elastic_net,lasso,random_forest",
    "fit.feature-sets": "base",
    "fit.n-trees": "200",
    "fit.epsilon": "0.01",
    # Effects
    "effects.pairs": UNSET,
    "effects.trimming": "none",
    "effects.tilting": "ate",
    "effects.gate": UNSET,
    "effects.cate": UNSET,
    "effects.cate-grid-size": "50",
    "effects.iate": "false",
    "effects.normalized": "false",
    # Policy
    "policy.depth": "2",
    "policy.features": UNSET,
    "policy.treatments": UNSET,
    "policy.folds": "10",
    "policy.min-leaf": "1",
    "policy.max-evaluations": "1000000000",
    "policy.baselines": UNSET,
    # IV
    "iv.outcome": UNSET,
    "iv.treated": UNSET,
    "iv.control": UNSET,
    "iv.school": UNSET,
    "iv.year": UNSET,
    "iv.covariates": UNSET,
    "iv.leave-one-out": "false",
    "iv.cell-weighted": "true",
    "iv.reference": "year",
    "iv.cluster": "false",
    "iv.weak-threshold": "10",
    # Reallocation welfare
    "welfare.n-mainstream": UNSET,
    "welfare.n-reallocated": UNSET,
    "welfare.n-classrooms": UNSET,
    "welfare.avg-class-size": UNSET,
    "welfare.sen-share-before": UNSET,
    "welfare.policy-gain": UNSET,
    "welfare.spillover-sen": UNSET,
    "welfare.spillover-nonsen": UNSET,
}


def read_config(path: Union[Path, str]) -> Dict[str, str]:
    """Parse a key=value configuration file.

    Blank lines and lines starting with ``#`` are ignored. Later keys win over
    earlier ones.

    :param path: the configuration file
    :return: flat mapping of dotted keys to raw string values
    :raises ConfigError: if the file does not exist or a line is malformed
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file {path} does not exist")

    config = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        config[key] = value.strip()
    LOG.debug("Read %d keys from %s", len(config), path)
    return config


def write_config(path: Union[Path, str], config: Mapping[str, Any]) -> None:
    """Write a flat mapping as a key=value file, preserving key order."""
    lines = []
    for key, value in config.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = UNSET
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def apply_defaults(
    config: Mapping[str, str], defaults: Optional[Mapping[str, Any]] = None
) -> Dict[str, str]:
    """Add any missing default configuration keys.

    Callable defaults are evaluated lazily, only when the key is missing.

    :param config: the configuration read from file or command line
    :param defaults: defaults to apply, DEFAULT_CONFIG when omitted
    :return: a new mapping with every default key present
    """
    defaults = DEFAULT_CONFIG if defaults is None else defaults
    merged = dict(config)
    missing = {}
    for option, default in defaults.items():
        if option not in merged:
            if callable(default):
                default = default()
            missing[option] = default
    if missing:
        LOG.debug("Using defaults for %s", ", ".join(sorted(missing)))
    merged.update(missing)
    return merged


def get_options(config: Mapping[str, str], *sections: str) -> Dict[str, Any]:
    """Group dotted keys by section.

    ``get_options({"fit.n-folds": "5"}, "fit")`` returns
    ``{"fit": {"n-folds": "5"}}``. Nested dots produce nested mappings.
    """
    options: Dict[str, Any] = {}
    for key, value in config.items():
        section = key.split(".", 1)[0]
        if sections and section not in sections:
            continue
        node = options
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return options


def context_compat(context: Mapping[str, Any]) -> Dict[str, Any]:
    """Remap hyphenated keys to python compatible names, recursively.

    :return: dictionary usable as keyword arguments of a pydantic model
    """
    clean_context = {}
    for key, value in context.items():
        key = key.replace("-", "_")
        if not isinstance(value, Mapping):
            clean_context[key] = value
        else:
            clean_context[key] = context_compat(value)
    return clean_context


def split_list(value: Any) -> Any:
    """Split a comma separated string into a list of stripped items.

    Non-string values are returned unchanged so the helper can be used as a
    ``mode="before"`` field validator.
    """
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def blank_to_none(value: Any) -> Any:
    """Map the UNSET marker to None."""
    if isinstance(value, str) and value.strip() == UNSET:
        return None
    return value


def override(config: Mapping[str, str], values: Iterable[tuple]) -> Dict[str, str]:
    """Apply command line overrides, skipping values left unset."""
    merged = dict(config)
    for key, value in values:
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        merged[key] = str(value)
    return merged
