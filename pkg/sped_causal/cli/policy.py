# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import dataclasses
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import click
import pandas as pd

from sped_causal import config, policy
from sped_causal.artifacts import StageRecorder, write_frame, write_json
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
from sped_causal.cli.estimate import EFFECTS_DIR, POLICY_SCORES_TEMPLATE
from sped_causal.cli.schemas import RunConfig, StageSummary

logger = logging.getLogger(__name__)

POLICY_DIR = "policy"
WELFARE_DIR = "welfare"


def _scores_path(run_config: RunConfig, out: Path, outcome: Optional[str]) -> Path:
    """Explicit score file, or the one the effects stage wrote for ``outcome``."""
    if run_config.paths.scores is not None:
        return require_path(run_config.paths.scores, "policy scores")
    verify_if_recorded(out, "effects", required=True)
    if outcome is not None:
        path = out / EFFECTS_DIR / POLICY_SCORES_TEMPLATE.format(outcome=outcome)
        return require_path(path, "policy scores")
    candidates = sorted((out / EFFECTS_DIR).glob(POLICY_SCORES_TEMPLATE.format(outcome="*")))
    if len(candidates) != 1:
        raise config.ConfigError(
            f"Found {len(candidates)} policy score files in {out / EFFECTS_DIR}, pass --outcome"
        )
    return candidates[0]


def _costs(run_config: RunConfig, labels: Sequence[str]) -> Optional[Dict[str, float]]:
    if run_config.paths.costs is not None:
        return policy.load_costs(require_path(run_config.paths.costs, "cost table"))
    if all(label in policy.DEFAULT_COSTS for label in labels):
        return dict(policy.DEFAULT_COSTS)
    logger.info("No cost table for %s, costs are not reported", ", ".join(labels))
    return None


@click.command("policy")
@click_option_config
@click_option_seed
@click_option_threads
@click_option_out
@click.option("--scores", type=click.Path(path_type=Path), default=None, help="Policy score CSV")
@click.option("--outcome", default=None, help="Outcome whose effects-stage scores are used")
@click.option("--costs", type=click.Path(path_type=Path), default=None, help="treatment,cost CSV")
@click.option("--depth", type=int, default=None, help="Tree depth, 1 to 3")
@click.option("--features", default=None, help="Comma separated policy variables")
@click.option("--treatments", default=None, help="Comma separated candidate treatments")
@click.option("--folds", type=int, default=None, help="Validation folds")
@click_option_format
@handle_errors
def policy_tree(
    config_path,
    seed,
    threads,
    out,
    scores,
    outcome,
    costs,
    depth,
    features,
    treatments,
    folds,
    format,
):
    """Learn an assignment tree and compare it with baseline policies."""
    run_config = load_run_config(
        config_path,
        [
            ("run.seed", seed),
            ("run.threads", threads),
            ("paths.output", out),
            ("paths.scores", scores),
            ("paths.costs", costs),
            ("policy.depth", depth),
            ("policy.features", features),
            ("policy.treatments", treatments),
            ("policy.folds", folds),
        ],
    )
    out = output_dir(run_config)
    options = run_config.policy
    scores_path = _scores_path(run_config, out, outcome)
    inputs = [scores_path] + ([run_config.paths.costs] if run_config.paths.costs else [])
    stage_dir = out / POLICY_DIR / scores_path.stem

    with stage_logging(out), StageRecorder(
        out, "policy", run_config.run.seed, run_config.section("policy"), inputs
    ) as recorder:
        loaded = policy.load_policy_scores(scores_path)
        names = options.features or list(loaded.feature_names)
        Z = loaded.features(names)
        candidates = options.treatments or None
        tree_options = {
            "min_leaf": options.min_leaf,
            "max_evaluations": options.max_evaluations,
            "n_jobs": run_config.run.threads,
        }
        tree = policy.fit_policy_tree(
            Z, loaded.gamma, options.depth, names, loaded.labels, candidates, **tree_options
        )
        assignment = tree.predict(Z)
        cost_map = _costs(run_config, loaded.labels)
        learned = policy.policy_value(
            assignment, loaded.gamma, loaded.labels, cost_map, actual=loaded.observed
        )
        observed = policy.policy_value(loaded.observed, loaded.gamma, loaded.labels, cost_map)
        validation = policy.validate_policy(
            Z,
            loaded.gamma,
            options.depth,
            names,
            loaded.labels,
            candidates,
            observed=loaded.observed,
            baselines=options.baselines or None,
            folds=options.folds,
            seed=run_config.run.seed,
            **tree_options,
        )

        recorder.add_output(write_json(stage_dir / "tree.json", tree.to_dict()))
        units = pd.DataFrame(
            {
                "unit_id": list(loaded.unit_ids),
                "observed": list(loaded.observed),
                "assigned": list(assignment),
                "cross_validated": list(validation.assignment),
            }
        )
        recorder.add_output(write_frame(stage_dir / "assignment.csv", units))
        evaluation = {
            "learned": learned.to_dict(),
            "observed": observed.to_dict(),
            "cross_validated_value": validation.value,
        }
        recorder.add_output(write_json(stage_dir / "evaluation.json", evaluation))
        recorder.add_output(write_frame(stage_dir / "validation.csv", validation.to_frame()))

    details = {
        "tree": tree.describe().splitlines(),
        "value": learned.value,
        "observed_value": observed.value,
        "cross_validated_value": validation.value,
        "reallocated_share": learned.reallocated_share,
    }
    if learned.cost_ratio_vs_actual is not None:
        details["cost_ratio_vs_actual"] = learned.cost_ratio_vs_actual
    display(
        StageSummary(
            stage="policy", out=str(out), outputs=relative(recorder.outputs, out), details=details
        ),
        format,
    )


def _spillover(path: Optional[Path]) -> policy.SpilloverFunction:
    if path is None:
        return policy.SpilloverFunction.flat()
    return policy.SpilloverFunction.from_csv(require_path(path, "spillover table"))


@click.command("welfare")
@click_option_config
@click_option_out
@click.option("--policy-gain", type=float, default=None, help="Gain per reallocated student")
@click_option_format
@handle_errors
def welfare(config_path, out, policy_gain, format):
    """Trade the policy gain of reallocated students against classroom spillovers."""
    run_config = load_run_config(
        config_path, [("paths.output", out), ("welfare.policy-gain", policy_gain)]
    )
    out = output_dir(run_config)
    options = run_config.welfare
    missing = options.missing()
    if missing:
        raise config.ConfigError(f"Missing welfare settings: {', '.join(missing)}")
    inputs = [p for p in (options.spillover_sen, options.spillover_nonsen) if p is not None]
    if config_path is not None:
        inputs.append(config_path)

    with stage_logging(out), StageRecorder(
        out, "welfare", run_config.run.seed, run_config.section("welfare"), inputs
    ) as recorder:
        effect = policy.reallocation_welfare(
            policy.ReallocationInputs(
                n_mainstream=options.n_mainstream,
                n_reallocated=options.n_reallocated,
                n_classrooms=options.n_classrooms,
                avg_class_size=options.avg_class_size,
                sen_share_before=options.sen_share_before,
                policy_gain_per_reallocated=options.policy_gain,
                spillover_sen=_spillover(options.spillover_sen),
                spillover_nonsen=_spillover(options.spillover_nonsen),
            )
        )
        details = dataclasses.asdict(effect)
        recorder.add_output(write_json(out / WELFARE_DIR / "welfare.json", details))

    display(
        StageSummary(
            stage="welfare", out=str(out), outputs=relative(recorder.outputs, out), details=details
        ),
        format,
    )
