# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import json

import pandas as pd
import pytest

from sped_causal.cli.estimate import effects, fit
from sped_causal.cli.featurize import featurize
from sped_causal.cli.iv import iv_late
from sped_causal.cli.policy import policy_tree
from sped_causal.cli.simulate import simulate


def summary(result) -> dict:
    return json.loads(result.stdout.strip().splitlines()[-1])


@pytest.fixture
def fitted(runner, run_config, simulated):
    result = runner.invoke(fit, ["-c", str(run_config), "-o", str(simulated)])
    assert result.exit_code == 0, result.output
    return simulated


@pytest.fixture
def estimated(runner, run_config, fitted):
    result = runner.invoke(effects, ["-c", str(run_config), "-o", str(fitted)])
    assert result.exit_code == 0, result.output
    return fitted


class TestFitCommand:
    """Tests for the fit command."""

    def test_writes_nuisances(self, runner, run_config, simulated):
        result = runner.invoke(fit, ["-c", str(run_config), "-o", str(simulated)])
        assert result.exit_code == 0, result.output
        details = summary(result)["details"]
        assert details["y"]["units"] == 300
        assert 0 < details["y"]["min_propensity"] < 1
        nuisance = simulated / "nuisance" / "y"
        for name in ("p_hat.csv", "mu_hat.csv", "folds.csv", "ensembles.json"):
            assert (nuisance / name).is_file()
        assert (simulated / "manifest-fit.json").is_file()

    def test_text_blocks_need_featurize(self, runner, run_config, simulated):
        args = ["-c", str(run_config), "-o", str(simulated), "--feature-sets", "base+diagnosis"]
        result = runner.invoke(fit, args)
        assert result.exit_code == 3

    def test_unknown_outcome(self, runner, run_config, simulated):
        args = ["-c", str(run_config), "-o", str(simulated), "--outcome", "wage"]
        result = runner.invoke(fit, args)
        assert result.exit_code == 3
        assert "wage" in result.output

    def test_invalid_fold_count(self, runner, run_config, simulated):
        result = runner.invoke(fit, ["-c", str(run_config), "-o", str(simulated), "-K", "1"])
        assert result.exit_code == 2


class TestEffectsCommand:
    """Tests for the effects command."""

    def test_estimates(self, runner, run_config, fitted):
        result = runner.invoke(effects, ["-c", str(run_config), "-o", str(fitted)])
        assert result.exit_code == 0, result.output
        details = summary(result)["details"]
        assert details["pairs"] == [
            "no_sped:counseling",
            "no_sped:academic_support",
            "counseling:academic_support",
        ]
        assert details["y"] == {"units": 300, "dropped": 0}

        frame = pd.read_csv(fitted / "effects" / "estimates.csv")
        apo = frame[frame["estimand"] == "APO"]
        assert len(apo) == 3
        ate = frame[(frame["estimand"] == "ATE") & (frame["d"] == "counseling")]
        assert ate["d_prime"].tolist() == ["academic_support"]
        # each arm step adds 0.5
        assert ate["point"].iloc[0] == pytest.approx(-0.5, abs=0.6)
        assert (fitted / "effects" / "policy-scores-y.csv").is_file()

    def test_heterogeneity_outputs(self, runner, run_config, fitted):
        with open(run_config, "a") as f:
            f.write("effects.gate = group\neffects.cate = z\neffects.cate-grid-size = 5\n")
        args = ["-c", str(run_config), "-o", str(fitted), "--pair", "counseling", "no_sped"]
        result = runner.invoke(effects, args)
        assert result.exit_code == 0, result.output
        tag = "y-counseling-no_sped"
        gate = pd.read_csv(fitted / "effects" / f"gate-{tag}.csv")
        assert len(gate) == 2
        cate = pd.read_csv(fitted / "effects" / f"cate-{tag}-z.csv")
        assert list(cate.columns) == ["grid", "value", "lo", "hi"]
        assert len(cate) == 5

    def test_heterogeneity_options(self, runner, run_config, fitted):
        args = [
            "-c",
            str(run_config),
            "-o",
            str(fitted),
            "--pair",
            "counseling",
            "no_sped",
            "--gate",
            "group",
            "--cate",
            "z",
            "--iate",
        ]
        result = runner.invoke(effects, args)
        assert result.exit_code == 0, result.output
        tag = "y-counseling-no_sped"
        assert len(pd.read_csv(fitted / "effects" / f"gate-{tag}.csv")) == 2
        assert (fitted / "effects" / f"cate-{tag}-z.csv").is_file()
        iate = pd.read_csv(fitted / "effects" / f"iate-{tag}.csv")
        assert list(iate.columns) == ["unit_id", "iate", "quintile"]
        assert len(iate) == 300
        assert (fitted / "effects" / f"quintiles-{tag}.csv").is_file()

    def test_no_iate_overrides_the_file(self, runner, run_config, fitted):
        with open(run_config, "a") as f:
            f.write("effects.iate = true\n")
        args = ["-c", str(run_config), "-o", str(fitted), "--pair", "counseling", "no_sped"]
        result = runner.invoke(effects, args + ["--no-iate"])
        assert result.exit_code == 0, result.output
        assert not (fitted / "effects" / "iate-y-counseling-no_sped.csv").exists()

    def test_trimming(self, runner, run_config, fitted):
        args = ["-c", str(run_config), "-o", str(fitted), "--trimming", "crump(0.1)"]
        result = runner.invoke(effects, args)
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(fitted / "effects" / "estimates.csv")
        assert set(frame["trimming"]) == {"crump(0.1)"}

    def test_overlap_tilting(self, runner, run_config, fitted):
        args = ["-c", str(run_config), "-o", str(fitted), "--tilting", "ato"]
        result = runner.invoke(effects, args)
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(fitted / "effects" / "estimates.csv")
        assert "ATO" in set(frame["estimand"])
        assert "ATET" not in set(frame["estimand"])

    def test_requires_fit(self, runner, run_config, simulated):
        result = runner.invoke(effects, ["-c", str(run_config), "-o", str(simulated)])
        assert result.exit_code == 3

    def test_unknown_pair(self, runner, run_config, fitted):
        args = ["-c", str(run_config), "-o", str(fitted), "--pair", "counseling", "therapy"]
        result = runner.invoke(effects, args)
        assert result.exit_code == 3

    def test_changed_dataset_is_detected(self, runner, run_config, fitted):
        data = fitted / "dataset" / "data.csv"
        data.write_text(data.read_text() + "\n")
        result = runner.invoke(effects, ["-c", str(run_config), "-o", str(fitted)])
        assert result.exit_code == 3


class TestPolicyCommand:
    """Tests for the policy command on effects-stage scores."""

    def test_learns_a_tree(self, runner, run_config, estimated):
        args = [
            "-c",
            str(run_config),
            "-o",
            str(estimated),
            "--features",
            "group",
            "--depth",
            "1",
            "--folds",
            "2",
        ]
        result = runner.invoke(policy_tree, args)
        assert result.exit_code == 0, result.output
        details = summary(result)["details"]
        assert isinstance(details["value"], float)
        stage_dir = estimated / "policy" / "policy-scores-y"
        tree = json.loads((stage_dir / "tree.json").read_text())
        assert tree["depth"] == 1
        assignment = pd.read_csv(stage_dir / "assignment.csv")
        assert len(assignment) == 300
        validation = pd.read_csv(stage_dir / "validation.csv")
        assert set(validation["baseline"]) == {
            "all:no_sped",
            "all:counseling",
            "all:academic_support",
            "observed",
        }

    def test_requires_effects(self, runner, run_config, fitted):
        result = runner.invoke(policy_tree, ["-c", str(run_config), "-o", str(fitted)])
        assert result.exit_code == 3


class TestIvCommand:
    """Tests for the iv command."""

    def test_late(self, runner, run_config, tmp_path):
        out = tmp_path / "iv-run"
        args = ["-c", str(run_config), "-o", str(out), "--design", "iv", "-n", "1500"]
        assert runner.invoke(simulate, args).exit_code == 0
        result = runner.invoke(iv_late, ["-c", str(run_config), "-o", str(out), "--cluster"])
        assert result.exit_code == 0, result.output
        details = summary(result)["details"]
        assert details["units"] == 1500
        assert isinstance(details["weak_instrument"], bool)
        late = pd.read_csv(out / "iv" / "late.csv")
        assert late["d"].tolist() == ["semi_segregation"]
        assert late["n_clusters"].iloc[0] > 1
        first_stage = pd.read_csv(out / "iv" / "first_stage.csv")
        assert first_stage["covariates"].tolist() == ["none"]
        assert len(pd.read_csv(out / "iv" / "instrument.csv")) == 1500

    def test_requires_school_ids(self, runner, run_config, simulated):
        result = runner.invoke(iv_late, ["-c", str(run_config), "-o", str(simulated)])
        assert result.exit_code == 3
        assert "cluster ids" in result.output


@pytest.mark.slow
class TestTextPipeline:
    """End to end run with text features."""

    def test_featurize_then_fit(self, runner, tmp_path):
        config_path = tmp_path / "text.cfg"
        config_path.write_text(
            "\n".join(
                [
                    "dgp.n = 300",
                    "dgp.p = 4",
                    "dgp.outcome-covariates = 3",
                    "dgp.n-diagnoses = 4",
                    "dgp.vocab-per-diagnosis = 8",
                    "dgp.common-vocab = 30",
                    "dgp.doc-length = 40",
                    "dgp.n-reference-docs = 80",
                    "dgp.n-authors = 3",
                    "run.threads = 1",
                    "text.min-term-freq = 5",
                    "text.min-doc-freq = 5",
                    "fit.n-folds = 2",
                    "fit.inner-folds = 2",
                    "fit.learners = lasso",
                    "fit.feature-sets = base,base+diagnosis",
                ]
            )
            + "\n"
        )
        out = tmp_path / "run"
        base = ["-c", str(config_path), "-o", str(out)]
        assert runner.invoke(simulate, base).exit_code == 0
        result = runner.invoke(featurize, base)
        assert result.exit_code == 0, result.output
        details = summary(result)["details"]
        assert details["n_docs"] == 300
        assert (out / "features" / "diagnosis.csv").is_file()
        assert (out / "features" / "lexicon.json").is_file()
        result = runner.invoke(fit, base)
        assert result.exit_code == 0, result.output
        result = runner.invoke(effects, base)
        assert result.exit_code == 0, result.output
