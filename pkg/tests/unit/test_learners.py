# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pydantic
import pytest

from sped_causal import forest, learners
from sped_causal.data import ParameterError
from sped_causal.learners import LearnerSpec


@pytest.fixture
def blocks(rng):
    base = rng.standard_normal((120, 3))
    diagnosis = rng.uniform(size=(120, 2))
    return {"base": base, "diagnosis": diagnosis}


@pytest.fixture
def target(blocks, rng):
    return 2.0 * blocks["base"][:, 0] + blocks["diagnosis"][:, 1] + 0.2 * rng.standard_normal(120)


class TestLearnerSpec:
    """Tests for specification validation and naming."""

    def test_names(self):
        assert LearnerSpec(kind="elastic_net", mixing=0.25).name == "elastic_net(0.25)@base"
        assert LearnerSpec(kind="lasso", feature_set_id="base+diagnosis").name == (
            "lasso@base+diagnosis"
        )

    def test_lasso_ignores_mixing(self):
        assert LearnerSpec(kind="lasso", mixing=0.3).effective_mixing == 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "boosting"},
            {"kind": "elastic_net", "mixing": 1.5},
            {"kind": "random_forest", "n_trees": 0},
            {"kind": "random_forest", "feature_set_id": ""},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(pydantic.ValidationError):
            LearnerSpec(**kwargs)

    def test_default_grid(self):
        specs = learners.default_specs(("base", "base+diagnosis"), n_trees=10)
        assert [spec.name for spec in specs] == [
            "elastic_net(0.5)@base",
            "lasso@base",
            "random_forest@base",
            "elastic_net(0.5)@base+diagnosis",
            "lasso@base+diagnosis",
            "random_forest@base+diagnosis",
        ]


class TestFeatures:
    """Tests for feature block assembly."""

    def test_blocks_are_stacked_in_order(self, blocks):
        X = learners.assemble_features(blocks, "diagnosis+base")
        assert X.shape == (120, 5)
        np.testing.assert_array_equal(X[:, :2], blocks["diagnosis"])

    def test_vector_block(self):
        X = learners.assemble_features({"a": np.arange(3.0), "b": np.ones((3, 1))}, "a+b")
        assert X.shape == (3, 2)

    def test_unknown_block(self, blocks):
        with pytest.raises(learners.LearnerError, match="text"):
            learners.assemble_features(blocks, "base+text")

    def test_select_rows(self, blocks):
        subset = learners.select_rows(blocks, np.array([0, 5]))
        np.testing.assert_array_equal(subset["base"], blocks["base"][[0, 5]])


class TestWeights:
    """Tests for ensemble weighting."""

    def test_inverse_mse(self):
        np.testing.assert_allclose(learners.ensemble_weights([1.0, 3.0]), [0.75, 0.25])

    def test_equal(self):
        np.testing.assert_allclose(learners.ensemble_weights([1.0, 3.0], "equal"), [0.5, 0.5])

    def test_zero_error_takes_all_weight(self):
        np.testing.assert_allclose(learners.ensemble_weights([0.0, 2.0, 0.0]), [0.5, 0.0, 0.5])

    @pytest.mark.parametrize("mse,scheme", [([], "equal"), ([1.0], "stacking")])
    def test_invalid(self, mse, scheme):
        with pytest.raises(ParameterError):
            learners.ensemble_weights(mse, scheme)


class TestEnsemble:
    """Tests for fitting and combining specifications."""

    def test_ranking_and_retention(self, blocks, target):
        specs = learners.default_specs(("base", "base+diagnosis"), n_trees=30)
        ensemble = learners.fit_ensemble(blocks, target, specs, inner_folds=3, top_n=2, seed=1)
        mse = [m for _, m in ensemble.weights.ranked]
        assert mse == sorted(mse)
        assert len(ensemble.weights.ranked) == 6
        assert len(ensemble.models) == 2
        assert sum(ensemble.weights.weights) == pytest.approx(1.0)
        assert all(w >= 0 for w in ensemble.weights.weights)
        # the diagnosis block carries signal, so the best learner uses it
        assert ensemble.models[0].spec.feature_set_id == "base+diagnosis"

    def test_prediction_is_weighted_average(self, blocks, target):
        specs = [LearnerSpec(kind="lasso"), LearnerSpec(kind="elastic_net")]
        ensemble = learners.fit_ensemble(blocks, target, specs, inner_folds=3, seed=2)
        expected = sum(
            w * m.predict(blocks) for m, w in zip(ensemble.models, ensemble.weights.weights)
        )
        np.testing.assert_allclose(ensemble.predict(blocks), expected)

    def test_probability_is_clipped(self, blocks):
        y = (blocks["base"][:, 0] > 0).astype(float)
        specs = [LearnerSpec(kind="lasso"), LearnerSpec(kind="random_forest", n_trees=10)]
        ensemble = learners.fit_ensemble(
            blocks, y, specs, inner_folds=3, task="probability", epsilon=0.05
        )
        prediction = ensemble.predict(blocks)
        assert prediction.min() >= 0.05
        assert prediction.max() <= 0.95

    def test_failing_specification_is_excluded(self, blocks, target, caplog):
        specs = [LearnerSpec(kind="lasso"), LearnerSpec(kind="lasso", feature_set_id="text")]
        ensemble = learners.fit_ensemble(blocks, target, specs, inner_folds=3)
        assert ensemble.weights.failed == ("lasso@text",)
        assert len(ensemble.models) == 1
        assert "Excluding specification lasso@text" in caplog.text

    def test_all_specifications_fail(self, blocks, target):
        with pytest.raises(learners.EnsembleError):
            learners.fit_ensemble(blocks, target, [LearnerSpec(kind="lasso", feature_set_id="x")])

    @pytest.mark.parametrize("specs,top_n", [([], 1), ([LearnerSpec(kind="lasso")], 0)])
    def test_invalid(self, blocks, target, specs, top_n):
        with pytest.raises(ParameterError):
            learners.fit_ensemble(blocks, target, specs, top_n=top_n)

    def test_single_inner_fold_is_rejected(self, blocks, target):
        with pytest.raises(ParameterError, match="inner_folds"):
            learners.fit_ensemble(blocks, target, [LearnerSpec(kind="lasso")], inner_folds=1)

    def test_forest_is_scored_on_held_out_folds(self, blocks, target):
        spec = LearnerSpec(kind="random_forest", n_trees=10)
        fitted = learners.fit_model(spec, blocks, target, inner_folds=3, seed=4)
        expected = forest.cross_validated_mse(
            blocks["base"],
            target,
            3,
            seed=4,
            n_trees=10,
            mtry=spec.mtry,
            min_leaf=spec.min_leaf,
        )
        assert fitted.cv_mse == pytest.approx(expected)
        assert fitted.cv_mse != pytest.approx(forest.oob_mse(fitted.model, target))

    def test_unknown_task(self, blocks, target):
        with pytest.raises(ParameterError):
            learners.fit_model(LearnerSpec(kind="lasso"), blocks, target, task="ranking")

    def test_persisted_ensemble_predicts_identically(self, blocks, target):
        specs = learners.default_specs(n_trees=5)
        ensemble = learners.fit_ensemble(blocks, target, specs, inner_folds=3)
        restored = learners.ensemble_from_dict(learners.ensemble_to_dict(ensemble))
        np.testing.assert_array_equal(restored.predict(blocks), ensemble.predict(blocks))
        assert restored.weights.to_dict() == ensemble.weights.to_dict()
