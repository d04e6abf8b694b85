# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

from sped_causal import heterogeneity as het
from sped_causal.data import ParameterError, make_folds
from sped_causal.learners import LearnerSpec


class TestGate:
    """Tests for group average effects."""

    def test_levels_are_group_means(self):
        scores = np.array([1.0, 3.0, 2.0, 10.0, 14.0])
        groups = ["native", "native", "native", "nonnative", "nonnative"]
        result = het.gate(scores, groups, "nonnative")
        assert result.levels == ("native", "nonnative")
        assert [e.point for e in result.estimates] == pytest.approx([2.0, 12.0])
        assert [e.n for e in result.estimates] == [3, 2]

    def test_hc1_standard_errors(self):
        scores = np.array([1.0, 3.0, 2.0, 10.0, 14.0])
        groups = np.array(["a", "a", "a", "b", "b"])
        result = het.gate(scores, groups)
        # HC1 scales the White variance by n / (n - k)
        inflate = 5 / 3
        var_a = inflate * (1 + 1 + 0) / 9
        var_b = inflate * (4 + 4) / 4
        assert result.estimates[0].se == pytest.approx(np.sqrt(var_a))
        assert result.estimates[1].se == pytest.approx(np.sqrt(var_b))
        (diff,) = result.diff_tests
        assert (diff.level, diff.other) == ("a", "b")
        assert diff.difference == pytest.approx(-10.0)
        assert diff.se == pytest.approx(np.sqrt(var_a + var_b))

    def test_every_pair_is_tested(self, rng):
        groups = np.repeat(["x", "y", "z"], 10)
        result = het.gate(rng.standard_normal(30), groups)
        assert [(t.level, t.other) for t in result.diff_tests] == [
            ("x", "y"),
            ("x", "z"),
            ("y", "z"),
        ]
        columns = ["level", "other", "difference", "se", "p_value"]
        assert list(result.diff_frame().columns) == columns
        assert list(result.to_frame()["group_var"]) == ["group"] * 3

    def test_single_level(self, caplog):
        scores = np.array([1.0, 2.0, 4.0])
        result = het.gate(scores, [1, 1, 1], "gifted")
        assert result.estimates[0].point == pytest.approx(7 / 3)
        assert result.diff_tests == ()
        assert "single level" in result.note

    def test_small_level(self):
        with pytest.raises(ParameterError, match="fewer than two"):
            het.gate(np.ones(3), ["a", "a", "b"])

    def test_misaligned(self):
        with pytest.raises(ParameterError):
            het.gate(np.ones(3), ["a", "a"])


class TestKernelCate:
    """Tests for the kernel-smoothed conditional effect."""

    def test_silverman(self):
        z = np.arange(1.0, 101.0)
        sd = z.std(ddof=1)
        iqr = np.percentile(z, 75) - np.percentile(z, 25)
        expected = 0.9 * min(sd, iqr / 1.34) * 100 ** (-0.2)
        assert het.silverman_bandwidth(z) == pytest.approx(expected)

    def test_leave_one_out_with_wide_kernel(self):
        """A very wide kernel predicts each unit by the mean of the others."""
        scores = np.array([1.0, 2.0, 6.0])
        z = np.array([0.0, 0.5, 1.0])
        others = (scores.sum() - scores) / 2
        expected = np.mean((scores - others) ** 2)
        assert het.loo_cv_error(scores, z, 1e6) == pytest.approx(expected)

    def test_constant_scores_give_a_flat_curve(self, rng):
        z = rng.uniform(0, 1, 200)
        curve = het.kernel_cate(np.full(200, 0.7), z, grid_size=11)
        np.testing.assert_allclose(curve.values, 0.7)
        np.testing.assert_allclose(curve.se, 0.0, atol=1e-12)
        assert curve.bandwidth == pytest.approx(het.BANDWIDTH_FACTOR * curve.cv_bandwidth)

    def test_tracks_a_linear_effect(self, rng):
        z = rng.uniform(0, 1, 2000)
        scores = 2.0 * z + 0.3 * rng.standard_normal(2000)
        curve = het.kernel_cate(scores, z, grid=np.array([0.25, 0.5, 0.75]))
        np.testing.assert_allclose(curve.values, [0.5, 1.0, 1.5], atol=0.1)
        assert np.all(curve.lo < curve.values)
        assert np.all(curve.se > 0)
        assert list(curve.to_frame().columns) == ["grid", "value", "lo", "hi"]

    def test_explicit_bandwidth_is_used_as_given(self, rng):
        z = rng.uniform(0, 1, 100)
        curve = het.kernel_cate(z, z, bandwidth=0.2)
        assert curve.bandwidth == 0.2
        assert curve.grid.size == 50

    def test_grid_without_mass_is_a_gap(self, rng, caplog):
        z = rng.uniform(0, 1, 50)
        curve = het.kernel_cate(z, z, bandwidth=0.01, grid=np.array([0.5, 100.0]))
        assert curve.gaps.tolist() == [False, True]
        assert np.isnan(curve.values[1])
        assert "no kernel mass" in caplog.text

    def test_constant_moderator(self):
        scores = np.array([1.0, 2.0, 3.0, 6.0])
        curve = het.kernel_cate(scores, np.zeros(4), grid_size=3)
        np.testing.assert_allclose(curve.values, 3.0)
        assert curve.se[0] == pytest.approx(scores.std(ddof=1) / 2)

    def test_too_few_distinct_values(self):
        z = np.repeat(np.arange(5.0), 4)
        with pytest.raises(ParameterError, match="distinct"):
            het.kernel_cate(np.ones(20), z)


class TestIate:
    """Tests for out-of-fold individual effect predictions."""

    def test_recovers_the_moderator(self, dataset, rng):
        scores = 2.0 * dataset.column("x2") + 0.1 * rng.standard_normal(dataset.n)
        folds = make_folds(dataset.n, 3, seed=0, stratify=False)
        iate = het.iate_dr_learner(
            dataset, scores, folds, [LearnerSpec(kind="lasso", n_lambda=20)], inner_folds=3
        )
        assert np.corrcoef(iate.values, scores)[0, 1] > 0.9
        assert len(iate.learner_report) == 3

    def test_feature_blocks(self, dataset):
        scores = dataset.column("x1")
        folds = make_folds(dataset.n, 3, seed=0, stratify=False)
        blocks = {"base": dataset.X, "diagnosis": dataset.columns_of(["x2"])}
        spec = LearnerSpec(kind="lasso", n_lambda=10, feature_set_id="base+diagnosis")
        iate = het.iate_dr_learner(blocks, scores, folds, [spec], inner_folds=3)
        assert iate.values.shape == (dataset.n,)

    def test_folds_must_cover_the_scores(self, dataset):
        folds = make_folds(10, 2, seed=0, stratify=False)
        with pytest.raises(ParameterError):
            het.iate_dr_learner(dataset, np.zeros(dataset.n), folds, [LearnerSpec(kind="lasso")])


class TestQuintiles:
    """Tests for the quintile profile of predicted effects."""

    def test_assignment(self):
        values = np.array([9.0, 0.0, 8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0])
        X = np.column_stack([values, np.ones(10)])
        profile = het.classify_quintiles(values, X, ["effect", "constant"])
        expected = (np.argsort(np.argsort(values)) * 5 // 10 + 1).tolist()
        assert profile.quintile_of.tolist() == expected
        assert np.bincount(profile.quintile_of).tolist() == [0, 2, 2, 2, 2, 2]

    def test_standardized_mean_difference(self):
        values = np.arange(10.0)
        X = np.column_stack([values, np.ones(10), np.tile([0.0, 1.0], 5)])
        profile = het.classify_quintiles(values, X, ["effect", "constant", "alternating"])
        # top quintile {8, 9}, bottom {0, 1}, both with variance one half
        assert profile.smd[0] == pytest.approx(8.0 / np.sqrt(0.5))
        assert profile.smd[1] == 0.0
        assert profile.smd[2] == 0.0
        assert profile.flagged == ("effect",)
        assert profile.zero_variance == ("constant",)
        assert profile.means.shape == (5, 3)

    def test_reverse_puts_the_lowest_effects_on_top(self):
        values = np.arange(10.0)
        forward = het.classify_quintiles(values, values[:, None], ["v"])
        backward = het.classify_quintiles(values, values[:, None], ["v"], reverse=True)
        np.testing.assert_array_equal(backward.quintile_of, 6 - forward.quintile_of)
        assert backward.smd[0] == pytest.approx(-forward.smd[0])

    def test_ties_follow_unit_ids(self):
        values = np.zeros(5)
        profile = het.classify_quintiles(
            values, np.zeros((5, 1)), ["x"], unit_ids=["e", "a", "d", "b", "c"]
        )
        assert profile.quintile_of.tolist() == [5, 1, 4, 2, 3]

    def test_frame(self):
        values = np.arange(10.0)
        frame = het.classify_quintiles(values, values[:, None], ["v"]).to_frame()
        assert list(frame.columns) == [
            "covariate",
            "mean_q1",
            "mean_q2",
            "mean_q3",
            "mean_q4",
            "mean_q5",
            "smd",
            "flagged",
        ]

    @pytest.mark.parametrize("n,p,names", [(4, 1, ["x"]), (10, 2, ["x"])])
    def test_invalid(self, n, p, names):
        with pytest.raises(ParameterError):
            het.classify_quintiles(np.arange(float(n)), np.zeros((n, p)), names)
