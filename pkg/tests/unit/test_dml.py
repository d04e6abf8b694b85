# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest
import scipy.stats

from synthetic import make_dataset

from sped_causal import dml
from sped_causal.data import CatalogueError, Dataset, Outcome, ParameterError, TreatmentCatalogue
from sped_causal.learners import LearnerSpec

LASSO = [LearnerSpec(kind="lasso", n_lambda=20)]
TWO_ARMS = TreatmentCatalogue(("control", "treated"))


def flat_nuisance(n, arms=2, mu=0.0):
    """Equal propensities and a constant conditional mean."""
    return dml.NuisanceFit.from_arrays(np.full((n, arms), 1.0 / arms), np.full((n, arms), mu))


@pytest.fixture
def hand_scores():
    """Four units, two arms, propensity one half and zero conditional means."""
    Y = np.array([1.0, 2.0, 3.0, 4.0])
    D = np.array([0, 1, 0, 1])
    return dml.build_scores(flat_nuisance(4), Y, D, catalogue=TWO_ARMS)


@pytest.fixture
def observational(rng):
    """Confounded assignment with a unit effect."""
    n = 20000
    x = rng.standard_normal(n)
    p1 = 1.0 / (1.0 + np.exp(-x))
    D = (rng.uniform(size=n) < p1).astype(np.int64)
    Y = x + D + 0.5 * rng.standard_normal(n)
    return x, p1, D, Y


class TestSimplex:
    """Tests for propensity clipping."""

    def test_pinned_entries(self):
        p = dml.project_to_simplex(np.array([[0.999, 0.0005, 0.0005]]), 0.01)
        np.testing.assert_allclose(p, [[0.98, 0.01, 0.01]])

    def test_valid_rows_are_unchanged(self):
        p = np.array([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]])
        np.testing.assert_allclose(dml.project_to_simplex(p, 0.01), p)

    def test_rows_sum_to_one_above_epsilon(self, rng):
        p = dml.project_to_simplex(rng.uniform(size=(200, 4)) ** 4, 0.02)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        assert p.min() >= 0.02 - 1e-12

    def test_epsilon_too_large(self):
        with pytest.raises(ParameterError):
            dml.project_to_simplex(np.full((1, 4), 0.25), 0.25)


class TestNuisanceFit:
    """Tests for nuisance validation."""

    def test_rows_must_sum_to_one(self):
        with pytest.raises(dml.EstimationError):
            dml.NuisanceFit.from_arrays(np.full((3, 2), 0.4), np.zeros((3, 2)))

    def test_means_must_be_finite(self):
        mu = np.zeros((3, 2))
        mu[1, 1] = np.inf
        with pytest.raises(dml.EstimationError):
            dml.NuisanceFit.from_arrays(np.full((3, 2), 0.5), mu)

    def test_shapes_must_agree(self):
        with pytest.raises(ParameterError):
            dml.NuisanceFit.from_arrays(np.full((3, 2), 0.5), np.zeros((3, 3)))

    def test_epsilon_projects_oracle_propensities(self):
        fit = dml.NuisanceFit.from_arrays(
            np.array([[1.0, 0.0]]), np.zeros((1, 2)), epsilon=0.05
        )
        np.testing.assert_allclose(fit.p_hat, [[0.95, 0.05]])
        assert fit.epsilon == 0.05


class TestScores:
    """Tests for doubly robust scores and their averages."""

    def test_hand_computed_scores(self, hand_scores):
        np.testing.assert_allclose(hand_scores.gamma, [[2, 0], [0, 4], [6, 0], [0, 8]])

    def test_hand_computed_estimates(self, hand_scores):
        apo = dml.estimate(hand_scores, "APO", "treated")
        assert apo.point == pytest.approx(3.0)
        assert apo.d_prime is None
        ate = dml.estimate(hand_scores, "ATE", "treated", "control")
        assert ate.point == pytest.approx(1.0)
        assert ate.se == pytest.approx(np.sqrt(116.0 / 3.0) / 2.0)
        assert ate.ci95 == pytest.approx((1.0 - 1.96 * ate.se, 1.0 + 1.96 * ate.se))
        assert ate.n_used == 4

    def test_atet_on_randomised_assignment(self, hand_scores):
        atet = dml.estimate(hand_scores, "ATET", "treated", "control")
        np.testing.assert_allclose(hand_scores.atet_scores[(1, 0)], [-2, 4, -6, 8])
        assert atet.point == pytest.approx(1.0)

    def test_p_value_is_a_t_test(self, rng):
        values = rng.standard_normal(30) + 0.3
        result = dml.mean_inference(values)
        reference = scipy.stats.ttest_1samp(values, 0.0)
        assert result["t_stat"] == pytest.approx(reference.statistic)
        assert result["p_value"] == pytest.approx(reference.pvalue)

    def test_constant_scores_are_degenerate(self, caplog):
        scores = dml.build_scores(
            flat_nuisance(4, mu=1.0), np.ones(4), np.array([0, 1, 0, 1]), catalogue=TWO_ARMS
        )
        result = dml.estimate(scores, "ATE", "treated", "control")
        assert result.degenerate
        assert result.se == 0.0
        assert np.isnan(result.p_value)
        assert "zero standard error" in caplog.text

    def test_correct_outcome_model_rescues_wrong_propensity(self, observational):
        x, _, D, Y = observational
        fit = dml.NuisanceFit.from_arrays(
            np.full((x.size, 2), 0.5), np.column_stack([x, x + 1.0])
        )
        scores = dml.build_scores(fit, Y, D, catalogue=TWO_ARMS)
        ate = dml.estimate(scores, "ATE", "treated", "control")
        assert abs(ate.point - 1.0) < 4 * ate.se

    def test_correct_propensity_rescues_wrong_outcome_model(self, observational):
        x, p1, D, Y = observational
        fit = dml.NuisanceFit.from_arrays(np.column_stack([1 - p1, p1]), np.zeros((x.size, 2)))
        scores = dml.build_scores(fit, Y, D, catalogue=TWO_ARMS)
        ate = dml.estimate(scores, "ATE", "treated", "control")
        assert abs(ate.point - 1.0) < 4 * ate.se

    def test_overlap_weights_equal_ate_under_constant_propensity(self):
        Y = np.array([1.0, 2.0, 3.0, 4.0])
        D = np.array([0, 1, 0, 1])
        ato = dml.build_scores(flat_nuisance(4), Y, D, tilting="ato", catalogue=TWO_ARMS)
        result = dml.estimate(ato, "ATO", "treated", "control")
        assert result.point == pytest.approx(1.0)
        assert ato.atet_scores == {}

    def test_overlap_weights_are_normalised(self, rng):
        p = dml.project_to_simplex(rng.uniform(size=(50, 3)), 0.01)
        fit = dml.NuisanceFit.from_arrays(p, np.ones((50, 3)))
        D = np.arange(50) % 3
        ato = dml.build_scores(fit, np.ones(50), D, tilting="ato")
        h = 1.0 / (1.0 / p).sum(axis=1)
        # constant outcomes make every untilted score one
        np.testing.assert_allclose(ato.gamma[:, 0], h / h.mean())

    def test_normalised_weights_average_one(self):
        Y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        D = np.array([0, 1, 0, 1, 1])
        fit = dml.NuisanceFit.from_arrays(np.full((5, 2), 0.5), np.zeros((5, 2)))
        scores = dml.build_scores(fit, Y, D, normalized=True, catalogue=TWO_ARMS)
        assert scores.normalized
        # cell weight averages are 0.8 and 1.2, so the Hajek means are cell means
        assert scores.gamma[:, 0].mean() == pytest.approx(2.0)
        assert scores.gamma[:, 1].mean() == pytest.approx(11.0 / 3.0)

    def test_missing_outcome(self):
        with pytest.raises(dml.EstimationError):
            dml.build_scores(flat_nuisance(2), np.array([1.0, np.nan]), np.array([0, 1]))

    def test_misaligned_inputs(self):
        with pytest.raises(ParameterError):
            dml.build_scores(flat_nuisance(3), np.ones(2), np.array([0, 1]))

    def test_positional_labels(self):
        scores = dml.build_scores(flat_nuisance(4), np.ones(4), np.array([0, 1, 0, 1]))
        assert scores.catalogue.labels == ("0", "1")


class TestEstimate:
    """Tests for estimand selection."""

    @pytest.mark.parametrize(
        "tilting,estimand,d_prime",
        [
            ("ato", "ATE", "control"),
            ("ate", "ATO", "control"),
            ("ate", "ATE", None),
            ("ate", "CATE", "control"),
        ],
    )
    def test_invalid_requests(self, tilting, estimand, d_prime):
        scores = dml.build_scores(
            flat_nuisance(4), np.ones(4), np.array([0, 1, 0, 1]), tilting, catalogue=TWO_ARMS
        )
        with pytest.raises(ParameterError):
            dml.estimate(scores, estimand, "treated", d_prime)

    def test_unknown_label(self, hand_scores):
        with pytest.raises(CatalogueError):
            dml.estimate(hand_scores, "ATE", "treated", "placebo")

    def test_too_few_kept_units(self):
        keep = np.array([True, False, False, False])
        scores = dml.build_scores(
            flat_nuisance(4),
            np.ones(4),
            np.array([0, 1, 0, 1]),
            keep_mask=keep,
            catalogue=TWO_ARMS,
        )
        with pytest.raises(dml.EstimationError, match="Fewer than two"):
            dml.estimate(scores, "APO", "control")

    def test_atet_without_treated_units(self):
        keep = np.array([True, False, True, False])
        scores = dml.build_scores(
            flat_nuisance(4),
            np.ones(4),
            np.array([0, 1, 0, 1]),
            keep_mask=keep,
            catalogue=TWO_ARMS,
        )
        with pytest.raises(dml.EstimationError, match="ATET is undefined"):
            dml.estimate(scores, "ATET", "treated", "control")

    def test_kept_scores(self, hand_scores):
        scores = dml.build_scores(
            flat_nuisance(4),
            np.array([1.0, 2.0, 3.0, 4.0]),
            np.array([0, 1, 0, 1]),
            keep_mask=np.array([True, True, False, True]),
            catalogue=TWO_ARMS,
        )
        kept = scores.kept()
        assert kept.n == 3
        np.testing.assert_array_equal(kept.gamma, hand_scores.gamma[[0, 1, 3]])

    def test_every_estimand_of_three_arms(self):
        catalogue = TreatmentCatalogue(("a", "b", "c"))
        D = np.arange(9) % 3
        Y = np.arange(9.0)
        ate = dml.build_scores(flat_nuisance(9, 3), Y, D, catalogue=catalogue)
        results = dml.estimate_all(ate)
        assert [r.estimand for r in results] == ["APO"] * 3 + ["ATE", "ATET"] * 3
        assert dml.default_pairs(catalogue) == [("a", "b"), ("a", "c"), ("b", "c")]
        ato = dml.build_scores(flat_nuisance(9, 3), Y, D, "ato", catalogue=catalogue)
        assert [r.estimand for r in dml.estimate_all(ato, [("c", "a")])] == ["ATO"]

    def test_frame(self, hand_scores):
        frame = dml.estimates_frame(dml.estimate_all(hand_scores))
        assert list(frame.columns) == dml.ESTIMATE_COLUMNS
        assert frame.shape[0] == 4

    def test_relative_difference(self, hand_scores):
        ate = dml.estimate(hand_scores, "ATE", "treated", "control")
        assert dml.relative_difference(1.5, ate) == pytest.approx(0.5)
        assert dml.relative_difference(-1.0, -2.0) == pytest.approx(0.5)
        with pytest.raises(ParameterError):
            dml.relative_difference(1.0, 0.0)


class TestTrimming:
    """Tests for propensity trimming."""

    @pytest.mark.parametrize(
        "text,kind,alpha,rendered",
        [
            ("none", "none", 0.0, "none"),
            ("", "none", 0.0, "none"),
            ("Crump(0.01)", "crump", 0.01, "crump(0.01)"),
            ("sturmer( 0.033 )", "sturmer", 0.033, "sturmer(0.033)"),
        ],
    )
    def test_parse(self, text, kind, alpha, rendered):
        scheme = dml.TrimmingScheme.parse(text)
        assert (scheme.kind, scheme.alpha) == (kind, alpha)
        assert str(scheme) == rendered

    @pytest.mark.parametrize("text", ["crump", "crump(0.7)", "winsor(0.1)", "sturmer(0)"])
    def test_invalid(self, text):
        with pytest.raises(ParameterError):
            dml.TrimmingScheme.parse(text)

    def test_crump_drops_small_propensities(self):
        p = np.array([[0.5, 0.5], [0.995, 0.005], [0.3, 0.7], [0.02, 0.98]])
        keep = dml.apply_trimming(p, np.array([0, 0, 1, 1]), "crump(0.01)")
        assert keep.tolist() == [True, False, True, True]

    def test_sturmer_is_per_arm(self):
        own = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95])
        D = np.array([0] * 5 + [1] * 5)
        p = np.column_stack([np.where(D == 0, own, 1 - own), np.where(D == 1, own, 1 - own)])
        keep = dml.apply_trimming(p, D, dml.TrimmingScheme("sturmer", 0.1))
        assert keep.tolist() == [False] + [True] * 4 + [False] + [True] * 4

    def test_masks_match_a_unit_by_unit_filter(self):
        def interpolated_quantile(values, alpha):
            ordered = sorted(values)
            position = alpha * (len(ordered) - 1)
            low = int(np.floor(position))
            high = min(low + 1, len(ordered) - 1)
            t = position - low
            a, b = ordered[low], ordered[high]
            return b - (b - a) * (1 - t) if t >= 0.5 else a + (b - a) * t

        def brute_force(p, D, kind, alpha):
            keep = []
            for i in range(p.shape[0]):
                if kind == "crump":
                    keep.append(all(value >= alpha for value in p[i]))
                else:
                    own = [p[j, D[j]] for j in range(p.shape[0]) if D[j] == D[i]]
                    keep.append(p[i, D[i]] >= interpolated_quantile(own, alpha))
            return keep

        rng = np.random.default_rng(17)
        for _ in range(1000):
            n, arms = int(rng.integers(5, 40)), int(rng.integers(2, 5))
            p = rng.dirichlet(np.ones(arms), size=n)
            D = rng.integers(0, arms, size=n)
            kind = ("crump", "sturmer")[int(rng.integers(2))]
            alpha = float(rng.uniform(0.001, 0.2))
            expected = brute_force(p, D, kind, alpha)
            emptied = any(
                not any(k for k, d in zip(expected, D) if d == arm) for arm in set(D.tolist())
            )
            scheme = dml.TrimmingScheme(kind, alpha)
            if emptied:
                with pytest.raises(dml.TrimmingError):
                    dml.apply_trimming(p, D, scheme)
            else:
                assert dml.apply_trimming(p, D, scheme).tolist() == expected

    def test_emptied_arm(self):
        p = np.array([[0.5, 0.5], [0.995, 0.005], [0.995, 0.005]])
        with pytest.raises(dml.TrimmingError, match="treated"):
            dml.apply_trimming(p, np.array([0, 1, 1]), "crump(0.01)", TWO_ARMS.labels)


class TestCrossFit:
    """Tests for the cross-fitting loop."""

    @pytest.fixture
    def fit(self, dataset):
        return dml.crossfit_nuisances(dataset, LASSO, K=3, seed=5, inner_folds=3)

    def test_shapes_and_simplex(self, fit, dataset):
        assert fit.p_hat.shape == (dataset.n, 3)
        np.testing.assert_allclose(fit.p_hat.sum(axis=1), 1.0)
        assert fit.p_hat.min() >= fit.epsilon - 1e-12
        assert fit.unit_ids == dataset.unit_ids
        assert fit.outcome == "y"
        # one propensity and one outcome report per arm and fold
        assert len(fit.ensemble_reports) == 3 * 3 * 2

    def test_outcome_means_follow_the_arm(self, fit):
        np.testing.assert_allclose(np.mean(fit.mu_hat[:, 1] - fit.mu_hat[:, 0]), 1.0, atol=0.1)

    def test_deterministic(self, fit, dataset):
        again = dml.crossfit_nuisances(dataset, LASSO, K=3, seed=5, inner_folds=3)
        np.testing.assert_array_equal(again.p_hat, fit.p_hat)
        np.testing.assert_array_equal(again.mu_hat, fit.mu_hat)

    def test_predictions_are_out_of_fold(self, fit, dataset):
        """Perturbing one fold's outcomes leaves that fold's predictions unchanged."""
        in_fold = fit.folds.fold_of == 0
        y = dataset.outcome("y").values.copy()
        y[in_fold] += 100.0
        perturbed = Dataset(
            dataset.X,
            dataset.columns,
            dataset.D,
            dataset.catalogue,
            (Outcome("y", y, np.ones(dataset.n, dtype=bool)),),
            dataset.unit_ids,
        )
        refit = dml.crossfit_nuisances(perturbed, LASSO, K=3, seed=5, inner_folds=3)
        np.testing.assert_array_equal(refit.mu_hat[in_fold], fit.mu_hat[in_fold])
        assert not np.allclose(refit.mu_hat[~in_fold], fit.mu_hat[~in_fold])

    def test_unobserved_outcomes_are_left_out(self, dataset):
        observed = np.ones(dataset.n, dtype=bool)
        observed[:6] = False
        partial = Dataset(
            dataset.X,
            dataset.columns,
            dataset.D,
            dataset.catalogue,
            (Outcome("y", np.where(observed, dataset.outcome("y").values, np.nan), observed),),
            dataset.unit_ids,
        )
        fit = dml.crossfit_nuisances(partial, LASSO, K=3, inner_folds=3)
        assert fit.n == dataset.n - 6
        assert fit.unit_ids == dataset.unit_ids[6:]

    def test_thin_arm_in_training_complement(self):
        dataset = make_dataset(n=40, arms=2)
        D = np.zeros(40, dtype=np.int64)
        D[[3, 17]] = 1
        thin = Dataset(
            dataset.X, dataset.columns, D, dataset.catalogue, dataset.outcomes, dataset.unit_ids
        )
        with pytest.raises(dml.CrossFitError, match="arm1"):
            dml.crossfit_nuisances(thin, LASSO, K=5, stratify=False, inner_folds=3)

    def test_save_and_load(self, fit, dataset, tmp_path):
        paths = dml.save_nuisance(fit, dataset.catalogue, tmp_path / "nuisance")
        assert {p.name for p in paths} >= {dml.P_HAT_FILE, dml.MU_HAT_FILE, dml.FOLDS_FILE}
        loaded = dml.load_nuisance(tmp_path / "nuisance")
        np.testing.assert_array_equal(loaded.p_hat, fit.p_hat)
        np.testing.assert_array_equal(loaded.mu_hat, fit.mu_hat)
        np.testing.assert_array_equal(loaded.folds.fold_of, fit.folds.fold_of)
        assert loaded.unit_ids == fit.unit_ids
        assert loaded.epsilon == fit.epsilon
