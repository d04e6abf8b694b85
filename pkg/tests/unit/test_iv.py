# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

from sped_causal import iv
from sped_causal.data import ParameterError

# two schools by two years, two units per cell
SCHOOL = ["s1", "s1", "s2", "s2", "s1", "s1", "s2", "s2"]
YEAR = [2015, 2015, 2015, 2015, 2016, 2016, 2016, 2016]
TREATED = [1, 1, 0, 0, 1, 0, 0, 0]


@pytest.fixture
def endogenous(rng):
    """A binary placement confounded by an unobserved factor, with a valid instrument."""
    n = 4000
    z = rng.standard_normal(n)
    latent = rng.standard_normal(n)
    d = (0.8 * z + latent > 0).astype(float)
    y = 2.0 * d + latent + 0.5 * rng.standard_normal(n)
    return y, d, z


class TestDeviationInstrument:
    """Tests for the school-year deviation instrument."""

    def test_year_reference(self):
        instrument = iv.build_deviation_instrument(TREATED, SCHOOL, YEAR)
        np.testing.assert_allclose(
            instrument.raw, [0.5, 0.5, -0.5, -0.5, 0.25, 0.25, -0.25, -0.25]
        )
        np.testing.assert_array_equal(instrument.adjusted, instrument.raw)
        assert instrument.year.tolist() == ["2015"] * 4 + ["2016"] * 4
        assert not instrument.singleton.any()

    def test_leave_one_out(self):
        instrument = iv.build_deviation_instrument(TREATED, SCHOOL, YEAR, leave_one_out=True)
        # the treated unit of s1/2016 sees an untreated peer and vice versa
        np.testing.assert_allclose(
            instrument.raw, [0.5, 0.5, -0.5, -0.5, -0.25, 0.75, -0.25, -0.25]
        )

    def test_school_reference(self):
        instrument = iv.build_deviation_instrument(TREATED, SCHOOL, YEAR, reference="school")
        np.testing.assert_allclose(instrument.raw, [0.25, 0.25, 0, 0, -0.25, -0.25, 0, 0])

    def test_cell_weighting(self):
        school = ["a", "a", "a", "b"]
        year = [1, 1, 1, 1]
        treated = [1, 1, 1, 0]
        weighted = iv.build_deviation_instrument(treated, school, year)
        unweighted = iv.build_deviation_instrument(treated, school, year, cell_weighted=False)
        np.testing.assert_allclose(weighted.raw, [0.25, 0.25, 0.25, -0.75])
        np.testing.assert_allclose(unweighted.raw, [0.5, 0.5, 0.5, -0.5])

    def test_singleton_cells_keep_their_rate(self, caplog):
        school = SCHOOL + ["s3"]
        year = YEAR + [2016]
        treated = TREATED + [1]
        instrument = iv.build_deviation_instrument(treated, school, year, leave_one_out=True)
        assert instrument.singleton.tolist() == [False] * 8 + [True]
        assert instrument.raw[-1] == pytest.approx(1.0 - 2 / 5)
        assert "alone in their school-year cell" in caplog.text

    def test_covariate_adjustment(self, rng):
        covariate = rng.standard_normal(8)
        instrument = iv.build_deviation_instrument(TREATED, SCHOOL, YEAR, covariates=covariate)
        assert instrument.adjusted.sum() == pytest.approx(0.0, abs=1e-10)
        assert instrument.adjusted @ covariate == pytest.approx(0.0, abs=1e-10)

    def test_frame(self):
        frame = iv.build_deviation_instrument(TREATED, SCHOOL, YEAR).to_frame()
        assert list(frame.columns) == ["school", "year", "raw", "adjusted", "singleton"]
        assert len(frame) == 8

    def test_single_school_year(self):
        with pytest.raises(ParameterError, match="fewer than two schools"):
            iv.build_deviation_instrument([1, 0], ["a", "a"], [1, 1])

    @pytest.mark.parametrize(
        "treated,kwargs",
        [(TREATED, {"reference": "district"}), ([2] + TREATED[1:], {})],
    )
    def test_invalid(self, treated, kwargs):
        with pytest.raises(ParameterError):
            iv.build_deviation_instrument(treated, SCHOOL, YEAR, **kwargs)


class TestTwoStageLeastSquares:
    """Tests for the 2SLS estimate and its first stage."""

    def test_recovers_the_effect(self, endogenous):
        y, d, z = endogenous
        estimate = iv.two_sls(y, d, z, d="inclusion", d_prime="semi_segregation", outcome="y")
        assert estimate.estimand == "LATE"
        assert estimate.point == pytest.approx(2.0, abs=0.2)
        assert estimate.ci_lo < 2.0 < estimate.ci_hi
        assert not estimate.weak_instrument
        assert estimate.first_stage_f > 100
        assert estimate.n_used == 4000
        assert (estimate.d, estimate.d_prime) == ("inclusion", "semi_segregation")

    def test_just_identified_point_is_the_covariance_ratio(self, endogenous):
        y, d, z = endogenous
        estimate = iv.two_sls(y, d, z)
        expected = np.cov(z, y)[0, 1] / np.cov(z, d)[0, 1]
        assert estimate.point == pytest.approx(expected)

    def test_weak_instrument_is_flagged(self, endogenous, caplog):
        y, d, z = endogenous
        estimate = iv.two_sls(y, d, z, weak_threshold=1e12)
        assert estimate.weak_instrument
        assert "Weak instrument" in caplog.text

    def test_clustered(self, endogenous):
        y, d, z = endogenous
        cluster = np.arange(y.size) % 50
        estimate = iv.two_sls(y, d, z, cluster=cluster)
        robust = iv.two_sls(y, d, z)
        assert estimate.n_clusters == 50
        assert robust.n_clusters is None
        assert estimate.point == pytest.approx(robust.point)

    def test_covariates(self, endogenous, rng):
        y, d, z = endogenous
        covariates = rng.standard_normal((y.size, 2))
        estimate = iv.two_sls(y, d, z, covariates=covariates)
        assert estimate.point == pytest.approx(2.0, abs=0.2)

    def test_first_stage(self, endogenous):
        _, d, z = endogenous
        coef, se, f_stat = iv.first_stage(d, z)
        assert coef == pytest.approx(np.cov(z, d)[0, 1] / np.var(z, ddof=1))
        assert f_stat == pytest.approx((coef / se) ** 2)

    def test_first_stage_table(self, endogenous, rng):
        _, d, z = endogenous
        blocks = [("age", rng.standard_normal(d.size)), ("text", rng.standard_normal((d.size, 3)))]
        table = iv.first_stage_table(d, z, blocks)
        assert table["covariates"].tolist() == ["none", "age", "age+text"]
        assert list(table.columns) == ["covariates", "coef", "se", "f_stat", "n"]
        assert (table["n"] == d.size).all()

    def test_constant_instrument(self):
        with pytest.raises(ParameterError, match="zero variance"):
            iv.two_sls(np.arange(4.0), [0, 1, 0, 1], np.ones(4))

    def test_misaligned(self):
        with pytest.raises(ParameterError):
            iv.two_sls(np.arange(4.0), [0, 1, 0], np.arange(4.0))
