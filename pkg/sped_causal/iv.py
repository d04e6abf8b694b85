# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""School-year deviation instruments and two-stage least squares."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from linearmodels.iv import IV2SLS

from sped_causal.data import ParameterError
from sped_causal.dml import Z_95, EffectEstimate

LOG = logging.getLogger(__name__)

REFERENCES = ("year", "school")
DEFAULT_WEAK_THRESHOLD = 10.0
TREATED = "treated"
INSTRUMENT = "instrument"


@dataclass(frozen=True, eq=False)
class DeviationInstrument:
    """Per-unit deviation of the cell assignment rate from its reference rate."""

    raw: np.ndarray
    adjusted: np.ndarray
    school: np.ndarray
    year: np.ndarray
    singleton: np.ndarray
    leave_one_out: bool = False
    reference: str = "year"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "school": self.school,
                "year": self.year,
                "raw": self.raw,
                "adjusted": self.adjusted,
                "singleton": self.singleton,
            }
        )


def build_deviation_instrument(
    treated: Sequence[float],
    school: Sequence,
    year: Sequence,
    covariates: Optional[np.ndarray] = None,
    leave_one_out: bool = False,
    cell_weighted: bool = True,
    reference: str = "year",
) -> DeviationInstrument:
    """Deviation of each school-year treatment rate from the reference rate.

    With ``reference="year"`` the reference is the rate of the year, either
    over units (``cell_weighted``) or as the plain mean of the cell rates.
    With ``reference="school"`` it is the school's rate across years.
    ``leave_one_out`` removes the unit itself from its cell rate; units alone
    in their cell keep the full cell rate and are flagged in ``singleton``.

    :param treated: 0/1 treatment indicator
    :param school: school id of every unit
    :param year: year of every unit
    :param covariates: optional n x k matrix; ``adjusted`` is the OLS residual
        of the raw deviation on a constant and these covariates
    :raises ParameterError: if a reference group has fewer than two cells
    """
    if reference not in REFERENCES:
        raise ParameterError(f"Unknown reference {reference!r}, expected one of {REFERENCES}")
    frame = pd.DataFrame(
        {
            "treated": np.asarray(treated, dtype=np.float64),
            "school": [str(s) for s in school],
            "year": [str(y) for y in year],
        }
    )
    if not frame["treated"].isin([0.0, 1.0]).all():
        raise ParameterError("The treatment indicator must be 0/1")
    group, other = ("year", "school") if reference == "year" else ("school", "year")
    cells_per_group = frame.groupby(group)[other].nunique()
    thin = sorted(cells_per_group.index[cells_per_group < 2])
    if thin:
        raise ParameterError(f"{group.capitalize()}s {thin} have fewer than two {other}s")

    cell = frame.groupby(["school", "year"])["treated"]
    cell_sum = cell.transform("sum")
    cell_n = cell.transform("count")
    singleton = (cell_n == 1).to_numpy()
    if leave_one_out:
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = np.where(
                singleton,
                cell_sum / cell_n,
                (cell_sum - frame["treated"]) / (cell_n - 1),
            )
        if singleton.any():
            LOG.warning("%d units are alone in their school-year cell", int(singleton.sum()))
    else:
        rate = (cell_sum / cell_n).to_numpy()

    if cell_weighted:
        reference_rate = frame.groupby(group)["treated"].transform("mean").to_numpy()
    else:
        cell_rates = frame.groupby(["school", "year"], as_index=False)["treated"].mean()
        group_rates = cell_rates.groupby(group)["treated"].mean()
        reference_rate = frame[group].map(group_rates).to_numpy()
    raw = np.asarray(rate, dtype=np.float64) - reference_rate

    adjusted = raw.copy()
    if covariates is not None:
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        design = sm.add_constant(covariates, has_constant="add")
        adjusted = np.asarray(sm.OLS(raw, design).fit().resid)
    return DeviationInstrument(
        raw=raw,
        adjusted=adjusted,
        school=frame["school"].to_numpy(),
        year=frame["year"].to_numpy(),
        singleton=singleton,
        leave_one_out=leave_one_out,
        reference=reference,
    )


class IvEstimate(EffectEstimate):
    """2SLS estimate with first-stage diagnostics."""

    first_stage_coef: float
    first_stage_se: float
    first_stage_f: float
    weak_instrument: bool
    n_clusters: Optional[int] = None


def _design(covariates: Optional[np.ndarray], n: int) -> pd.DataFrame:
    exog = pd.DataFrame({"const": np.ones(n)})
    if covariates is not None:
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        for j in range(covariates.shape[1]):
            exog[f"x{j}"] = covariates[:, j]
    return exog


def first_stage(
    treated: np.ndarray,
    instrument: np.ndarray,
    covariates: Optional[np.ndarray] = None,
    cluster: Optional[Sequence] = None,
) -> Tuple[float, float, float]:
    """Coefficient, robust SE and F statistic of the instrument in the first stage."""
    exog = _design(covariates, len(treated))
    exog[INSTRUMENT] = np.asarray(instrument, dtype=np.float64)
    model = sm.OLS(np.asarray(treated, dtype=np.float64), exog)
    if cluster is None:
        fit = model.fit(cov_type="HC1")
    else:
        codes = pd.factorize(pd.Series(cluster))[0]
        fit = model.fit(cov_type="cluster", cov_kwds={"groups": codes})
    coef = float(fit.params[INSTRUMENT])
    se = float(fit.bse[INSTRUMENT])
    return coef, se, (coef / se) ** 2 if se > 0 else float("inf")


def two_sls(
    Y: Sequence[float],
    treated: Sequence[float],
    instrument: Sequence[float],
    covariates: Optional[np.ndarray] = None,
    cluster: Optional[Sequence] = None,
    weak_threshold: float = DEFAULT_WEAK_THRESHOLD,
    d: str = "1",
    d_prime: Optional[str] = "0",
    outcome: str = "",
) -> IvEstimate:
    """Local average treatment effect by 2SLS.

    The second stage has heteroscedasticity-robust (or, with ``cluster``,
    cluster-robust) standard errors with small-sample correction. The first
    stage F is the squared robust t statistic of the instrument; below
    ``weak_threshold`` the estimate is flagged as weakly identified.

    :raises ParameterError: if the instrument has no variance
    """
    y = np.asarray(Y, dtype=np.float64)
    treated = np.asarray(treated, dtype=np.float64)
    instrument = np.asarray(instrument, dtype=np.float64)
    n = y.size
    if treated.shape != (n,) or instrument.shape != (n,):
        raise ParameterError("Outcome, treatment and instrument must have equal length")
    if np.ptp(instrument) == 0:
        raise ParameterError("The instrument has zero variance")

    exog = _design(covariates, n)
    model = IV2SLS(
        dependent=pd.Series(y, name="y"),
        exog=exog,
        endog=pd.Series(treated, name=TREATED),
        instruments=pd.Series(instrument, name=INSTRUMENT),
    )
    n_clusters = None
    if cluster is None:
        result = model.fit(cov_type="robust", debiased=True)
    else:
        codes = pd.factorize(pd.Series(cluster))[0]
        n_clusters = int(codes.max()) + 1
        result = model.fit(cov_type="clustered", clusters=pd.Series(codes), debiased=True)
    point = float(result.params[TREATED])
    se = float(result.std_errors[TREATED])
    coef, fs_se, f_stat = first_stage(treated, instrument, covariates, cluster)
    weak = f_stat < weak_threshold
    if weak:
        LOG.warning("Weak instrument: first-stage F = %.2f < %g", f_stat, weak_threshold)
    return IvEstimate(
        estimand="LATE",
        d=d,
        d_prime=d_prime,
        outcome=outcome,
        point=point,
        se=se,
        ci_lo=point - Z_95 * se,
        ci_hi=point + Z_95 * se,
        n_used=n,
        t_stat=float(result.tstats[TREATED]),
        p_value=float(result.pvalues[TREATED]),
        degenerate=not se > 0,
        first_stage_coef=coef,
        first_stage_se=fs_se,
        first_stage_f=f_stat,
        weak_instrument=bool(weak),
        n_clusters=n_clusters,
    )


def first_stage_table(
    treated: np.ndarray,
    instrument: np.ndarray,
    covariate_blocks: Sequence[Tuple[str, np.ndarray]] = (),
    cluster: Optional[Sequence] = None,
) -> pd.DataFrame:
    """First-stage estimates as covariate blocks are added one after the other."""
    rows = []
    included = []
    names = ["none"]
    for step in range(len(covariate_blocks) + 1):
        if step:
            name, block = covariate_blocks[step - 1]
            block = np.asarray(block, dtype=np.float64)
            included.append(block[:, None] if block.ndim == 1 else block)
            names.append(name)
        covariates = np.hstack(included) if included else None
        coef, se, f_stat = first_stage(treated, instrument, covariates, cluster)
        rows.append(
            {
                "covariates": "+".join(names[1:]) or "none",
                "coef": coef,
                "se": se,
                "f_stat": f_stat,
                "n": len(treated),
            }
        )
    return pd.DataFrame(rows)
