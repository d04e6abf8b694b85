# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Elastic net and lasso by cyclic coordinate descent.

The objective on standardized covariates ``Xs`` and centered outcome ``yc`` is

    1/(2n) ||yc - Xs b||^2 + lambda * (mixing * |b|_1 + (1 - mixing)/2 * ||b||^2)

solved along a decreasing lambda path with warm starts. Coefficients are
reported on the original scale with an unpenalized intercept.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from sped_causal.data import ParameterError, make_folds

LOG = logging.getLogger(__name__)

N_LAMBDA = 100
LAMBDA_RATIO = 1e-4
TOLERANCE = 1e-7
MAX_SWEEPS = 10_000
MIN_MIXING = 1e-3


@dataclass(frozen=True, eq=False)
class ElasticNetModel:
    """Fitted linear model on the original covariate scale."""

    intercept: float
    coef: np.ndarray
    lambda_: float
    mixing: float
    lambda_path: np.ndarray = field(default_factory=lambda: np.empty(0))
    cv_curve: np.ndarray = field(default_factory=lambda: np.empty(0))
    cv_mse: float = float("nan")
    path_objective: Tuple[float, ...] = ()

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=np.float64) @ self.coef

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.coef))

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "lambda": self.lambda_,
            "mixing": self.mixing,
            "cv_mse": self.cv_mse,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ElasticNetModel":
        return cls(
            intercept=float(payload["intercept"]),
            coef=np.asarray(payload["coef"], dtype=np.float64),
            lambda_=float(payload["lambda"]),
            mixing=float(payload["mixing"]),
            cv_mse=float(payload["cv_mse"]),
        )


@dataclass(frozen=True, eq=False)
class _Standardized:
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray
    y_mean: float
    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int


def _standardize(X: np.ndarray, y: np.ndarray) -> _Standardized:
    n = X.shape[0]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    Xs = (X[:, keep] - mean[keep]) / scale[keep]
    y_mean = float(y.mean())
    yc = y - y_mean
    return _Standardized(
        mean=mean,
        scale=scale,
        keep=keep,
        y_mean=y_mean,
        gram=Xs.T @ Xs / n,
        xty=Xs.T @ yc / n,
        yty=float(yc @ yc) / n,
        n=n,
    )


def lambda_max(X: np.ndarray, y: np.ndarray, mixing: float) -> float:
    """Smallest lambda at which every standardized slope is zero."""
    std = _standardize(np.asarray(X, np.float64), np.asarray(y, np.float64))
    return _lambda_max(std, mixing)


def _lambda_max(std: _Standardized, mixing: float) -> float:
    if std.xty.size == 0:
        return 0.0
    return float(np.max(np.abs(std.xty)) / max(mixing, MIN_MIXING))


def lambda_grid(lmax: float, n_lambda: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    """Log-spaced grid from lmax down to ratio * lmax."""
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def _objective(std: _Standardized, beta: np.ndarray, lam: float, mixing: float) -> float:
    fit = 0.5 * (std.yty - 2.0 * std.xty @ beta + beta @ std.gram @ beta)
    penalty = lam * (mixing * np.abs(beta).sum() + 0.5 * (1.0 - mixing) * beta @ beta)
    return float(fit + penalty)


def _coordinate_descent(
    std: _Standardized,
    lam: float,
    mixing: float,
    beta: np.ndarray,
    track: bool = False,
) -> Tuple[np.ndarray, Tuple[float, ...]]:
    beta = beta.copy()
    gram_beta = std.gram @ beta
    diag = np.diag(std.gram)
    l1 = lam * mixing
    l2 = lam * (1.0 - mixing)
    history = [_objective(std, beta, lam, mixing)] if track else []
    for _ in range(MAX_SWEEPS):
        max_change = 0.0
        for j in range(beta.size):
            rho = std.xty[j] - gram_beta[j] + diag[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / (diag[j] + l2)
            change = new - beta[j]
            if change != 0.0:
                gram_beta += std.gram[:, j] * change
                beta[j] = new
                max_change = max(max_change, abs(change))
        if track:
            history.append(_objective(std, beta, lam, mixing))
        if max_change < TOLERANCE:
            break
    else:
        LOG.warning("Coordinate descent did not converge at lambda=%g", lam)
    return beta, tuple(history)


def _path(std: _Standardized, grid: np.ndarray, mixing: float) -> np.ndarray:
    """Standardized coefficients for every lambda of a decreasing grid."""
    betas = np.zeros((grid.size, std.xty.size))
    beta = np.zeros(std.xty.size)
    for i, lam in enumerate(grid):
        beta, _ = _coordinate_descent(std, lam, mixing, beta)
        betas[i] = beta
    return betas


def _original_scale(std: _Standardized, beta: np.ndarray) -> Tuple[float, np.ndarray]:
    coef = np.zeros(std.keep.size)
    coef[std.keep] = beta / std.scale[std.keep]
    intercept = std.y_mean - float(std.mean @ coef)
    return intercept, coef


def fit_elastic_net(
    X: np.ndarray,
    y: np.ndarray,
    mixing: float = 0.5,
    lambda_grid_: Optional[Sequence[float]] = None,
    cv_folds: int = 5,
    seed: int = 0,
    n_lambda: int = N_LAMBDA,
) -> ElasticNetModel:
    """Fit an elastic net at the cross-validated lambda.

    :param X: n x p covariates, standardized internally; constant columns get
        a zero coefficient
    :param y: outcome, or a 0/1 indicator for a linear probability model
    :param mixing: weight of the l1 penalty, 1 for the lasso
    :param lambda_grid_: explicit lambda values, a log grid from lambda_max
        when omitted
    :param cv_folds: folds used to choose lambda, capped at n
    :param seed: seed of the fold split
    :param n_lambda: size of the default grid
    :raises ParameterError: if n < 2 or mixing is outside [0, 1]
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ParameterError("X must be n x p with one outcome per row")
    n = X.shape[0]
    if n < 2:
        raise ParameterError("The elastic net needs at least two observations")
    if not 0.0 <= mixing <= 1.0:
        raise ParameterError(f"mixing={mixing} must lie in [0, 1]")

    std = _standardize(X, y)
    if not std.keep.any():
        LOG.warning("All covariates are constant; fitting an intercept-only model")
        return ElasticNetModel(
            std.y_mean, np.zeros(X.shape[1]), 0.0, mixing, cv_mse=float(y.var(ddof=1))
        )

    if lambda_grid_ is None:
        grid = lambda_grid(_lambda_max(std, mixing), n_lambda)
    else:
        grid = np.sort(np.asarray(lambda_grid_, dtype=np.float64))[::-1]
        if grid.size == 0 or grid.min() < 0:
            raise ParameterError("lambda values must be non-negative")

    cv_curve = np.full(grid.size, np.nan)
    chosen = 0
    folds = min(cv_folds, n)
    if folds >= 2:
        squared = np.zeros(grid.size)
        for _, train, test in make_folds(n, folds, seed=seed, stratify=False).splits():
            inner = _standardize(X[train], y[train])
            betas = np.zeros((grid.size, X.shape[1]))
            if inner.keep.any():
                betas[:, inner.keep] = _path(inner, grid, mixing) / inner.scale[inner.keep]
            intercepts = inner.y_mean - betas @ inner.mean
            residuals = y[test][None, :] - (intercepts[:, None] + betas @ X[test].T)
            squared += (residuals**2).sum(axis=1)
        cv_curve = squared / n
        chosen = int(np.argmin(cv_curve))

    lam = float(grid[chosen])
    beta = np.zeros(std.xty.size)
    if chosen > 0:
        beta = _path(std, grid[:chosen], mixing)[-1]
    beta, history = _coordinate_descent(std, lam, mixing, beta, track=True)
    intercept, coef = _original_scale(std, beta)
    LOG.debug(
        "Elastic net mixing=%g lambda=%g with %d nonzero slopes",
        mixing,
        lam,
        np.count_nonzero(coef),
    )
    return ElasticNetModel(
        intercept=intercept,
        coef=coef,
        lambda_=lam,
        mixing=mixing,
        lambda_path=grid,
        cv_curve=cv_curve,
        cv_mse=float(cv_curve[chosen]),
        path_objective=history,
    )


def fit_lasso(X: np.ndarray, y: np.ndarray, **kwargs) -> ElasticNetModel:
    """Elastic net with a pure l1 penalty."""
    return fit_elastic_net(X, y, mixing=1.0, **kwargs)
