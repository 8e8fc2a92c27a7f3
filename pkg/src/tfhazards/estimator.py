"""scikit-learn style estimators over ``(arrival, wait)`` samples with event labels.

``X`` has two columns, arrival clock time and waiting time (seconds); ``y``
is the event indicator (1 = event observed, 0 = right-censored).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .admm import FitConfig, HazardFit, fit
from .grid import CellStats, TimeGrid, accumulate
from .mle import log_likelihood, mle

__all__ = ["TwoWayHazardMLE", "SmoothTwoWayHazard"]

DEFAULT_ARRIVAL_KNOTS = tuple(8 * 3600.0 + 900.0 * np.arange(49))
DEFAULT_WAIT_KNOTS = tuple(np.arange(1.0, 301.0))


def _check_Xy(X, y):
    X = check_array(X, dtype=float)
    if X.shape[1] != 2:
        raise ValueError(f"X must have 2 columns (arrival, wait), got {X.shape[1]}")
    y = column_or_1d(y)
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y have inconsistent lengths")
    y = y.astype(float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be a 0/1 event indicator")
    return X, y


class _GridHazardBase(BaseEstimator):
    def _grids(self):
        a = DEFAULT_ARRIVAL_KNOTS if self.arrival_knots is None else self.arrival_knots
        w = DEFAULT_WAIT_KNOTS if self.wait_knots is None else self.wait_knots
        return TimeGrid(a), TimeGrid(w)

    def _stats(self, X, y) -> CellStats:
        X, y = _check_Xy(X, y)
        self.arrival_grid_, self.wait_grid_ = self._grids()
        return accumulate(np.column_stack([X, y]), self.arrival_grid_, self.wait_grid_)

    def _cells(self, X):
        X = check_array(X, dtype=float)
        ag, wg = self.arrival_grid_, self.wait_grid_
        j = np.clip(np.searchsorted(ag.array, X[:, 0], side="left") - 1, 0, ag.n_intervals - 1)
        k = np.clip(np.searchsorted(wg.array, X[:, 1], side="left") - 1, 0, wg.n_intervals - 1)
        return j, k

    def predict(self, X) -> np.ndarray:
        """Hazard rate of the grid cell containing each ``(arrival, wait)`` point."""
        check_is_fitted(self, "hazard_")
        j, k = self._cells(X)
        return self.hazard_[j, k]

    def score(self, X, y) -> float:
        """Mean log-likelihood contribution per record."""
        check_is_fitted(self, "hazard_")
        stats = accumulate(np.column_stack(_check_Xy(X, y)), self.arrival_grid_, self.wait_grid_)
        return log_likelihood(self.hazard_, stats) / max(stats.n_records, 1)


class TwoWayHazardMLE(_GridHazardBase):
    """Cellwise maximum likelihood hazard; cells without exposure are NaN."""

    def __init__(self, arrival_knots=None, wait_knots=None):
        self.arrival_knots = arrival_knots
        self.wait_knots = wait_knots

    def fit(self, X, y):
        self.stats_ = self._stats(X, y)
        self.hazard_ = mle(self.stats_).values
        return self


class SmoothTwoWayHazard(_GridHazardBase):
    """Smooth rank-``rank`` hazard surface fitted by penalized-likelihood ADMM.

    Parameters mirror :class:`tfhazards.admm.FitConfig`.  ``lam=None`` selects
    the roughness parameters by GCV.

    Attributes
    ----------
    hazard_ : ndarray (m, p)
        Fitted surface ``U V'`` with negative entries clamped to 0.
    time_of_day_ : ndarray (m, rank)
        ``U`` columns, each with mean 1.
    duration_ : ndarray (p, rank)
        ``V`` columns; for rank 1 this is the hazard averaged over arrival times.
    """

    def __init__(self, arrival_knots=None, wait_knots=None, rank=1, rho0=0.1, eps=1e-6,
                 max_iter=500, lam=None, adapt_rho=True):
        self.arrival_knots = arrival_knots
        self.wait_knots = wait_knots
        self.rank = rank
        self.rho0 = rho0
        self.eps = eps
        self.max_iter = max_iter
        self.lam = lam
        self.adapt_rho = adapt_rho

    def _config(self) -> FitConfig:
        return FitConfig(rank=self.rank, rho0=self.rho0, eps=self.eps, max_iter=self.max_iter,
                         lam=self.lam, adapt_rho=self.adapt_rho)

    def fit(self, X, y):
        return self.fit_stats(self._stats(X, y))

    def fit_stats(self, stats: CellStats):
        """Fit from precomputed cell statistics on this estimator's grids."""
        if not hasattr(self, "arrival_grid_"):
            self.arrival_grid_, self.wait_grid_ = self._grids()
        if stats.shape != (self.arrival_grid_.n_intervals, self.wait_grid_.n_intervals):
            raise ValueError("cell statistics do not match the grids")
        self.stats_ = stats
        res: HazardFit = fit(stats, self._config())
        self.result_ = res
        self.hazard_ = res.surface
        self.time_of_day_ = res.factors.U
        self.duration_ = res.factors.V
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        return self
