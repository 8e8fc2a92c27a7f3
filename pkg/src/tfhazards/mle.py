"""Piecewise-constant two-way hazard likelihood, cellwise MLE and scree values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import CellStats

__all__ = ["HazardMatrix", "log_likelihood", "mle", "scree", "impute_grand_mean"]


@dataclass
class HazardMatrix:
    """Hazard rates on an arrival x wait grid; ``missing_mask`` marks undefined cells."""

    values: np.ndarray
    missing_mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("hazard values must be a matrix")
        if self.missing_mask is None:
            self.missing_mask = np.isnan(self.values)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.missing_mask.shape != self.values.shape:
            raise ValueError("missing_mask shape mismatch")
        self.values = np.where(self.missing_mask, np.nan, self.values)
        if np.any(self.values[~self.missing_mask] < 0):
            raise ValueError("hazard rates must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.missing_mask, fill, self.values)


def _as_values(H) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(H, HazardMatrix):
        return H.values, H.missing_mask
    v = np.asarray(H, dtype=float)
    return v, np.isnan(v)


def log_likelihood(H, stats: CellStats) -> float:
    """Sum over cells of ``d log h - t h`` with ``0 log 0 = 0``."""
    h, miss = _as_values(H)
    if h.shape != stats.shape:
        raise ValueError(f"hazard shape {h.shape} != stats shape {stats.shape}")
    used = (stats.d_sum > 0) | (stats.t_sum > 0)
    if np.any(miss & used):
        raise ValueError("hazard is missing in a cell that carries data")
    h = np.where(miss, 0.0, h)
    if np.any(h < 0):
        raise ValueError("hazard rates must be nonnegative")
    d = stats.d_sum
    if np.any((d > 0) & (h == 0)):
        return -np.inf
    with np.errstate(divide="ignore"):
        logh = np.where(d > 0, np.log(np.where(d > 0, h, 1.0)), 0.0)
    return float(np.sum(d * logh) - np.sum(stats.t_sum * h))


def mle(stats: CellStats) -> HazardMatrix:
    """Cellwise ``d_sum / t_sum``; cells without exposure are missing."""
    miss = stats.t_sum <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(miss, np.nan, stats.d_sum / np.where(miss, 1.0, stats.t_sum))
    return HazardMatrix(h, miss)


def impute_grand_mean(H: HazardMatrix) -> np.ndarray:
    if np.all(H.missing_mask):
        raise ValueError("every cell is missing")
    return H.filled(float(np.mean(H.values[~H.missing_mask])))


def scree(H) -> np.ndarray:
    """Descending singular values after grand-mean imputation of missing cells.

    The imputation only perturbs the trailing values; treat the output as a
    rough rank diagnostic.
    """
    if isinstance(H, HazardMatrix):
        filled = impute_grand_mean(H)
    else:
        # plain arrays are accepted as-is (any sign); NaN marks missing cells
        filled = np.asarray(H, dtype=float)
        miss = np.isnan(filled)
        if miss.all():
            raise ValueError("every cell is missing")
        filled = np.where(miss, filled[~miss].mean(), filled)
    return np.linalg.svd(filled, compute_uv=False)
