"""ADMM fit of the smooth low-rank two-way hazard model.

The constrained problem ``min -loglik(H) + rho/2 P(U, V)`` subject to
``H = U V'`` and ``H >= 0`` is split into three steps per iteration: a
cellwise closed-form H-update, a penalized factorization of ``H + Theta/rho``
and a dual ascent step on ``Theta``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .grid import CellStats, TimeGrid, accumulate, records_to_arrays
from .mle import impute_grand_mean, log_likelihood, mle
from .smoothing import FactorModel, RoughnessMatrix, default_lambda_grid, fit_rank_r, identify

__all__ = [
    "FitConfig",
    "AdmmState",
    "HazardFit",
    "BootstrapBands",
    "h_update",
    "uv_update",
    "dual_update",
    "residuals",
    "adapt_rho",
    "admm_iterations",
    "fit",
    "bootstrap",
]

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    """Settings for :func:`fit` and :func:`bootstrap`.

    ``lam`` is ``None`` for GCV-selected smoothing parameters or a sequence of
    ``rank`` fixed ``(lam_u, lam_v)`` pairs.  GCV selections are frozen once
    they repeat for ``lam_patience`` consecutive iterations, or at iteration
    ``lam_freeze_iter``; the ADMM then runs on a fixed objective.
    """

    rank: int = 1
    rho0: float = 0.1
    eps: float = 1e-6
    max_iter: int = 500
    lam: Sequence | None = None
    adapt_rho: bool = True
    n_boot: int = 100
    seed: int = 0
    lam_grid: Sequence | None = None
    lam_patience: int = 3
    lam_freeze_iter: int = 30

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.n_boot < 1:
            raise ValueError("n_boot must be >= 1")


@dataclass
class AdmmState:
    H: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Theta: np.ndarray
    rho: float
    iteration: int
    z: float
    s: float
    lambdas: np.ndarray
    converged: bool = False


@dataclass
class HazardFit:
    factors: FactorModel
    H: np.ndarray
    surface: np.ndarray
    loglik: float
    rho_trace: list
    z_trace: list
    s_trace: list
    converged: bool
    n_iter: int
    clamp_count: int

    @property
    def rank(self) -> int:
        return self.factors.rank


@dataclass
class BootstrapBands:
    """Pointwise percentile bands for each layer of ``U`` (m x r) and ``V`` (p x r)."""

    u_lower: np.ndarray
    u_upper: np.ndarray
    v_lower: np.ndarray
    v_upper: np.ndarray
    n_boot: int
    seed: int
    n_failed: int = 0
    u_replicates: np.ndarray = field(default=None, repr=False)
    v_replicates: np.ndarray = field(default=None, repr=False)


def h_update(stats: CellStats, U, V, Theta, rho: float) -> np.ndarray:
    """Cellwise nonnegative root of ``rho h^2 + (t + theta - rho u'v) h - d = 0``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    P = np.asarray(U) @ np.asarray(V).T
    return _h_root(stats.t_sum, stats.d_sum, np.asarray(Theta, float), P, rho)


def _h_root(t, d, theta, uv, rho):
    b = t + theta - rho * uv
    disc = np.sqrt(b * b + 4.0 * rho * d)
    # pick the cancellation-free form of the positive root for each sign of b
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.where(b + disc > 0, 2.0 * d / (b + disc), 0.0)
    neg = (disc - b) / (2.0 * rho)
    return np.where(b > 0, pos, neg)


def uv_update(H, Theta, rho: float, r: int, omega_u: RoughnessMatrix,
              omega_v: RoughnessMatrix, lam=None, lam_grid=None) -> FactorModel:
    """Penalized rank-r factorization of the target ``H + Theta / rho``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return fit_rank_r(np.asarray(H) + np.asarray(Theta) / rho, r, omega_u, omega_v,
                      lam=lam, lam_grid=lam_grid)


def dual_update(Theta, H, U, V, rho: float) -> np.ndarray:
    return np.asarray(Theta) + rho * (np.asarray(H) - np.asarray(U) @ np.asarray(V).T)


def residuals(H, H_prev, U_prev, V_prev) -> tuple[float, float]:
    """Squared primal ``||H - U_prev V_prev'||^2`` and dual ``||H - H_prev||^2`` residuals."""
    R = np.asarray(H) - np.asarray(U_prev) @ np.asarray(V_prev).T
    D = np.asarray(H) - np.asarray(H_prev)
    return float(np.sum(R * R)), float(np.sum(D * D))


def adapt_rho(rho: float, z: float, s: float) -> float:
    """Rescale ``rho`` to keep primal and dual residuals within a factor 10."""
    if z > 100 * s:
        return rho * 10
    if z > 10 * s:
        return rho * 2
    if z >= s / 10:
        return rho
    if z >= s / 100:
        return rho / 2
    return rho / 10


def initial_factors(stats: CellStats, r: int, omega_u, omega_v, lam=None, lam_grid=None):
    H0 = impute_grand_mean(mle(stats))
    model = fit_rank_r(H0, r, omega_u, omega_v, lam=lam, lam_grid=lam_grid)
    if np.any(model.surface):
        model = identify(model)
    return H0, model


def admm_iterations(stats: CellStats, cfg: FitConfig) -> Iterator[AdmmState]:
    """Yield the ADMM state after every iteration; the last one is final."""
    m, p = stats.shape
    if not 1 <= cfg.rank <= min(m, p):
        raise ValueError(f"rank {cfg.rank} out of range for a {m}x{p} grid")
    if not np.any(stats.t_sum > 0):
        raise ValueError("no exposure in any cell")
    omega_u, omega_v = RoughnessMatrix(m), RoughnessMatrix(p)
    lam_grid = default_lambda_grid() if cfg.lam_grid is None else np.asarray(cfg.lam_grid, float)
    H_prev, model = initial_factors(stats, cfg.rank, omega_u, omega_v, cfg.lam, lam_grid)
    U, V = model.U, model.V
    Theta = np.zeros((m, p))
    rho = float(cfg.rho0)
    lam = cfg.lam
    repeats = 0
    for it in range(1, cfg.max_iter + 1):
        H = _h_root(stats.t_sum, stats.d_sum, Theta, U @ V.T, rho)
        z, s = residuals(H, H_prev, U, V)
        prev_lambdas = model.lambdas
        model = uv_update(H, Theta, rho, cfg.rank, omega_u, omega_v, lam, lam_grid)
        U, V = model.U, model.V
        if lam is None:
            repeats = repeats + 1 if np.array_equal(model.lambdas, prev_lambdas) else 0
            if repeats >= cfg.lam_patience or it >= cfg.lam_freeze_iter:
                lam = model.lambdas.copy()
        done = max(z, s) <= cfg.eps * float(np.sum(H * H))
        yield AdmmState(H, U, V, Theta, rho, it, z, s, model.lambdas, done)
        if done:
            return
        Theta = dual_update(Theta, H, U, V, rho)
        if cfg.adapt_rho:
            rho = adapt_rho(rho, z, s)
        H_prev = H


def fit(stats: CellStats, cfg: FitConfig | None = None) -> HazardFit:
    """Run ADMM to convergence (or ``max_iter``) and identify the factors."""
    cfg = FitConfig() if cfg is None else cfg
    rho_trace, z_trace, s_trace = [], [], []
    state = None
    for state in admm_iterations(stats, cfg):
        rho_trace.append(state.rho)
        z_trace.append(state.z)
        s_trace.append(state.s)
    factors = identify(FactorModel(state.U, state.V, state.lambdas))
    raw = factors.surface
    clamp = int(np.sum(raw < 0))
    surface = np.maximum(raw, 0.0)
    if not state.converged:
        log.warning("ADMM did not converge in %d iterations", cfg.max_iter)
    return HazardFit(factors, state.H, surface, log_likelihood(surface, stats),
                     rho_trace, z_trace, s_trace, state.converged, state.iteration, clamp)


def _boot_one(args):
    a, t, d, arrival_grid, wait_grid, cfg, seed, b = args
    rng = np.random.default_rng([seed, b])
    idx = rng.integers(0, a.size, a.size)
    stats = accumulate(np.column_stack([a[idx], t[idx], d[idx]]), arrival_grid, wait_grid)
    try:
        res = fit(stats, cfg)
    except ValueError as exc:
        log.warning("bootstrap replicate %d failed: %s", b, exc)
        return None
    if not res.converged:
        return None
    return res.factors.U, res.factors.V


def _n_workers(n_jobs: int | None) -> int:
    cap = os.environ.get("TFH_THREADS")
    n = n_jobs if n_jobs is not None else 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def bootstrap(records, arrival_grid: TimeGrid, wait_grid: TimeGrid,
              cfg: FitConfig | None = None, n_jobs: int | None = None) -> BootstrapBands:
    """Percentile bands from ``cfg.n_boot`` refits on resampled records.

    Replicate ``b`` draws from ``default_rng([cfg.seed, b])`` so the bands do
    not depend on execution order or worker count.  Non-converged replicates
    are dropped and counted in ``n_failed``.
    """
    cfg = FitConfig() if cfg is None else cfg
    a, t, d = records_to_arrays(records)
    if a.size == 0:
        raise ValueError("bootstrap needs at least one record")
    jobs = [(a, t, d, arrival_grid, wait_grid, cfg, cfg.seed, b) for b in range(cfg.n_boot)]
    workers = _n_workers(n_jobs)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_boot_one, jobs))
    else:
        results = [_boot_one(j) for j in jobs]
    kept = [r for r in results if r is not None]
    n_failed = len(results) - len(kept)
    if not kept:
        raise RuntimeError("every bootstrap replicate failed to converge")
    Us = np.stack([r[0] for r in kept])
    Vs = np.stack([r[1] for r in kept])
    lo, hi = 2.5, 97.5
    return BootstrapBands(
        np.percentile(Us, lo, axis=0), np.percentile(Us, hi, axis=0),
        np.percentile(Vs, lo, axis=0), np.percentile(Vs, hi, axis=0),
        n_boot=cfg.n_boot, seed=cfg.seed, n_failed=n_failed,
        u_replicates=Us, v_replicates=Vs,
    )
