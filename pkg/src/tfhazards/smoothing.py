"""Two-way roughness-penalized low-rank factorization.

Each rank-one layer minimizes

    ||Z - u v'||^2 + lu u'Ou u ||v||^2 + lv v'Ov v ||u||^2 + lu u'Ou u lv v'Ov v

which factors as ``||Z||^2 - 2 u'Zv + u'(I + lu Ou)u * v'(I + lv Ov)v``.  With v
fixed the minimizer in u is ``(I + lu Ou)^-1 Z v / v'(I + lv Ov)v`` and
symmetrically for v, so the alternation decreases the objective at every
half-step while the smoothing parameters are held fixed.

Smoothing parameters are picked by GCV on the ridge smoother
``S = (I + l O)^-1``.  All solves go through the eigendecomposition of the
roughness matrix, which gives every grid value of ``l`` at the cost of one
projection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "RoughnessMatrix",
    "FactorModel",
    "RankOneFit",
    "IdentificationError",
    "build_omega",
    "penalty",
    "gcv_select",
    "default_lambda_grid",
    "fit_rank_one",
    "fit_rank_r",
    "identify",
]


def default_lambda_grid() -> np.ndarray:
    return np.logspace(-6, 6, 30)


class IdentificationError(ValueError):
    pass


class RoughnessMatrix:
    """Squared second-difference roughness ``O = D2' D2`` on ``q`` points."""

    def __init__(self, q: int):
        if q < 3:
            raise ValueError(f"roughness matrix needs q >= 3, got {q}")
        self.q = int(q)
        D = np.zeros((q - 2, q))
        idx = np.arange(q - 2)
        D[idx, idx] = -1.0
        D[idx, idx + 1] = 2.0
        D[idx, idx + 2] = -1.0
        self.d2 = D
        self.omega = D.T @ D

    @cached_property
    def _eigh(self) -> tuple[np.ndarray, np.ndarray]:
        w, Q = np.linalg.eigh(self.omega)
        # the two null directions (constants, linear trends) come out at ~1e-15
        w[:2] = 0.0
        return np.maximum(w, 0.0), Q

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigh[0]

    def quad(self, v: np.ndarray) -> float:
        """``v' O v``, computed as a sum of squared second differences."""
        v = np.asarray(v, dtype=float)
        dv = 2.0 * v[1:-1] - v[:-2] - v[2:]
        return float(dv @ dv)

    def smooth(self, y: np.ndarray, lam: float) -> np.ndarray:
        """Apply ``(I + lam O)^-1`` to ``y``."""
        w, Q = self._eigh
        return Q @ ((Q.T @ y) / (1.0 + lam * w))

    def trace(self, lam: float) -> float:
        return float(np.sum(1.0 / (1.0 + lam * self.eigenvalues)))

    def banded(self) -> np.ndarray:
        """Upper banded storage of ``O`` (bandwidth 2) for ``scipy.linalg.solveh_banded``."""
        q = self.q
        ab = np.zeros((3, q))
        for k in range(3):
            ab[2 - k, k:] = np.diagonal(self.omega, k)
        return ab

    def __array__(self, dtype=None, copy=None):
        return self.omega if dtype is None else self.omega.astype(dtype)


def build_omega(q: int) -> RoughnessMatrix:
    return RoughnessMatrix(q)


def _as_roughness(omega) -> RoughnessMatrix:
    if isinstance(omega, RoughnessMatrix):
        return omega
    raise TypeError("expected a RoughnessMatrix (see build_omega)")


def penalty(u, v, lam_u, lam_v, omega_u, omega_v) -> float:
    """Two-way roughness penalty of one rank-one layer."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    omega_u, omega_v = _as_roughness(omega_u), _as_roughness(omega_v)
    if u.shape != (omega_u.q,) or v.shape != (omega_v.q,):
        raise ValueError("factor length does not match roughness matrix size")
    if lam_u < 0 or lam_v < 0:
        raise ValueError("smoothing parameters must be nonnegative")
    ru = lam_u * omega_u.quad(u)
    rv = lam_v * omega_v.quad(v)
    return float(ru * (v @ v) + rv * (u @ u) + ru * rv)


def gcv_scores(y: np.ndarray, omega: RoughnessMatrix, lam_grid) -> np.ndarray:
    w, Q = omega._eigh
    lam = np.asarray(lam_grid, dtype=float)
    c = Q.T @ y
    shrink = 1.0 / (1.0 + lam[:, None] * w[None, :])
    rss = np.sum(((1.0 - shrink) * c[None, :]) ** 2, axis=1)
    q = omega.q
    return (rss / q) / (1.0 - shrink.sum(axis=1) / q) ** 2


def gcv_select(y, omega: RoughnessMatrix, lam_grid=None) -> tuple[float, np.ndarray]:
    """Return the GCV-minimizing smoothing parameter on ``lam_grid`` and its fit.

    Ties (e.g. an affine ``y`` fitted exactly by every value) go to the
    largest parameter.
    """
    y = np.asarray(y, dtype=float)
    omega = _as_roughness(omega)
    lam_grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, dtype=float)
    if np.any(lam_grid <= 0):
        raise ValueError("GCV grid must be strictly positive")
    scores = gcv_scores(y, omega, lam_grid)
    best = len(scores) - 1 - int(np.argmin(scores[::-1]))
    lam = float(lam_grid[best])
    return lam, omega.smooth(y, lam)


@dataclass
class FactorModel:
    """Rank-r factors ``U`` (m x r, time of day) and ``V`` (p x r, waiting time)."""

    U: np.ndarray
    V: np.ndarray
    lambdas: np.ndarray = None

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float).T).T
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float).T).T
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError("U and V must have the same number of columns")
        if self.lambdas is None:
            self.lambdas = np.zeros((self.rank, 2))
        self.lambdas = np.asarray(self.lambdas, dtype=float).reshape(self.rank, 2)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def surface(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass
class RankOneFit:
    u: np.ndarray
    v: np.ndarray
    lam_u: float
    lam_v: float
    trace: list = field(default_factory=list)
    n_sweeps: int = 0
    converged: bool = True


def _objective(Z, u, v, lam_u, lam_v, omega_u, omega_v) -> float:
    R = Z - np.outer(u, v)
    ru = lam_u * omega_u.quad(u)
    rv = lam_v * omega_v.quad(v)
    return float(np.sum(R * R) + ru * (v @ v) + rv * (u @ u) + ru * rv)


def leading_pair(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leading singular pair split as ``sqrt(s) a, sqrt(s) b`` with positive-mean ``a``."""
    A, s, Bt = np.linalg.svd(Z, full_matrices=False)
    a, b = A[:, 0], Bt[0]
    if a.sum() < 0:
        a, b = -a, -b
    root = np.sqrt(s[0])
    return root * a, root * b


def fit_rank_one(Z, omega_u: RoughnessMatrix, omega_v: RoughnessMatrix, init=None,
                 lam=None, lam_grid=None, tol: float = 1e-8, max_sweeps: int = 500,
                 max_adapt_sweeps: int = 50) -> RankOneFit:
    """Penalized rank-one approximation of ``Z`` by alternating closed-form half-steps.

    ``lam=(lam_u, lam_v)`` fixes the smoothing parameters; ``lam=None`` selects
    them by GCV at every half-step until the selected pair repeats for a whole
    sweep (or ``max_adapt_sweeps`` pass), then freezes them and alternates to
    convergence.  ``trace`` holds the objective after every half-step of the
    frozen phase and never increases.
    """
    Z = np.asarray(Z, dtype=float)
    m, p = Z.shape
    if omega_u.q != m or omega_v.q != p:
        raise ValueError(f"roughness sizes ({omega_u.q}, {omega_v.q}) do not match Z {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("Z must be finite")
    if not np.any(Z):
        warnings.warn("fit_rank_one: Z is identically zero", RuntimeWarning, stacklevel=2)
        return RankOneFit(np.zeros(m), np.zeros(p), 0.0, 0.0, [0.0], 0, True)
    u, v = leading_pair(Z) if init is None else (np.array(init[0], float), np.array(init[1], float))
    if not (np.any(u) and np.any(v)):
        raise ValueError("initial factors must be nonzero")
    grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, float)

    def v_step(u, lam_u, lam_v):
        cu = u @ u + lam_u * omega_u.quad(u)
        return omega_v.smooth(Z.T @ u, lam_v) / cu

    def u_step(v, lam_u, lam_v):
        cv = v @ v + lam_v * omega_v.quad(v)
        return omega_u.smooth(Z @ v, lam_u) / cv

    sweeps = 0
    if lam is None:
        lam_u, lam_v = np.nan, np.nan
        for _ in range(max_adapt_sweeps):
            sweeps += 1
            prev = (lam_u, lam_v)
            lam_v, _ = gcv_select(Z.T @ u, omega_v, grid)
            v = v_step(u, 0.0 if np.isnan(lam_u) else lam_u, lam_v)
            lam_u, _ = gcv_select(Z @ v, omega_u, grid)
            u = u_step(v, lam_u, lam_v)
            if not (np.any(u) and np.any(v)):
                break
            if prev == (lam_u, lam_v):
                break
    else:
        lam_u, lam_v = float(lam[0]), float(lam[1])
        if lam_u < 0 or lam_v < 0:
            raise ValueError("smoothing parameters must be nonnegative")

    obj = _objective(Z, u, v, lam_u, lam_v, omega_u, omega_v)
    trace = [obj]
    floor = 1e-14 * float(np.sum(Z * Z))
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        v = v_step(u, lam_u, lam_v)
        trace.append(_objective(Z, u, v, lam_u, lam_v, omega_u, omega_v))
        u = u_step(v, lam_u, lam_v)
        new = _objective(Z, u, v, lam_u, lam_v, omega_u, omega_v)
        trace.append(new)
        if not (np.any(u) and np.any(v)):
            converged = True
            break
        if obj - new <= tol * max(obj, floor):
            converged = True
            break
        obj = new
    return RankOneFit(u, v, lam_u, lam_v, trace, sweeps, converged)


def fit_rank_r(Z, r: int, omega_u: RoughnessMatrix, omega_v: RoughnessMatrix,
               lam=None, **kwargs) -> FactorModel:
    """Fit ``r`` penalized layers sequentially on the deflated residual.

    ``lam`` is ``None`` (GCV) or a sequence of ``r`` fixed ``(lam_u, lam_v)`` pairs.
    Factors are returned as fitted, before :func:`identify`.
    """
    Z = np.asarray(Z, dtype=float)
    if not 1 <= r <= min(Z.shape):
        raise ValueError(f"rank {r} out of range 1..{min(Z.shape)}")
    if lam is not None:
        lam = np.asarray(lam, dtype=float).reshape(-1, 2)
        if lam.shape[0] == 1 and r > 1:
            lam = np.repeat(lam, r, axis=0)
        if lam.shape[0] != r:
            raise ValueError("need one (lam_u, lam_v) pair per layer")
    U = np.zeros((Z.shape[0], r))
    V = np.zeros((Z.shape[1], r))
    lambdas = np.zeros((r, 2))
    resid = Z.copy()
    for i in range(r):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            layer = fit_rank_one(resid, omega_u, omega_v,
                                 lam=None if lam is None else lam[i], **kwargs)
        U[:, i], V[:, i] = layer.u, layer.v
        lambdas[i] = layer.lam_u, layer.lam_v
        resid = resid - np.outer(layer.u, layer.v)
    return FactorModel(U, V, lambdas)


def identify(U, V=None, lambdas=None) -> FactorModel:
    """Re-express ``U V'`` with orthogonal columns and unit-mean ``U`` columns.

    Takes the rank-r SVD of the product, flips each layer so its left vector
    has positive mean, then moves all scale into ``V``.
    """
    model = U if isinstance(U, FactorModel) else FactorModel(U, V, lambdas)
    r = model.rank
    P = model.surface
    if not np.any(P):
        raise IdentificationError("U V' is identically zero")
    A, s, Bt = np.linalg.svd(P, full_matrices=False)
    U_new = np.empty((P.shape[0], r))
    V_new = np.empty((P.shape[1], r))
    for i in range(r):
        a, b = A[:, i], Bt[i]
        mu = a.mean()
        if abs(mu) <= 1e-12 * np.abs(a).max():
            raise IdentificationError(f"layer {i + 1}: left singular vector has zero mean")
        U_new[:, i] = a / mu
        V_new[:, i] = (s[i] * mu) * b
    return FactorModel(U_new, V_new, model.lambdas.copy())
