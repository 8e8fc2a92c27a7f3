"""Steady-state abandonment in an M/M/n+G queue with piecewise-constant patience hazard.

For FCFS service the offered wait of a delayed arrival has density proportional to

    w(x) = exp(lam * G(x) - n * mu * x),   G(x) = int_0^x S(u) du,

where ``S`` is the patience survival function.  A delayed customer abandons when
patience falls short of the offered wait, so

    P(abandon | delayed) = int (1 - S) w / int w.

``des_oracle`` simulates the same system directly and is the check on this
formula.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .grid import TimeGrid
from .simulate import PiecewiseHazard

__all__ = [
    "QueueModel",
    "AbandonEstimate",
    "InstabilityError",
    "InsufficientDataError",
    "patience_survival",
    "p_abandon_delayed",
    "des_oracle",
    "erlang_a_equal_rates",
]


class InstabilityError(ValueError):
    pass


class InsufficientDataError(RuntimeError):
    pass


def _from_zero(hz: PiecewiseHazard) -> PiecewiseHazard:
    """Extend the first rate back to time 0 when the grid starts later."""
    if hz.grid.start == 0:
        return hz
    return PiecewiseHazard(TimeGrid((0.0,) + hz.grid.knots), (hz.rates[0],) + hz.rates)


@dataclass(frozen=True)
class QueueModel:
    lam: float
    mu: float
    n: int
    patience: PiecewiseHazard

    def __post_init__(self):
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("arrival and service rates must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        object.__setattr__(self, "patience", _from_zero(self.patience))

    def scaled(self, factor: float) -> "QueueModel":
        return QueueModel(self.lam, self.mu, self.n, self.patience.scaled(factor))


@dataclass(frozen=True)
class AbandonEstimate:
    p_abandon_given_delay: float
    method: str
    standard_error: float | None = None
    n_delayed: int | None = None


def patience_survival(hz: PiecewiseHazard, t) -> np.ndarray | float:
    """``exp(-int_0^t h)``; constant tail beyond the last knot."""
    out = np.exp(-_from_zero(hz).cumulative(t))
    return float(out) if np.ndim(out) == 0 else out


class _OfferedWait:
    """Log of the unnormalized offered-wait density for one queue model."""

    def __init__(self, model: QueueModel):
        hz = model.patience
        self.lam, self.rate = model.lam, model.n * model.mu
        self.knots = hz.grid.array
        self.rates = hz.rate_array
        self.S_knots = np.exp(-hz.knot_cumhaz)
        G = [0.0]
        for k, r in enumerate(self.rates):
            G.append(G[-1] + self._segment(self.S_knots[k], r, self.knots[k + 1] - self.knots[k]))
        self.G_knots = np.array(G)
        self.hz = hz

    @staticmethod
    def _segment(S0, r, dx):
        if r == 0:
            return S0 * dx
        return S0 * -np.expm1(-r * dx) / r

    def G(self, x: float) -> float:
        k = min(int(np.searchsorted(self.knots, x, side="right")) - 1, len(self.rates) - 1)
        k = max(k, 0)
        return self.G_knots[k] + self._segment(self.S_knots[k], self.rates[k], x - self.knots[k])

    def S(self, x: float) -> float:
        return float(np.exp(-self.hz.cumulative(x)))

    def log_w(self, x: float) -> float:
        return self.lam * self.G(x) - self.rate * x

    def slope(self, x: float) -> float:
        return self.lam * self.S(x) - self.rate


def p_abandon_delayed(model: QueueModel, tol: float = 1e-9) -> AbandonEstimate:
    """Probability that a delayed arrival abandons, by quadrature over the offered wait."""
    ow = _OfferedWait(model)
    hz = model.patience
    T = hz.grid.end
    if hz.tail_rate == 0 and ow.slope(T) >= 0:
        raise InstabilityError(
            f"offered-wait integral diverges: lam*S(tail)={model.lam * ow.S(T):.6g} "
            f">= n*mu={ow.rate:.6g} with zero tail hazard"
        )
    # log w is concave (its slope lam*S - n*mu decreases); shift by its maximum
    if ow.slope(0.0) <= 0:
        x_star = 0.0
    else:
        lo, hi = 0.0, max(T, 1.0)
        while ow.slope(hi) > 0:
            hi *= 2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ow.slope(mid) > 0 else (lo, mid)
        x_star = hi
    shift = ow.log_w(x_star)

    def w(x):
        return np.exp(ow.log_w(x) - shift)

    def ab(x):
        return (1.0 - ow.S(x)) * w(x)

    # upper limit X where the concavity bound exp(log w(X)) / |slope(X)| is negligible
    X = max(T, x_star) + 1.0
    while True:
        sl = ow.slope(X)
        if sl < 0 and np.exp(ow.log_w(X) - shift) / -sl < 1e-14 * max(1.0 / ow.rate, 1e-300):
            break
        X *= 2
        if X > 1e12:
            raise InstabilityError("offered-wait density does not decay")
    breaks = np.unique(np.concatenate([[0.0], ow.knots[ow.knots < X], [x_star, X]]))
    den = num = 0.0
    opts = dict(epsabs=tol * 1e-3, epsrel=1e-12, limit=200)
    for a, b in zip(breaks[:-1], breaks[1:]):
        den += integrate.quad(w, a, b, **opts)[0]
        num += integrate.quad(ab, a, b, **opts)[0]
    p = min(max(num / den, 0.0), 1.0)
    return AbandonEstimate(p, "analytic")


def erlang_a_equal_rates(lam: float, mu: float, n: int) -> float:
    """Exact P(abandon | delayed) for exponential patience with rate ``mu``.

    With patience rate equal to the service rate every customer in the system
    leaves at rate ``mu``, so the occupancy is Poisson(lam/mu) and
    ``lam P(ab) = mu E[(N - n)+]``.
    """
    from scipy import stats

    a = lam / mu
    tail = stats.poisson.sf(n - 1, a)
    # E[(N - n)+] = a P(N >= n) - n P(N >= n+1) + ... summed directly
    k = np.arange(n, int(a + 50 * np.sqrt(a) + n + 50))
    excess = float(np.sum((k - n) * stats.poisson.pmf(k, a)))
    return mu * excess / (lam * tail)


def des_oracle(model: QueueModel, sim_time: float, warmup: float,
               rng: np.random.Generator, n_batches: int = 20) -> AbandonEstimate:
    """Event-driven FCFS simulation; batch-means standard error over the post-warmup horizon."""
    if not sim_time > warmup > 0:
        raise ValueError("need sim_time > warmup > 0")
    n_arr = rng.poisson(model.lam * sim_time)
    arrivals = np.sort(rng.uniform(0.0, sim_time, n_arr))
    services = rng.exponential(1.0 / model.mu, n_arr)
    hz = model.patience
    e = rng.exponential(1.0, n_arr)
    patience = hz.invert(e)
    free = [0.0] * model.n
    delayed = np.zeros(n_arr, dtype=bool)
    abandoned = np.zeros(n_arr, dtype=bool)
    heappop, heappush = heapq.heappop, heapq.heappush
    for i in range(n_arr):
        a = arrivals[i]
        first = free[0]
        if first <= a:
            heappop(free)
            heappush(free, a + services[i])
            continue
        delayed[i] = True
        if patience[i] < first - a:
            abandoned[i] = True
        else:
            heappop(free)
            heappush(free, first + services[i])
    keep = arrivals >= warmup
    dl, ab, at = delayed[keep], abandoned[keep], arrivals[keep]
    if not dl.any():
        raise InsufficientDataError("no delayed customers observed after warmup")
    batch = np.minimum(((at - warmup) / (sim_time - warmup) * n_batches).astype(int), n_batches - 1)
    n_del = np.bincount(batch, weights=dl, minlength=n_batches)
    n_ab = np.bincount(batch, weights=ab & dl, minlength=n_batches)
    ok = n_del > 0
    ratios = n_ab[ok] / n_del[ok]
    se = float(np.std(ratios, ddof=1) / np.sqrt(ratios.size)) if ratios.size > 1 else float("nan")
    return AbandonEstimate(float(n_ab.sum() / n_del.sum()), "des", se, int(n_del.sum()))
