"""Time grids, record filtering and sufficient-statistic aggregation.

Both axes use half-open intervals ``(knots[k-1], knots[k]]``.  A waiting time
``t`` is split into per-interval exposures ``min(max(t - knots[k-1], 0), width_k)``
and its event (if any) is attributed to the single interval containing ``t``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "TimeGrid",
    "EventRecord",
    "FilterConfig",
    "CellStats",
    "decompose_wait",
    "arrival_index",
    "apply_filters",
    "accumulate",
]


class DomainError(ValueError):
    """A time point falls outside the domain covered by a grid."""


@dataclass(frozen=True)
class TimeGrid:
    knots: tuple[float, ...]

    def __init__(self, knots: Iterable[float]):
        arr = np.asarray(list(knots), dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("a grid needs at least 2 knots")
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid knots must be finite")
        if arr[0] < 0:
            raise ValueError("grid knots must be nonnegative")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("grid knots must be strictly increasing")
        object.__setattr__(self, "knots", tuple(float(x) for x in arr))

    @classmethod
    def regular(cls, start: float, end: float, step: float) -> "TimeGrid":
        """Equally spaced grid from ``start`` to ``end``; ``step`` must divide the range."""
        n = (end - start) / step
        count = int(round(n))
        if count < 1 or abs(n - count) > 1e-9 * max(1.0, n):
            raise ValueError(f"step {step} does not divide [{start}, {end}]")
        return cls(start + step * np.arange(count + 1))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.knots)

    @property
    def n_intervals(self) -> int:
        return len(self.knots) - 1

    @property
    def start(self) -> float:
        return self.knots[0]

    @property
    def end(self) -> float:
        return self.knots[-1]

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.array)

    @property
    def midpoints(self) -> np.ndarray:
        k = self.array
        return 0.5 * (k[:-1] + k[1:])

    def __len__(self) -> int:
        return self.n_intervals


@dataclass(frozen=True)
class EventRecord:
    arrival: float
    wait: float
    event: bool

    def __post_init__(self):
        if not np.isfinite(self.wait) or self.wait < 0:
            raise ValueError(f"wait must be finite and >= 0, got {self.wait}")


@dataclass(frozen=True)
class FilterConfig:
    """Pruning rules applied to raw call records.

    ``event_role`` is ``"abandon"`` for a patience study (abandonment observed,
    answered calls censored) or ``"answer"`` for an offered-wait study.
    """

    min_wait: float = 2.0
    max_wait: float = 300.0
    day_start: float = 8 * 3600.0
    day_end: float = 20 * 3600.0
    event_role: str = "abandon"

    def __post_init__(self):
        if not self.min_wait < self.max_wait:
            raise ValueError("min_wait must be < max_wait")
        if not self.day_start < self.day_end:
            raise ValueError("day_start must be < day_end")
        if self.event_role not in ("abandon", "answer"):
            raise ValueError(f"event_role must be 'abandon' or 'answer', got {self.event_role!r}")


@dataclass
class CellStats:
    """Per-cell event counts and exposure on an arrival x wait grid."""

    d_sum: np.ndarray
    t_sum: np.ndarray
    n_records: int = 0

    def __post_init__(self):
        self.d_sum = np.asarray(self.d_sum, dtype=float)
        self.t_sum = np.asarray(self.t_sum, dtype=float)
        if self.d_sum.ndim != 2 or self.d_sum.shape != self.t_sum.shape:
            raise ValueError("d_sum and t_sum must be matrices of equal shape")
        if np.any(self.d_sum < 0) or np.any(self.t_sum < 0):
            raise ValueError("cell statistics must be nonnegative")
        if np.any(self.d_sum != np.round(self.d_sum)):
            raise ValueError("event counts must be integers")
        if np.any((self.d_sum > 0) & (self.t_sum <= 0)):
            raise ValueError("a cell with events must have positive exposure")

    @classmethod
    def zeros(cls, m: int, p: int) -> "CellStats":
        return cls(np.zeros((m, p)), np.zeros((m, p)), 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.d_sum.shape

    def __add__(self, other: "CellStats") -> "CellStats":
        if self.shape != other.shape:
            raise ValueError("cannot add CellStats of different shapes")
        return CellStats(self.d_sum + other.d_sum, self.t_sum + other.t_sum,
                         self.n_records + other.n_records)

    def collapse_rows(self) -> "CellStats":
        return CellStats(self.d_sum.sum(axis=0, keepdims=True),
                         self.t_sum.sum(axis=0, keepdims=True), self.n_records)


def _exposure_rows(t: np.ndarray, grid: TimeGrid) -> np.ndarray:
    knots = grid.array
    return np.clip(t[:, None] - knots[None, :-1], 0.0, grid.widths[None, :])


def _check_waits(t: np.ndarray, d: np.ndarray, grid: TimeGrid) -> None:
    bad = (t < grid.start) | (t > grid.end) | ~np.isfinite(t)
    bad |= (d > 0) & (t <= grid.start)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"record {i}: wait {t[i]} (event={bool(d[i])}) outside wait domain "
            f"({grid.start}, {grid.end}]; truncate and censor first"
        )


def decompose_wait(t: float, d: bool, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Split one waiting time into per-interval exposures and event indicators."""
    tt = np.array([float(t)])
    dd = np.array([1.0 if d else 0.0])
    _check_waits(tt, dd, grid)
    t_vec = _exposure_rows(tt, grid)[0]
    d_vec = np.zeros(grid.n_intervals)
    if d:
        d_vec[np.searchsorted(grid.array, t, side="left") - 1] = 1.0
    return t_vec, d_vec


def _arrival_indices(a: np.ndarray, grid: TimeGrid) -> np.ndarray:
    bad = (a <= grid.start) | (a > grid.end) | ~np.isfinite(a)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"record {i}: arrival {a[i]} outside ({grid.start}, {grid.end}]")
    return np.searchsorted(grid.array, a, side="left")


def arrival_index(a: float, grid: TimeGrid) -> int:
    """1-based row index ``j`` with ``knots[j-1] < a <= knots[j]``."""
    return int(_arrival_indices(np.array([float(a)]), grid)[0])


def apply_filters(raw: Iterable, cfg: FilterConfig) -> tuple[list[EventRecord], dict]:
    """Prune raw ``(arrival, wait, outcome)`` rows into event records.

    ``outcome`` is ``"answered"`` or ``"abandoned"``.  Returns the retained
    records and a report counting retained, truncated and dropped rows.
    """
    report: Counter = Counter()
    out: list[EventRecord] = []
    for arrival, wait, outcome in raw:
        report["input"] += 1
        arrival = float(arrival)
        wait = float(wait)
        if outcome not in ("answered", "abandoned"):
            report["bad_outcome"] += 1
            continue
        if not (np.isfinite(wait) and np.isfinite(arrival)) or wait < 0:
            report["invalid"] += 1
            continue
        if wait < cfg.min_wait:
            report["short_wait"] += 1
            continue
        if not (cfg.day_start < arrival <= cfg.day_end):
            report["outside_day"] += 1
            continue
        event = (outcome == "abandoned") if cfg.event_role == "abandon" else (outcome == "answered")
        if wait > cfg.max_wait:
            wait, event = cfg.max_wait, False
            report["truncated"] += 1
        out.append(EventRecord(arrival, wait, event))
    report["retained"] = len(out)
    for key in ("input", "short_wait", "outside_day", "bad_outcome", "invalid", "truncated"):
        report.setdefault(key, 0)
    return out, dict(report)


def records_to_arrays(records: Sequence[EventRecord] | np.ndarray) -> tuple[np.ndarray, ...]:
    """Return ``(arrival, wait, event)`` float arrays from records or an ``(n, 3)`` array."""
    if isinstance(records, np.ndarray):
        arr = np.asarray(records, dtype=float).reshape(-1, 3)
        return arr[:, 0], arr[:, 1], arr[:, 2]
    if len(records) == 0:
        empty = np.zeros(0)
        return empty, empty, empty
    a = np.fromiter((r.arrival for r in records), float, len(records))
    t = np.fromiter((r.wait for r in records), float, len(records))
    d = np.fromiter((1.0 if r.event else 0.0 for r in records), float, len(records))
    return a, t, d


def accumulate(records, arrival_grid: TimeGrid, wait_grid: TimeGrid,
               chunk_size: int = 65536) -> CellStats:
    """Aggregate records into ``d_sum``/``t_sum`` matrices.

    ``records`` is a sequence of :class:`EventRecord` or an ``(n, 3)`` array of
    ``(arrival, wait, event)`` rows.
    """
    a, t, d = records_to_arrays(records)
    m, p = arrival_grid.n_intervals, wait_grid.n_intervals
    stats = CellStats.zeros(m, p)
    if a.size == 0:
        return stats
    rows = _arrival_indices(a, arrival_grid) - 1
    _check_waits(t, d, wait_grid)
    cols = np.searchsorted(wait_grid.array, t, side="left") - 1
    ev = d > 0
    np.add.at(stats.d_sum, (rows[ev], cols[ev]), 1.0)
    for j in np.unique(rows):
        tj = t[rows == j]
        parts = [_exposure_rows(tj[s:s + chunk_size], wait_grid).sum(axis=0)
                 for s in range(0, tj.size, chunk_size)]
        stats.t_sum[j] = np.sum(parts, axis=0)
    stats.n_records = int(a.size)
    return stats
