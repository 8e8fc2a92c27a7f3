"""File formats: call CSV input, persisted cell statistics, fit JSON and result CSVs.

Every writer goes through :func:`atomic_write` (temp file + rename) so a
rerun never leaves a half-written output behind.  Floats are written with
``repr`` so a round trip through CSV is exact.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .admm import BootstrapBands, HazardFit
from .grid import CellStats, TimeGrid

CALL_COLUMNS = ("arrival_s", "wait_s", "outcome")
STATS_COLUMNS = ("j", "k", "d_sum", "t_sum")
SURFACE_COLUMNS = ("j", "k", "a_mid", "t_mid", "hazard")
BAND_COLUMNS = ("layer", "point", "lower", "estimate", "upper")


class DataError(ValueError):
    """Malformed input data."""


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    atomic_write(path, buf.getvalue())


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_calls(path, fail_fast: bool = False) -> tuple[list[tuple[float, float, str]], list[str]]:
    """Read ``arrival_s,wait_s,outcome`` rows.

    Malformed rows raise :class:`DataError` when ``fail_fast`` is set and are
    otherwise skipped; the returned messages name each skipped line.
    """
    rows, problems = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows, problems
        if tuple(h.strip() for h in header) != CALL_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(CALL_COLUMNS)}, got {','.join(header)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                if len(rec) != 3:
                    raise ValueError(f"expected 3 fields, got {len(rec)}")
                a, t = float(rec[0]), float(rec[1])
                outcome = rec[2].strip()
                if outcome not in ("answered", "abandoned"):
                    raise ValueError(f"unknown outcome {outcome!r}")
                if not (np.isfinite(a) and np.isfinite(t)) or t < 0:
                    raise ValueError("non-finite or negative time")
            except ValueError as exc:
                msg = f"line {lineno}: {exc}"
                if fail_fast:
                    raise DataError(f"{path}: {msg}") from None
                problems.append(msg)
                continue
            rows.append((a, t, outcome))
    return rows, problems


def grid_to_json(grid: TimeGrid) -> list[float]:
    return list(grid.knots)


def write_stats(path, stats: CellStats) -> None:
    m, p = stats.shape
    rows = ((j + 1, k + 1, int(stats.d_sum[j, k]), stats.t_sum[j, k])
            for j in range(m) for k in range(p))
    write_csv(path, STATS_COLUMNS, rows)


def read_stats(path, shape: tuple[int, int], n_records: int = 0) -> CellStats:
    stats = CellStats.zeros(*shape)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            j, k = int(rec["j"]) - 1, int(rec["k"]) - 1
            stats.d_sum[j, k] = float(rec["d_sum"])
            stats.t_sum[j, k] = float(rec["t_sum"])
    return CellStats(stats.d_sum, stats.t_sum, n_records)


def fit_to_json(res: HazardFit, arrival_grid: TimeGrid, wait_grid: TimeGrid) -> dict:
    f = res.factors
    return {
        "arrival_knots": grid_to_json(arrival_grid),
        "wait_knots": grid_to_json(wait_grid),
        "rank": f.rank,
        "U": f.U.tolist(),
        "V": f.V.tolist(),
        "lambdas": f.lambdas.tolist(),
        "rho_trace": list(res.rho_trace),
        "primal_residuals": list(res.z_trace),
        "dual_residuals": list(res.s_trace),
        "clamp_count": res.clamp_count,
        "converged": bool(res.converged),
        "n_iter": res.n_iter,
        "loglik": res.loglik if np.isfinite(res.loglik) else None,
    }


def surface_rows(surface: np.ndarray, arrival_grid: TimeGrid, wait_grid: TimeGrid):
    am, tm = arrival_grid.midpoints, wait_grid.midpoints
    m, p = surface.shape
    for j in range(m):
        for k in range(p):
            yield j + 1, k + 1, am[j], tm[k], surface[j, k]


def component_rows(F: np.ndarray, mids: np.ndarray):
    for i in range(len(mids)):
        yield (i + 1, mids[i], *F[i])


def band_rows(lower: np.ndarray, estimate: np.ndarray, upper: np.ndarray, mids: np.ndarray):
    for layer in range(estimate.shape[1]):
        for i in range(len(mids)):
            yield layer + 1, mids[i], lower[i, layer], estimate[i, layer], upper[i, layer]


def write_bands(out_dir, bands: BootstrapBands, res: HazardFit,
                arrival_grid: TimeGrid, wait_grid: TimeGrid) -> None:
    out_dir = Path(out_dir)
    write_csv(out_dir / "u_bands.csv", BAND_COLUMNS,
              band_rows(bands.u_lower, res.factors.U, bands.u_upper, arrival_grid.midpoints))
    write_csv(out_dir / "v_bands.csv", BAND_COLUMNS,
              band_rows(bands.v_lower, res.factors.V, bands.v_upper, wait_grid.midpoints))
