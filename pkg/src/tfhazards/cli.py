"""Command-line front end.

Each subcommand reads a JSON config (``--config``), applies ``--set key=value``
overrides (dotted keys, JSON-parsed values) and writes CSV/JSON outputs into
``output_dir``.  Exit codes: 0 ok, 2 config error, 3 data error, 4 fit did not
converge.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io as tio
from .admm import FitConfig, bootstrap, fit
from .grid import CellStats, FilterConfig, TimeGrid, accumulate, apply_filters
from .mle import mle, scree
from .queue import QueueModel, des_oracle, p_abandon_delayed
from .simulate import PiecewiseHazard, run_study
from .smoothing import RoughnessMatrix, fit_rank_r, identify

log = logging.getLogger("tfhazards")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "input": None,
    "output_dir": "tfh_out",
    "study": "patience",
    "fail_fast": False,
    "seed": 0,
    "filter": {"min_wait": 2.0, "max_wait": 300.0, "day_start": 28800.0, "day_end": 72000.0},
    "arrival_grid": {"start": 28800.0, "end": 72000.0, "step": 900.0},
    "wait_grid": {"start": 1.0, "end": 300.0, "step": 1.0},
    "fit": {"rank": 1, "rho0": 0.1, "eps": 1e-6, "max_iter": 500, "lam": None,
            "adapt_rho": True, "n_boot": 100},
}

STUDY_ROLES = {"patience": "abandon", "offered-wait": "answer"}


class ConfigError(ValueError):
    pass


class CliError(RuntimeError):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, overrides: list[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path) as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part} is not a section")
        node[parts[-1]] = value
    return cfg


class Run:
    """Resolved configuration for one invocation."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        try:
            study = cfg["study"]
            if study not in STUDY_ROLES:
                raise ConfigError(f"study must be one of {sorted(STUDY_ROLES)}, got {study!r}")
            self.filter = FilterConfig(event_role=STUDY_ROLES[study], **cfg["filter"])
            self.arrival_grid = TimeGrid.regular(**cfg["arrival_grid"])
            self.wait_grid = TimeGrid.regular(**cfg["wait_grid"])
            fit_cfg = dict(cfg["fit"])
            self.fit = FitConfig(seed=int(cfg["seed"]), **fit_cfg)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        for name, g in (("arrival", self.arrival_grid), ("wait", self.wait_grid)):
            if g.n_intervals < 3:
                raise ConfigError(f"{name} grid needs at least 3 intervals")
        self.out = Path(cfg["output_dir"])

    @property
    def stats_path(self) -> Path:
        return self.out / "cell_stats.csv"

    @property
    def meta_path(self) -> Path:
        return self.out / "cell_stats_meta.json"

    def records(self) -> np.ndarray:
        path = self.cfg.get("input")
        if not path:
            raise ConfigError("no input file configured")
        try:
            raw, problems = tio.read_calls(path, fail_fast=bool(self.cfg.get("fail_fast")))
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}", EXIT_DATA) from None
        except tio.DataError as exc:
            raise CliError(str(exc), EXIT_DATA) from None
        for msg in problems:
            log.warning("skipped %s", msg)
        recs, report = apply_filters(raw, self.filter)
        report["malformed"] = len(problems)
        self.report = report
        if recs:
            arr = np.array([(r.arrival, r.wait, float(r.event)) for r in recs])
        else:
            arr = np.zeros((0, 3))
        return arr

    def ingest(self) -> CellStats:
        arr = self.records()
        # retained arrivals are in (day_start, day_end]; the grid may be narrower
        a = arr[:, 0]
        inside = (a > self.arrival_grid.start) & (a <= self.arrival_grid.end)
        if not np.all(inside):
            self.report["outside_grid"] = int(np.sum(~inside))
            arr = arr[inside]
        try:
            stats = accumulate(arr, self.arrival_grid, self.wait_grid)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_DATA) from None
        self.records_array = arr
        return stats

    def write_stats(self, stats: CellStats) -> None:
        tio.write_stats(self.stats_path, stats)
        tio.write_json(self.meta_path, {
            "arrival_knots": list(self.arrival_grid.knots),
            "wait_knots": list(self.wait_grid.knots),
            "study": self.cfg["study"],
            "n_records": stats.n_records,
        })

    def load_stats(self) -> CellStats:
        """Persisted statistics if present and on matching grids, else ingest."""
        if self.stats_path.exists() and self.meta_path.exists():
            meta = json.loads(self.meta_path.read_text())
            if (tuple(meta["arrival_knots"]) == self.arrival_grid.knots
                    and tuple(meta["wait_knots"]) == self.wait_grid.knots
                    and meta.get("study") == self.cfg["study"]):
                shape = (self.arrival_grid.n_intervals, self.wait_grid.n_intervals)
                return tio.read_stats(self.stats_path, shape, int(meta["n_records"]))
        stats = self.ingest()
        self.write_stats(stats)
        return stats


def cmd_ingest(run: Run, args) -> int:
    stats = run.ingest()
    run.write_stats(stats)
    tio.write_json(run.out / "drop_report.json", run.report)
    n = stats.n_records
    if n == 0:
        log.warning("no records retained; statistics are all zero")
        print("records=0")
        return EXIT_OK
    events = int(stats.d_sum.sum())
    print(f"records={n} events={events} ({100 * events / n:.2f}%) "
          f"censored={n - events} ({100 * (n - events) / n:.2f}%)")
    return EXIT_OK


def cmd_mle(run: Run, args) -> int:
    H = mle(run.load_stats())
    tio.write_csv(run.out / "mle.csv", tio.SURFACE_COLUMNS,
                  tio.surface_rows(H.values, run.arrival_grid, run.wait_grid))
    return EXIT_OK


def cmd_scree(run: Run, args) -> int:
    sv = scree(mle(run.load_stats()))
    tio.write_csv(run.out / "scree.csv", ("index", "singular_value"),
                  ((i + 1, s) for i, s in enumerate(sv)))
    return EXIT_OK


def _write_fit(run: Run, res) -> None:
    tio.write_json(run.out / "fit.json", tio.fit_to_json(res, run.arrival_grid, run.wait_grid))
    tio.write_csv(run.out / "surface.csv", tio.SURFACE_COLUMNS,
                  tio.surface_rows(res.surface, run.arrival_grid, run.wait_grid))
    r = res.factors.rank
    layers = [f"layer{i + 1}" for i in range(r)]
    tio.write_csv(run.out / "u_component.csv", ("j", "a_mid", *layers),
                  tio.component_rows(res.factors.U, run.arrival_grid.midpoints))
    tio.write_csv(run.out / "v_component.csv", ("k", "t_mid", *layers),
                  tio.component_rows(res.factors.V, run.wait_grid.midpoints))


def cmd_fit(run: Run, args) -> int:
    res = fit(run.load_stats(), run.fit)
    _write_fit(run, res)
    if not res.converged:
        print(f"NOT CONVERGED after {res.n_iter} iterations; outputs flagged converged=false",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    print(f"converged in {res.n_iter} iterations; clamped cells={res.clamp_count}")
    return EXIT_OK


def cmd_bootstrap(run: Run, args) -> int:
    stats = run.ingest()
    res = fit(stats, run.fit)
    bands = bootstrap(run.records_array, run.arrival_grid, run.wait_grid, run.fit,
                      n_jobs=int(os.environ.get("TFH_THREADS", "1")))
    tio.write_bands(run.out, bands, res, run.arrival_grid, run.wait_grid)
    tio.write_json(run.out / "bootstrap.json", {
        "n_boot": bands.n_boot, "seed": bands.seed, "n_failed": bands.n_failed,
        "estimate_converged": bool(res.converged),
    })
    if bands.n_failed:
        log.warning("%d of %d replicates did not converge", bands.n_failed, bands.n_boot)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_hist(run: Run, args) -> int:
    arr = run.records()
    wait_s = np.ceil(arr[:, 1]).astype(int)
    values, counts = np.unique(wait_s, return_counts=True)
    tio.write_csv(run.out / "wait_hist.csv", ("wait_s", "count"), zip(values, counts))
    ag = run.arrival_grid
    a = arr[:, 0]
    inside = (a > ag.start) & (a <= ag.end)
    j = np.searchsorted(ag.array, a[inside], side="left") - 1
    per_row = np.bincount(j, minlength=ag.n_intervals)
    tio.write_csv(run.out / "arrival_hist.csv", ("j", "a_start", "a_end", "count"),
                  ((i + 1, ag.knots[i], ag.knots[i + 1], per_row[i]) for i in range(ag.n_intervals)))
    return EXIT_OK


def pooled_hazard(stats: CellStats) -> np.ndarray:
    return mle(stats.collapse_rows()).values[0]


def cmd_pooled(run: Run, args) -> int:
    h = pooled_hazard(run.load_stats())
    mids = run.wait_grid.midpoints
    tio.write_csv(run.out / "pooled.csv", ("k", "t_mid", "hazard"),
                  ((k + 1, mids[k], h[k]) for k in range(len(h))))
    return EXIT_OK


def cmd_smooth(run: Run, args) -> int:
    if not args.matrix:
        raise ConfigError("smooth needs --matrix")
    try:
        Z = np.loadtxt(args.matrix, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read matrix {args.matrix}: {exc}", EXIT_DATA) from None
    m, p = Z.shape
    model = fit_rank_r(Z, run.fit.rank, RoughnessMatrix(m), RoughnessMatrix(p), lam=run.fit.lam)
    model = identify(model)
    layers = [f"layer{i + 1}" for i in range(model.rank)]
    tio.write_csv(run.out / "smooth_u.csv", ("index", *layers),
                  ((i + 1, *model.U[i]) for i in range(m)))
    tio.write_csv(run.out / "smooth_v.csv", ("index", *layers),
                  ((i + 1, *model.V[i]) for i in range(p)))
    tio.write_csv(run.out / "smooth_lambdas.csv", ("layer", "lam_u", "lam_v"),
                  ((i + 1, *model.lambdas[i]) for i in range(model.rank)))
    return EXIT_OK


def cmd_simulate(run: Run, args) -> int:
    settings = [int(s) for s in args.settings.split(",")]
    rows = []
    for s in settings:
        rows += run_study(s, reps=args.reps, seed=run.fit.seed, cfg=run.fit,
                          n_jobs=int(os.environ.get("TFH_THREADS", "1")))
    tio.write_csv(run.out / "simulate.csv",
                  ("setting", "rep", "mle_error", "tfh_error", "converged"),
                  ((r["setting"], r["rep"], r["mle_error"], r["tfh_error"], r["converged"])
                   for r in rows))
    for s in settings:
        sub = [r for r in rows if r["setting"] == s]
        print(f"setting {s}: median mle={np.median([r['mle_error'] for r in sub]):.4f} "
              f"median tfh={np.median([r['tfh_error'] for r in sub]):.4f}")
    return EXIT_OK


def _patience_from_args(args) -> PiecewiseHazard:
    if args.hazard_json:
        try:
            doc = json.loads(Path(args.hazard_json).read_text())
            U, V = np.array(doc["U"], float), np.array(doc["V"], float)
            knots = doc["wait_knots"]
        except (OSError, KeyError, ValueError) as exc:
            raise CliError(f"cannot read fitted hazard {args.hazard_json}: {exc}", EXIT_DATA) from None
        # hazard averaged over arrival rows; equals V for rank 1 since mean(u) = 1
        rates = np.maximum(U @ V.T, 0.0).mean(axis=0)
    elif args.rates:
        rates = np.array([float(x) for x in args.rates.split(",")])
        if args.knots:
            knots = [float(x) for x in args.knots.split(",")]
        else:
            knots = np.arange(len(rates) + 1.0)
    else:
        raise ConfigError("queue-eval needs --hazard-json or --rates")
    scale = args.time_scale
    return PiecewiseHazard(TimeGrid(np.asarray(knots, float) / scale), np.asarray(rates) * scale)


def cmd_queue_eval(run: Run, args) -> int:
    hz = _patience_from_args(args)
    base = QueueModel(args.arrival_rate, args.service_rate, args.agents, hz)
    out = []
    for i, c in enumerate(float(x) for x in args.scales.split(",")):
        model = base.scaled(c)
        row = {"scale": c, "p_analytic": p_abandon_delayed(model).p_abandon_given_delay,
               "p_des": None, "se_des": None}
        if args.des:
            rng = np.random.default_rng([run.fit.seed, i])
            est = des_oracle(model, args.sim_time, args.warmup, rng)
            row["p_des"], row["se_des"] = est.p_abandon_given_delay, est.standard_error
        out.append(row)
    tio.write_json(run.out / "queue_eval.json", out)
    print(json.dumps(out, indent=2))
    return EXIT_OK


COMMANDS = {
    "ingest": (cmd_ingest, "filter and aggregate call records into cell statistics"),
    "mle": (cmd_mle, "cellwise maximum likelihood hazard surface"),
    "scree": (cmd_scree, "singular values of the MLE surface"),
    "fit": (cmd_fit, "smooth low-rank hazard fit"),
    "bootstrap": (cmd_bootstrap, "pointwise bootstrap bands for the components"),
    "hist": (cmd_hist, "waiting-time and arrival histograms"),
    "pooled": (cmd_pooled, "one-way hazard from data pooled over arrival times"),
    "smooth": (cmd_smooth, "penalized low-rank factorization of a numeric matrix"),
    "simulate": (cmd_simulate, "simulation study of MLE vs smooth fit"),
    "queue-eval": (cmd_queue_eval, "M/M/n+G abandonment with a given patience hazard"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfhazards", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. fit.rank=2")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    common.add_argument("--input", help="call CSV (arrival_s,wait_s,outcome)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text)
               for name, (_, text) in COMMANDS.items()}
    parsers["smooth"].add_argument("--matrix", help="CSV of numbers, one matrix row per line")
    sim = parsers["simulate"]
    sim.add_argument("--settings", default="1,2,3,4,5,6")
    sim.add_argument("--reps", type=int, default=100)
    q = parsers["queue-eval"]
    q.add_argument("--hazard-json", help="fit.json written by the fit subcommand")
    q.add_argument("--rates", help="comma-separated patience hazard rates")
    q.add_argument("--knots", help="comma-separated knots for --rates (default 0,1,...)")
    q.add_argument("--time-scale", type=float, default=1.0,
                   help="hazard time units per queue time unit (60 for per-second "
                        "hazards with per-minute queue rates)")
    q.add_argument("--arrival-rate", type=float, default=100.0)
    q.add_argument("--service-rate", type=float, default=1.0)
    q.add_argument("--agents", type=int, default=100)
    q.add_argument("--scales", default="1.5,1.0,0.5")
    q.add_argument("--des", action="store_true", help="also run the simulation oracle")
    q.add_argument("--sim-time", type=float, default=5000.0)
    q.add_argument("--warmup", type=float, default=100.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.input:
        overrides.append(f"input={json.dumps(args.input)}")
    if args.out:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    try:
        run = Run(load_config(args.config, overrides))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command][0](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
