"""Command-line entry point: ``predlab <command> ...``.

Commands: simulate, replay, report, bounds, infer, margin. Every output file
carries a header with the configuration hash and seed. Outputs default to
``$PREDLAB_OUT`` (or the current directory). When a command fails, every
file it already wrote is removed.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analytics import (
    SERIES_FIELDS, SUMMARY_FIELDS, build_portfolios, market_summary, open_order_shift,
    profit_decomposition, profit_summary, profits_by_entry_time, series, transition_matrix,
)
from .bounds import (
    GRID, HistoryKey, Intervals, bound_curves, estimate_by_key, exclusion_filter,
    execution_training_set, extract_observations, mean_belief_interval, order_intervals,
)
from .execprob import FEATURE_NAMES, parse_exec_prob
from .inference import confidence_interval, estimate_beta, ks_k_sample, nw_fit, subsample
from .linked import max_exposure, outcome_pnl, read_position_csv
from .lob import LOBError, replay
from .sim import NotDayTrader, SimConfig, TraderKind, day_trader_benchmark, run
from .storage import (
    SNAPSHOT_FIELDS, config_hash, parse_value, read_csv, read_events, read_flat_config,
    snapshot_rows, write_csv, write_events,
)

log = logging.getLogger("predlab")

OUT_ENV = "PREDLAB_OUT"
TRUTH_FIELDS = ("trader_id", "kind", "belief", "entry_time", "contract", "side")


class CommandError(Exception):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


class Outputs:
    """Tracks files written by one command so a failure can remove them all."""

    def __init__(self, header: dict[str, Any]):
        self.header = header
        self.paths: list[Path] = []

    def path(self, p) -> Path:
        p = Path(p)
        self.paths.append(p)
        return p

    def csv(self, p, fields, rows) -> Path:
        p = self.path(p)
        write_csv(p, fields, rows, self.header)
        return p

    def discard(self) -> None:
        for p in self.paths:
            with contextlib.suppress(FileNotFoundError):
                p.unlink()


def parse_sets(items: Sequence[str] | None) -> dict[str, Any]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise CommandError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


def load_sim_config(path: str | None, overrides: dict[str, Any]) -> SimConfig:
    values = read_flat_config(path) if path else {}
    values.update(overrides)
    try:
        return SimConfig.from_mapping(values)
    except (TypeError, ValueError) as e:
        raise CommandError(f"bad config: {e}") from e


def options_hash(args: argparse.Namespace, skip=("func", "jobs", "out", "verbose")) -> str:
    return config_hash({k: str(v) for k, v in vars(args).items() if k not in skip})


def log_header(path) -> tuple[list, dict[str, Any]]:
    try:
        events, header = read_events(path)
    except (OSError, ValueError, KeyError) as e:
        raise CommandError(f"cannot read event log {path}: {e}") from e
    return events, header


def derived_header(source: dict[str, Any], command: str, args) -> dict[str, Any]:
    return {"command": command, "config_hash": source.get("config_hash", "none"),
            "seed": source.get("seed", "none"), "options": options_hash(args)}


def safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.-]+", "_", text).strip("_") or "key"


# -- simulate -----------------------------------------------------------------

def _simulate_one(cfg: SimConfig, seed: int, out: str, truth: str | None) -> str:
    res = run(cfg, seed)
    mapping = cfg.to_mapping()
    mapping["seed"] = seed
    header = {"command": "simulate", "config": mapping, "config_hash": config_hash(mapping),
              "seed": seed, "days": cfg.days}
    written = []
    try:
        write_events(out, res.events, header)
        written.append(out)
        if truth:
            rows = [(t.trader_id, t.kind.value, "" if t.belief is None else repr(t.belief),
                     repr(t.entry_time), t.contract, t.side.value if t.side else "")
                    for t in res.traders]
            write_csv(truth, TRUTH_FIELDS, rows,
                      {"command": "simulate", "config_hash": header["config_hash"], "seed": seed})
            written.append(truth)
    except BaseException:
        for p in written:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(p)
        raise
    return out


def cmd_simulate(args) -> int:
    cfg = load_sim_config(args.config, parse_sets(args.set))
    base = cfg.seed if args.seed is None else args.seed
    seeds = [base + k for k in range(args.seeds)]
    outdir = default_out()
    jobs = []
    for s in seeds:
        suffix = f"_seed{s}" if len(seeds) > 1 else ""
        out = args.out.format(seed=s) if args.out else str(outdir / f"events{suffix}.jsonl")
        if len(seeds) > 1 and args.out and "{seed}" not in args.out:
            raise CommandError("--out needs a {seed} placeholder when simulating several seeds")
        truth = None
        if args.truth:
            truth = args.truth.format(seed=s)
        elif not args.no_truth:
            truth = str(Path(out).with_name(Path(out).stem + "_truth.csv"))
        jobs.append((cfg, s, out, truth))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            done = list(pool.map(_simulate_one, *zip(*jobs)))
    else:
        done = [_simulate_one(*j) for j in jobs]
    for path in done:
        print(path)
    return 0


# -- replay -------------------------------------------------------------------

def cmd_replay(args) -> int:
    events, header = log_header(args.events)
    try:
        ex, snaps = replay(events, snapshots=bool(args.snapshots))
    except LOBError as e:
        raise CommandError(f"corrupt log: {e}") from e
    out = Outputs(derived_header(header, "replay", args))
    try:
        if args.snapshots:
            out.csv(args.snapshots, SNAPSHOT_FIELDS, snapshot_rows(snaps))
    except BaseException:
        out.discard()
        raise
    print(f"ok events={len(events)} digest={ex.digest()}")
    return 0


# -- report -------------------------------------------------------------------

def windows_arg(text: str) -> list[int]:
    try:
        w = sorted({int(x) for x in text.split(",") if x.strip()}, reverse=True)
    except ValueError as e:
        raise CommandError(f"bad windows {text!r}") from e
    if not w or w[-1] <= 0:
        raise CommandError("windows must be positive day counts")
    return w


def log_days(header: dict[str, Any], override: int | None) -> int:
    if override is not None:
        return override
    return int(header.get("days") or header.get("config", {}).get("days") or 365)


def matrix_rows(tm) -> list[list[Any]]:
    return [[lab, int(v), *map(float, row)] for lab, v, row in zip(tm.labels, tm.visits, tm.matrix)]


def cmd_report(args) -> int:
    events, header = log_header(args.events)
    days = log_days(header, args.days)
    windows = windows_arg(args.windows)
    for w in windows:
        if w >= days:
            raise CommandError(f"window {w} is not inside a {days}-day horizon")
    outdir = Path(args.out) if args.out else default_out()
    out = Outputs(derived_header(header, "report", args))
    try:
        rows = series(events, days)
        out.csv(outdir / "series.csv", SERIES_FIELDS, rows)
        out.csv(outdir / "market_summary.csv", SUMMARY_FIELDS, market_summary(rows))

        ports = build_portfolios(events)
        prof = profit_decomposition(ports)
        out.csv(outdir / "profits.csv",
                ("trader_id", "trading", "prediction", "total", "day_trader", "executions",
                 "entry_time"),
                [(r.trader_id, float(r.trading) / 100, float(r.prediction) / 100,
                  float(r.total) / 100, int(r.is_day_trader), r.n_exec, r.entry_time)
                 for r in prof])
        out.csv(outdir / "profit_summary.csv", ("group",) + SUMMARY_FIELDS, profit_summary(prof))

        specs = [("all", 1.0)] + [(f"{w}d", 1.0 - w / days) for w in windows]
        for name, end in specs:
            tm = transition_matrix(events, window_end=end, portfolios=ports)
            out.csv(outdir / f"transitions_{name}.csv", ("state", "traders", *tm.labels),
                    matrix_rows(tm))
        for w in windows:
            for kind in ("buy", "sell"):
                sh = open_order_shift(events, 1.0 - w / days, kind)
                out.csv(outdir / f"open_{kind}_shift_{w}d.csv", ("state", "traders", *sh.labels),
                        [[lab, int(v), *map(int, row)]
                         for lab, v, row in zip(sh.labels, sh.visits, sh.counts)])

        edges = [0.0] + [1.0 - w / days for w in windows] + [1.0]
        buckets = profits_by_entry_time(prof, edges)
        names = [f"[{a:.4f},{b:.4f})" for a, b in zip(edges, edges[1:])]
        ks_rows = []
        nonempty = [b for b in buckets if len(b)]
        if len(nonempty) >= 2:
            res = ks_k_sample(nonempty, q=args.q, rng=args.seed)
            ks_rows.append(("entry_time", len(nonempty), res.statistic, res.pvalue,
                            res.critical_value, int(res.reject)))
        out.csv(outdir / "entry_profits.csv", ("bucket", "n", "mean", "median"),
                [(n, len(b), float(np.mean(b)) / 100 if len(b) else math.nan,
                  float(np.median(b)) / 100 if len(b) else math.nan)
                 for n, b in zip(names, buckets)])
        out.csv(outdir / "entry_ks.csv", ("test", "samples", "statistic", "pvalue",
                                          "critical_value", "reject"), ks_rows)

        _, snaps = replay(events)
        bench = []
        for r in prof:
            if not r.is_day_trader:
                continue
            try:
                b = day_trader_benchmark(events, r.trader_id, snaps)
            except NotDayTrader:
                continue
            bench.append((r.trader_id, float(r.total) / 100, b.trading_profit / 100,
                          b.settlement_profit / 100, b.total / 100, b.lots, b.sold))
        out.csv(outdir / "benchmark.csv", ("trader_id", "actual", "algo_trading",
                                           "algo_settlement", "algo_total", "lots", "sold"), bench)
    except BaseException:
        out.discard()
        raise
    print(f"wrote {len(out.paths)} files to {outdir}")
    return 0


# -- bounds -------------------------------------------------------------------

def read_truth_informed(path) -> list[str]:
    try:
        rows = read_csv(path)
    except OSError as e:
        raise CommandError(f"cannot read truth file {path}: {e}") from e
    return [r["trader_id"] for r in rows if r["kind"] == TraderKind.INFORMED.value]


INTERVAL_FIELDS = ("lo", "hi", "day", "bucket", "key")
BOUND_FIELDS = ("s", "lower", "upper", "lower_lo", "lower_hi", "upper_lo", "upper_hi")
MEAN_FIELDS = ("key", "n_orders", "mean_lo", "mean_hi", "ci_lo", "ci_hi", "level", "replicates",
               "failures")


def cmd_bounds(args) -> int:
    events, header = log_header(args.events)
    days = log_days(header, args.days)
    windows = windows_arg(args.windows)
    spec = args.exec_prob or header.get("config", {}).get("exec_prob") or "logistic:0:10"
    try:
        phi = parse_exec_prob(spec)
    except (OSError, ValueError, KeyError) as e:
        raise CommandError(f"bad execution-probability spec {spec!r}: {e}") from e
    ids = read_truth_informed(args.truth) if args.truth else None
    obs = extract_observations(events, days, windows, trader_ids=ids, by_book=args.group == "book")
    kept = exclusion_filter(obs, args.cutoff / days)
    iv = order_intervals(kept, phi)
    log.info("orders=%d excluded=%d degenerate=%d", len(obs), len(obs) - len(kept), iv.dropped)
    if len(iv) == 0:
        raise CommandError("no usable orders after filtering")
    outdir = Path(args.out) if args.out else default_out()
    out = Outputs(derived_header(header, "bounds", args))
    try:
        out.csv(outdir / "intervals.csv", INTERVAL_FIELDS,
                [(lo, hi, d, k.bucket, str(k)) for lo, hi, d, k in zip(iv.lo, iv.hi, iv.day, iv.keys)])
        ests = estimate_by_key(iv, group=args.group, min_orders=args.min_orders, level=args.level,
                               q=args.q, rng=args.seed, jobs=args.jobs)
        means = []
        for key, est in ests.items():
            if est.lower_band is not None:
                bands = (*est.lower_band, *est.upper_band)
            else:
                bands = (np.full(len(GRID), math.nan),) * 4
            out.csv(outdir / f"bounds_{safe_name(key)}.csv", BOUND_FIELDS,
                    zip(GRID, est.lower_cdf, est.upper_cdf, *bands))
            ci = est.mean_ci or (math.nan, math.nan)
            means.append((key, est.n_orders, est.mean_lo, est.mean_hi, ci[0], ci[1],
                          est.level, est.replicates, est.failures))
        out.csv(outdir / "mean_interval.csv", MEAN_FIELDS, means)
    except BaseException:
        out.discard()
        raise
    for row in means:
        print(f"{row[0]}: n={row[1]} mean in [{row[2]:.3f}, {row[3]:.3f}]"
              f" ci [{row[4]:.3f}, {row[5]:.3f}]")
    return 0


# -- infer --------------------------------------------------------------------

def cmd_infer_phi(args) -> int:
    events, header = log_header(args.events)
    X, y = execution_training_set(events)
    if len(y) == 0:
        raise CommandError("no resting limit orders to learn from")
    if args.max_samples and len(y) > args.max_samples:
        idx = np.sort(np.random.default_rng(args.seed).choice(len(y), args.max_samples, replace=False))
        X, y = X[idx], y[idx]
    model = nw_fit(X, y, feature_names=FEATURE_NAMES)
    path = Path(args.out) if args.out else default_out() / "exec_model.npz"
    out = Outputs(derived_header(header, "infer", args))
    try:
        model.save(out.path(path))
        out.csv(path.with_suffix(".csv"), ("feature", "bandwidth"),
                zip(FEATURE_NAMES, model.bandwidths))
    except BaseException:
        out.discard()
        raise
    print(f"fitted n={len(y)} fill_rate={y.mean():.3f} -> {path}")
    return 0


def read_intervals(path) -> Intervals:
    try:
        rows = read_csv(path)
    except OSError as e:
        raise CommandError(f"cannot read intervals {path}: {e}") from e
    if not rows:
        raise CommandError("interval file is empty")
    return Intervals(np.array([float(r["lo"]) for r in rows]), np.array([float(r["hi"]) for r in rows]),
                     np.array([int(r["day"]) for r in rows]),
                     [HistoryKey(r["bucket"]) for r in rows])


def _header_of_csv(path) -> dict[str, Any]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(kv.split("=", 1) for kv in first[1:].split() if "=" in kv)


BETA_FIELDS = ("key", "n_orders", "days", "mean_lo", "mean_hi", "ci_lo", "ci_hi", "level",
               "beta", "beta_r2", "b")


def cmd_infer_mean(args) -> int:
    iv = read_intervals(args.intervals)
    header = _header_of_csv(args.intervals)
    groups = {"all": iv}
    for name in sorted({k.bucket for k in iv.keys}):
        groups[name] = iv.subset([k.bucket == name for k in iv.keys])
    rows = []
    for key, g in groups.items():
        days = np.unique(g.day)
        blocks = [np.flatnonzero(g.day == d) for d in days]
        A = len(blocks)
        lower, upper = bound_curves(g.lo, g.hi)
        mlo, mhi = mean_belief_interval(lower, upper)

        def stat(chosen, g=g):
            idx = np.concatenate(chosen)
            return mean_belief_interval(*bound_curves(g.lo[idx], g.hi[idx]))

        if A < 8:
            rows.append((key, len(g), A, mlo, mhi, math.nan, math.nan, args.level,
                         math.nan, math.nan, 0))
            continue
        sizes = sorted({max(2, A // 8), max(2, A // 4), max(2, A // 2)})
        beta, r2 = 0.5, math.nan
        if len(sizes) >= 2:
            est = estimate_beta(blocks, stat, sizes, q=args.q, rng=args.seed)
            beta, r2 = est.beta, est.r2
        if not (0.05 <= beta <= 2.0):
            log.warning("key %s: estimated rate %.3f out of range, using 0.5", key, beta)
            beta = 0.5
        b = max(2, A // 4)
        res = subsample(blocks, stat, b=b, q=args.q, rng=args.seed, beta=beta, jobs=args.jobs)
        lo, hi = confidence_interval(res, args.level, pointwise=True)
        rows.append((key, len(g), A, mlo, mhi, max(0.0, float(lo[0])), min(1.0, float(hi[1])),
                     args.level, beta, r2, b))
    path = Path(args.out) if args.out else default_out() / "mean_ci.csv"
    out = Outputs(derived_header(header, "infer", args))
    try:
        out.csv(path, BETA_FIELDS, rows)
    except BaseException:
        out.discard()
        raise
    for r in rows:
        print(f"{r[0]}: mean in [{r[3]:.3f}, {r[4]:.3f}] ci [{r[5]:.3f}, {r[6]:.3f}] beta={r[8]:.3f}")
    return 0


# -- margin -------------------------------------------------------------------

def cmd_margin(args) -> int:
    try:
        pos = read_position_csv(args.position)
    except (OSError, KeyError, ValueError) as e:
        raise CommandError(f"bad position file: {e}") from e
    pnl = [(w, outcome_pnl(pos, w)) for w in pos.market.outcomes]
    margin = max_exposure(pos)
    if args.out:
        out = Outputs({"command": "margin", "config_hash": config_hash(Path(args.position).read_text()),
                       "seed": "none"})
        try:
            out.csv(args.out, ("winner", "pnl_cents"), pnl + [("max_exposure", margin)])
        except BaseException:
            out.discard()
            raise
    for w, v in pnl:
        print(f"if {w} wins: {v / 100:+.2f}")
    print(f"max exposure: {margin / 100:.2f}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="predlab", description="Prediction-market laboratory.")
    p.add_argument("--version", action="version", version=f"predlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate an event log and ground truth")
    s.add_argument("--config", help="flat key = value file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--seed", type=int)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    s.add_argument("--out", help="event log path; use {seed} for batches")
    s.add_argument("--truth", help="trader truth CSV path (default: next to the log)")
    s.add_argument("--no-truth", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replay", help="verify a log and print the state digest")
    s.add_argument("--events", required=True)
    s.add_argument("--snapshots", help="write top-5 book snapshots to this CSV")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("report", help="descriptive tables and matrices")
    s.add_argument("--events", required=True)
    s.add_argument("--out", help="output directory")
    s.add_argument("--days", type=int)
    s.add_argument("--windows", default="40,20,10")
    s.add_argument("--q", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("bounds", help="belief CDF bounds and mean-belief intervals")
    s.add_argument("--events", required=True)
    s.add_argument("--exec-prob", help="constant:c | logistic:a:b | model:path.npz")
    s.add_argument("--truth", help="restrict to traders marked INFORMED in this CSV")
    s.add_argument("--out", help="output directory")
    s.add_argument("--days", type=int)
    s.add_argument("--windows", default="40,20,10")
    s.add_argument("--cutoff", type=float, default=10.0, help="days excluded before resolution")
    s.add_argument("--group", choices=("bucket", "book", "none"), default="bucket")
    s.add_argument("--min-orders", type=int, default=20)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--q", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("infer", help="fit execution probabilities or subsample mean intervals")
    isub = s.add_subparsers(dest="what", required=True)
    t = isub.add_parser("phi", help="kernel regression of fill indicators on the book")
    t.add_argument("--events", required=True)
    t.add_argument("--out", help="model path (.npz)")
    t.add_argument("--max-samples", type=int, default=20_000)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_infer_phi)
    t = isub.add_parser("mean", help="rate-adjusted confidence interval for the mean belief")
    t.add_argument("--intervals", required=True, help="intervals.csv written by bounds")
    t.add_argument("--out")
    t.add_argument("--level", type=float, default=0.95)
    t.add_argument("--q", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_infer_mean)

    s = sub.add_parser("margin", help="max-exposure margin of a linked position")
    s.add_argument("--position", required=True, help="CSV with outcome, side, qty, price")
    s.add_argument("--out")
    s.set_defaults(func=cmd_margin)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, LOBError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
