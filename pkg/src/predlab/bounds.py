"""Partial identification of the belief distribution from submitted orders.

Every buy order brackets its submitter's belief. The price is a floor:
nobody pays more than the contract is worth to them. Choosing a resting
limit over an immediate fill caps the belief from above, given the
execution probability of the limit. Empirical CDFs of the floors and caps
then sandwich the belief CDF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .execprob import ExecProb, SideView, book_features
from .inference import SubsampleResult, confidence_interval, subsample
from .lob import PAYOUT, EventKind, Level, OrderEvent, Side, replay

GRID = np.arange(1, 100) / 100
WINDOWS = (40, 20, 10)
PHI_EPS = 1e-3


class NoData(ValueError):
    pass


class DegenerateBound(ValueError):
    pass


@dataclass(frozen=True)
class HistoryKey:
    bucket: str
    bid: int | None = None     # best YES bid (cents), None when pooled over book states
    ask: int | None = None     # best YES ask

    def __str__(self) -> str:
        if self.bid is None and self.ask is None:
            return self.bucket
        return f"{self.bucket}|bid={self.bid or '-'}|ask={self.ask or '-'}"


def bucket_labels(windows: Sequence[int] = WINDOWS) -> list[str]:
    w = sorted(windows, reverse=True)
    return [f"ge{w[0]}"] + [f"{b}-{a}" for a, b in zip(w, w[1:])] + [f"lt{w[-1]}"]


def time_bucket(t: float, days: int, windows: Sequence[int] = WINDOWS) -> str:
    """Label by days left before resolution: ``ge40``, ``20-40``, ``10-20``, ``lt10``."""
    left = (1.0 - t) * days
    w = sorted(windows, reverse=True)
    labels = bucket_labels(w)
    for k, edge in enumerate(w):
        if left >= edge - 1e-9:
            return labels[k]
    return labels[-1]


@dataclass(frozen=True)
class OrderObservation:
    order_id: int
    trader_id: Hashable
    contract_id: Hashable
    side: Side
    price: int                 # own-side cents
    qty: int
    market: bool
    t: float
    bids: tuple[Level, ...]    # own-side view of the book just before submission
    asks: tuple[Level, ...]
    key: HistoryKey
    day: int

    @property
    def view(self) -> SideView:
        return SideView(self.side, self.bids, self.asks, self.qty, self.t)

    @property
    def ask(self) -> int | None:
        return self.asks[0][0] if self.asks else None


def extract_observations(events: Sequence[OrderEvent], days: int = 365,
                         windows: Sequence[int] = WINDOWS,
                         trader_ids: Iterable[Hashable] | None = None,
                         include_closing: bool = False,
                         by_book: bool = True) -> list[OrderObservation]:
    """One observation per accepted buy order, with the book it faced."""
    keep = None if trader_ids is None else set(trader_ids)
    out: list[OrderObservation] = []

    def grab(ex, ev):
        if ev.kind is not EventKind.SUBMIT:
            return
        p = ev.payload
        if (keep is not None and p["trader_id"] not in keep) or (p["closing"] and not include_closing):
            return
        snap = ex.snapshot_top5(p["contract_id"], ev.time)
        side = Side(p["side"])
        price = p["price"]
        if p["market"]:
            price = snap.best_ask(side)
        bucket = time_bucket(ev.time, days, windows)
        key = (HistoryKey(bucket, snap.best_bid(Side.YES), snap.best_ask(Side.YES))
               if by_book else HistoryKey(bucket))
        out.append(OrderObservation(
            ex._next_order_id, p["trader_id"], p["contract_id"], side, price, p["qty"],
            bool(p["market"]), ev.time, snap.bids(side), snap.asks(side), key,
            min(int(ev.time * days), days - 1)))

    replay(events, snapshots=False, before=grab)
    return out


def exclusion_filter(observations: Sequence[OrderObservation], cutoff: float
                     ) -> list[OrderObservation]:
    """Drop observations after ``1 - cutoff`` (the final stretch before resolution).

    A cutoff covering the whole horizon drops everything.
    """
    if cutoff >= 1.0:
        return []
    return [o for o in observations if o.t <= 1.0 - cutoff + 1e-12]


def execution_training_set(events: Sequence[OrderEvent]) -> tuple[np.ndarray, np.ndarray]:
    """Features and fill labels for every non-marketable limit buy.

    Label 1 means the order traded at least one share before it left the book.
    """
    obs = [o for o in extract_observations(events, include_closing=True, by_book=False)
           if not o.market and (o.ask is None or o.price < o.ask)]
    filled = set()
    for e in events:
        if e.kind is EventKind.EXECUTE:
            filled.add(e.payload["yes_order_id"])
            filled.add(e.payload["no_order_id"])
    if not obs:
        return np.empty((0, 22)), np.empty(0)
    X = np.vstack([book_features(o.view, [o.price]) for o in obs])
    y = np.array([float(o.order_id in filled) for o in obs])
    return X, y


# -- per-order bounds ---------------------------------------------------------

def sweep(asks: Sequence[Level], x: int) -> tuple[int, int]:
    """Cost (cents) and quantity of buying up to ``x`` shares through the ask ladder."""
    cost = filled = 0
    for price, qty in asks:
        take = min(qty, x - filled)
        cost += price * take
        filled += take
        if filled == x:
            break
    return cost, filled


def order_upper_belief(price: int, asks: Sequence[Level], qty: int, phi: float) -> float:
    """Largest belief at which the limit order at ``price`` beats filling ``qty`` now.

    With enough depth at the best ask m this is (m - phi p) / (1 - phi).
    Otherwise the market alternative walks up the visible ladder. Result in
    dollars, clamped to [price, 1].
    """
    if not 0.0 <= phi < 1.0 - PHI_EPS:
        raise DegenerateBound(f"execution probability {phi} too close to 1")
    p = price / PAYOUT
    if not asks:
        return 1.0
    cost, filled = sweep(asks, qty)
    denom = filled - phi * qty
    if denom <= 0:
        return 1.0
    b = (cost / PAYOUT - phi * p * qty) / denom
    return float(min(max(b, p), 1.0))


def _tick_floor(x: float) -> float:
    return math.floor(x * PAYOUT + 1e-9) / PAYOUT


def _tick_ceil(x: float) -> float:
    return math.ceil(x * PAYOUT - 1e-9) / PAYOUT


def order_interval(obs: OrderObservation, phi: ExecProb | Callable | None
                   ) -> tuple[float, float]:
    """Belief interval [L, U] on the YES scale, rounded outward to ticks.

    Limit orders: L = price, U = order_upper_belief. Market orders: L = ask,
    U = 1. NO-side intervals are reflected through 1 - q.
    """
    if obs.market:
        lo, hi = obs.price / PAYOUT, 1.0
    else:
        lo = obs.price / PAYOUT
        if obs.ask is None or obs.price >= obs.ask:   # marketable limit: no cap
            hi = 1.0
        else:
            f = float(phi(np.array([obs.price]), obs.view)[0])
            hi = order_upper_belief(obs.price, obs.asks, obs.qty, f)
    if obs.side is Side.NO:
        lo, hi = 1.0 - hi, 1.0 - lo
    return _tick_floor(lo), _tick_ceil(hi)


@dataclass(frozen=True)
class Intervals:
    lo: np.ndarray
    hi: np.ndarray
    day: np.ndarray
    keys: list[HistoryKey]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.lo)

    def subset(self, mask) -> "Intervals":
        mask = np.asarray(mask, bool)
        return Intervals(self.lo[mask], self.hi[mask], self.day[mask],
                         [k for k, m in zip(self.keys, mask) if m], self.dropped)


def order_intervals(observations: Sequence[OrderObservation], phi) -> Intervals:
    """Intervals for every usable observation; degenerate ones are counted and dropped."""
    lo, hi, day, keys = [], [], [], []
    dropped = 0
    for o in observations:
        try:
            a, b = order_interval(o, phi)
        except DegenerateBound:
            dropped += 1
            continue
        lo.append(a)
        hi.append(b)
        day.append(o.day)
        keys.append(o.key)
    return Intervals(np.array(lo, float), np.array(hi, float), np.array(day, int), keys, dropped)


# -- CDF bounds ----------------------------------------------------------------

def ecdf(values, grid=GRID) -> np.ndarray:
    v = np.sort(np.asarray(values, float))
    if not len(v):
        raise NoData("no observations at this history")
    return np.searchsorted(v, np.asarray(grid) + 1e-9, side="right") / len(v)


def upper_cdf_bound(lower_beliefs, grid=GRID) -> np.ndarray:
    """Share of orders whose belief floor is at most s; dominates the belief CDF."""
    return ecdf(lower_beliefs, grid)


def lower_cdf_bound(upper_beliefs, grid=GRID) -> np.ndarray:
    """Share of orders whose belief cap is at most s; dominated by the belief CDF."""
    return ecdf(upper_beliefs, grid)


def isotonize(values) -> np.ndarray:
    """Least-squares nondecreasing fit (pool adjacent violators)."""
    y = np.asarray(values, float)
    means, weights, sizes = [], [], []
    for v in y:
        means.append(v)
        weights.append(1.0)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w = weights[-2] + weights[-1]
            m = (means[-2] * weights[-2] + means[-1] * weights[-1]) / w
            n = sizes[-2] + sizes[-1]
            del means[-1], weights[-1], sizes[-1]
            means[-1], weights[-1], sizes[-1] = m, w, n
    return np.repeat(means, sizes)


def order_bounds(lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Isotonize both curves, clip to [0, 1], then enforce lower <= upper pointwise."""
    lo = np.clip(isotonize(lower), 0.0, 1.0)
    hi = np.clip(isotonize(upper), 0.0, 1.0)
    return np.minimum(lo, hi), np.maximum(lo, hi)


def mean_belief_interval(lower_cdf, upper_cdf) -> tuple[float, float]:
    """Mean-belief interval from tick-grid CDF bounds.

    The smallest mean puts the mass below the first tick at 0; the largest
    puts the mass above the last tick at 1.
    """
    lower_cdf = np.asarray(lower_cdf, float)
    upper_cdf = np.asarray(upper_cdf, float)
    step = 1.0 / PAYOUT
    lo = step * ((1.0 - upper_cdf[0]) + np.sum(1.0 - upper_cdf))
    hi = step * (1.0 + np.sum(1.0 - lower_cdf))
    return float(lo), float(hi)


def bound_curves(lo_vals, hi_vals, grid=GRID) -> tuple[np.ndarray, np.ndarray]:
    """Isotonized (lower_cdf, upper_cdf) from belief caps and floors."""
    lower, upper = order_bounds(lower_cdf_bound(hi_vals, grid), upper_cdf_bound(lo_vals, grid))
    return lower, upper


@dataclass(frozen=True)
class BeliefBoundEstimate:
    key: str
    grid: np.ndarray
    lower_cdf: np.ndarray
    upper_cdf: np.ndarray
    n_orders: int
    mean_lo: float
    mean_hi: float
    level: float | None = None
    lower_band: tuple[np.ndarray, np.ndarray] | None = None
    upper_band: tuple[np.ndarray, np.ndarray] | None = None
    mean_ci: tuple[float, float] | None = None   # (lower end for mean_lo, upper end for mean_hi)
    replicates: int = 0
    failures: int = 0


def estimate(iv: Intervals, key: str = "all", level: float | None = 0.95,
             b: int | None = None, q: int = 500, rng=None, beta: float = 0.5,
             jobs: int = 1) -> BeliefBoundEstimate:
    """CDF sandwich and mean interval, with day-block subsampling bands when ``level`` is set."""
    if len(iv) == 0:
        raise NoData(f"no usable orders for key {key!r}")
    lower, upper = bound_curves(iv.lo, iv.hi)
    mlo, mhi = mean_belief_interval(lower, upper)
    if level is None:
        return BeliefBoundEstimate(key, GRID, lower, upper, len(iv), mlo, mhi)
    days = np.unique(iv.day)
    blocks = [np.flatnonzero(iv.day == d) for d in days]
    n_blocks = len(blocks)
    if n_blocks < 2:
        return BeliefBoundEstimate(key, GRID, lower, upper, len(iv), mlo, mhi)
    b = b if b is not None else max(1, n_blocks // 4)

    def stat(chosen):
        idx = np.concatenate(chosen)
        lw, up = bound_curves(iv.lo[idx], iv.hi[idx])
        return np.concatenate([lw, up, mean_belief_interval(lw, up)])

    res: SubsampleResult = subsample(blocks, stat, b=b, q=q, rng=rng, beta=beta, jobs=jobs)
    band_lo, band_hi = confidence_interval(res, level, pointwise=True)
    k = len(GRID)
    clip = lambda a: np.clip(a, 0.0, 1.0)
    return BeliefBoundEstimate(
        key, GRID, lower, upper, len(iv), mlo, mhi, level,
        (clip(band_lo[:k]), clip(band_hi[:k])), (clip(band_lo[k:2 * k]), clip(band_hi[k:2 * k])),
        (float(max(band_lo[-2], 0.0)), float(min(band_hi[-1], 1.0))),
        len(res.replicates), res.failures)


def estimate_by_key(iv: Intervals, group: str = "bucket", min_orders: int = 1, **kw
                    ) -> dict[str, BeliefBoundEstimate]:
    """Estimates for all orders pooled plus one per history key.

    ``group`` is ``bucket`` (time bucket only), ``book`` (bucket and best
    bid/ask) or ``none`` (pooled only).
    """
    out = {"all": estimate(iv, "all", **kw)}
    if group == "none":
        return out
    if group not in ("bucket", "book"):
        raise ValueError("group must be bucket, book or none")
    names = [k.bucket if group == "bucket" else str(k) for k in iv.keys]
    for name in sorted(set(names)):
        mask = np.array([n == name for n in names])
        if mask.sum() >= min_orders:
            out[name] = estimate(iv.subset(mask), name, **kw)
    return out
