"""Per-trader portfolios and descriptive statistics rebuilt from an event log.

Accounting uses average cost per (contract, side) leg with exact rational
arithmetic, so trading plus prediction profit equals each trader's cash
change to the cent.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

from .lob import PAYOUT, EventKind, OrderEvent, Side

Leg = tuple[Hashable, Side]


@dataclass
class Holding:
    qty: int = 0
    cost: Fraction = Fraction(0)   # total cost basis of the shares still held, cents

    @property
    def avg_cost(self) -> Fraction:
        return self.cost / self.qty if self.qty else Fraction(0)


@dataclass
class Portfolio:
    trader_id: Hashable
    legs: dict[Leg, Holding] = field(default_factory=dict)
    cash: int = 0                    # cents; purchases negative, sales and payouts positive
    trading: Fraction = Fraction(0)  # realized P&L on closing trades
    prediction: Fraction = Fraction(0)
    n_exec: int = 0
    first_order_time: float | None = None
    settled: bool = False
    path: list[tuple[float, Leg]] = field(default_factory=list)  # position label per execution

    def leg(self, key: Leg) -> Holding:
        return self.legs.setdefault(key, Holding())

    @property
    def terminal_qty(self) -> dict[Leg, int]:
        return {k: h.qty for k, h in self.legs.items() if h.qty}

    @property
    def is_day_trader(self) -> bool:
        return self.n_exec > 0 and not self.terminal_qty

    @property
    def total(self) -> Fraction:
        return self.trading + self.prediction


def contract_order(events: Sequence[OrderEvent]) -> list[Hashable]:
    out = []
    for e in events:
        c = e.payload.get("contract_id") if e.kind in (EventKind.LIST, EventKind.SUBMIT) else None
        if c is not None and c not in out:
            out.append(c)
    return out


def build_portfolios(events: Sequence[OrderEvent], until: float | None = None
                     ) -> dict[Hashable, Portfolio]:
    """Replay executions and settlements into average-cost portfolios.

    With ``until`` set, only events at or before that time are applied and
    settlement profits stay unrealized.
    """
    ports: dict[Hashable, Portfolio] = {}
    closing: dict[int, bool] = {}
    index = {c: i for i, c in enumerate(contract_order(events))}

    def port(tid) -> Portfolio:
        p = ports.get(tid)
        if p is None:
            p = ports[tid] = Portfolio(tid)
        return p

    for e in events:
        if until is not None and e.time > until:
            break
        p = e.payload
        if e.kind is EventKind.SUBMIT:
            closing[p["order_id"]] = p["closing"]
            pf = port(p["trader_id"])
            if pf.first_order_time is None:
                pf.first_order_time = e.time
        elif e.kind is EventKind.EXECUTE:
            c, n = p["contract_id"], p["qty"]
            changes: dict[Hashable, dict[Leg, int]] = defaultdict(dict)
            for tid, oid, side, price in (
                    (p["yes_trader"], p["yes_order_id"], Side.YES, p["price_yes"]),
                    (p["no_trader"], p["no_order_id"], Side.NO, PAYOUT - p["price_yes"])):
                pf = port(tid)
                if closing[oid]:
                    held = pf.leg((c, side.other))
                    basis = held.avg_cost * n
                    pf.cash += (PAYOUT - price) * n
                    pf.trading += (PAYOUT - price) * n - basis
                    held.cost -= basis
                    held.qty -= n
                    changes[tid][(c, side.other)] = changes[tid].get((c, side.other), 0) - n
                else:
                    h = pf.leg((c, side))
                    pf.cash -= price * n
                    h.qty += n
                    h.cost += price * n
                    changes[tid][(c, side)] = changes[tid].get((c, side), 0) + n
            for tid, ch in changes.items():
                pf = ports[tid]
                pf.n_exec += 1
                # largest absolute change; ties go to the lower contract index, YES first
                label = min(ch, key=lambda k: (-abs(ch[k]), index.get(k[0], 0), k[1] is Side.NO))
                pf.path.append((e.time, label))
        elif e.kind is EventKind.SETTLE:
            c, winner = p["contract_id"], Side(p["winner"])
            for pf in ports.values():
                for (lc, side), h in pf.legs.items():
                    if lc != c or not h.qty:
                        continue
                    payout = PAYOUT * h.qty if side is winner else 0
                    pf.cash += payout
                    pf.prediction += payout - h.cost
                    pf.settled = True
    return ports


@dataclass(frozen=True)
class ProfitRow:
    trader_id: Hashable
    trading: Fraction
    prediction: Fraction
    is_day_trader: bool
    n_exec: int
    entry_time: float | None

    @property
    def total(self) -> Fraction:
        return self.trading + self.prediction


def profit_decomposition(portfolios: dict[Hashable, Portfolio]) -> list[ProfitRow]:
    """Trading vs. prediction profit per trader that executed at least once."""
    rows = []
    for tid, pf in portfolios.items():
        if pf.n_exec == 0:
            continue
        if pf.terminal_qty and not pf.settled:
            raise ValueError(f"trader {tid!r} holds unsettled shares; settle the log first")
        rows.append(ProfitRow(tid, pf.trading, pf.prediction, pf.is_day_trader, pf.n_exec,
                              pf.first_order_time))
    return rows


# -- position dynamics --------------------------------------------------------

def position_states(events: Sequence[OrderEvent]) -> list[Leg]:
    return [(c, s) for c in contract_order(events) for s in (Side.YES, Side.NO)]


def state_label(leg: Leg) -> str:
    return f"{leg[0]}-{leg[1].value}"


@dataclass(frozen=True)
class TransitionMatrix:
    states: tuple[Leg, ...]
    matrix: np.ndarray        # rows averaged over the traders that visited them
    visits: np.ndarray        # number of traders contributing to each row
    counts: np.ndarray        # pooled raw transition counts

    @property
    def labels(self) -> list[str]:
        return [state_label(s) for s in self.states]

    def diagonal_mass(self) -> float:
        """Mean diagonal entry over visited rows (nan when nothing was visited)."""
        rows = self.visits > 0
        return float(np.mean(np.diag(self.matrix)[rows])) if rows.any() else math.nan


def _average_rows(per_trader: Iterable[np.ndarray], k: int) -> tuple[np.ndarray, np.ndarray]:
    total = np.zeros((k, k))
    visits = np.zeros(k, dtype=int)
    for counts in per_trader:
        sums = counts.sum(axis=1)
        rows = sums > 0
        total[rows] += counts[rows] / sums[rows, None]
        visits += rows
    avg = np.zeros((k, k))
    seen = visits > 0
    avg[seen] = total[seen] / visits[seen, None]
    return avg, visits


def transition_matrix(events: Sequence[OrderEvent], window_end: float = 1.0,
                      lookback: float | None = None, trader_ids: Iterable[Hashable] | None = None,
                      portfolios: dict[Hashable, Portfolio] | None = None) -> TransitionMatrix:
    """Average row-stochastic matrix of position changes between consecutive executions.

    Only executions with time in ``(window_end - lookback, window_end]`` count;
    without ``lookback`` every execution up to ``window_end`` does.
    """
    ports = portfolios if portfolios is not None else build_portfolios(events)
    states = position_states(events)
    idx = {s: i for i, s in enumerate(states)}
    k = len(states)
    keep = None if trader_ids is None else set(trader_ids)
    mats = []
    pooled = np.zeros((k, k), dtype=int)
    lo = -math.inf if lookback is None else window_end - lookback
    for tid, pf in ports.items():
        if keep is not None and tid not in keep:
            continue
        path = [leg for t, leg in pf.path if lo < t <= window_end]
        if len(path) < 2:
            continue
        m = np.zeros((k, k), dtype=int)
        for a, b in zip(path, path[1:]):
            m[idx[a], idx[b]] += 1
        pooled += m
        mats.append(m)
    avg, visits = _average_rows(mats, k)
    return TransitionMatrix(tuple(states), avg, visits, pooled)


def open_orders_at(events: Sequence[OrderEvent], t: float) -> dict[int, dict[str, Any]]:
    """SUBMIT payloads of orders still resting after all events at or before ``t``."""
    open_: dict[int, dict[str, Any]] = {}
    remaining: dict[int, int] = {}
    for e in events:
        if e.time > t:
            break
        p = e.payload
        if e.kind is EventKind.SUBMIT:
            open_[p["order_id"]] = p
            remaining[p["order_id"]] = p["qty"]
        elif e.kind is EventKind.EXECUTE:
            for oid in (p["yes_order_id"], p["no_order_id"]):
                remaining[oid] -= p["qty"]
                if remaining[oid] == 0:
                    open_.pop(oid, None)
        elif e.kind in (EventKind.CANCEL, EventKind.EXPIRE):
            open_.pop(p["order_id"], None)
    return open_


def open_order_shift(events: Sequence[OrderEvent], t: float, kind: str = "buy",
                     trader_ids: Iterable[Hashable] | None = None) -> TransitionMatrix:
    """Current position (last execution at or before ``t``) against open-order targets.

    A buy order targets the leg it buys; a sell order (closing) targets the
    leg it sells. ``kind`` selects buy, sell or all orders.
    """
    if kind not in ("buy", "sell", "all"):
        raise ValueError("kind must be buy, sell or all")
    ports = build_portfolios(events, until=t)
    states = position_states(events)
    idx = {s: i for i, s in enumerate(states)}
    k = len(states)
    keep = None if trader_ids is None else set(trader_ids)
    per_trader: dict[Hashable, np.ndarray] = {}
    for p in open_orders_at(events, t).values():
        tid = p["trader_id"]
        if keep is not None and tid not in keep:
            continue
        if (kind == "buy" and p["closing"]) or (kind == "sell" and not p["closing"]):
            continue
        pf = ports.get(tid)
        if pf is None or not pf.path:
            continue
        side = Side(p["side"])
        target = (p["contract_id"], side.other if p["closing"] else side)
        m = per_trader.setdefault(tid, np.zeros((k, k), dtype=int))
        m[idx[pf.path[-1][1]], idx[target]] += 1
    pooled = sum(per_trader.values(), np.zeros((k, k), dtype=int))
    avg, visits = _average_rows(per_trader.values(), k)
    return TransitionMatrix(tuple(states), avg, visits, pooled)


def max_column_share(tm: TransitionMatrix) -> float:
    """Largest share of all counted entries that falls in one column (0 when empty)."""
    total = tm.counts.sum()
    return float(tm.counts.sum(axis=0).max() / total) if total else 0.0


# -- distributions and series -------------------------------------------------

def profits_by_entry_time(rows: Sequence[ProfitRow], bucket_edges: Sequence[float]
                          ) -> list[np.ndarray]:
    """Total profit (cents) per trader grouped by entry time into ``[e_k, e_{k+1})`` buckets.

    The last bucket is closed on the right.
    """
    edges = np.asarray(bucket_edges, float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bucket_edges must be strictly increasing with at least two values")
    out: list[list[float]] = [[] for _ in range(len(edges) - 1)]
    for r in rows:
        if r.entry_time is None or not edges[0] <= r.entry_time <= edges[-1]:
            continue
        k = min(int(np.searchsorted(edges, r.entry_time, side="right")) - 1, len(out) - 1)
        out[k].append(float(r.total))
    return [np.array(v) for v in out]


def day_of(t: float, days: int) -> int:
    return min(max(int(math.floor(t * days)), 0), days - 1)


SERIES_FIELDS = ("day", "avg_price", "volume", "trades", "active_traders", "open_yes", "open_no")


def series(events: Sequence[OrderEvent], days: int = 365, contract: Hashable | None = None
           ) -> list[dict[str, Any]]:
    """Daily rows: volume-weighted YES price (dollars, nan without trades), volume,
    trade count, distinct active traders, and open-order volume per side at day end."""
    vol = np.zeros(days, dtype=int)
    notional = np.zeros(days, dtype=int)
    trades = np.zeros(days, dtype=int)
    active: list[set] = [set() for _ in range(days)]
    open_end = np.zeros((days, 2), dtype=int)
    remaining: dict[int, tuple[int, int]] = {}   # order_id -> (side index, qty)
    level = [0, 0]
    day_cursor = 0

    def roll_to(d):
        nonlocal day_cursor
        while day_cursor < d:
            open_end[day_cursor] = level
            day_cursor += 1

    for e in events:
        p = e.payload
        if contract is not None and p.get("contract_id", contract) != contract:
            continue
        if e.kind in (EventKind.CANCEL, EventKind.EXPIRE) and p["order_id"] not in remaining:
            continue
        d = day_of(e.time, days)
        roll_to(d)
        if e.kind is EventKind.SUBMIT:
            s = 0 if p["side"] == Side.YES.value else 1
            remaining[p["order_id"]] = (s, p["qty"])
            level[s] += p["qty"]
            active[d].add(p["trader_id"])
        elif e.kind is EventKind.EXECUTE:
            n = p["qty"]
            vol[d] += n
            notional[d] += p["price_yes"] * n
            trades[d] += 1
            active[d].update((p["yes_trader"], p["no_trader"]))
            for oid in (p["yes_order_id"], p["no_order_id"]):
                s, q = remaining[oid]
                remaining[oid] = (s, q - n)
                level[s] -= n
        elif e.kind in (EventKind.CANCEL, EventKind.EXPIRE):
            s, q = remaining.pop(p["order_id"])
            level[s] -= q
    roll_to(days)
    rows = []
    for d in range(days):
        price = notional[d] / vol[d] / PAYOUT if vol[d] else math.nan
        rows.append({"day": d, "avg_price": price, "volume": int(vol[d]),
                     "trades": int(trades[d]), "active_traders": len(active[d]),
                     "open_yes": int(open_end[d, 0]), "open_no": int(open_end[d, 1])})
    return rows


def _summ(name: str, x) -> dict[str, Any]:
    x = np.asarray(x, float)
    x = x[~np.isnan(x)]
    if not len(x):
        return {"variable": name, "n": 0, "mean": math.nan, "sd": math.nan,
                "min": math.nan, "max": math.nan}
    return {"variable": name, "n": len(x), "mean": float(x.mean()),
            "sd": float(x.std(ddof=1)) if len(x) > 1 else math.nan,
            "min": float(x.min()), "max": float(x.max())}


SUMMARY_FIELDS = ("variable", "n", "mean", "sd", "min", "max")


def market_summary(rows: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
    """Summary statistics of the daily series (one row per variable)."""
    return [_summ(name, [r[key] for r in rows]) for name, key in (
        ("average_daily_price", "avg_price"), ("daily_volume", "volume"),
        ("daily_trades", "trades"), ("active_traders", "active_traders"),
        ("open_yes", "open_yes"), ("open_no", "open_no"))]


def profit_summary(rows: Sequence[ProfitRow]) -> list[dict[str, Any]]:
    """Profit summary (dollars) for all traders, day traders and holders."""
    out = []
    groups = (("all", rows), ("day_traders", [r for r in rows if r.is_day_trader]),
              ("holders", [r for r in rows if not r.is_day_trader]))
    for group, rs in groups:
        for name, get in (("trading_profit", lambda r: r.trading),
                          ("prediction_profit", lambda r: r.prediction),
                          ("total_profit", lambda r: r.total)):
            out.append({"group": group, **_summ(name, [float(get(r)) / PAYOUT for r in rs])})
    return out
