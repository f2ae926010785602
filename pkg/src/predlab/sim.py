"""Agent-based generator of market histories with known ground truth.

Informed traders hold a fixed private belief and choose, myopically, between a
market order and the best limit price under an execution-probability oracle.
Noise traders submit uniformly priced limit orders in a fixed band. Wake-ups
(entry plus Poisson re-trade arrivals) are merged onto one clock on [0, 1].
"""
from __future__ import annotations

import bisect
import dataclasses
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .execprob import ExecProb, SideView, parse_exec_prob
from .lob import (
    MAX_TICK, PAYOUT, EventKind, Exchange, NoLiquidity, OrderEvent, Side, replay,
)


class TraderKind(str, Enum):
    INFORMED = "INFORMED"
    NOISE = "NOISE"


@dataclass(frozen=True)
class Dist:
    """Named distribution parsed from ``family:param:param``."""

    family: str
    params: tuple[float, ...] = ()

    @classmethod
    def parse(cls, text: str | float | int) -> "Dist":
        if isinstance(text, (int, float)):
            return cls("point", (float(text),))
        family, *params = str(text).split(":")
        return cls(family.strip().lower(), tuple(float(p) for p in params))

    def __str__(self) -> str:
        return ":".join([self.family, *(f"{p:g}" for p in self.params)])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        f, p = self.family, self.params
        if f in ("point", "const"):
            return np.full(n, p[0])
        if f == "beta":
            return rng.beta(p[0], p[1], size=n)
        if f == "uniform":
            return rng.uniform(p[0], p[1], size=n)
        if f == "randint":
            return rng.integers(int(p[0]), int(p[1]) + 1, size=n).astype(float)
        if f == "geometric":
            return rng.geometric(p[0], size=n).astype(float)
        raise ValueError(f"unknown distribution family {f!r}")

    def cdf(self, x) -> np.ndarray:
        from scipy import stats
        x = np.asarray(x, float)
        f, p = self.family, self.params
        if f in ("point", "const"):
            return (x >= p[0]).astype(float)
        if f == "beta":
            return stats.beta.cdf(x, p[0], p[1])
        if f == "uniform":
            return stats.uniform.cdf(x, p[0], p[1] - p[0])
        raise ValueError(f"no closed-form CDF for {f!r}")

    def mean(self) -> float:
        f, p = self.family, self.params
        if f in ("point", "const"):
            return p[0]
        if f == "beta":
            return p[0] / (p[0] + p[1])
        if f in ("uniform", "randint"):
            return (p[0] + p[1]) / 2
        if f == "geometric":
            return 1 / p[0]
        raise ValueError(f"unknown distribution family {f!r}")

    def support(self) -> tuple[float, float]:
        f, p = self.family, self.params
        if f in ("point", "const"):
            return p[0], p[0]
        if f == "beta":
            return 0.0, 1.0
        if f in ("uniform", "randint"):
            return p[0], p[1]
        if f == "geometric":
            return 1.0, math.inf
        raise ValueError(f"unknown distribution family {f!r}")


@dataclass(frozen=True)
class SimConfig:
    true_state_prob: float = 0.5
    n_informed: int = 200
    n_noise: int = 100
    n_contracts: int = 1
    outcome_probs: str | None = None      # comma list for linked markets; uniform if unset
    belief: str = "beta:2:2"
    entry: str = "uniform:0:1"
    hazard: float = 0.0                   # Poisson re-trade rate per unit horizon
    noise_lo: int = 1
    noise_hi: int = 99
    noise_side: str = "random"            # YES | NO | random (fixed per trader)
    noise_sell_prob: float = 0.0          # chance a noise wake-up sells held inventory
    size: str = "const:1"
    informed_max_price: int = MAX_TICK
    exec_prob: str = "logistic:0:10"
    updating: str = "none"                # none | consensus
    consensus_contract: int = 0
    consensus_belief: float = 0.9
    days: int = 365
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.true_state_prob < 1.0:
            raise ValueError("true_state_prob must lie in (0, 1)")
        if self.n_informed < 0 or self.n_noise < 0:
            raise ValueError("trader counts must be non-negative")
        if self.n_contracts < 1:
            raise ValueError("need at least one contract")
        if self.hazard < 0:
            raise ValueError("hazard must be >= 0")
        if not (1 <= self.noise_lo <= self.noise_hi <= MAX_TICK):
            raise ValueError("noise band must satisfy 1 <= lo <= hi <= 99")
        if self.noise_side not in ("YES", "NO", "random"):
            raise ValueError("noise_side must be YES, NO or random")
        if not 0.0 <= self.noise_sell_prob <= 1.0:
            raise ValueError("noise_sell_prob must lie in [0, 1]")
        if not 1 <= self.informed_max_price <= MAX_TICK:
            raise ValueError("informed_max_price must be a valid tick")
        if self.updating not in ("none", "consensus"):
            raise ValueError("updating must be none or consensus")
        if not 0 <= self.consensus_contract < self.n_contracts:
            raise ValueError("consensus_contract out of range")
        if not 0.0 < self.consensus_belief < 1.0:
            raise ValueError("consensus_belief must lie in (0, 1)")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        lo, hi = self.belief_dist.support()
        if lo < 0 or hi > 1 or (self.belief_dist.family == "point" and not 0 < lo < 1):
            raise ValueError("beliefs must lie in (0, 1)")
        elo, ehi = self.entry_dist.support()
        if elo < 0 or ehi > 1:
            raise ValueError("entry times must lie in [0, 1]")
        if self.size_dist.support()[0] < 1:
            raise ValueError("order sizes must be >= 1")
        self.parsed_outcome_probs()
        if not self.exec_prob.startswith("model:"):
            parse_exec_prob(self.exec_prob)

    @property
    def belief_dist(self) -> Dist:
        return Dist.parse(self.belief)

    @property
    def entry_dist(self) -> Dist:
        return Dist.parse(self.entry)

    @property
    def size_dist(self) -> Dist:
        return Dist.parse(self.size)

    @property
    def contracts(self) -> list[str]:
        return [f"C{k}" for k in range(self.n_contracts)]

    def parsed_outcome_probs(self) -> np.ndarray:
        k = self.n_contracts
        if k == 1:
            return np.array([self.true_state_prob])
        if not self.outcome_probs:
            return np.full(k, 1.0 / k)
        p = np.array([float(x) for x in str(self.outcome_probs).split(",")])
        if len(p) != k or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("outcome_probs must be K positive numbers summing to 1")
        return p

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "SimConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in values.items():
            typ = names[k].type
            if typ == "int":
                kw[k] = int(v)
            elif typ == "float":
                kw[k] = float(v)
            elif v is None:
                kw[k] = None
            else:
                kw[k] = str(v)
        return cls(**kw)

    def to_mapping(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TraderSpec:
    trader_id: str
    kind: TraderKind
    belief: float | None      # probability that the trader's contract resolves YES
    entry_time: float
    contract: str
    side: Side | None = None  # noise traders' fixed side


@dataclass(frozen=True)
class Decision:
    side: Side
    price: int          # own-side cents
    qty: int
    market: bool = False
    closing: bool = False
    payoff: float = math.nan  # expected profit per share under the oracle


@dataclass
class SimResult:
    config: SimConfig
    seed: int
    events: list[OrderEvent]
    traders: list[TraderSpec]
    settlement: dict[str, int]   # contract -> 1 if YES won
    exchange: Exchange = field(repr=False)

    @property
    def truth(self) -> dict[str, TraderSpec]:
        return {t.trader_id: t for t in self.traders}


# -- agents --------------------------------------------------------------------

def draw_population(config: SimConfig, rng: np.random.Generator) -> list[TraderSpec]:
    n = config.n_informed + config.n_noise
    informed = np.zeros(n, dtype=bool)
    informed[:config.n_informed] = True
    rng.shuffle(informed)
    beliefs = config.belief_dist.sample(rng, n)
    entries = np.clip(config.entry_dist.sample(rng, n), 0.0, 1.0)
    contracts = rng.integers(0, config.n_contracts, size=n)
    sides = rng.integers(0, 2, size=n)
    out = []
    width = max(4, len(str(n)))
    for i in range(n):
        kind = TraderKind.INFORMED if informed[i] else TraderKind.NOISE
        if kind is TraderKind.INFORMED:
            belief, side = float(beliefs[i]), None
        else:
            belief = None
            side = Side(config.noise_side) if config.noise_side != "random" else (
                Side.YES if sides[i] else Side.NO)
        out.append(TraderSpec(f"t{i:0{width}d}", kind, belief, float(entries[i]),
                              config.contracts[contracts[i]], side))
    return out


def wake_times(entry: float, hazard: float, rng: np.random.Generator) -> list[float]:
    """Entry time followed by homogeneous Poisson re-trade arrivals before t = 1."""
    extra = rng.poisson(hazard * (1.0 - entry)) if hazard > 0 and entry < 1 else 0
    return [entry] + sorted(rng.uniform(entry, 1.0, size=extra).tolist())


def draw_size(config: SimConfig, rng: np.random.Generator) -> int:
    return max(1, int(config.size_dist.sample(rng, 1)[0]))


def noise_action(trader: TraderSpec, config: SimConfig, rng: np.random.Generator,
                 free_inventory: int = 0) -> Decision:
    """Uniform price on the trader's band and side; occasionally sells held inventory."""
    qty = draw_size(config, rng)
    price = int(rng.integers(config.noise_lo, config.noise_hi + 1))
    if free_inventory > 0 and config.noise_sell_prob > 0 and rng.random() < config.noise_sell_prob:
        # sell the held side at ``price`` by bidding the complement on the other side
        return Decision(trader.side.other, PAYOUT - price, min(qty, free_inventory), closing=True)
    return Decision(trader.side, price, qty)


def informed_action(belief: float, view_or_snapshot, exec_prob: ExecProb, qty: int = 1,
                    max_price: int = MAX_TICK) -> Decision | None:
    """Myopic choice between a market order at the ask and the best limit price.

    Trades YES when belief > 1/2, otherwise NO with belief 1 - q on that
    side. A limit at p < ask earns phi(p) * (q - p); a market order earns
    q - ask. Ties go to the market order; nothing is submitted unless the
    chosen action has strictly positive expected profit.
    """
    side = Side.YES if belief > 0.5 else Side.NO
    q = belief if side is Side.YES else 1.0 - belief
    if isinstance(view_or_snapshot, SideView):
        view = view_or_snapshot
        if view.side is not side:
            raise ValueError("view is for the wrong side")
    else:
        view = SideView.from_snapshot(view_or_snapshot, side, qty)
    ask = view.ask
    top = min(max_price, ask - 1 if ask is not None else MAX_TICK)
    limit_payoff, limit_price = -math.inf, None
    if top >= 1:
        prices = np.arange(1, top + 1)
        payoff = exec_prob(prices, view) * (q - prices / PAYOUT)
        k = int(np.argmax(payoff))
        limit_payoff, limit_price = float(payoff[k]), int(prices[k])
    market_payoff = q - ask / PAYOUT if ask is not None and ask <= max_price else -math.inf
    if market_payoff > 0 and market_payoff >= limit_payoff:
        return Decision(side, ask, qty, market=True, payoff=market_payoff)
    if limit_payoff > 0:
        return Decision(side, limit_price, qty, payoff=limit_payoff)
    return None


# -- driver --------------------------------------------------------------------

def run(config: SimConfig, seed: int | None = None, exec_prob: ExecProb | None = None) -> SimResult:
    seed = config.seed if seed is None else seed
    pop_rng, clock_rng, act_rng, settle_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    phi = exec_prob if exec_prob is not None else parse_exec_prob(config.exec_prob)
    traders = draw_population(config, pop_rng)
    ex = Exchange(config.contracts, t=0.0)

    schedule = []
    for idx, tr in enumerate(traders):
        for j, t in enumerate(wake_times(tr.entry_time, config.hazard, clock_rng)):
            schedule.append((t, idx, j))
    heapq.heapify(schedule)

    beliefs = {tr.trader_id: tr.belief for tr in traders}
    focus = {tr.trader_id: tr.contract for tr in traders}
    consensus = config.contracts[config.consensus_contract]
    open_ids: dict[str, list[int]] = {tr.trader_id: [] for tr in traders}

    while schedule:
        t, idx, j = heapq.heappop(schedule)
        tr = traders[idx]
        tid = tr.trader_id
        if tr.kind is TraderKind.NOISE:
            free = ex.free_inventory(tid, tr.contract, tr.side)
            dec = noise_action(tr, config, act_rng, free)
            contract = tr.contract
        else:
            if config.updating == "consensus" and j > 0:
                beliefs[tid], focus[tid] = config.consensus_belief, consensus
            for oid in open_ids[tid]:
                if ex.orders[oid].is_open:
                    ex.cancel(oid, t)
            open_ids[tid] = []
            contract = focus[tid]
            qty = draw_size(config, act_rng)
            dec = informed_action(beliefs[tid], ex.snapshot_top5(contract, t), phi, qty,
                                  config.informed_max_price)
            if dec is None:
                continue
        oid = ex._next_order_id
        try:
            if dec.market:
                ex.submit_market(tid, contract, dec.side, dec.qty, t, dec.closing)
            else:
                ex.submit_limit(tid, contract, dec.side, dec.price, dec.qty, t, dec.closing)
        except NoLiquidity:
            continue
        open_ids[tid].append(oid)

    probs = config.parsed_outcome_probs()
    if config.n_contracts == 1:
        winners = [int(settle_rng.random() < probs[0])]
    else:
        w = int(settle_rng.choice(config.n_contracts, p=probs))
        winners = [int(k == w) for k in range(config.n_contracts)]
    settlement = {}
    for c, yes_wins in zip(config.contracts, winners):
        ex.settle(c, Side.YES if yes_wins else Side.NO, 1.0)
        settlement[c] = yes_wins
    return SimResult(config, seed, list(ex.events), traders, settlement, ex)


# -- day-trader benchmark ------------------------------------------------------

class NotDayTrader(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkResult:
    trader_id: str
    trading_profit: int      # realized from sales the algorithm made, always >= 0
    settlement_profit: int   # lots never sold, valued at the realized outcome
    lots: int
    sold: int

    @property
    def total(self) -> int:
        return self.trading_profit + self.settlement_profit


def _order_meta(events: Sequence[OrderEvent]) -> dict[int, dict]:
    return {e.payload["order_id"]: e.payload for e in events if e.kind is EventKind.SUBMIT}


def subject_lots(events: Sequence[OrderEvent], subject) -> tuple[list[tuple], dict]:
    """Buy executions of ``subject`` as (seq, contract, side, unit cost, qty), plus net holdings."""
    meta = _order_meta(events)
    lots, net = [], {}
    seen = False
    for e in events:
        if e.kind is not EventKind.EXECUTE:
            if e.kind is EventKind.SUBMIT and e.payload["trader_id"] == subject:
                seen = True
            continue
        p = e.payload
        for role, side, unit in (("yes", Side.YES, p["price_yes"]),
                                 ("no", Side.NO, PAYOUT - p["price_yes"])):
            if p[f"{role}_trader"] != subject:
                continue
            seen = True
            c = p["contract_id"]
            if meta[p[f"{role}_order_id"]]["closing"]:
                key = (c, side.other)
                net[key] = net.get(key, 0) - p["qty"]
            else:
                lots.append((e.seq, c, side, unit, p["qty"]))
                net[(c, side)] = net.get((c, side), 0) + p["qty"]
    if not seen:
        raise KeyError(f"trader {subject!r} not found in log")
    return lots, net


def day_trader_benchmark(events: Sequence[OrderEvent], subject,
                         snapshots: Sequence | None = None) -> BenchmarkResult:
    """Copy the subject's buys, then sell each lot into the first book that pays a profit.

    A lot of ``n`` shares bought at ``c`` is sold at the first later book
    state whose bids above ``c`` on that side can absorb all ``n`` shares,
    walking levels best first. The algorithm is a price taker with no
    market impact. Lots never sold are valued at settlement.
    """
    lots, net = subject_lots(events, subject)
    if any(v != 0 for v in net.values()):
        raise NotDayTrader(f"trader {subject!r} ends with nonzero holdings")
    if snapshots is None:
        _, snapshots = replay(events)
    by_contract: dict[Any, tuple[list[int], list]] = {}
    for s in snapshots:
        seqs, snaps = by_contract.setdefault(s.contract_id, ([], []))
        seqs.append(s.seq)
        snaps.append(s)
    winners = {e.payload["contract_id"]: Side(e.payload["winner"])
               for e in events if e.kind is EventKind.SETTLE}

    trading = settlement = sold = 0
    for seq, c, side, cost, qty in lots:
        seqs, snaps = by_contract.get(c, ([], []))
        done = False
        for snap in snaps[bisect.bisect_left(seqs, seq):]:
            levels = [(p, q) for p, q in snap.bids(side) if p > cost]
            if sum(q for _, q in levels) < qty:
                continue
            left, proceeds = qty, 0
            for p, q in levels:
                take = min(q, left)
                proceeds += p * take
                left -= take
                if not left:
                    break
            trading += proceeds - cost * qty
            sold += 1
            done = True
            break
        if not done:
            payout = PAYOUT * qty if winners.get(c) is side else 0
            settlement += payout - cost * qty
    return BenchmarkResult(subject, trading, settlement, len(lots), sold)
