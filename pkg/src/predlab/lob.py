"""Continuous double auction for paired binary contracts.

Every resting order is a bid on one side of a contract. A YES bid at ``p`` and
a NO bid at ``q`` cross when ``p + q >= 100``; the trade executes on the resting
order's terms. A holder of YES who wants to sell submits a NO bid flagged
``closing``: when it fills, the holder's YES share and the new NO share
annihilate, so one uniform two-sided bid book covers buying and selling.

Prices are integer cents in [1, 99]. Quantities are integer shares.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Hashable, Iterable, Sequence

MIN_TICK = 1
MAX_TICK = 99
PAYOUT = 100
LADDER_DEPTH = 5


class Side(str, Enum):
    YES = "YES"
    NO = "NO"

    @property
    def other(self) -> "Side":
        return Side.NO if self is Side.YES else Side.YES


class TradeKind(str, Enum):
    MINT = "MINT"          # two new buyers, a fresh share pair is escrowed
    TRANSFER = "TRANSFER"  # one side sells inventory, outstanding pairs unchanged
    REDEEM = "REDEEM"      # both sides sell inventory, a pair is retired


class EventKind(str, Enum):
    LIST = "LIST"
    SUBMIT = "SUBMIT"
    CANCEL = "CANCEL"
    EXECUTE = "EXECUTE"
    EXPIRE = "EXPIRE"
    REJECT = "REJECT"
    SETTLE = "SETTLE"


class LOBError(Exception):
    pass


class OrderRejected(LOBError):
    pass


class NoLiquidity(OrderRejected):
    pass


class NotOpen(LOBError):
    pass


class CorruptLog(LOBError):
    pass


@dataclass(slots=True, eq=False)
class Order:
    order_id: int
    trader_id: Hashable
    contract_id: Hashable
    side: Side
    price: int
    qty: int
    remaining_qty: int
    submit_seq: int
    timestamp: float
    closing: bool = False
    market: bool = False
    cancelled: bool = False

    @property
    def is_open(self) -> bool:
        return self.remaining_qty > 0 and not self.cancelled


@dataclass(frozen=True, slots=True)
class Trade:
    trade_id: int
    contract_id: Hashable
    yes_order_id: int
    no_order_id: int
    yes_trader: Hashable
    no_trader: Hashable
    price_yes: int
    qty: int
    kind: TradeKind
    timestamp: float
    aggressor: Side

    @property
    def price_no(self) -> int:
        return PAYOUT - self.price_yes

    def to_payload(self) -> dict[str, Any]:
        return {
            "trade_id": self.trade_id,
            "contract_id": self.contract_id,
            "yes_order_id": self.yes_order_id,
            "no_order_id": self.no_order_id,
            "yes_trader": self.yes_trader,
            "no_trader": self.no_trader,
            "price_yes": self.price_yes,
            "qty": self.qty,
            "kind": self.kind.value,
            "aggressor": self.aggressor.value,
        }

    @classmethod
    def from_event(cls, event: "OrderEvent") -> "Trade":
        p = event.payload
        return cls(
            trade_id=p["trade_id"],
            contract_id=p["contract_id"],
            yes_order_id=p["yes_order_id"],
            no_order_id=p["no_order_id"],
            yes_trader=p["yes_trader"],
            no_trader=p["no_trader"],
            price_yes=p["price_yes"],
            qty=p["qty"],
            kind=TradeKind(p["kind"]),
            timestamp=event.time,
            aggressor=Side(p["aggressor"]),
        )


@dataclass(frozen=True, slots=True)
class OrderEvent:
    seq: int
    time: float
    kind: EventKind
    payload: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "time": self.time, "kind": self.kind.value, "payload": self.payload}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OrderEvent":
        return cls(seq=int(d["seq"]), time=float(d["time"]), kind=EventKind(d["kind"]),
                   payload=dict(d.get("payload", {})))

    @classmethod
    def from_json(cls, line: str) -> "OrderEvent":
        return cls.from_dict(json.loads(line))


Level = tuple[int, int]


@dataclass(frozen=True, slots=True)
class BookSnapshot:
    """Top-of-book view: up to five (price, total qty) levels per side, best first."""

    contract_id: Hashable
    t: float
    bids_yes: tuple[Level, ...]
    bids_no: tuple[Level, ...]
    seq: int = 0

    def bids(self, side: Side) -> tuple[Level, ...]:
        return self.bids_yes if side is Side.YES else self.bids_no

    def asks(self, side: Side) -> tuple[Level, ...]:
        """Implied ask ladder for buying ``side``: 100 minus the opposite bids."""
        return tuple((PAYOUT - p, q) for p, q in self.bids(side.other))

    def best_bid(self, side: Side) -> int | None:
        levels = self.bids(side)
        return levels[0][0] if levels else None

    def best_ask(self, side: Side) -> int | None:
        levels = self.bids(side.other)
        return PAYOUT - levels[0][0] if levels else None

    @property
    def ask_yes(self) -> tuple[Level, ...]:
        return self.asks(Side.YES)

    @property
    def ask_no(self) -> tuple[Level, ...]:
        return self.asks(Side.NO)


class _Book:
    """Price levels for one contract. ``best[side]`` is 0 when that side is empty."""

    __slots__ = ("contract_id", "levels", "level_qty", "best")

    def __init__(self, contract_id: Hashable) -> None:
        self.contract_id = contract_id
        self.levels = {s: [deque() for _ in range(MAX_TICK + 1)] for s in Side}
        self.level_qty = {s: [0] * (MAX_TICK + 1) for s in Side}
        self.best = {s: 0 for s in Side}

    def add(self, order: Order) -> None:
        s, p = order.side, order.price
        self.levels[s][p].append(order)
        self.level_qty[s][p] += order.remaining_qty
        if p > self.best[s]:
            self.best[s] = p

    def _refresh(self, side: Side) -> None:
        p = self.best[side]
        lv = self.levels[side]
        while p > 0 and not lv[p]:
            p -= 1
        self.best[side] = p

    def pop_front(self, side: Side, price: int) -> None:
        self.levels[side][price].popleft()
        if price == self.best[side] and not self.levels[side][price]:
            self._refresh(side)

    def remove(self, order: Order) -> None:
        s, p = order.side, order.price
        self.levels[s][p].remove(order)
        self.level_qty[s][p] -= order.remaining_qty
        if p == self.best[s] and not self.levels[s][p]:
            self._refresh(s)

    def top(self, side: Side, depth: int = LADDER_DEPTH) -> tuple[Level, ...]:
        out = []
        qty = self.level_qty[side]
        p = self.best[side]
        while p > 0 and len(out) < depth:
            if qty[p] > 0:
                out.append((p, qty[p]))
            p -= 1
        return tuple(out)


def _is_tick(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and MIN_TICK <= x <= MAX_TICK


class Exchange:
    """Matching engine plus the accounting it needs (inventory, cash, escrow).

    All state changes go through the public methods and are appended to
    ``events``; :func:`replay` rebuilds an identical exchange from that list.
    Traders have unlimited cash; cash balances are net cents paid/received.
    """

    def __init__(self, contracts: Iterable[Hashable] = (), t: float = 0.0) -> None:
        self.books: dict[Hashable, _Book] = {}
        self.orders: dict[int, Order] = {}
        self.holdings: dict[tuple, int] = {}
        self.reserved: dict[tuple, int] = {}
        self.cash: dict[Hashable, int] = {}
        self.pairs: dict[Hashable, int] = {}
        self.escrow: dict[Hashable, int] = {}
        self.settled: dict[Hashable, Side] = {}
        self.events: list[OrderEvent] = []
        self._seq = 0
        self._next_order_id = 1
        self._next_trade_id = 1
        for c in contracts:
            self.list_contract(c, t)

    # -- event plumbing -------------------------------------------------
    def _emit(self, t: float, kind: EventKind, payload: dict[str, Any]) -> OrderEvent:
        self._seq += 1
        ev = OrderEvent(self._seq, float(t), kind, payload)
        self.events.append(ev)
        return ev

    def _reject(self, t: float, reason: str, request: dict[str, Any], exc=OrderRejected):
        self._emit(t, EventKind.REJECT, {"reason": reason, **request})
        raise exc(reason)

    # -- queries ----------------------------------------------------------
    @property
    def contracts(self) -> list[Hashable]:
        return list(self.books)

    def holding(self, trader_id: Hashable, contract_id: Hashable, side: Side) -> int:
        return self.holdings.get((trader_id, contract_id, side), 0)

    def free_inventory(self, trader_id: Hashable, contract_id: Hashable, side: Side) -> int:
        key = (trader_id, contract_id, side)
        return self.holdings.get(key, 0) - self.reserved.get(key, 0)

    def best_bid(self, contract_id: Hashable, side: Side) -> int | None:
        b = self.books[contract_id].best[side]
        return b or None

    def open_orders(self, trader_id: Hashable | None = None) -> list[Order]:
        return [o for o in self.orders.values()
                if o.is_open and (trader_id is None or o.trader_id == trader_id)]

    def snapshot_top5(self, contract_id: Hashable, t: float | None = None) -> BookSnapshot:
        book = self.books[contract_id]
        if t is None:
            t = self.events[-1].time if self.events else 0.0
        return BookSnapshot(contract_id, float(t), book.top(Side.YES), book.top(Side.NO), self._seq)

    snapshot = snapshot_top5

    def outstanding(self, contract_id: Hashable, side: Side) -> int:
        return sum(q for (tr, c, s), q in self.holdings.items() if c == contract_id and s is side)

    # -- operations -------------------------------------------------------
    def list_contract(self, contract_id: Hashable, t: float = 0.0) -> None:
        if contract_id in self.books:
            raise ValueError(f"contract {contract_id!r} already listed")
        self.books[contract_id] = _Book(contract_id)
        self.pairs[contract_id] = 0
        self.escrow[contract_id] = 0
        self._emit(t, EventKind.LIST, {"contract_id": contract_id})

    def submit_limit(self, trader_id, contract_id, side, price, qty, t: float,
                     closing: bool = False) -> list[Trade]:
        """Submit a buy on ``side`` at ``price``; match while marketable, rest the residual."""
        return self._submit(trader_id, contract_id, side, price, qty, t, closing, market=False)

    def submit_market(self, trader_id, contract_id, side, qty, t: float,
                      closing: bool = False) -> list[Trade]:
        """Limit order at exactly the best opposite level; unfilled remainder is cancelled.

        Only that single level can fill. Sweeping deeper needs one order per level.
        """
        return self._submit(trader_id, contract_id, side, None, qty, t, closing, market=True)

    def _submit(self, trader_id, contract_id, side, price, qty, t, closing, market) -> list[Trade]:
        request = {"trader_id": trader_id, "contract_id": contract_id,
                   "side": side.value if isinstance(side, Side) else side,
                   "price": price, "qty": qty, "closing": bool(closing), "market": market}
        if contract_id not in self.books:
            self._reject(t, "unknown_contract", request)
        if contract_id in self.settled:
            self._reject(t, "settled", request)
        try:
            side = Side(side)
        except ValueError:
            self._reject(t, "invalid_side", request)
        if not (isinstance(qty, int) and not isinstance(qty, bool) and qty > 0):
            self._reject(t, "invalid_qty", request)
        book = self.books[contract_id]
        if market:
            best_opp = book.best[side.other]
            if best_opp == 0:
                self._reject(t, "no_liquidity", request, NoLiquidity)
            price = PAYOUT - best_opp
        elif not _is_tick(price):
            self._reject(t, "invalid_tick", request)
        if closing and self.free_inventory(trader_id, contract_id, side.other) < qty:
            self._reject(t, "insufficient_inventory", request)

        order = Order(self._next_order_id, trader_id, contract_id, side, price, qty, qty,
                      self._seq + 1, float(t), bool(closing), market)
        self._next_order_id += 1
        self.orders[order.order_id] = order
        if closing:
            key = (trader_id, contract_id, side.other)
            self.reserved[key] = self.reserved.get(key, 0) + qty
        self._emit(t, EventKind.SUBMIT, {
            "order_id": order.order_id, "trader_id": trader_id, "contract_id": contract_id,
            "side": side.value, "price": price, "qty": qty, "closing": bool(closing),
            "market": market})

        trades = self._match(order, book, t)
        if order.remaining_qty > 0:
            if market:
                self._close(order, t, EventKind.CANCEL, "market_remainder")
            else:
                book.add(order)
        return trades

    def _match(self, order: Order, book: _Book, t: float) -> list[Trade]:
        trades = []
        opp = order.side.other
        levels = book.levels[opp]
        level_qty = book.level_qty[opp]
        while order.remaining_qty > 0:
            best = book.best[opp]
            if best == 0 or order.price + best < PAYOUT:
                break
            resting = levels[best][0]
            n = min(order.remaining_qty, resting.remaining_qty)
            if order.side is Side.YES:
                yes_o, no_o, price_yes = order, resting, PAYOUT - best
            else:
                yes_o, no_o, price_yes = resting, order, best
            trades.append(self._fill(yes_o, no_o, price_yes, n, t, order.side))
            order.remaining_qty -= n
            resting.remaining_qty -= n
            level_qty[best] -= n
            if resting.remaining_qty == 0:
                book.pop_front(opp, best)
        return trades

    def _fill(self, yes_o: Order, no_o: Order, price_yes: int, n: int, t: float,
              aggressor: Side) -> Trade:
        c = yes_o.contract_id
        yt, nt = yes_o.trader_id, no_o.trader_id
        if yes_o.closing and no_o.closing:
            kind = TradeKind.REDEEM
        elif yes_o.closing or no_o.closing:
            kind = TradeKind.TRANSFER
        else:
            kind = TradeKind.MINT
        self.cash[yt] = self.cash.get(yt, 0) - price_yes * n
        self.cash[nt] = self.cash.get(nt, 0) - (PAYOUT - price_yes) * n
        released = 0
        for o, own, held in ((yes_o, Side.YES, Side.NO), (no_o, Side.NO, Side.YES)):
            tr = o.trader_id
            if o.closing:
                key = (tr, c, held)
                self.holdings[key] -= n
                self.reserved[key] -= n
                self.cash[tr] += PAYOUT * n
                released += 1
            else:
                key = (tr, c, own)
                self.holdings[key] = self.holdings.get(key, 0) + n
        self.pairs[c] += n * (1 - released)
        self.escrow[c] += PAYOUT * n * (1 - released)
        trade = Trade(self._next_trade_id, c, yes_o.order_id, no_o.order_id, yt, nt,
                      price_yes, n, kind, float(t), aggressor)
        self._next_trade_id += 1
        self._emit(t, EventKind.EXECUTE, trade.to_payload())
        return trade

    def _close(self, order: Order, t: float, kind: EventKind, reason: str) -> None:
        remaining = order.remaining_qty
        if order.closing:
            key = (order.trader_id, order.contract_id, order.side.other)
            self.reserved[key] -= remaining
        order.remaining_qty = 0
        order.cancelled = True
        self._emit(t, kind, {"order_id": order.order_id, "remaining": remaining, "reason": reason})

    def _take_open(self, order_id: int) -> Order:
        order = self.orders.get(order_id)
        if order is None or not order.is_open:
            raise NotOpen(f"order {order_id!r} is not open")
        self.books[order.contract_id].remove(order)
        return order

    def cancel(self, order_id: int, t: float) -> None:
        order = self._take_open(order_id)
        self._close(order, t, EventKind.CANCEL, "user")

    def expire(self, order_id: int, t: float) -> None:
        order = self._take_open(order_id)
        self._close(order, t, EventKind.EXPIRE, "horizon")

    def expire_all(self, t: float = 1.0) -> int:
        ids = sorted(o.order_id for o in self.orders.values() if o.is_open)
        for oid in ids:
            self.expire(oid, t)
        return len(ids)

    def settle(self, contract_id: Hashable, winner: Side, t: float = 1.0) -> int:
        """Expire open orders, pay 100 per winning share, retire all pairs. Returns total payout."""
        if contract_id not in self.books or contract_id in self.settled:
            raise LOBError(f"cannot settle {contract_id!r}")
        winner = Side(winner)
        for oid in sorted(o.order_id for o in self.orders.values()
                          if o.is_open and o.contract_id == contract_id):
            self.expire(oid, t)
        payout = 0
        for key in sorted((k for k in self.holdings if k[1] == contract_id), key=repr):
            qty = self.holdings.pop(key)
            self.reserved.pop(key, None)
            if key[2] is winner and qty:
                self.cash[key[0]] = self.cash.get(key[0], 0) + PAYOUT * qty
                payout += PAYOUT * qty
        self.escrow[contract_id] -= payout
        self.pairs[contract_id] = 0
        self.settled[contract_id] = winner
        self._emit(t, EventKind.SETTLE, {"contract_id": contract_id, "winner": winner.value,
                                         "payout": payout})
        return payout

    # -- state digest -----------------------------------------------------
    def state(self) -> dict[str, Any]:
        books = {}
        for c, book in self.books.items():
            books[repr(c)] = {
                s.value: [[o.order_id, o.remaining_qty] for p in range(MAX_TICK, 0, -1)
                          for o in book.levels[s][p]]
                for s in Side
            }
        return {
            "books": books,
            "holdings": sorted([repr(k[0]), repr(k[1]), k[2].value, v]
                               for k, v in self.holdings.items() if v),
            "reserved": sorted([repr(k[0]), repr(k[1]), k[2].value, v]
                               for k, v in self.reserved.items() if v),
            "cash": sorted([repr(k), v] for k, v in self.cash.items()),
            "pairs": sorted([repr(k), v] for k, v in self.pairs.items()),
            "escrow": sorted([repr(k), v] for k, v in self.escrow.items()),
            "settled": sorted([repr(k), v.value] for k, v in self.settled.items()),
            "seq": self._seq,
        }

    def digest(self) -> str:
        blob = json.dumps(self.state(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _apply(ex: Exchange, ev: OrderEvent) -> Hashable | None:
    p = ev.payload
    k = ev.kind
    if k is EventKind.LIST:
        ex.list_contract(p["contract_id"], ev.time)
        return p["contract_id"]
    if k in (EventKind.SUBMIT, EventKind.REJECT):
        args = (p["trader_id"], p["contract_id"], p["side"])
        if p.get("market"):
            ex.submit_market(*args, p["qty"], ev.time, p.get("closing", False))
        else:
            ex.submit_limit(*args, p["price"], p["qty"], ev.time, p.get("closing", False))
        return p["contract_id"]
    if k is EventKind.CANCEL:
        order = ex.orders.get(p["order_id"])
        ex.cancel(p["order_id"], ev.time)
        return order.contract_id
    if k is EventKind.EXPIRE:
        order = ex.orders.get(p["order_id"])
        ex.expire(p["order_id"], ev.time)
        return order.contract_id
    if k is EventKind.SETTLE:
        ex.settle(p["contract_id"], Side(p["winner"]), ev.time)
        return p["contract_id"]
    raise CorruptLog(f"event seq={ev.seq} kind={k.value} cannot start a replay step")


def replay(events: Sequence[OrderEvent], snapshots: bool = True,
           before: Callable[[Exchange, OrderEvent], None] | None = None
           ) -> tuple[Exchange, list[BookSnapshot]]:
    """Rebuild an exchange from its event log.

    Input events (LIST, SUBMIT, user CANCEL, EXPIRE, REJECT) are re-applied;
    the events each one produces (executions, market-order remainders) must
    equal the next logged events exactly, otherwise :class:`CorruptLog`.
    Returns the final exchange and a snapshot of the touched contract after
    every input event. ``before(exchange, event)`` is called ahead of each
    input event, which lets callers observe the pre-event book.
    """
    for prev, cur in zip(events, events[1:]):
        if cur.seq != prev.seq + 1:
            kind = "duplicate" if cur.seq <= prev.seq else "gap"
            raise CorruptLog(f"sequence {kind} between {prev.seq} and {cur.seq}")
    if events and events[0].seq != 1:
        raise CorruptLog(f"log starts at seq {events[0].seq}, expected 1")

    ex = Exchange()
    snaps: list[BookSnapshot] = []
    i = 0
    while i < len(events):
        ev = events[i]
        start = len(ex.events)
        contract = None
        if before is not None:
            before(ex, ev)
        try:
            contract = _apply(ex, ev)
        except OrderRejected:
            if ev.kind is not EventKind.REJECT:
                raise CorruptLog(f"seq={ev.seq}: logged {ev.kind.value} was rejected on replay")
        except (LOBError, ValueError, KeyError, TypeError, AttributeError) as e:
            raise CorruptLog(f"seq={ev.seq}: {e}") from e
        produced = ex.events[start:]
        logged = events[i:i + len(produced)]
        if not produced or [e.to_dict() for e in produced] != [e.to_dict() for e in logged]:
            raise CorruptLog(f"seq={ev.seq}: replay diverges from log")
        i += len(produced)
        if snapshots and contract in ex.books:
            snaps.append(ex.snapshot_top5(contract, ev.time))
    return ex, snaps
