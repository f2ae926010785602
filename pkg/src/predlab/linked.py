"""Margin for portfolios over a linked market of mutually exclusive outcomes.

The platform only collects the trader's worst-case loss across winners,
not the sum of leg costs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from .lob import PAYOUT, Side


@dataclass(frozen=True)
class LinkedMarket:
    outcomes: tuple[Hashable, ...]

    def __post_init__(self):
        if len(self.outcomes) < 2:
            raise ValueError("a linked market needs at least two outcomes")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise ValueError("outcome ids must be unique")


@dataclass(frozen=True)
class Leg:
    outcome: Hashable
    side: Side
    qty: int
    cash_paid: int  # total cents paid for this leg

    @classmethod
    def bought(cls, outcome, side, qty: int, price: int) -> "Leg":
        return cls(outcome, Side(side), qty, qty * price)


@dataclass(frozen=True)
class LinkedPosition:
    market: LinkedMarket
    legs: tuple[Leg, ...]

    def __post_init__(self):
        known = set(self.market.outcomes)
        for leg in self.legs:
            if leg.outcome not in known:
                raise ValueError(f"leg on unknown outcome {leg.outcome!r}")
            if leg.qty < 0:
                raise ValueError("leg quantities must be non-negative")

    @property
    def total_paid(self) -> int:
        return sum(leg.cash_paid for leg in self.legs)


def leg_payout(leg: Leg, winner: Hashable) -> int:
    wins = (leg.outcome == winner) == (leg.side is Side.YES)
    return leg.qty * PAYOUT if wins else 0


def outcome_pnl(position: LinkedPosition, winner: Hashable) -> int:
    """Net profit in cents if ``winner`` is the realized outcome."""
    if winner not in position.market.outcomes:
        raise ValueError(f"unknown winner {winner!r}")
    return sum(leg_payout(leg, winner) - leg.cash_paid for leg in position.legs)


def max_exposure(position: LinkedPosition) -> int:
    """Worst-case loss over all winners, floored at zero: the escrow actually collected."""
    return max(0, max(-outcome_pnl(position, w) for w in position.market.outcomes))


def read_position_csv(path) -> LinkedPosition:
    """Columns: outcome, side, qty, price (cents, or dollars if it has a decimal point).

    The market's outcomes are those that appear in the file; list an outcome
    with qty 0 to include it without a position.
    """
    legs, outcomes = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
            outcome = row["outcome"].strip()
            if outcome not in outcomes:
                outcomes.append(outcome)
            price = _price_cents(row["price"])
            legs.append(Leg.bought(outcome, row["side"].strip().upper(), int(row["qty"]), price))
    return LinkedPosition(LinkedMarket(tuple(outcomes)), tuple(legs))


def _price_cents(text: str) -> int:
    text = text.strip()
    if "." in text:
        return round(float(text) * PAYOUT)
    return int(text)


def position_from_rows(rows: Iterable[Sequence], outcomes: Sequence[Hashable] | None = None
                       ) -> LinkedPosition:
    """Build from (outcome, side, qty, price_cents) tuples."""
    legs = [Leg.bought(o, s, int(q), int(p)) for o, s, q, p in rows]
    if outcomes is None:
        outcomes = list(dict.fromkeys(leg.outcome for leg in legs))
    return LinkedPosition(LinkedMarket(tuple(outcomes)), tuple(legs))
