"""Execution-probability oracles and the book features they condition on.

An oracle maps candidate limit prices (integer cents on the order's own side)
plus the visible book to fill probabilities. Agents and the bound estimator
must use the same oracle for the limit-versus-market inequality to hold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .inference import ExecProbModel
from .lob import LADDER_DEPTH, PAYOUT, BookSnapshot, Level, Side


@dataclass(frozen=True)
class SideView:
    """The book as seen by a buyer of ``side``: own-side bids and implied asks."""

    side: Side
    bids: tuple[Level, ...]
    asks: tuple[Level, ...]
    size: int = 1
    t: float = 0.0

    @classmethod
    def from_snapshot(cls, snap: BookSnapshot, side: Side, size: int = 1) -> "SideView":
        return cls(side, snap.bids(side), snap.asks(side), size, snap.t)

    @property
    def ask(self) -> int | None:
        return self.asks[0][0] if self.asks else None

    @property
    def ask_depth(self) -> int:
        return self.asks[0][1] if self.asks else 0


class ExecProb(Protocol):
    def __call__(self, prices: np.ndarray, view: SideView) -> np.ndarray: ...


@dataclass(frozen=True)
class ConstantExecProb:
    value: float

    def __call__(self, prices, view):
        return np.full(np.shape(prices), float(self.value))


@dataclass(frozen=True)
class LogisticExecProb:
    """phi(p) = logistic(intercept + slope * (p - ask)), prices in dollars.

    With an empty opposite side the ask is taken as 1.00.
    """

    intercept: float = 0.0
    slope: float = 10.0

    def __call__(self, prices, view):
        ask = (view.ask if view.ask is not None else PAYOUT) / PAYOUT
        z = self.intercept + self.slope * (np.asarray(prices, float) / PAYOUT - ask)
        return 1.0 / (1.0 + np.exp(-z))


FEATURE_NAMES = tuple(
    [f"bid{k}_px" for k in range(1, LADDER_DEPTH + 1)]
    + [f"bid{k}_qty" for k in range(1, LADDER_DEPTH + 1)]
    + [f"ask{k}_px" for k in range(1, LADDER_DEPTH + 1)]
    + [f"ask{k}_qty" for k in range(1, LADDER_DEPTH + 1)]
    + ["price", "size"]
)


def book_features(view: SideView, prices: Sequence[int] | np.ndarray) -> np.ndarray:
    """One row per candidate price: 20 ladder values, own price, order size.

    Prices are in dollars. Missing bid levels read 0.00, missing ask levels 1.00.
    """
    base = np.zeros(4 * LADDER_DEPTH)
    base[2 * LADDER_DEPTH:3 * LADDER_DEPTH] = 1.0
    for k, (p, q) in enumerate(view.bids):
        base[k] = p / PAYOUT
        base[LADDER_DEPTH + k] = q
    for k, (p, q) in enumerate(view.asks):
        base[2 * LADDER_DEPTH + k] = p / PAYOUT
        base[3 * LADDER_DEPTH + k] = q
    prices = np.atleast_1d(np.asarray(prices, float))
    out = np.empty((len(prices), len(FEATURE_NAMES)))
    out[:, :4 * LADDER_DEPTH] = base
    out[:, -2] = prices / PAYOUT
    out[:, -1] = view.size
    return out


@dataclass
class FittedExecProb:
    """Wraps a kernel-regression model fitted on :data:`FEATURE_NAMES` rows."""

    model: ExecProbModel

    def __call__(self, prices, view):
        return self.model.predict(book_features(view, prices))


def parse_exec_prob(spec: str) -> ExecProb:
    """``constant:c`` | ``logistic:a:b`` | ``model:path.npz``."""
    kind, _, rest = spec.partition(":")
    if kind == "constant":
        c = float(rest)
        if not 0.0 <= c <= 1.0:
            raise ValueError("constant execution probability must lie in [0, 1]")
        return ConstantExecProb(c)
    if kind == "logistic":
        a, b = (float(x) for x in rest.split(":")) if rest else (0.0, 10.0)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("logistic parameters must be finite")
        return LogisticExecProb(a, b)
    if kind == "model":
        return FittedExecProb(ExecProbModel.load(rest))
    raise ValueError(f"unknown execution-probability spec {spec!r}")
