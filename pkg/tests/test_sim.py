import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from predlab.execprob import (
    ConstantExecProb, FittedExecProb, LogisticExecProb, SideView, book_features, parse_exec_prob,
)
from predlab.inference import nw_fit
from predlab.lob import EventKind, Exchange, Side, replay
from predlab.sim import (
    Decision, Dist, NotDayTrader, SimConfig, TraderKind, TraderSpec, day_trader_benchmark,
    draw_population, informed_action, noise_action, run,
)

INTRO = dict(belief="point:0.9", informed_max_price=25, noise_side="NO", noise_lo=76,
             noise_hi=99, exec_prob="constant:0.3", n_informed=60, n_noise=60)


def view(side=Side.YES, bids=(), asks=(), size=1):
    return SideView(side, tuple(bids), tuple(asks), size)


# -- execution-probability oracles --------------------------------------------

def test_logistic_oracle():
    phi = LogisticExecProb(0.0, 10.0)
    v = view(asks=((60, 5),))
    assert phi(np.array([60]), v)[0] == pytest.approx(0.5)
    vals = phi(np.arange(1, 60), v)
    assert np.all(np.diff(vals) > 0)
    assert phi(np.array([99]), view())[0] == pytest.approx(1 / (1 + math.exp(0.1)))


def test_book_features_layout():
    v = view(bids=((40, 3), (39, 1)), asks=((45, 7),), size=4)
    f = book_features(v, [41, 42])
    assert f.shape == (2, 22)
    np.testing.assert_allclose(f[0, :5], [0.40, 0.39, 0, 0, 0])
    np.testing.assert_allclose(f[0, 5:10], [3, 1, 0, 0, 0])
    np.testing.assert_allclose(f[0, 10:15], [0.45, 1, 1, 1, 1])
    np.testing.assert_allclose(f[:, 20], [0.41, 0.42])
    assert np.all(f[:, 21] == 4)


def test_parse_exec_prob(tmp_path):
    assert parse_exec_prob("constant:0.2") == ConstantExecProb(0.2)
    assert parse_exec_prob("logistic:1:5") == LogisticExecProb(1.0, 5.0)
    with pytest.raises(ValueError):
        parse_exec_prob("constant:1.5")
    with pytest.raises(ValueError):
        parse_exec_prob("gauss:1")
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(40, 22))
    m = nw_fit(X, rng.uniform(size=40) < 0.5)
    m.save(tmp_path / "m.npz")
    phi = parse_exec_prob(f"model:{tmp_path / 'm.npz'}")
    assert isinstance(phi, FittedExecProb)
    out = phi(np.array([10, 20]), view(asks=((30, 1),)))
    assert out.shape == (2,) and np.all((out >= 0) & (out <= 1))


# -- population and noise -----------------------------------------------------

def test_all_informed_and_point_mass():
    pop = draw_population(SimConfig(n_informed=50, n_noise=0, belief="point:0.7"),
                          np.random.default_rng(0))
    assert all(t.kind is TraderKind.INFORMED and t.belief == 0.7 for t in pop)


def test_beta_belief_mean():
    pop = draw_population(SimConfig(n_informed=10_000, n_noise=0, belief="beta:2:2"),
                          np.random.default_rng(1))
    q = np.array([t.belief for t in pop])
    assert abs(q.mean() - 0.5) < 0.02
    assert stats.kstest(q, stats.beta(2, 2).cdf).pvalue > 0.01


def test_population_deterministic():
    cfg = SimConfig(n_informed=30, n_noise=20)
    a = draw_population(cfg, np.random.default_rng(5))
    b = draw_population(cfg, np.random.default_rng(5))
    assert a == b
    assert Counter(t.kind for t in a) == {TraderKind.INFORMED: 30, TraderKind.NOISE: 20}


def test_noise_price_uniform():
    cfg = SimConfig(noise_lo=76, noise_hi=99, noise_side="NO")
    tr = TraderSpec("n", TraderKind.NOISE, None, 0.0, "C0", Side.NO)
    rng = np.random.default_rng(2)
    prices = [noise_action(tr, cfg, rng).price for _ in range(10_000)]
    counts = np.bincount(prices, minlength=100)[76:100]
    assert set(prices) <= set(range(76, 100))
    assert stats.chisquare(counts).pvalue > 0.05


def test_noise_single_tick_band_and_sell():
    cfg = SimConfig(noise_lo=50, noise_hi=50, noise_side="YES", noise_sell_prob=1.0)
    tr = TraderSpec("n", TraderKind.NOISE, None, 0.0, "C0", Side.YES)
    rng = np.random.default_rng(3)
    assert noise_action(tr, cfg, rng) == Decision(Side.YES, 50, 1)
    sell = noise_action(tr, cfg, rng, free_inventory=4)
    assert sell == Decision(Side.NO, 50, 1, closing=True)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(true_state_prob=1.0)
    with pytest.raises(ValueError):
        SimConfig(hazard=-1)
    with pytest.raises(ValueError):
        SimConfig(noise_lo=60, noise_hi=50)
    with pytest.raises(ValueError):
        SimConfig(belief="uniform:0:2")
    with pytest.raises(ValueError):
        SimConfig(n_contracts=3, outcome_probs="0.5,0.5")
    with pytest.raises(ValueError):
        SimConfig.from_mapping({"bogus": 1})
    cfg = SimConfig.from_mapping({"n_informed": "7", "hazard": "1.5", "belief": "beta:1:1"})
    assert cfg.n_informed == 7 and cfg.hazard == 1.5


def test_dist_parse_roundtrip():
    d = Dist.parse("beta:2:3")
    assert str(d) == "beta:2:3" and d.mean() == pytest.approx(0.4)
    assert Dist.parse(0.7) == Dist("point", (0.7,))


# -- informed decisions -------------------------------------------------------

def brute_force_decision(belief, v, phi, max_price=99):
    side = Side.YES if belief > 0.5 else Side.NO
    q = belief if side is Side.YES else 1 - belief
    best = (0.0, None)
    ask = v.ask
    for p in range(1, 100):
        if p > max_price or (ask is not None and p >= ask):
            continue
        pay = float(phi(np.array([p]), v)[0]) * (q - p / 100)
        if pay > best[0]:
            best = (pay, ("limit", p))
    if ask is not None and ask <= max_price:
        pay = q - ask / 100
        if pay > 0 and pay >= best[0]:
            best = (pay, ("market", ask))
    return side, best


def test_intro_market_order():
    d = informed_action(0.9, view(asks=((25, 3),)), ConstantExecProb(0.0), max_price=25)
    assert d == Decision(Side.YES, 25, 1, market=True, payoff=pytest.approx(0.65))


def test_low_belief_goes_no_side():
    d = informed_action(0.4, view(Side.NO, asks=((50, 1),)), ConstantExecProb(0.0))
    assert d.side is Side.NO and d.market and d.price == 50


def test_constant_phi_prefers_cheap_limit():
    d = informed_action(0.6, view(asks=((59, 1),)), ConstantExecProb(0.5))
    assert not d.market and d.price == 1
    assert d.payoff == pytest.approx(0.5 * 0.59)


def test_no_positive_action():
    assert informed_action(0.6, view(asks=((70, 1),)), ConstantExecProb(0.0)) is None


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 0.99), st.one_of(st.none(), st.integers(1, 99)),
       st.sampled_from(["c0", "c3", "c9", "l", "l2"]), st.integers(1, 99))
def test_informed_matches_exhaustive_search(belief, ask, kind, max_price):
    phi = {"c0": ConstantExecProb(0.0), "c3": ConstantExecProb(0.3), "c9": ConstantExecProb(0.9),
           "l": LogisticExecProb(0, 10), "l2": LogisticExecProb(-1, 25)}[kind]
    side = Side.YES if belief > 0.5 else Side.NO
    v = view(side, asks=((ask, 2),) if ask else ())
    d = informed_action(belief, v, phi, max_price=max_price)
    _, (pay, choice) = brute_force_decision(belief, v, phi, max_price)
    if choice is None:
        assert d is None
        return
    assert d.side is side and (("market" if d.market else "limit"), d.price) == choice
    assert d.payoff == pytest.approx(pay, rel=1e-12)
    q = belief if side is Side.YES else 1 - belief
    assert d.price / 100 < q


# -- full runs ----------------------------------------------------------------

def test_empty_population():
    r = run(SimConfig(n_informed=0, n_noise=0))
    assert [e.kind for e in r.events] == [EventKind.LIST, EventKind.SETTLE]
    assert not any(e.kind is EventKind.EXECUTE for e in r.events)


def test_seed_determinism():
    cfg = SimConfig(n_informed=80, n_noise=40, hazard=2.0, noise_sell_prob=0.2)
    a, b = run(cfg, seed=4), run(cfg, seed=4)
    assert [e.to_json() for e in a.events] == [e.to_json() for e in b.events]
    assert a.traders == b.traders and a.settlement == b.settlement
    assert [e.to_json() for e in run(cfg, seed=5).events] != [e.to_json() for e in a.events]


@pytest.mark.parametrize("seed", range(5))
def test_intro_scenario_prices(seed):
    r = run(SimConfig(**INTRO, hazard=1.0), seed=seed)
    px = [e.payload["price_yes"] for e in r.events if e.kind is EventKind.EXECUTE]
    assert px and all(0 < p <= 25 for p in px)


def test_run_replays_and_conserves_cash():
    r = run(SimConfig(n_informed=100, n_noise=60, hazard=2.0, noise_sell_prob=0.3,
                      size="randint:1:4"), seed=9)
    ex, _ = replay(r.events)
    assert ex.digest() == r.exchange.digest()
    assert sum(ex.cash.values()) == 0
    assert all(v == 0 for v in ex.escrow.values())


def test_linked_market_settles_one_winner():
    r = run(SimConfig(n_contracts=3, n_informed=60, n_noise=30, outcome_probs="0.2,0.3,0.5"),
            seed=2)
    assert sorted(r.settlement) == ["C0", "C1", "C2"] and sum(r.settlement.values()) == 1


def informed_orders(result):
    truth = result.truth
    for e in result.events:
        if e.kind is EventKind.SUBMIT and truth[e.payload["trader_id"]].kind is TraderKind.INFORMED:
            yield e, truth[e.payload["trader_id"]]


def test_informed_prices_respect_beliefs():
    r = run(SimConfig(n_informed=150, n_noise=80, hazard=1.0), seed=3)
    n = 0
    for e, tr in informed_orders(r):
        side = Side(e.payload["side"])
        q = tr.belief if side is Side.YES else 1 - tr.belief
        price = e.payload["price"]
        assert price / 100 < q
        n += 1
    assert n > 100


def test_logged_limit_orders_are_myopic_optima():
    cfg = SimConfig(n_informed=120, n_noise=80)
    r = run(cfg, seed=6)
    phi = parse_exec_prob(cfg.exec_prob)
    truth = r.truth
    seen = []

    def check(ex, ev):
        if ev.kind is not EventKind.SUBMIT:
            return
        tr = truth[ev.payload["trader_id"]]
        if tr.kind is not TraderKind.INFORMED:
            return
        side = Side(ev.payload["side"])
        v = SideView.from_snapshot(ex.snapshot_top5(ev.payload["contract_id"], ev.time), side)
        _, (pay, choice) = brute_force_decision(tr.belief, v, phi)
        kind = "market" if ev.payload["market"] else "limit"
        assert choice == (kind, ev.payload["price"])
        seen.append(kind)

    replay(r.events, snapshots=False, before=check)
    assert "limit" in seen and len(seen) == 120


# -- day-trader benchmark -----------------------------------------------------

def two_event_log(later_bid):
    ex = Exchange(["A"])
    ex.submit_limit("m", "A", Side.NO, 60, 5, 0.1)
    ex.submit_limit("d", "A", Side.YES, 40, 5, 0.2)       # subject buys 5 YES at 40
    ex.submit_limit("b", "A", Side.YES, later_bid, 5, 0.3)
    ex.submit_limit("d", "A", Side.NO, 100 - later_bid, 5, 0.4, closing=True)
    ex.settle("A", Side.NO, 1.0)
    return ex.events


def test_benchmark_sells_into_profitable_bid():
    res = day_trader_benchmark(two_event_log(41), "d")
    assert (res.trading_profit, res.settlement_profit, res.sold) == (5, 0, 1)


def test_benchmark_holds_and_settles_when_no_profit():
    res = day_trader_benchmark(two_event_log(40), "d")
    assert res.trading_profit == 0 and res.sold == 0
    assert res.settlement_profit == -200


def test_benchmark_errors_and_no_buys():
    ex = Exchange(["A"])
    ex.submit_limit("h", "A", Side.YES, 40, 2, 0.1)
    ex.submit_limit("x", "A", Side.NO, 60, 2, 0.2)
    ex.submit_limit("z", "A", Side.YES, 10, 1, 0.3)
    ex.settle("A", Side.YES)
    with pytest.raises(NotDayTrader):
        day_trader_benchmark(ex.events, "h")
    with pytest.raises(KeyError):
        day_trader_benchmark(ex.events, "ghost")
    res = day_trader_benchmark(ex.events, "z")
    assert res.total == 0 and res.lots == 0
