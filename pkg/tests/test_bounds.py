import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from predlab.bounds import (
    GRID, DegenerateBound, HistoryKey, NoData, OrderObservation, estimate,
    estimate_by_key, exclusion_filter, execution_training_set, extract_observations,
    isotonize, lower_cdf_bound, mean_belief_interval, order_bounds, order_interval,
    order_intervals, order_upper_belief, time_bucket, upper_cdf_bound,
)
from predlab.execprob import ConstantExecProb, parse_exec_prob
from predlab.lob import Exchange, Side
from predlab.sim import SimConfig, TraderKind, run


def obs(price, asks=((50, 10),), side=Side.YES, market=False, qty=1, t=0.5, day=0):
    return OrderObservation(1, "i", "C0", side, price, qty, market, t, (), tuple(asks),
                            HistoryKey("ge40"), day)


# -- per-order caps ------------------------------------------------------------

def test_phi_zero_gives_ask():
    assert order_upper_belief(40, [(50, 3)], 1, 0.0) == pytest.approx(0.50)


def test_indifference_example():
    b = order_upper_belief(40, [(50, 3)], 1, 0.5)
    assert b == pytest.approx(0.60)
    assert 0.5 * (b - 0.40) == pytest.approx(b - 0.50)


def indifference_by_sweep(p, asks, x, phi):
    """Solve phi * x * (q - p) = sum over swept shares of (q - m_k) for q."""
    shares = [m for m, n in asks for _ in range(n)][:x]
    f = lambda q: phi * x * (q - p) - sum(q - m for m in shares)
    return -f(0.0) / (f(1.0) - f(0.0))


def test_walk_up_matches_sweep_oracle():
    b = order_upper_belief(40, [(50, 3), (55, 10)], 5, 0.5)
    assert b == pytest.approx(0.64)
    assert b == pytest.approx(indifference_by_sweep(0.40, [(0.50, 3), (0.55, 10)], 5, 0.5))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 98), st.lists(st.tuples(st.integers(1, 99), st.integers(1, 5)),
                                    min_size=1, max_size=5),
       st.integers(1, 12), st.floats(0.0, 0.99))
def test_cap_properties(p, ladder, x, phi):
    asks = sorted({m: n for m, n in ladder if m > p}.items())
    if not asks:
        return
    b = order_upper_belief(p, asks, x, phi)
    m = asks[0][0]
    assert p / 100 <= b <= 1.0
    if sum(n for _, n in asks) >= x and asks[0][1] >= x:
        raw = (m / 100 - phi * p / 100) / (1 - phi)
        assert raw - m / 100 == pytest.approx(phi * (m - p) / 100 / (1 - phi), abs=1e-12)
        assert b == pytest.approx(min(raw, 1.0)) and b >= m / 100 - 1e-12
    filled = min(x, sum(n for _, n in asks))
    if filled > phi * x and b < 1.0:
        oracle = indifference_by_sweep(p / 100, [(a / 100, n) for a, n in asks], x, phi)
        assert b == pytest.approx(max(oracle, p / 100), rel=1e-9, abs=1e-12)


def test_degenerate_phi_dropped():
    with pytest.raises(DegenerateBound):
        order_upper_belief(40, [(50, 1)], 1, 0.9995)
    iv = order_intervals([obs(40), obs(30)], ConstantExecProb(0.9999))
    assert len(iv) == 0 and iv.dropped == 2


def test_intervals_and_no_side_reflection():
    phi = ConstantExecProb(0.5)
    assert order_interval(obs(40), phi) == (0.40, 0.60)
    assert order_interval(obs(50, market=True), phi) == (0.50, 1.0)
    assert order_interval(obs(40, asks=()), phi) == (0.40, 1.0)
    assert order_interval(obs(40, side=Side.NO), phi) == (0.40, 0.60)
    assert order_interval(obs(30, side=Side.NO), phi) == (0.30, 0.70)
    assert order_interval(obs(50, side=Side.NO, market=True), phi) == (0.0, 0.50)


def test_intervals_round_outward():
    lo, hi = order_interval(obs(40, asks=((47, 5),)), ConstantExecProb(0.3))
    exact = (0.47 - 0.3 * 0.40) / 0.7
    assert lo == 0.40 and hi == pytest.approx(np.ceil(exact * 100) / 100) and hi >= exact


# -- CDF bounds ----------------------------------------------------------------

def test_upper_cdf_arithmetic():
    u = upper_cdf_bound([0.3, 0.5, 0.7])
    assert u[GRID.tolist().index(0.5)] == pytest.approx(2 / 3)
    with pytest.raises(NoData):
        upper_cdf_bound([])
    with pytest.raises(NoData):
        lower_cdf_bound([])


def test_all_caps_one():
    low = lower_cdf_bound(np.ones(5))
    assert np.all(low == 0.0)


def test_prices_equal_beliefs_give_true_ecdf():
    q = np.random.default_rng(0).integers(1, 100, 300) / 100
    truth = np.array([(q <= s).mean() for s in GRID])
    np.testing.assert_allclose(upper_cdf_bound(q), truth)


def test_indifference_caps_recover_point_mass():
    # orders at p with ask m and phi chosen so that the cap equals q = 0.6 exactly
    phi = ConstantExecProb(0.5)
    observations = [obs(40, asks=((50, 3),)), obs(30, asks=((45, 3),)), obs(50, asks=((55, 3),))]
    iv = order_intervals(observations, phi)
    np.testing.assert_allclose(iv.hi, 0.60)
    low = lower_cdf_bound(iv.hi)
    np.testing.assert_array_equal(low, (GRID >= 0.6 - 1e-9).astype(float))


def test_phi_zero_lower_is_ask_ecdf():
    rng = np.random.default_rng(1)
    asks = rng.integers(20, 99, 200)
    prices = np.array([rng.integers(1, a) for a in asks])
    observations = [obs(int(p), asks=((int(a), 1),)) for p, a in zip(prices, asks)]
    iv = order_intervals(observations, ConstantExecProb(0.0))
    np.testing.assert_allclose(lower_cdf_bound(iv.hi), [(asks / 100 <= s + 1e-9).mean() for s in GRID])


def pava_oracle(y):
    """Max-min formula for the isotonic regression."""
    n = len(y)
    return np.array([max(min(np.mean(y[j:k + 1]) for k in range(i, n)) for j in range(i + 1))
                     for i in range(n)])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=25))
def test_isotonize(y):
    y = np.array(y)
    fit = isotonize(y)
    np.testing.assert_allclose(fit, pava_oracle(y), atol=1e-12)
    assert np.all(np.diff(fit) >= -1e-12)
    max_violation = max([0.0] + [y[i] - y[j] for i in range(len(y)) for j in range(i, len(y))])
    assert np.max(np.abs(fit - y)) <= max_violation + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=99, max_size=99),
       st.lists(st.floats(0, 1), min_size=99, max_size=99))
def test_order_bounds_sandwich(a, b):
    lo, hi = order_bounds(a, b)
    assert np.all(lo <= hi) and np.all(np.diff(lo) >= -1e-12) and np.all(np.diff(hi) >= -1e-12)
    mlo, mhi = mean_belief_interval(lo, hi)
    assert 0.0 <= mlo <= mhi <= 1.0


def test_mean_interval_examples():
    step = (GRID >= 0.5 - 1e-9).astype(float)
    assert mean_belief_interval(step, step) == pytest.approx((0.5, 0.5))
    assert mean_belief_interval(np.zeros(99), np.ones(99)) == pytest.approx((0.0, 1.0))


def test_mean_interval_brackets_tick_mean():
    rng = np.random.default_rng(2)
    lo = rng.integers(1, 60, 400) / 100
    hi = np.minimum(lo + rng.integers(0, 40, 400) / 100, 1.0)
    mlo, mhi = mean_belief_interval(lower_cdf_bound(hi), upper_cdf_bound(lo))
    assert mlo <= lo.mean() + 1e-12 and hi.mean() <= mhi + 1e-12


# -- history keys and filters -------------------------------------------------

def test_time_buckets():
    D = 365
    assert time_bucket(0.0, D) == "ge40"
    assert time_bucket(1 - 40 / D, D) == "ge40"
    assert time_bucket(1 - 39 / D, D) == "20-40"
    assert time_bucket(1 - 15 / D, D) == "10-20"
    assert time_bucket(1 - 3 / D, D) == "lt10"


def test_exclusion_filter():
    observations = [obs(40, t=t) for t in np.linspace(0, 1, 366)]
    assert exclusion_filter(observations, 0.0) == observations
    assert exclusion_filter(observations, 1.0) == []
    kept = exclusion_filter(observations, 10 / 365)
    assert max(o.t for o in kept) <= 355 / 365 + 1e-12
    assert len(kept) == 356


# -- end to end on simulated logs ---------------------------------------------

def informed_intervals(cfg, seed):
    r = run(cfg, seed=seed)
    ids = [t.trader_id for t in r.traders if t.kind is TraderKind.INFORMED]
    observations = extract_observations(r.events, days=cfg.days, trader_ids=ids)
    truth = r.truth
    q = np.array([truth[o.trader_id].belief for o in observations])
    return r, observations, q, order_intervals(observations, parse_exec_prob(cfg.exec_prob))


@pytest.mark.parametrize("seed", range(3))
def test_per_order_sandwich_and_upper_dominates(seed):
    cfg = SimConfig(n_informed=2000, n_noise=600, belief="beta:2:2", exec_prob="logistic:0:10")
    _, observations, q, iv = informed_intervals(cfg, seed)
    assert len(iv) == 2000 and iv.dropped == 0
    assert np.all(iv.lo <= q + 1e-12) and np.all(q <= iv.hi + 1e-12)
    G = stats.beta(2, 2).cdf(GRID)
    band = stats.norm.ppf(0.95) * np.sqrt(G * (1 - G) / len(iv))
    est = estimate(iv, level=None)
    assert np.all(est.upper_cdf >= G - band) and np.all(est.lower_cdf <= G + band)
    assert est.mean_lo <= q.mean() <= est.mean_hi


def test_hazard_world_keeps_sandwich():
    cfg = SimConfig(n_informed=400, n_noise=300, hazard=3.0, size="randint:1:3",
                    exec_prob="logistic:-1:15")
    _, observations, q, iv = informed_intervals(cfg, 11)
    # size > top depth uses the ladder walk, which the agents do not use; limit to unit orders
    unit = np.array([o.qty == 1 for o in observations])
    assert np.all(iv.lo <= q + 1e-12)
    assert np.all(q[unit] <= iv.hi[unit] + 1e-12)


def test_estimate_with_bands_and_keys():
    cfg = SimConfig(n_informed=800, n_noise=300)
    _, observations, q, iv = informed_intervals(cfg, 4)
    out = estimate_by_key(iv, group="bucket", q=100, rng=0)
    assert "all" in out and "ge40" in out
    est = out["all"]
    lo_band, hi_band = est.lower_band
    assert lo_band.shape == (99,) and np.all(lo_band <= est.lower_cdf + 1e-12)
    assert np.all(hi_band >= est.lower_cdf - 1e-12)
    assert est.mean_ci[0] <= est.mean_lo <= est.mean_hi <= est.mean_ci[1]
    assert sum(v.n_orders for k, v in out.items() if k != "all") == est.n_orders
    book = estimate_by_key(iv, group="book", level=None)
    assert len(book) > len(out)
    with pytest.raises(NoData):
        estimate(iv.subset(np.zeros(len(iv), bool)))


def test_execution_training_set_labels():
    ex = Exchange(["A"])
    ex.submit_limit("a", "A", Side.YES, 30, 1, 0.1)   # rests, later filled
    ex.submit_limit("b", "A", Side.YES, 20, 1, 0.2)   # rests, never filled
    ex.submit_limit("c", "A", Side.NO, 70, 1, 0.3)    # marketable, excluded
    X, y = execution_training_set(ex.events)
    assert X.shape == (2, 22) and y.tolist() == [1.0, 0.0]
    np.testing.assert_allclose(X[:, 20], [0.30, 0.20])
    assert X[1, 0] == 0.30    # best YES bid seen by the second order
