"""Statistical engines: kernel regression, day-block subsampling, rate estimation, K-sample KS.

Subsampling treats each trading day as one resampling unit. An estimator is
any callable mapping a list of day blocks to a float or a 1-d array.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

LOG_TINY = math.log(np.finfo(float).tiny)
UNRELIABLE_FAILURE_SHARE = 0.05


# -- Nadaraya-Watson execution probability ------------------------------------

def silverman_bandwidths(X: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-dimension rule of thumb h_m = sd_m * (4/(d+2))^(1/(d+4)) * n^(-1/(d+4))."""
    X = np.asarray(X, float)
    n, d = X.shape
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    factor = (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))
    return np.maximum(sd * factor, floor)


@dataclass
class ExecProbModel:
    """Fitted kernel-regression surface for the probability that a limit order fills."""

    X: np.ndarray
    y: np.ndarray
    bandwidths: np.ndarray
    feature_names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict(self, Xq, return_flags: bool = False, chunk_elems: int = 2_000_000):
        """Kernel-weighted mean of labels at each query row.

        Weights are computed in log space. When every weight would underflow
        (query far from all data), the nearest sample's label is returned and
        the query is flagged.
        """
        Xq = np.atleast_2d(np.asarray(Xq, float))
        if Xq.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {Xq.shape[1]}")
        Z = self.X / self.bandwidths
        Zq = Xq / self.bandwidths
        zz = np.einsum("ij,ij->i", Z, Z)
        ones = np.ones(len(Z))
        out = np.empty(len(Xq))
        flags = np.zeros(len(Xq), bool)
        step = max(1, chunk_elems // max(1, len(Z)))
        for s in range(0, len(Zq), step):
            q = Zq[s:s + step]
            # squared distances via the expansion |a|^2 - 2ab + |b|^2
            d2 = zz[None, :] - 2.0 * q @ Z.T + np.einsum("ij,ij->i", q, q)[:, None]
            np.maximum(d2, 0.0, out=d2)
            logw = -0.5 * d2
            top = logw.max(axis=1)
            w = np.exp(logw - top[:, None])
            out[s:s + step] = (w @ self.y) / (w @ ones)
            far = top < LOG_TINY
            if far.any():
                nearest = d2[far].argmin(axis=1)
                out[s:s + step][far] = self.y[nearest]
                flags[s:s + step][far] = True
        np.clip(out, 0.0, 1.0, out=out)
        if flags.any():
            log.debug("nearest-sample fallback for %d of %d queries", flags.sum(), len(Xq))
        return (out, flags) if return_flags else out

    def save(self, path) -> None:
        np.savez(path, X=self.X, y=self.y, bandwidths=self.bandwidths,
                 feature_names=np.array(self.feature_names, dtype=str))

    @classmethod
    def load(cls, path) -> "ExecProbModel":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["X"], z["y"], z["bandwidths"], tuple(str(s) for s in z["feature_names"]))


def nw_fit(X, y, bandwidths: str | Sequence[float] = "silverman",
           feature_names: Sequence[str] = ()) -> ExecProbModel:
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float)
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    if len(X) < 1:
        raise ValueError("need at least one training sample")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("labels must lie in [0, 1]")
    if isinstance(bandwidths, str):
        if bandwidths != "silverman":
            raise ValueError(f"unknown bandwidth rule {bandwidths!r}")
        h = silverman_bandwidths(X)
    else:
        h = np.asarray(bandwidths, float)
        if h.shape != (X.shape[1],) or np.any(h <= 0):
            raise ValueError("bandwidths must be positive, one per feature")
    return ExecProbModel(X.copy(), y.copy(), h, tuple(feature_names))


def nw_predict(model: ExecProbModel, X) -> np.ndarray:
    return model.predict(X)


# -- subsampling --------------------------------------------------------------

@dataclass
class SubsampleResult:
    theta: np.ndarray            # full-sample estimate
    replicates: np.ndarray       # (q_ok, d) subsample estimates
    b: int
    n_blocks: int
    q: int
    beta: float = 0.5
    failures: int = 0
    fpc: bool = True

    @property
    def tau_b(self) -> float:
        return self.b ** self.beta

    @property
    def tau_full(self) -> float:
        return self.n_blocks ** self.beta

    @property
    def correction(self) -> float:
        frac = self.b / self.n_blocks
        return 1.0 / math.sqrt(1.0 - frac) if self.fpc and frac < 1.0 else 1.0

    @property
    def unreliable(self) -> bool:
        return self.failures > UNRELIABLE_FAILURE_SHARE * self.q

    def deviations(self) -> np.ndarray:
        """Scaled per-coordinate |theta_b - theta|, shape (q_ok, d)."""
        return self.tau_b * self.correction * np.abs(self.replicates - self.theta)

    def statistics(self) -> np.ndarray:
        """tau_b * ||theta_b - theta|| under the sup norm."""
        dev = self.deviations()
        return dev.max(axis=1) if dev.size else np.empty(0)

    def cdf(self, x) -> np.ndarray:
        """L(x): share of replicates whose scaled deviation is <= x."""
        stats = np.sort(self.statistics())
        return np.searchsorted(stats, np.asarray(x, float), side="right") / max(len(stats), 1)

    def quantile(self, level: float, stats: np.ndarray | None = None) -> float:
        """Generalized inverse inf{x : L(x) >= level}, floored at 0."""
        stats = np.sort(self.statistics() if stats is None else stats)
        if not len(stats):
            raise ValueError("no successful replicates")
        if level <= 0:
            return 0.0
        k = min(len(stats), math.ceil(level * len(stats) - 1e-12))
        return max(0.0, float(stats[k - 1]))


def _draw(rng: np.random.Generator, n_blocks: int, b: int, replace: bool) -> np.ndarray:
    if replace:
        return rng.integers(0, n_blocks, size=b)
    return np.sort(rng.choice(n_blocks, size=b, replace=False))


def subsample(blocks: Sequence[Any], estimator: Callable[[list], Any], b: int, q: int = 500,
              rng: np.random.Generator | int | None = None, beta: float = 0.5,
              replace: bool = False, fpc: bool = True, jobs: int = 1) -> SubsampleResult:
    """Re-estimate on ``q`` random subsets of ``b`` blocks.

    ``fpc`` rescales deviations by 1/sqrt(1 - b/A) when blocks are drawn
    without replacement, which removes the shrinkage of subsample spread
    when b is not negligible relative to A. All subsets are drawn up front,
    so ``jobs > 1`` (a thread pool) gives the same replicates as one job.
    """
    A = len(blocks)
    if not 1 <= b <= A and not replace:
        raise ValueError(f"block size must satisfy 1 <= b <= {A}")
    if q < 1:
        raise ValueError("q must be >= 1")
    rng = np.random.default_rng(rng)
    theta = np.atleast_1d(np.asarray(estimator(list(blocks)), float))
    draws = [_draw(rng, A, b, replace) for _ in range(q)]

    def one(idx):
        try:
            val = np.atleast_1d(np.asarray(estimator([blocks[i] for i in idx]), float))
        except (ValueError, ZeroDivisionError, FloatingPointError) as e:
            log.debug("replicate failed: %s", e)
            return None
        if val.shape != theta.shape or not np.all(np.isfinite(val)):
            return None
        return val

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            vals = list(pool.map(one, draws))
    else:
        vals = [one(idx) for idx in draws]
    reps = [v for v in vals if v is not None]
    failures = q - len(reps)
    replicates = np.array(reps).reshape(len(reps), theta.size)
    return SubsampleResult(theta, replicates, b, A, q, beta, failures, fpc and not replace)


def confidence_interval(result: SubsampleResult, level: float = 0.95, pointwise: bool = False):
    """Symmetric interval theta -/+ L^{-1}(level) / tau_A.

    With ``pointwise`` each coordinate uses its own deviation quantile;
    otherwise the sup-norm quantile gives a simultaneous band.
    Returns (lo, hi) arrays (scalars for 1-d estimands).
    """
    if pointwise:
        dev = result.deviations()
        half = np.array([result.quantile(level, dev[:, j]) for j in range(dev.shape[1])])
    else:
        half = np.full(result.theta.shape, result.quantile(level))
    half = half / result.tau_full
    lo, hi = result.theta - half, result.theta + half
    if lo.size == 1:
        return float(lo[0]), float(hi[0])
    return lo, hi


# -- convergence rate ---------------------------------------------------------

@dataclass
class BetaEstimate:
    beta: float
    r2: float
    block_sizes: np.ndarray
    quantiles: np.ndarray  # (K, J) unscaled deviation quantiles


def beta_from_quantiles(block_sizes: Sequence[float], quantiles) -> tuple[float, float]:
    """Least-squares rate from log-quantiles across block sizes.

    With y_kj = log L^{-1}_{b_k}(s_j | 1) = a_j - beta * log b_k + u, the
    slope of the row means y_k on log b_k is -beta. Returns (beta, R^2).
    """
    b = np.asarray(block_sizes, float)
    Q = np.asarray(quantiles, float)
    if Q.ndim == 1:
        Q = Q[:, None]
    if len(b) < 2 or Q.shape[0] != len(b):
        raise ValueError("need one quantile row per block size and at least two sizes")
    lb = np.log(b)
    if np.allclose(lb, lb[0]):
        raise ValueError("block sizes must not all be equal")
    if np.any(Q <= 0):
        raise ValueError("quantiles must be positive to take logs")
    y = np.log(Q)
    yk = y.mean(axis=1)
    ybar = y.mean()
    lbar = lb.mean()
    slope = np.sum((yk - ybar) * (lb - lbar)) / np.sum((lb - lbar) ** 2)
    resid = yk - ybar - slope * (lb - lbar)
    ss_tot = np.sum((yk - ybar) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(r2)


def estimate_beta(blocks: Sequence[Any], estimator: Callable[[list], Any],
                  block_sizes: Sequence[int], levels: Sequence[float] = (0.25, 0.5, 0.75),
                  q: int = 500, rng: np.random.Generator | int | None = None,
                  fpc: bool = True) -> BetaEstimate:
    if len(set(block_sizes)) < 2:
        raise ValueError("need at least two distinct block sizes")
    rng = np.random.default_rng(rng)
    rows = []
    for b in block_sizes:
        res = subsample(blocks, estimator, b, q, rng, beta=0.0, fpc=fpc)
        stats = res.statistics()
        rows.append([res.quantile(s, stats) for s in levels])
    Q = np.array(rows)
    beta, r2 = beta_from_quantiles(block_sizes, Q)
    return BetaEstimate(beta, r2, np.asarray(block_sizes), Q)


# -- K-sample Kolmogorov-Smirnov ----------------------------------------------

def ks_k_sample_statistic(samples: Sequence[Sequence[float]]) -> float:
    """max_k sup_x |F_k(x) - F_pooled(x)| over K empirical distributions."""
    arrs = [np.sort(np.asarray(s, float)) for s in samples]
    if len(arrs) < 2:
        raise ValueError("need at least two samples")
    if any(len(a) == 0 for a in arrs):
        raise ValueError("empty sample")
    pooled = np.sort(np.concatenate(arrs))
    # both CDFs are right-continuous steps that only jump at observed values
    pts = np.unique(pooled)
    N = len(pooled)
    cp = np.searchsorted(pooled, pts, side="right")
    # |i/n - j/N| = |i*N - j*n| / (n*N): compare integers, divide once
    best = max(Fraction(int(np.abs(np.searchsorted(a, pts, side="right") * N - cp * len(a)).max()),
                        len(a) * N) for a in arrs)
    return float(best)


@dataclass
class KSResult:
    statistic: float
    pvalue: float
    critical_value: float  # on the unscaled statistic's scale, at ``level``
    level: float
    replicates: np.ndarray = field(repr=False)
    failures: int = 0

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value


def ks_k_sample(samples: Sequence[Sequence[float]], days: Sequence[Sequence[Any]] | None = None,
                b: int | None = None, q: int = 500, level: float = 0.95, beta: float = 0.5,
                rng: np.random.Generator | int | None = None) -> KSResult:
    """K-sample KS statistic with a day-block subsampling critical value.

    ``days`` gives the day label of every observation (parallel to ``samples``);
    without it each observation is its own block. Subsample statistics
    tau_b * T_b approximate the null law of tau_A * T_A.
    """
    samples = [np.asarray(s, float) for s in samples]
    T = ks_k_sample_statistic(samples)
    if days is None:
        offset = 0
        days = []
        for s in samples:
            days.append(np.arange(offset, offset + len(s)))
            offset += len(s)
    days = [np.asarray(d) for d in days]
    labels = np.unique(np.concatenate(days))
    A = len(labels)
    if b is None:
        b = max(2, int(round(A ** 0.7)))
    rng = np.random.default_rng(rng)
    codes = [np.searchsorted(labels, d) for d in days]
    stats, failures = [], 0
    for _ in range(q):
        keep = np.zeros(A, bool)
        keep[rng.choice(A, size=min(b, A), replace=False)] = True
        sub = [s[keep[c]] for s, c in zip(samples, codes)]
        if any(len(s) == 0 for s in sub):
            failures += 1
            continue
        stats.append(b ** beta * ks_k_sample_statistic(sub))
    stats = np.sort(np.array(stats))
    if not len(stats):
        raise ValueError("every subsample left some sample empty")
    tau_A = A ** beta
    pvalue = float(np.mean(stats >= tau_A * T))
    k = min(len(stats), max(1, math.ceil(level * len(stats) - 1e-12)))
    crit = float(stats[k - 1]) / tau_A
    return KSResult(T, pvalue, crit, level, stats, failures)
