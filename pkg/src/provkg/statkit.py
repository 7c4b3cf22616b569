"""Statistics used across the evaluation: rank tests, effect sizes, CIs, agreement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

# Generator of record for every seeded operation: numpy's PCG64 via default_rng.
DEFAULT_SEED = 42
EXACT_MWU_LIMIT = 64


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float | None = None
    ci: tuple[float, float] | None = None
    n: tuple[int, ...] = ()
    extra: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p={self.p_value} outside [0, 1]")
        if self.ci is not None and self.ci[0] > self.ci[1]:
            raise ValueError(f"ci lower bound above upper: {self.ci}")


def _clean(x: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name}: need a non-empty 1-d sample")
    return arr


# --------------------------------------------------------------------------- Mann-Whitney

def mann_whitney_u(a: Sequence[float], b: Sequence[float], exact: bool | None = None) -> TestResult:
    """Two-sided Mann-Whitney U; ``statistic`` is U for sample ``a``.

    Exact permutation p (ties handled through mid-ranks) when
    ``len(a) * len(b) <= 64``; otherwise the tie-corrected normal
    approximation with continuity correction.
    """
    x, y = _clean(a, "a"), _clean(b, "b")
    na, nb = x.size, y.size
    n = na + nb
    ranks = sps.rankdata(np.concatenate([x, y]))
    u_a = float(ranks[:na].sum() - na * (na + 1) / 2)
    u_b = na * nb - u_a
    mu = na * nb / 2
    if exact is None:
        exact = na * nb <= EXACT_MWU_LIMIT
    if exact:
        obs = abs(u_a - mu)
        base = na * (na + 1) / 2
        hits = total = 0
        for idx in itertools.combinations(range(n), na):
            u = ranks[list(idx)].sum() - base
            total += 1
            if abs(u - mu) >= obs - 1e-9:
                hits += 1
        p = hits / total
        method = "exact"
    else:
        _, counts = np.unique(ranks, return_counts=True)
        tie = float((counts ** 3 - counts).sum())
        var = na * nb / 12 * ((n + 1) - tie / (n * (n - 1)))
        if var <= 0:
            p = 1.0
        else:
            z = max(abs(u_a - mu) - 0.5, 0.0) / math.sqrt(var)
            p = min(1.0, 2 * sps.norm.sf(z))
        method = "normal"
    return TestResult(u_a, float(p), n=(na, nb), extra={"u_b": u_b, "method": method})


# --------------------------------------------------------------------------- effect size

def cohens_d(mean_a: float, sd_a: float, n_a: int, mean_b: float, sd_b: float, n_b: int) -> float:
    """(mean_b - mean_a) / pooled SD."""
    if n_a < 2 or n_b < 2:
        raise ValueError("each group needs n >= 2")
    pooled = math.sqrt(((n_a - 1) * sd_a ** 2 + (n_b - 1) * sd_b ** 2) / (n_a + n_b - 2))
    if pooled == 0:
        if mean_a == mean_b:
            return 0.0
        raise ValueError("pooled SD is zero")
    return (mean_b - mean_a) / pooled


def cohens_d_samples(a: Sequence[float], b: Sequence[float]) -> float:
    x, y = _clean(a, "a"), _clean(b, "b")
    return cohens_d(x.mean(), x.std(ddof=1) if x.size > 1 else 0.0, x.size,
                    y.mean(), y.std(ddof=1) if y.size > 1 else 0.0, y.size)


# --------------------------------------------------------------------------- resampling

def bootstrap_ci(values: Sequence[float], statistic: Callable[[np.ndarray], float] = np.mean,
                 resamples: int = 10_000, seed: int = DEFAULT_SEED,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval from ``np.random.default_rng(seed)``."""
    x = _clean(values, "values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    draws = x[idx]
    if statistic in (np.mean, np.median):
        stat = statistic(draws, axis=1)
    else:
        stat = np.array([statistic(row) for row in draws])
    alpha = (1 - level) / 2
    lo, hi = np.percentile(stat, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


# --------------------------------------------------------------------------- multiplicity

def bh_correct(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up q-values, returned in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return []
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q.tolist()


# --------------------------------------------------------------------------- proportions

def wilson_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must be within [0, n]")
    z = float(sps.norm.ppf(1 - (1 - level) / 2))
    phat = successes / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, float(centre - half))
    hi = 1.0 if successes == n else min(1.0, float(centre + half))
    return lo, hi


# --------------------------------------------------------------------------- agreement

def krippendorff_alpha(ratings, metric: str = "ordinal") -> float:
    """Krippendorff's alpha for a raters × units matrix; NaN marks a missing rating."""
    data = np.asarray(ratings, dtype=float)
    if data.ndim != 2:
        raise ValueError("ratings must be a raters x units matrix")
    values = np.unique(data[~np.isnan(data)])
    index = {v: i for i, v in enumerate(values)}
    k = values.size
    o = np.zeros((k, k))
    pairable = 0
    for u in range(data.shape[1]):
        col = data[:, u]
        col = col[~np.isnan(col)]
        m = col.size
        if m < 2:
            continue
        pairable += 1
        for i, j in itertools.permutations(range(m), 2):
            o[index[col[i]], index[col[j]]] += 1.0 / (m - 1)
    if pairable == 0:
        raise ValueError("need at least two raters overlapping on one unit")
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if metric == "nominal":
        delta = 1.0 - np.eye(k)
    elif metric == "interval":
        delta = (values[:, None] - values[None, :]) ** 2
    elif metric == "ordinal":
        cum = np.cumsum(n_c)
        delta = np.zeros((k, k))
        for c in range(k):
            for j in range(k):
                lo, hi = min(c, j), max(c, j)
                between = cum[hi] - (cum[lo - 1] if lo > 0 else 0.0)
                delta[c, j] = (between - (n_c[c] + n_c[j]) / 2) ** 2
    else:
        raise ValueError(f"unknown metric {metric!r}")
    d_o = (o * delta).sum()
    d_e = (np.outer(n_c, n_c) * delta).sum()
    if d_e == 0:
        return 1.0
    return float(1.0 - (n - 1) * d_o / d_e)


def weighted_kappa_quadratic(rater_a: Sequence[float], rater_b: Sequence[float],
                             lo: float = 1.0, hi: float = 5.0, step: float = 0.5) -> float:
    """Quadratic-weighted kappa over the grid ``lo, lo+step, ..., hi``."""
    a = np.asarray(rater_a, dtype=float)
    b = np.asarray(rater_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("rater vectors differ in length")
    if a.size == 0:
        raise ValueError("empty ratings")
    k = int(round((hi - lo) / step)) + 1
    ia, ib = (a - lo) / step, (b - lo) / step
    for arr in (ia, ib):
        if np.any(np.abs(arr - np.round(arr)) > 1e-9) or arr.min() < 0 or arr.max() > k - 1:
            raise ValueError(f"ratings must lie on the {step}-step grid within [{lo}, {hi}]")
    ia, ib = np.round(ia).astype(int), np.round(ib).astype(int)
    obs = np.zeros((k, k))
    np.add.at(obs, (ia, ib), 1.0)
    obs /= obs.sum()
    exp = np.outer(obs.sum(axis=1), obs.sum(axis=0))
    grid = np.arange(k)
    w = (grid[:, None] - grid[None, :]) ** 2 / (k - 1) ** 2
    den = (w * exp).sum()
    if den == 0:
        return 1.0
    return float(1.0 - (w * obs).sum() / den)


def icc_2_1(ratings) -> float:
    """ICC(2,1): two-way random effects, absolute agreement, single rater."""
    x = np.asarray(ratings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need an items x raters matrix with at least 2 of each")
    if np.isnan(x).any():
        raise ValueError("ICC(2,1) needs a complete matrix")
    n, k = x.shape
    grand = x.mean()
    ss_rows = k * ((x.mean(axis=1) - grand) ** 2).sum()
    ss_cols = n * ((x.mean(axis=0) - grand) ** 2).sum()
    ss_err = ((x - grand) ** 2).sum() - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    den = msr + (k - 1) * mse + k * (msc - mse) / n
    if den == 0:
        return 1.0 if msr == mse == 0 else float("nan")
    return float((msr - mse) / den)


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> TestResult:
    x, y = _clean(a, "a"), _clean(b, "b")
    if x.size != y.size:
        raise ValueError("length mismatch")
    if x.size < 3:
        raise ValueError("spearman needs n >= 3")
    res = sps.spearmanr(x, y)
    rho = float(res.statistic)
    p = float(res.pvalue) if not math.isnan(res.pvalue) else 1.0
    return TestResult(max(-1.0, min(1.0, rho)), min(max(p, 0.0), 1.0), n=(x.size,))
