"""Statistical evaluation of forecast records.

Cumulative performance series, a serial-dependence-robust test of binary
predictive power (seeded circular-block-permutation reference method, with a
Newey-West asymptotic variant behind a method flag), one-sided location
tests, rank-statistic ROC-AUC and hourly conditioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps
from scipy.stats import rankdata


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int
    method: str


@dataclass
class PerformanceSeries:
    sign_product: np.ndarray  # pred_sign * realized_sign per slice
    flow_product: np.ndarray  # pred_sign * realized_flow per slice
    cum_sign: np.ndarray
    cum_flow: np.ndarray
    cum_realized_flow: np.ndarray


def performance_series(predicted, realized_sign, realized_flow) -> PerformanceSeries:
    """Per-slice products and their prefix sums; zero predictions contribute 0."""
    p = np.asarray(predicted, dtype=np.float64)
    s = np.asarray(realized_sign, dtype=np.float64)
    f = np.asarray(realized_flow, dtype=np.float64)
    sign_product = p * s
    flow_product = p * f
    return PerformanceSeries(
        sign_product=sign_product,
        flow_product=flow_product,
        cum_sign=np.cumsum(sign_product),
        cum_flow=np.cumsum(flow_product),
        cum_realized_flow=np.cumsum(f),
    )


def _binary_pairs(predicted, realized):
    p = np.asarray(predicted)
    r = np.asarray(realized)
    keep = (p != 0) & (r != 0)
    return p[keep].astype(np.float64), r[keep].astype(np.float64)


def chou_chu_test(
    predicted,
    realized,
    method: str = "permutation",
    n_permutations: int = 10_000,
    seed: int = 0,
    block_length: int | None = None,
):
    """Test whether the binary predictions have power on the realized signs.

    H0: no predictive association, allowing serial dependence in both
    series.  The reference method permutes the realized series in circular
    blocks of length ceil(n^(1/3)); ``method="asymptotic"`` uses a
    Newey-West variance for the mean product instead.  Returns None when the
    realized series is constant (test undefined).
    """
    a, b = _binary_pairs(predicted, realized)
    n = len(a)
    if n < 30:
        raise ValueError(f"need n >= 30 binary pairs, got {n}")
    if len(np.unique(b)) < 2:
        return None
    stat = float(np.sum(a * b))
    L = block_length or max(1, math.ceil(n ** (1.0 / 3.0)))
    if method == "permutation":
        rng = np.random.default_rng(seed)
        nb = math.ceil(n / L)
        exceed = 0
        chunk = max(1, min(n_permutations, 20_000_000 // (nb * L)))
        done = 0
        idx_base = np.arange(L)
        while done < n_permutations:
            m = min(chunk, n_permutations - done)
            starts = rng.integers(0, n, size=(m, nb))
            idx = (starts[:, :, None] + idx_base[None, None, :]) % n
            perm = b[idx.reshape(m, nb * L)[:, :n]]
            exceed += int(np.sum(perm @ a >= stat))
            done += m
        p = (1 + exceed) / (n_permutations + 1)
        return TestResult(statistic=stat, p_value=float(p), n=n, method="chou-chu-permutation")
    if method == "asymptotic":
        c = a * b
        mean = c.mean()
        lrv = _newey_west_lrv(c - mean, L)
        if lrv <= 0:
            return None
        z = mean / math.sqrt(lrv / n)
        p = float(sps.norm.sf(z))
        return TestResult(statistic=float(z), p_value=p, n=n, method="chou-chu-asymptotic")
    raise ValueError(f"unknown method {method!r}")


def _newey_west_lrv(x, max_lag: int) -> float:
    n = len(x)
    gamma0 = float(np.dot(x, x) / n)
    lrv = gamma0
    for lag in range(1, min(max_lag, n - 1) + 1):
        w = 1.0 - lag / (max_lag + 1.0)
        lrv += 2.0 * w * float(np.dot(x[:-lag], x[lag:]) / n)
    return lrv


def _wilcoxon_exact_greater(values) -> TestResult:
    """Exact one-sided signed-rank p-value with midranks for ties."""
    v = np.asarray(values, dtype=np.float64)
    v = v[v != 0]
    n = len(v)
    ranks2 = (2 * rankdata(np.abs(v))).astype(np.int64)  # doubled midranks are integers
    w2_obs = int(ranks2[v > 0].sum())
    total = int(ranks2.sum())
    # distribution of the doubled statistic under random sign assignment
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = 0.5 * (dist + shifted)
    p = float(dist[w2_obs:].sum())
    return TestResult(statistic=w2_obs / 2.0, p_value=p, n=n, method="wilcoxon-exact")


def _wilcoxon_normal_greater(values) -> TestResult:
    v = np.asarray(values, dtype=np.float64)
    v = v[v != 0]
    n = len(v)
    ranks = rankdata(np.abs(v))
    w_plus = float(ranks[v > 0].sum())
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(v), return_counts=True)
    tie_term = float(np.sum(counts**3 - counts))
    var = (n * (n + 1) * (2 * n + 1) - tie_term / 2.0) / 24.0
    if var <= 0:
        return TestResult(statistic=w_plus, p_value=1.0, n=n, method="wilcoxon-normal")
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return TestResult(statistic=z, p_value=float(sps.norm.sf(z)), n=n, method="wilcoxon-normal")


def location_tests(values):
    """One-sided t and Wilcoxon signed-rank tests of positive location.

    Exact Wilcoxon for n <= 50 (midrank ties handled by enumeration), normal
    approximation with tie correction beyond.  All-zero input leaves the
    Wilcoxon absent.
    """
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 10:
        raise ValueError(f"need n >= 10 values, got {len(v)}")
    t_stat, t_p = sps.ttest_1samp(v, 0.0, alternative="greater")
    t_res = TestResult(statistic=float(t_stat), p_value=float(t_p), n=len(v), method="t")
    nz = v[v != 0]
    if len(nz) == 0:
        return t_res, None
    if len(nz) <= 50:
        w_res = _wilcoxon_exact_greater(v)
    else:
        w_res = _wilcoxon_normal_greater(v)
    return t_res, w_res


def roc_auc(scores, outcomes) -> float:
    """AUC = P(score+ > score-) + P(equal)/2, via the rank statistic."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcomes)
    pos = s[y == 1]
    neg = s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both outcome classes must be present")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


def hourly_condition(
    predicted,
    realized_sign,
    realized_flow,
    hours,
    min_per_hour: int = 30,
    seed: int = 0,
    n_permutations: int = 10_000,
):
    """Run the predictive-power and location tests within each session hour.

    Hours with fewer than ``min_per_hour`` observations are omitted with a
    note.  Returns ``(table, omitted)`` where ``table`` maps hour to a dict
    of TestResults.
    """
    predicted = np.asarray(predicted)
    realized_sign = np.asarray(realized_sign)
    realized_flow = np.asarray(realized_flow, dtype=np.float64)
    hours = np.asarray(hours)
    table, omitted = {}, {}
    for h in np.unique(hours):
        sel = hours == h
        n = int(sel.sum())
        if n < min_per_hour:
            omitted[int(h)] = f"only {n} observations (need {min_per_hour})"
            continue
        entry = {"n": n}
        try:
            entry["chou_chu"] = chou_chu_test(
                predicted[sel], realized_sign[sel], seed=seed, n_permutations=n_permutations
            )
        except ValueError:
            entry["chou_chu"] = None
        perf = predicted[sel] * realized_flow[sel]
        try:
            entry["t"], entry["wilcoxon"] = location_tests(perf)
        except ValueError:
            entry["t"], entry["wilcoxon"] = None, None
        table[int(h)] = entry
    return table, omitted


def hourly_covariate_auc(day_index, hours, correct, covariate_by_day):
    """Per-hour AUC of a daily covariate against daily prediction success.

    ``correct`` flags each (day, hour) prediction; the covariate has one
    value per day, so the AUC for a given hour compares the covariate
    between days whose hour-h prediction succeeded and days where it failed.
    Hours where either outcome class is missing are skipped.
    """
    day_index = np.asarray(day_index)
    hours = np.asarray(hours)
    correct = np.asarray(correct, dtype=np.int64)
    out = {}
    for h in np.unique(hours):
        sel = hours == h
        days = day_index[sel]
        succ = correct[sel]
        scores, labels = [], []
        for d, s in zip(days, succ):
            if d in covariate_by_day and covariate_by_day[d] is not None:
                scores.append(covariate_by_day[d])
                labels.append(s)
        try:
            out[int(h)] = roc_auc(scores, labels)
        except ValueError:
            continue
    return out
