"""Statistically validated synchronicity networks.

For every trader pair and every ordered pair of active states, the number of
co-occurring slices is tested against a hypergeometric null (random placement
of each trader's state occurrences over the window).  Benjamini-Hochberg
controls the false discovery rate over the whole family of tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.special import gammaln

from .ingest import ACTIVE_STATES, StateMatrix

STATE_PAIRS = tuple(product(ACTIVE_STATES, ACTIVE_STATES))


@dataclass(frozen=True)
class LinkCandidate:
    i: str
    j: str
    state_i: int
    state_j: int
    co_count: int
    n_i: int
    n_j: int
    T: int
    p_value: float


@dataclass(frozen=True)
class FdrConfig:
    p0: float = 0.05

    def __post_init__(self):
        if not 0 < self.p0 < 1:
            raise ValueError(f"p0 must lie in (0, 1), got {self.p0}")


@dataclass
class ValidatedNetwork:
    nodes: list
    edges: list  # LinkCandidate entries that passed FDR
    threshold: float
    n_tests: int
    p0: float
    T: int
    window: tuple = field(default=None)


def hypergeom_sf(T: int, n_i: int, n_j: int, x: int) -> float:
    """Exact upper tail P(X >= x), X hypergeometric(T, n_i marked, n_j drawn).

    Computed by log-gamma summation of the pmf over k = x..min(n_i, n_j);
    exact to ~1e-14 relative error for any window length.
    """
    T, n_i, n_j, x = int(T), int(n_i), int(n_j), int(x)
    if not (0 <= n_i <= T and 0 <= n_j <= T):
        raise ValueError(f"need 0 <= n_i, n_j <= T, got T={T}, n_i={n_i}, n_j={n_j}")
    if not 0 <= x <= min(n_i, n_j):
        raise ValueError(f"need 0 <= x <= min(n_i, n_j), got x={x}")
    if x <= max(0, n_i + n_j - T):
        return 1.0
    k = np.arange(x, min(n_i, n_j) + 1)
    logpmf = (
        _lchoose(n_i, k)
        + _lchoose(T - n_i, n_j - k)
        - _lchoose(T, n_j)
    )
    m = logpmf.max()
    return float(min(1.0, np.exp(m) * np.exp(logpmf - m).sum()))


def _lchoose(n, k):
    n = np.asarray(n, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def hypergeom_sf_batch(T: int, n_i: np.ndarray, n_j: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`hypergeom_sf` for a common window length T.

    Uses a precomputed log-factorial table and a segmented log-sum-exp over
    the ragged pmf supports.
    """
    n_i = np.asarray(n_i, dtype=np.int64)
    n_j = np.asarray(n_j, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    out = np.ones(len(x), dtype=np.float64)
    hi = np.minimum(n_i, n_j)
    lo = np.maximum(x, np.maximum(0, n_i + n_j - T))
    need = x > np.maximum(0, n_i + n_j - T)
    if not need.any():
        return out
    ni, nj, xs, his = n_i[need], n_j[need], lo[need], hi[need]
    lengths = his - xs + 1
    offsets = np.concatenate(([0], np.cumsum(lengths)))
    k = np.repeat(xs, lengths) + (np.arange(offsets[-1]) - np.repeat(offsets[:-1], lengths))
    rep_ni = np.repeat(ni, lengths)
    rep_nj = np.repeat(nj, lengths)
    lf = gammaln(np.arange(T + 2, dtype=np.float64) + 1.0)  # lf[n] = log n!
    logpmf = (
        lf[rep_ni] - lf[k] - lf[rep_ni - k]
        + lf[T - rep_ni] - lf[rep_nj - k] - lf[T - rep_ni - rep_nj + k]
        - (lf[T] - lf[rep_nj] - lf[T - rep_nj])
    )
    seg_max = np.maximum.reduceat(logpmf, offsets[:-1])
    seg_sum = np.add.reduceat(np.exp(logpmf - np.repeat(seg_max, lengths)), offsets[:-1])
    out[need] = np.minimum(1.0, np.exp(seg_max) * seg_sum)
    return out


def count_cooccurrences(matrix: StateMatrix, i, j, state_pair):
    """Count slices where trader i is in state s_i and trader j in s_j.

    Returns (x, n_i, n_j, T).  The inactive state never matches.
    """
    s_i, s_j = state_pair
    if s_i not in ACTIVE_STATES or s_j not in ACTIVE_STATES:
        raise ValueError(f"state pair must be drawn from {ACTIVE_STATES}, got {state_pair}")
    row_i = matrix.sigma[matrix.index_of(i)]
    row_j = matrix.sigma[matrix.index_of(j)]
    a = row_i == s_i
    b = row_j == s_j
    return int((a & b).sum()), int(a.sum()), int(b.sum()), matrix.n_slices


def bh_fdr(p_values, p0: float, n_tests: int | None = None):
    """Benjamini-Hochberg threshold and rejection flags.

    ``n_tests`` may exceed ``len(p_values)`` when some hypotheses of the
    family were not explicitly scored (their p-values are treated as 1).
    """
    p = np.asarray(p_values, dtype=np.float64)
    if len(p) == 0:
        raise ValueError("p_values must be non-empty")
    m = len(p) if n_tests is None else int(n_tests)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    crit = np.arange(1, len(p) + 1) * p0 / m
    ok = np.flatnonzero(ranked <= crit)
    if len(ok) == 0:
        return 0.0, np.zeros(len(p), dtype=bool)
    threshold = ranked[ok[-1]]
    return float(threshold), p <= threshold


def build_svn(matrix: StateMatrix, config: FdrConfig = FdrConfig(), min_slices: int = 50) -> ValidatedNetwork:
    """Build the statistically validated synchronicity network of a window.

    All 9 state pairs are tested for all trader pairs; pairs where either
    trader never shows the relevant state are untestable and excluded from
    the hypothesis count.  Isolated nodes are dropped from the result.
    """
    T = matrix.n_slices
    if T < min_slices:
        raise ValueError(f"window has {T} slices; need at least {min_slices}")
    N = matrix.n_traders
    if N < 2:
        return ValidatedNetwork(nodes=[], edges=[], threshold=0.0, n_tests=0, p0=config.p0, T=T)

    ind = {s: (matrix.sigma == s) for s in ACTIVE_STATES}
    occ = {s: ind[s].sum(axis=1).astype(np.int64) for s in ACTIVE_STATES}
    iu, ju = np.triu_indices(N, k=1)

    all_p, all_meta = [], []
    for s_i, s_j in STATE_PAIRS:
        co = (ind[s_i].astype(np.int64) @ ind[s_j].T.astype(np.int64))[iu, ju]
        n_i = occ[s_i][iu]
        n_j = occ[s_j][ju]
        testable = (n_i > 0) & (n_j > 0)
        p = hypergeom_sf_batch(T, n_i[testable], n_j[testable], co[testable])
        all_p.append(p)
        all_meta.append((s_i, s_j, iu[testable], ju[testable], co[testable], n_i[testable], n_j[testable]))

    pvals = np.concatenate(all_p) if all_p else np.array([])
    if len(pvals) == 0:
        return ValidatedNetwork(nodes=[], edges=[], threshold=0.0, n_tests=0, p0=config.p0, T=T)
    threshold, reject = bh_fdr(pvals, config.p0)

    edges = []
    pos = 0
    for p, (s_i, s_j, ii, jj, co, n_i, n_j) in zip(all_p, all_meta):
        rej = reject[pos : pos + len(p)]
        pos += len(p)
        for k in np.flatnonzero(rej):
            edges.append(
                LinkCandidate(
                    i=matrix.traders[ii[k]],
                    j=matrix.traders[jj[k]],
                    state_i=s_i,
                    state_j=s_j,
                    co_count=int(co[k]),
                    n_i=int(n_i[k]),
                    n_j=int(n_j[k]),
                    T=T,
                    p_value=float(p[k]),
                )
            )
    edges.sort(key=lambda e: (str(e.i), str(e.j), e.state_i, e.state_j))
    nodes = sorted({e.i for e in edges} | {e.j for e in edges}, key=str)
    return ValidatedNetwork(
        nodes=nodes,
        edges=edges,
        threshold=threshold,
        n_tests=len(pvals),
        p0=config.p0,
        T=T,
    )
