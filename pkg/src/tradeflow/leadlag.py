"""Group-level state aggregation and validated lead-lag networks.

Group states follow the same imbalance-ratio rule as trader states.  A
directed edge (g, s) -> (g', s') means group g in state s at slice t
systematically precedes group g' in state s' at slice t+1; self-loops are
allowed and the hypothesis family counts all 9 * N_groups^2 ordered tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ACTIVE_STATES, StateMatrix, states_from_volumes
from .svn import FdrConfig, STATE_PAIRS, bh_fdr, hypergeom_sf_batch


@dataclass
class GroupStateSeries:
    """Per-group aggregated volumes and states over a common grid."""

    labels: list
    grid: object
    V: np.ndarray  # (n_groups, n_slices)
    G: np.ndarray
    sigma: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class LeadLagEdge:
    from_group: int
    to_group: int
    state_from: int
    state_to: int
    co_count: int
    p_value: float


@dataclass
class LeadLagNetwork:
    groups: list
    edges: list
    threshold: float
    n_tests: int
    p0: float
    n_pairs: int  # aligned (t, t+1) slice pairs actually tested


@dataclass
class TraderLeadLagAdjacency:
    traders: list
    matrix: np.ndarray  # boolean (n, n); [i, j] means i's group leads j's group

    def edge_set(self) -> set:
        ii, jj = np.nonzero(self.matrix)
        return {(self.traders[a], self.traders[b]) for a, b in zip(ii, jj)}


def aggregate_groups(matrix: StateMatrix, partition: dict, rho0: float = 0.01) -> GroupStateSeries:
    """Aggregate trader volumes to group level and classify group states.

    Traders absent from the partition are excluded; empty partitions are an
    error.  Gross volumes add: G_g = sum of member G.
    """
    if not partition:
        raise ValueError("empty partition")
    labels = sorted(set(partition.values()))
    lab_index = {g: k for k, g in enumerate(labels)}
    n_groups, T = len(labels), matrix.n_slices
    V = np.zeros((n_groups, T))
    G = np.zeros((n_groups, T))
    for k, trader in enumerate(matrix.traders):
        g = partition.get(trader)
        if g is None:
            continue
        V[lab_index[g]] += matrix.V[k]
        G[lab_index[g]] += matrix.G[k]
    sigma = states_from_volumes(V, G, rho0)
    return GroupStateSeries(labels=labels, grid=matrix.grid, V=V, G=G, sigma=sigma)


def _lag_pairs(grid) -> np.ndarray:
    """Indices t such that (t, t+1) does not straddle a session gap."""
    contiguous = grid.contiguous_with_previous()
    return np.flatnonzero(contiguous[1:] if len(contiguous) else contiguous)


def build_leadlag(series: GroupStateSeries, config: FdrConfig = FdrConfig(), lag: int = 1) -> LeadLagNetwork:
    """Validate lagged co-occurrences between group states.

    Only lag-1 pairs within a session are aligned (no pairing across
    overnight or weekend gaps).  BH is applied with the full family size
    m = 9 * N_groups^2; untestable combinations contribute p = 1 implicitly.
    """
    if lag != 1:
        raise ValueError("only lag 1 is supported in network validation")
    n_groups = series.n_groups
    if n_groups < 1:
        return LeadLagNetwork(groups=[], edges=[], threshold=0.0, n_tests=0, p0=config.p0, n_pairs=0)
    t_lead = _lag_pairs(series.grid)
    t_lag = t_lead + 1
    T = len(t_lead)
    m = 9 * n_groups * n_groups
    if T == 0:
        return LeadLagNetwork(groups=list(series.labels), edges=[], threshold=0.0, n_tests=m, p0=config.p0, n_pairs=0)

    lead_ind = {s: (series.sigma[:, t_lead] == s) for s in ACTIVE_STATES}
    lag_ind = {s: (series.sigma[:, t_lag] == s) for s in ACTIVE_STATES}
    lead_occ = {s: lead_ind[s].sum(axis=1).astype(np.int64) for s in ACTIVE_STATES}
    lag_occ = {s: lag_ind[s].sum(axis=1).astype(np.int64) for s in ACTIVE_STATES}

    all_p, all_meta = [], []
    for s, s2 in STATE_PAIRS:
        co = lead_ind[s].astype(np.int64) @ lag_ind[s2].T.astype(np.int64)  # (g, g')
        gi, gj = np.meshgrid(np.arange(n_groups), np.arange(n_groups), indexing="ij")
        gi, gj = gi.ravel(), gj.ravel()
        n_i = lead_occ[s][gi]
        n_j = lag_occ[s2][gj]
        x = co.ravel()
        testable = (n_i > 0) & (n_j > 0)
        p = hypergeom_sf_batch(T, n_i[testable], n_j[testable], x[testable])
        all_p.append(p)
        all_meta.append((s, s2, gi[testable], gj[testable], x[testable]))

    pvals = np.concatenate(all_p)
    if len(pvals) == 0:
        return LeadLagNetwork(groups=list(series.labels), edges=[], threshold=0.0, n_tests=m, p0=config.p0, n_pairs=T)
    threshold, reject = bh_fdr(pvals, config.p0, n_tests=m)

    edges = []
    pos = 0
    for p, (s, s2, gi, gj, x) in zip(all_p, all_meta):
        rej = reject[pos : pos + len(p)]
        pos += len(p)
        for k in np.flatnonzero(rej):
            edges.append(
                LeadLagEdge(
                    from_group=series.labels[gi[k]],
                    to_group=series.labels[gj[k]],
                    state_from=s,
                    state_to=s2,
                    co_count=int(x[k]),
                    p_value=float(p[k]),
                )
            )
    edges.sort(key=lambda e: (e.from_group, e.to_group, e.state_from, e.state_to))
    return LeadLagNetwork(
        groups=list(series.labels),
        edges=edges,
        threshold=threshold,
        n_tests=m,
        p0=config.p0,
        n_pairs=T,
    )


def expand_trader_leadlag(network: LeadLagNetwork, partition: dict) -> TraderLeadLagAdjacency:
    """Expand validated group edges to the trader-level adjacency Lambda.

    Lambda[i, j] = 1 iff some validated edge leads from trader i's group to
    trader j's group (any state pair).
    """
    traders = sorted(partition, key=str)
    index = {t: k for k, t in enumerate(traders)}
    group_leads = {(e.from_group, e.to_group) for e in network.edges}
    members = {}
    for t, g in partition.items():
        members.setdefault(g, []).append(index[t])
    lam = np.zeros((len(traders), len(traders)), dtype=bool)
    for g, g2 in group_leads:
        src = members.get(g, [])
        dst = members.get(g2, [])
        if src and dst:
            lam[np.ix_(src, dst)] = True
    return TraderLeadLagAdjacency(traders=traders, matrix=lam)
