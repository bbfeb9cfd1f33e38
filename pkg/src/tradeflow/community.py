"""Trader group detection on the projected weighted network.

The validated multi-edge network is collapsed to a weighted graph (buy-sell
labelled links excluded), then partitioned by greedily minimizing the
two-level map equation of an undirected random walk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .svn import ValidatedNetwork

EXCLUDED_PAIRS = {(1, -1), (-1, 1)}


@dataclass
class WeightedGraph:
    nodes: list
    # adjacency: node index -> {neighbour index: weight}
    adj: list

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def strength(self, k: int) -> float:
        return float(sum(self.adj[k].values()))

    def total_weight(self) -> float:
        return sum(self.strength(k) for k in range(self.n_nodes)) / 2.0

    def components(self) -> list:
        """Connected components as lists of node indices, deterministic order."""
        seen = [False] * self.n_nodes
        comps = []
        for start in range(self.n_nodes):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                k = stack.pop()
                comp.append(k)
                for nbr in self.adj[k]:
                    if not seen[nbr]:
                        seen[nbr] = True
                        stack.append(nbr)
            comps.append(sorted(comp))
        return comps


def project_weighted(network: ValidatedNetwork) -> WeightedGraph:
    """Collapse validated multi-edges to integer weights.

    The weight of (i, j) is the number of validated links whose state pair is
    not buy-sell; pairs left with zero weight are omitted entirely.
    """
    weights = {}
    for e in network.edges:
        if (e.state_i, e.state_j) in EXCLUDED_PAIRS:
            continue
        key = (e.i, e.j) if str(e.i) <= str(e.j) else (e.j, e.i)
        weights[key] = weights.get(key, 0) + 1
    nodes = sorted({i for i, _ in weights} | {j for _, j in weights}, key=str)
    index = {n: k for k, n in enumerate(nodes)}
    adj = [dict() for _ in nodes]
    for (i, j), w in weights.items():
        adj[index[i]][index[j]] = w
        adj[index[j]][index[i]] = w
    return WeightedGraph(nodes=nodes, adj=adj)


def _plogp(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def map_equation_codelength(graph: WeightedGraph, assignment) -> float:
    """Two-level description length L(M) in bits.

    ``assignment`` maps node (id or index position) to a module label.  Visit
    rates are proportional to node strength; module exit rates to the cut.
    """
    if graph.n_nodes == 0:
        raise ValueError("empty graph")
    labels = _as_label_array(graph, assignment)
    strengths = np.array([graph.strength(k) for k in range(graph.n_nodes)])
    w2 = strengths.sum()
    if w2 == 0:
        return 0.0
    p = strengths / w2
    modules = np.unique(labels)
    cut = np.zeros(len(modules))
    pm = np.zeros(len(modules))
    mod_index = {m: k for k, m in enumerate(modules)}
    for k in range(graph.n_nodes):
        mk = mod_index[labels[k]]
        pm[mk] += p[k]
        for nbr, w in graph.adj[k].items():
            if labels[nbr] != labels[k]:
                cut[mk] += w
    q = cut / w2
    sum_q = q.sum()
    # expanded entropy form: the exit rate q_i is coded both in the index
    # codebook and inside module i, hence the factor 2
    L = (
        _plogp(np.array([sum_q])).item()
        - 2.0 * _plogp(q).sum()
        - _plogp(p).sum()
        + _plogp(q + pm).sum()
    )
    return float(L)


def _as_label_array(graph: WeightedGraph, assignment) -> np.ndarray:
    """Dicts are keyed by node id; sequences are positional."""
    if isinstance(assignment, dict):
        return np.array([assignment[n] for n in graph.nodes])
    return np.asarray(assignment)


class _Partitioner:
    """Greedy map-equation minimization on one graph (node indices only)."""

    def __init__(self, adj, strengths, w2):
        self.adj = adj
        self.s = strengths
        self.w2 = w2
        self.n = len(adj)
        self.node_term = sum(_plp(si / w2) for si in strengths)

    def codelength(self, labels):
        mods = {}
        for k in range(self.n):
            m = labels[k]
            if m not in mods:
                mods[m] = [0.0, 0.0]  # [sum p, cut]
            mods[m][0] += self.s[k] / self.w2
        for k in range(self.n):
            for nbr, w in self.adj[k].items():
                if labels[nbr] != labels[k]:
                    mods[labels[k]][1] += w
        sum_q = 0.0
        acc = 0.0
        for pm, cut in mods.values():
            q = cut / self.w2
            sum_q += q
            acc += -2.0 * _plp(q) + _plp(q + pm)
        return _plp(sum_q) + acc - self.node_term

    def optimize(self, rng):
        labels = list(range(self.n))
        improved = True
        while improved:
            improved = self._move_pass(labels, rng)
            merged = self._aggregate_pass(labels, rng)
            improved = improved or merged
        return labels

    def _move_pass(self, labels, rng):
        """Node-level local moves until no single move improves L.

        Keeps per-module visit mass and cut incrementally; a candidate move
        only touches the donor and recipient module terms, so each
        evaluation is O(deg) instead of O(E).  An accepted move is verified
        against the exact codelength and must strictly decrease it:
        incremental round-off can otherwise declare symmetric, equal-cost
        moves improving in both directions and cycle forever.
        """
        base = self.codelength(labels)
        pm = {}
        cut = {}
        size = {}
        for k in range(self.n):
            m = labels[k]
            pm[m] = pm.get(m, 0.0) + self.s[k] / self.w2
            size[m] = size.get(m, 0) + 1
            cut.setdefault(m, 0.0)
            for nbr, w in self.adj[k].items():
                if labels[nbr] != m:
                    cut[m] = cut.get(m, 0.0) + w
        sum_q = sum(cut.values()) / self.w2

        def mod_term(q_raw, mass):
            q = q_raw / self.w2
            return -2.0 * _plp(q) + _plp(q + mass)

        any_gain = False
        order = np.arange(self.n)
        improving = True
        while improving:
            improving = False
            rng.shuffle(order)
            for k in order:
                a = labels[k]
                w_to = {}
                for nbr, w in self.adj[k].items():
                    m = labels[nbr]
                    w_to[m] = w_to.get(m, 0) + w
                cands = sorted(m for m in w_to if m != a)
                if not cands:
                    continue
                pk = self.s[k] / self.w2
                deg_k = self.s[k]
                w_a = w_to.get(a, 0)
                # moving k out of a: internal edges to a become boundary,
                # all of k's other edges stop counting against a
                new_cut_a = cut[a] + 2 * w_a - deg_k
                a_vanishes = size[a] == 1
                before_a = _plp(sum_q) + mod_term(cut[a], pm[a])
                best_delta, best_m = 0.0, a
                for b in cands:
                    # k's edges into b become internal, the rest boundary of b
                    new_cut_b = cut[b] + deg_k - w_a - 2 * w_to[b]
                    new_sum_q = sum_q + (new_cut_a - cut[a] + new_cut_b - cut[b]) / self.w2
                    after = _plp(new_sum_q) + mod_term(new_cut_b, pm[b] + pk)
                    if not a_vanishes:
                        after += mod_term(new_cut_a, pm[a] - pk)
                    before = before_a + mod_term(cut[b], pm[b])
                    delta = after - before
                    if delta < best_delta - 1e-12:
                        best_delta, best_m = delta, b
                if best_m != a:
                    b = best_m
                    labels[k] = b
                    L_new = self.codelength(labels)
                    if L_new >= base - 1e-12:
                        labels[k] = a
                        continue
                    base = L_new
                    new_cut_b = cut[b] + deg_k - w_a - 2 * w_to[b]
                    sum_q += (new_cut_a - cut[a] + new_cut_b - cut[b]) / self.w2
                    cut[b] = new_cut_b
                    pm[b] += pk
                    size[b] += 1
                    if a_vanishes:
                        cut.pop(a), pm.pop(a), size.pop(a)
                    else:
                        cut[a] = new_cut_a
                        pm[a] -= pk
                        size[a] -= 1
                    labels[k] = b
                    improving = True
                    any_gain = True
        return any_gain

    def _aggregate_pass(self, labels, rng):
        """Try merging whole modules along inter-module edges."""
        any_gain = False
        improving = True
        while improving:
            improving = False
            base = self.codelength(labels)
            pairs = set()
            for k in range(self.n):
                for nbr in self.adj[k]:
                    a, b = labels[k], labels[nbr]
                    if a != b:
                        pairs.add((min(a, b), max(a, b)))
            for a, b in sorted(pairs):
                current = [l for l in labels]
                if a not in current or b not in current:
                    continue
                merged = [a if l == b else l for l in labels]
                L = self.codelength(merged)
                if L < base - 1e-12:
                    labels[:] = merged
                    base = L
                    improving = True
                    any_gain = True
        return any_gain


def _plp(x: float) -> float:
    return x * np.log2(x) if x > 0 else 0.0


def detect_communities(graph: WeightedGraph, seed: int = 0, n_restarts: int = 10) -> dict:
    """Detect trader groups by greedy map-equation minimization.

    Runs ``n_restarts`` seeded restarts per connected component, keeps the
    minimal-codelength result (ties broken by lexicographically smallest
    assignment), and returns a mapping node -> contiguous positive label.
    """
    if graph.n_nodes == 0:
        return {}
    strengths = [graph.strength(k) for k in range(graph.n_nodes)]
    w2 = sum(strengths)
    assignment_idx = [None] * graph.n_nodes
    next_label = 0
    for comp in graph.components():
        local = {g: k for k, g in enumerate(comp)}
        adj = [{local[nbr]: w for nbr, w in graph.adj[g].items()} for g in comp]
        if w2 == 0 or len(comp) == 1:
            best = [0] * len(comp)
        else:
            part = _Partitioner(adj, [strengths[g] for g in comp], w2)
            best, best_L = None, None
            for r in range(n_restarts):
                rng = np.random.default_rng([seed, r])
                labels = part.optimize(rng)
                labels = _canonical(labels)
                L = part.codelength(labels)
                key = (round(L, 12), labels)
                if best is None or key < (round(best_L, 12), best):
                    best, best_L = labels, L
        n_mods = max(best) + 1
        for k, g in enumerate(comp):
            assignment_idx[g] = next_label + best[k] + 1
        next_label += n_mods
    return {graph.nodes[k]: assignment_idx[k] for k in range(graph.n_nodes)}


def _canonical(labels) -> list:
    """Relabel modules by first appearance so equal partitions compare equal."""
    seen = {}
    out = []
    for l in labels:
        if l not in seen:
            seen[l] = len(seen)
        out.append(seen[l])
    return out
