"""Anchor search, anchor-connecting subgraphs and greedy relevance expansion."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import GraphError, ItemGraph
from .modality import NEG_INF, ModalityMask, ModalityStore, relevance_vector

MAX_ANCHORS = 64
# Moves must beat this to count as an improvement; guards against rounding churn.
IMPROVE_EPS = 1e-12


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorSet:
    query: int
    modality: tuple[int, ...]
    anchors: list[int]
    scores: list[float]


@dataclass
class Subgraph:
    nodes: list[int]
    anchors: list[int]
    components: list[list[int]]
    phi: float | None = None
    trace: list[float] = field(default_factory=list)
    initial: list[int] = field(default_factory=list)

    @property
    def contains_anchors(self) -> bool:
        return set(self.anchors) <= set(self.nodes)


def retrieve_anchors(
    store: ModalityStore, mask: ModalityMask, i: int, m: int, k: int
) -> AnchorSet:
    """Exact top-``k`` cosine neighbours of ``i`` in modality ``m``.

    Only items observing ``m`` qualify and ``i`` itself is excluded. Equal
    scores are ordered by node id.
    """
    if k < 1:
        raise RetrievalError("k must be at least 1")
    if not mask.observed[i, m]:
        raise RetrievalError(f"modality not observed at query {i} (modality {m})")
    unit = store.unit_rows(m)
    sims = unit @ unit[i]
    eligible = mask.observed[:, m].copy()
    eligible[i] = False
    idx = np.flatnonzero(eligible)
    if idx.size == 0:
        return AnchorSet(i, (m,), [], [])
    vals = sims[idx]
    if idx.size > k:
        cut = np.partition(vals, idx.size - k)[idx.size - k]
        keep = vals >= cut
        idx, vals = idx[keep], vals[keep]
    order = np.lexsort((idx, -vals))[:k]
    return AnchorSet(i, (m,), idx[order].tolist(), vals[order].tolist())


def retrieve_anchor_union(
    store: ModalityStore,
    mask: ModalityMask,
    i: int,
    k: int,
    anchor_modality: int | None = None,
) -> AnchorSet:
    """Anchors from every observed modality of ``i`` (or just ``anchor_modality``).

    Each observed modality contributes its top ``ceil(k / n_obs)``; the union
    is ranked by score and capped at ``k``.
    """
    if anchor_modality is not None:
        return retrieve_anchors(store, mask, i, anchor_modality, k)
    obs = np.flatnonzero(mask.observed[i]).tolist()
    if not obs:
        raise RetrievalError(f"query {i} has no observed modality")
    if len(obs) == 1:
        return retrieve_anchors(store, mask, i, obs[0], k)
    per = math.ceil(k / len(obs))
    best: dict[int, float] = {}
    for m in obs:
        a = retrieve_anchors(store, mask, i, m, per)
        for v, s in zip(a.anchors, a.scores):
            if v not in best or s > best[v]:
                best[v] = s
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return AnchorSet(i, tuple(obs), [v for v, _ in ranked], [s for _, s in ranked])


def _meeting_root(g: ItemGraph, seeds: list[int]) -> tuple[int, np.ndarray]:
    """Level-synchronous multi-source BFS with one reachability bit per seed.

    Returns the smallest-id node first reached by every wave (the minimax
    meeting point), or -1 plus the final reach masks when no node is
    reachable from all seeds.
    """
    n = g.n
    full = np.uint64((1 << len(seeds)) - 1)
    reach = np.zeros(n, dtype=np.uint64)
    for b, v in enumerate(seeds):
        reach[v] |= np.uint64(1 << b)
    fresh = np.asarray(sorted(set(seeds)), dtype=np.int64)
    bits = reach[fresh]
    hits = fresh[bits == full]
    offsets, targets = g.offsets, g.targets
    while hits.size == 0 and fresh.size:
        lo, hi = offsets[fresh], offsets[fresh + 1]
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            break
        shift = np.repeat(lo - (np.cumsum(counts) - counts), counts)
        nbr = targets[np.arange(total) + shift]
        cand = np.zeros(n, dtype=np.uint64)
        np.bitwise_or.at(cand, nbr, np.repeat(bits, counts))
        touched = np.unique(nbr)
        add = cand[touched] & ~reach[touched]
        keep = add != 0
        fresh, bits = touched[keep], add[keep]
        reach[fresh] |= bits
        hits = fresh[reach[fresh] == full]
    return (int(hits.min()) if hits.size else -1), reach


def _paths_to_root(nbrs: list[list[int]], root: int, seeds: list[int]) -> set[int]:
    """Union of BFS-tree paths from every seed back to ``root``."""
    parent = {root: -1}
    pending = set(seeds) - {root}
    queue = deque([root])
    while queue and pending:
        u = queue.popleft()
        for w in nbrs[u]:
            if w not in parent:
                parent[w] = u
                pending.discard(w)
                queue.append(w)
    if pending:
        raise GraphError("seed unreachable from root")
    out: set[int] = set()
    for s in seeds:
        x = s
        while x != -1 and x not in out:
            out.add(x)
            x = parent[x]
    return out


def acs(g: ItemGraph, anchors: Sequence[int]) -> Subgraph:
    """Connect ``anchors`` through shortest paths to a common meeting node.

    Anchors spread over several connected components are grouped by
    component and each group is connected on its own.
    """
    seeds = sorted({int(a) for a in anchors})
    if not seeds:
        raise RetrievalError("empty anchor set")
    if len(seeds) > MAX_ANCHORS:
        raise RetrievalError(f"at most {MAX_ANCHORS} anchors supported")
    for s in seeds:
        g._check_node(s)
    nbrs = g.adjacency_lists()
    root, reach = _meeting_root(g, seeds)
    if root >= 0:
        nodes = sorted(_paths_to_root(nbrs, root, seeds))
        return Subgraph(nodes, seeds, [nodes])
    groups: dict[int, list[int]] = {}
    for s in seeds:
        groups.setdefault(int(reach[s]), []).append(s)
    comps = []
    for group in sorted(groups.values()):
        r, _ = _meeting_root(g, group)
        comps.append(sorted(_paths_to_root(nbrs, r, group)))
    nodes = sorted(v for c in comps for v in c)
    return Subgraph(nodes, seeds, comps)


def _cut_vertices(nbrs: list[list[int]], s: set[int]) -> set[int]:
    """Articulation points of the connected subgraph induced on ``s`` (iterative Tarjan)."""
    root = min(s)
    disc = {root: 0}
    low = {root: 0}
    cuts: set[int] = set()
    root_children = 0
    stack = [(root, -1, iter(nbrs[root]))]
    while stack:
        u, parent, it = stack[-1]
        advanced = False
        for w in it:
            if w not in s:
                continue
            if w not in disc:
                disc[w] = low[w] = len(disc)
                stack.append((w, u, iter(nbrs[w])))
                advanced = True
                break
            if w != parent:
                low[u] = min(low[u], disc[w])
        if advanced:
            continue
        stack.pop()
        if parent < 0:
            continue
        low[parent] = min(low[parent], low[u])
        if parent == root:
            root_children += 1
        elif low[u] >= disc[parent]:
            cuts.add(parent)
    if root_children > 1:
        cuts.add(root)
    return cuts


def _mean(r: np.ndarray, s: set[int]) -> float:
    return float(r[sorted(s)].sum() / len(s))


def subgraph_phi(r: np.ndarray, nodes: Sequence[int]) -> float:
    """Mean relevance, collapsing to the sentinel if any node has none."""
    vals = r[list(nodes)]
    if np.any(vals <= NEG_INF):
        return NEG_INF
    return float(vals.sum() / vals.size)


def greedy_expand(
    nbrs: list[list[int]],
    r: np.ndarray,
    start: Sequence[int],
    anchors: Sequence[int],
    t_max: int,
) -> tuple[list[int], list[float]]:
    """Add boundary nodes / drop non-bridging non-anchors while the mean of ``r`` rises.

    Returns the final node list and the mean after each accepted move
    (first entry is the starting mean).
    """
    s = set(start)
    fixed = set(anchors)
    mu = _mean(r, s)
    trace = [mu]
    for _ in range(t_max):
        size = len(s)
        boundary = {w for u in s for w in nbrs[u] if w not in s}
        d_add, c_best = -math.inf, -1
        best_r = NEG_INF
        for c in boundary:
            rc = r[c]
            if rc > best_r or (rc == best_r and rc > NEG_INF and c < c_best):
                best_r, c_best = rc, c
        if c_best >= 0:
            d_add = (size * mu + best_r) / (size + 1) - mu
        d_rem, u_best = -math.inf, -1
        if size > 1:
            removable = s - fixed - _cut_vertices(nbrs, s)
            if removable:
                u_best = min(removable, key=lambda v: (r[v], v))
                d_rem = (size * mu - r[u_best]) / (size - 1) - mu
        if max(d_add, d_rem) <= IMPROVE_EPS:
            break
        if d_add >= d_rem:
            s.add(c_best)
        else:
            s.discard(u_best)
        mu = _mean(r, s)
        trace.append(mu)
    return sorted(s), trace


def mage(
    g: ItemGraph,
    store: ModalityStore,
    mask: ModalityMask,
    i: int,
    anchors: Sequence[int],
    t_max: int,
    r: np.ndarray | None = None,
) -> Subgraph:
    """Refine the anchor-connecting subgraph for query ``i`` by greedy moves.

    ``r`` overrides the relevance vector (one value per node); by default it
    is computed from ``store`` and ``mask``.
    """
    if t_max < 0:
        raise RetrievalError("iteration cap must be non-negative")
    base = acs(g, anchors)
    if r is None:
        r = relevance_vector(store, mask, i)
    nbrs = g.adjacency_lists()
    comps, traces = [], []
    for comp in base.components:
        members = set(comp)
        nodes, tr = greedy_expand(nbrs, r, comp, [a for a in base.anchors if a in members], t_max)
        comps.append(nodes)
        traces.append(tr)
    nodes = sorted(v for c in comps for v in c)
    # a trace is only meaningful for a single connected piece
    trace = traces[0] if len(traces) == 1 else []
    return Subgraph(nodes, base.anchors, comps, subgraph_phi(r, nodes), trace, base.nodes)


@dataclass
class Retrieved:
    query: int
    anchors: AnchorSet
    acs_nodes: list[int]
    subgraph: Subgraph


def retrieve(
    g: ItemGraph,
    store: ModalityStore,
    mask: ModalityMask,
    i: int,
    k: int,
    t_max: int,
    anchor_modality: int | None = None,
) -> Retrieved:
    """Anchors -> anchor-connecting subgraph -> greedy refinement for one query."""
    a = retrieve_anchor_union(store, mask, i, k, anchor_modality)
    if not a.anchors:
        empty = Subgraph([], [], [], None)
        return Retrieved(i, a, [], empty)
    r = relevance_vector(store, mask, i)
    sub = mage(g, store, mask, i, a.anchors, t_max, r=r)
    return Retrieved(i, a, sub.initial, sub)
