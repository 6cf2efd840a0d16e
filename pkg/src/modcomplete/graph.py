"""Undirected item co-interaction graph in compressed sparse row form."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_USER_ITEMS = 512
_U32_MAX = np.iinfo(np.uint32).max


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionLog:
    """Deduplicated (user, item) pairs with dense ids.

    ``user_ids`` / ``item_ids`` map dense index -> external id string.
    """

    users: np.ndarray
    items: np.ndarray
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.user_ids) if self.user_ids else int(self.users.max(initial=-1)) + 1

    @property
    def n_items(self) -> int:
        return len(self.item_ids) if self.item_ids else int(self.items.max(initial=-1)) + 1

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[object, object]]) -> "InteractionLog":
        """Remap external ids to dense indices and drop duplicate pairs.

        Ids that all parse as integers are ordered numerically, otherwise
        lexicographically, so dense inputs map onto themselves.
        """
        raw = [(str(u), str(i)) for u, i in pairs]
        if not raw:
            raise GraphError("no interactions")
        user_ids = _ordered_ids({u for u, _ in raw})
        item_ids = _ordered_ids({i for _, i in raw})
        uidx = {u: k for k, u in enumerate(user_ids)}
        iidx = {i: k for k, i in enumerate(item_ids)}
        if len(item_ids) > _U32_MAX:
            raise GraphError("item id space exceeds 32-bit index width")
        enc = np.unique(
            np.array([uidx[u] for u, _ in raw], dtype=np.int64) * len(item_ids)
            + np.array([iidx[i] for _, i in raw], dtype=np.int64)
        )
        return cls(
            users=enc // len(item_ids),
            items=enc % len(item_ids),
            user_ids=user_ids,
            item_ids=item_ids,
        )


def _ordered_ids(ids: set[str]) -> list[str]:
    if all(x.isdigit() for x in ids):
        return sorted(ids, key=int)
    return sorted(ids)


class ItemGraph:
    """Immutable simple undirected graph.

    Neighbours of node ``v`` are ``targets[offsets[v]:offsets[v + 1]]``,
    sorted ascending without duplicates or self loops.
    """

    __slots__ = ("offsets", "targets", "_nbrs")

    def __init__(self, offsets: np.ndarray, targets: np.ndarray) -> None:
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.offsets.setflags(write=False)
        self.targets.setflags(write=False)
        self._nbrs: list[list[int]] | None = None

    @property
    def n(self) -> int:
        return int(self.offsets.shape[0]) - 1

    @property
    def edge_count(self) -> int:
        return int(self.targets.shape[0]) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.targets[self.offsets[v] : self.offsets[v + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.offsets)

    def adjacency_lists(self) -> list[list[int]]:
        """Python-list view of the adjacency, built once and cached."""
        if self._nbrs is None:
            off = self.offsets.tolist()
            tgt = self.targets.tolist()
            self._nbrs = [tgt[off[v] : off[v + 1]] for v in range(self.n)]
        return self._nbrs

    def edges(self) -> np.ndarray:
        """(E, 2) array of undirected edges with ``u < v``."""
        src = np.repeat(np.arange(self.n), self.degree())
        keep = src < self.targets
        return np.stack([src[keep], self.targets[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        k = np.searchsorted(nb, v)
        return bool(k < nb.shape[0] and nb[k] == v)

    def _check_node(self, v: int) -> None:
        if not 0 <= v < self.n:
            raise GraphError(f"node {v} out of range [0, {self.n})")

    @classmethod
    def from_edges(cls, n: int, edges: np.ndarray | Sequence[tuple[int, int]]) -> "ItemGraph":
        """Build from an undirected edge list; self loops and multi-edges collapse."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphError("edge endpoint out of range")
        if n > _U32_MAX:
            raise GraphError("node count exceeds 32-bit index width")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]], axis=0)
        key = np.unique(both[:, 0] * n + both[:, 1])
        src, dst = key // n, key % n
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
        return cls(offsets, dst)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ItemGraph):
            return NotImplemented
        return np.array_equal(self.offsets, other.offsets) and np.array_equal(
            self.targets, other.targets
        )

    def __repr__(self) -> str:
        return f"ItemGraph(n={self.n}, edges={self.edge_count})"


def project_item_graph(
    log: InteractionLog,
    max_user_items: int = DEFAULT_MAX_USER_ITEMS,
    min_degree: int = 0,
) -> ItemGraph:
    """Connect two items iff some user interacted with both.

    Users touching more than ``max_user_items`` items are dropped, since
    each one would add a quadratic clique. Items with fewer than
    ``min_degree`` interactions keep their node but contribute no edges.
    """
    if len(log) == 0:
        raise GraphError("no interactions")
    n = log.n_items
    if n > _U32_MAX:
        raise GraphError("item id space exceeds 32-bit index width")
    users, items = log.users, log.items
    if min_degree > 0:
        counts = np.bincount(items, minlength=n)
        keep = counts[items] >= min_degree
        users, items = users[keep], items[keep]
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    bounds = np.flatnonzero(np.diff(users)) + 1
    chunks = []
    for group in np.split(items, bounds):
        d = group.shape[0]
        if d < 2 or d > max_user_items:
            continue
        a, b = np.triu_indices(d, k=1)
        chunks.append(np.stack([group[a], group[b]], axis=1))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    return ItemGraph.from_edges(n, edges)


def k_hop_neighborhood(g: ItemGraph, v: int, k_hops: int) -> set[int]:
    """Nodes at BFS distance 1..k_hops from ``v``."""
    g._check_node(v)
    if k_hops < 0:
        raise GraphError("hop count must be non-negative")
    nbrs = g.adjacency_lists()
    seen = {v}
    frontier = [v]
    for _ in range(k_hops):
        nxt = []
        for u in frontier:
            for w in nbrs[u]:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        if not nxt:
            break
        frontier = nxt
    seen.discard(v)
    return seen


def is_connected_subset(g: ItemGraph, nodes: Iterable[int]) -> bool:
    """Whether the subgraph induced on ``nodes`` is connected."""
    s = set(nodes)
    if not s:
        raise GraphError("empty node set")
    for v in s:
        g._check_node(v)
    nbrs = g.adjacency_lists()
    start = next(iter(s))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in nbrs[u]:
            if w in s and w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(s)


def induced_adjacency(g: ItemGraph, nodes: Sequence[int]) -> np.ndarray:
    """Dense 0/1 adjacency of ``nodes`` in the given order."""
    nodes = [int(v) for v in nodes]
    if len(set(nodes)) != len(nodes):
        raise GraphError("duplicate nodes in subset")
    pos = {v: a for a, v in enumerate(nodes)}
    nbrs = g.adjacency_lists()
    adj = np.zeros((len(nodes), len(nodes)))
    for a, v in enumerate(nodes):
        g._check_node(v)
        for w in nbrs[v]:
            b = pos.get(w)
            if b is not None:
                adj[a, b] = 1.0
    return adj


def connected_components(g: ItemGraph, nodes: Iterable[int] | None = None) -> list[list[int]]:
    """Components of the (induced) graph, each sorted, ordered by smallest member."""
    nbrs = g.adjacency_lists()
    s = set(range(g.n)) if nodes is None else set(nodes)
    seen: set[int] = set()
    out = []
    for v in sorted(s):
        if v in seen:
            continue
        comp = [v]
        seen.add(v)
        queue = deque([v])
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if w in s and w not in seen:
                    seen.add(w)
                    comp.append(w)
                    queue.append(w)
        out.append(sorted(comp))
    return out
