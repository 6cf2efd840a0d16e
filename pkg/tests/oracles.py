"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np


def brute_projection(pairs, n_items, max_user_items=512, min_degree=0):
    """Edge set by checking every item pair against every user's basket."""
    counts = [0] * n_items
    for _, i in set(pairs):
        counts[i] += 1
    baskets: dict = {}
    for u, i in set(pairs):
        if counts[i] >= min_degree:
            baskets.setdefault(u, set()).add(i)
    edges = set()
    for basket in baskets.values():
        if len(basket) > max_user_items:
            continue
        for a in basket:
            for b in basket:
                if a < b:
                    edges.add((a, b))
    return edges


class UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        self.parent[self.find(a)] = self.find(b)


def uf_connected(edges, nodes) -> bool:
    nodes = set(nodes)
    uf = UnionFind(nodes)
    for a, b in edges:
        if a in nodes and b in nodes:
            uf.union(a, b)
    return len({uf.find(x) for x in nodes}) == 1


def full_sort_topk(feats, observed_col, i, k):
    """Top-k by cosine using a plain Python sort over every candidate."""
    def cos(a, b):
        na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 0.0
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    cands = [(cos(feats[j], feats[i]), j) for j in range(len(feats)) if j != i and observed_col[j]]
    cands.sort(key=lambda t: (-t[0], t[1]))
    return [j for _, j in cands[:k]], [s for s, _ in cands[:k]]


def tree_path(adj, a, b):
    """The unique a-b path in a tree, by BFS parents."""
    parent = {a: None}
    q = deque([a])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                q.append(w)
    out, x = [], b
    while x is not None:
        out.append(x)
        x = parent[x]
    return out


def tree_steiner(adj, anchors):
    """Union of pairwise anchor paths: the minimal subtree spanning them."""
    anchors = sorted(set(anchors))
    nodes = set(anchors)
    for a, b in itertools.combinations(anchors, 2):
        nodes.update(tree_path(adj, a, b))
    return nodes


def exhaustive_best_phi(adj, r, anchors):
    """Max mean of r over connected subsets containing every anchor."""
    n = len(adj)
    anchors = set(anchors)
    edges = [(u, w) for u in range(n) for w in adj[u] if u < w]
    best = -math.inf
    for mask in range(1, 1 << n):
        s = [v for v in range(n) if mask >> v & 1]
        if not anchors <= set(s):
            continue
        if not uf_connected(edges, s):
            continue
        best = max(best, sum(r[v] for v in s) / len(s))
    return best


def scalar_metrics(pred, truth):
    mse = cos = 0.0
    for p, t in zip(pred, truth):
        se = 0.0
        for a, b in zip(p, t):
            se += (a - b) ** 2
        mse += se / len(p)
        sp, st = max(map(abs, p)), max(map(abs, t))
        if sp == 0 or st == 0:
            continue
        # unit-max rescaling so tiny entries neither underflow nor lose digits
        p, t = [a / sp for a in p], [b / st for b in t]
        dot = sum(a * b for a, b in zip(p, t))
        cos += dot / math.hypot(*p) / math.hypot(*t)
    return mse / len(pred), cos / len(pred)


def random_connected_graph(rng: np.random.Generator, n: int, extra: int):
    """Random spanning tree plus ``extra`` random chords."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    for _ in range(extra):
        a, b = sorted(rng.choice(n, size=2, replace=False).tolist())
        edges.add((a, b))
    return sorted(edges)


def adjacency_lists(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    return adj
