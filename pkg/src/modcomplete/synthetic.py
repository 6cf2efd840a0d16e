"""Planted-cluster benchmark data with one modality predictable from the other."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import ItemGraph
from .modality import ModalityStore
from .seeding import stage_rng


@dataclass
class SyntheticSpec:
    """Generator knobs.

    Modality 1 ("text") is cluster centroid plus item noise, mixed so the
    expected same-cluster cosine is about ``intra_corr``. Modality 0
    ("visual") is a fixed random linear map of modality 1 plus Gaussian
    noise. Edges follow a stochastic block model; keeping ``p_inter`` large
    relative to ``p_intra`` puts most graph neighbours in other clusters.
    """

    n_clusters: int = 12
    items_per_cluster: int = 80
    dims: tuple[int, int] = (24, 16)
    names: tuple[str, str] = ("visual", "text")
    intra_corr: float = 0.6
    cross_noise_sd: float = 0.3
    p_intra: float = 0.02
    p_inter: float = 0.004
    seed: int = 0

    def __post_init__(self) -> None:
        self.dims = tuple(int(x) for x in self.dims)
        self.names = tuple(self.names)
        if self.n_clusters < 1 or self.items_per_cluster < 1:
            raise ValueError("degenerate spec: need at least one cluster and one item")
        for p in (self.p_intra, self.p_inter):
            if not 0.0 <= p <= 1.0:
                raise ValueError("edge probabilities must lie in [0, 1]")
        if not 0.0 <= self.intra_corr <= 1.0:
            raise ValueError("intra_corr must lie in [0, 1]")

    @property
    def n_items(self) -> int:
        return self.n_clusters * self.items_per_cluster

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    graph: ItemGraph
    store: ModalityStore
    truth: ModalityStore
    clusters: np.ndarray = field(repr=False)


def _block_edges(rng, lo_a, n_a, lo_b, n_b, p, same):
    """Sparse Bernoulli(p) edges between two id blocks via a binomial count."""
    pairs = n_a * (n_a - 1) // 2 if same else n_a * n_b
    if p <= 0.0 or pairs == 0:
        return np.empty((0, 2), dtype=np.int64)
    if p >= 1.0 or pairs <= 4096:
        if same:
            a, b = np.triu_indices(n_a, k=1)
        else:
            a, b = np.divmod(np.arange(pairs), n_b)
        keep = rng.random(a.shape[0]) < p
        return np.stack([lo_a + a[keep], lo_b + b[keep]], axis=1)
    count = rng.binomial(pairs, p)
    a = rng.integers(0, n_a, size=count)
    b = rng.integers(0, n_a if same else n_b, size=count)
    return np.stack([lo_a + a, lo_b + b], axis=1)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = stage_rng(spec.seed, "synth")
    n, c, per = spec.n_items, spec.n_clusters, spec.items_per_cluster
    d_vis, d_txt = spec.dims
    clusters = np.repeat(np.arange(c), per)

    centroids = rng.standard_normal((c, d_txt))
    rho = spec.intra_corr
    text = np.sqrt(rho) * centroids[clusters] + np.sqrt(1.0 - rho) * rng.standard_normal((n, d_txt))
    cross = rng.standard_normal((d_txt, d_vis)) / np.sqrt(d_txt)
    visual = text @ cross + spec.cross_noise_sd * rng.standard_normal((n, d_vis))

    chunks = []
    for a in range(c):
        for b in range(a, c):
            same = a == b
            chunks.append(
                _block_edges(rng, a * per, per, b * per, per, spec.p_intra if same else spec.p_inter, same)
            )
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    graph = ItemGraph.from_edges(n, edges)
    store = ModalityStore(spec.names, (visual, text))
    return SyntheticData(graph, store, store, clusters)
