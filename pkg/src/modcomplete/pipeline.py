"""Retrieval-to-decoder plumbing: token inputs, training samples and completion."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import ItemGraph, induced_adjacency
from .modality import ModalityMask, ModalityStore
from .model.network import ModelError, TrainConfig, forward
from .model.objective import Sample
from .retrieval import Retrieved, retrieve
from .spectral import laplacian_pe


@dataclass
class RetrievalConfig:
    k: int = 10
    t: int = 10
    k_n: int = 2
    anchor_modality: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def token_inputs(store: ModalityStore, mask: ModalityMask, tokens: list[int], pe: np.ndarray) -> np.ndarray:
    """Concatenate every modality (zeros where unobserved) and the positional encoding."""
    parts = []
    for m, f in enumerate(store.features):
        block = f[tokens].copy()
        block[~mask.observed[tokens, m]] = 0.0
        parts.append(block)
    if pe.shape[0] != len(tokens):
        raise ModelError("positional encoding rows do not match tokens")
    parts.append(pe)
    return np.concatenate(parts, axis=1)


def token_order(query: int, nodes: list[int]) -> list[int]:
    return [query] + [v for v in nodes if v != query]


def prepare_sample(
    g: ItemGraph,
    store: ModalityStore,
    mask: ModalityMask,
    i: int,
    rcfg: RetrievalConfig,
    pe_dim: int,
    hidden: int | None = None,
) -> tuple[Sample, Retrieved]:
    """Retrieve context for ``i`` and build its token matrix.

    With ``hidden`` set, that observed slot is masked for retrieval and
    encoding and becomes the reconstruction target.
    """
    eff = mask.with_hidden(i, hidden) if hidden is not None else mask
    ret = retrieve(g, store, eff, i, rcfg.k, rcfg.t, rcfg.anchor_modality)
    tokens = token_order(i, ret.subgraph.nodes)
    pe = laplacian_pe(induced_adjacency(g, tokens), pe_dim).vectors
    x_in = token_inputs(store, eff, tokens, pe)
    target = store.features[hidden][i].copy() if hidden is not None else None
    return Sample(i, tokens, x_in, hidden, target), ret


@dataclass
class CompletionResult:
    item: int
    vectors: dict[int, np.ndarray]


def complete(
    i: int,
    mask: ModalityMask,
    store: ModalityStore,
    g: ItemGraph,
    params: dict[str, np.ndarray],
    cfg: TrainConfig,
    rcfg: RetrievalConfig,
) -> CompletionResult:
    """Reconstruct every missing modality of item ``i`` with deterministic routing."""
    obs = mask.observed[i]
    if not obs.any():
        raise ModelError(f"item {i} has no observed modality")
    missing = np.flatnonzero(~obs).tolist()
    if not missing:
        raise ModelError(f"item {i}: nothing to complete")
    sample, _ = prepare_sample(g, store, mask, i, rcfg, cfg.k)
    fw = forward(sample.x_in, params, cfg, missing, None)
    return CompletionResult(i, {m: fw.outputs[m] for m in missing})
