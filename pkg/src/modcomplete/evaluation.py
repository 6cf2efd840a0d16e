"""Relevance comparison, completion metrics, baselines and stage timing."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .graph import ItemGraph, k_hop_neighborhood
from .modality import ModalityMask, ModalityStore, cosine
from .model.network import TrainConfig, forward
from .model.train import EpochLog, train
from .pipeline import RetrievalConfig, prepare_sample

METRIC_DEFINITIONS = {
    "mse": "mean over completed slots of the per-dimension mean squared error",
    "mean_cosine": "mean over completed slots of cosine(pred, truth); zero vectors score 0",
    "relevance": "per query: mean cosine between each context node's observed feature of the "
    "missing modality and the query's held-out feature; nodes lacking that modality are skipped",
}


class EvalError(ValueError):
    pass


class StageTimer:
    """Accumulates wall-clock seconds per named stage."""

    STAGES = ("retrieval", "completion", "evaluation")

    def __init__(self) -> None:
        self.seconds = {s: 0.0 for s in self.STAGES}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + (time.perf_counter() - start)

    def report(self) -> dict[str, float]:
        out = dict(self.seconds)
        out["total"] = sum(self.seconds.values())
        return out


def completion_metrics(pred: Sequence[np.ndarray], truth: Sequence[np.ndarray]) -> dict[str, float]:
    if len(pred) != len(truth):
        raise EvalError(f"{len(pred)} predictions for {len(truth)} targets")
    if not pred:
        return {"mse": float("nan"), "mean_cosine": float("nan"), "n": 0}
    mse, cos = 0.0, 0.0
    for p, t in zip(pred, truth):
        p, t = np.asarray(p, dtype=np.float64), np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise EvalError(f"shape mismatch: {p.shape} vs {t.shape}")
        mse += float(np.mean((p - t) ** 2))
        cos += cosine(p, t)
    return {"mse": mse / len(pred), "mean_cosine": cos / len(pred), "n": len(pred)}


def baseline(
    i: int,
    m: int,
    mode: str,
    g: ItemGraph,
    store: ModalityStore,
    mask: ModalityMask,
    k_n: int = 2,
) -> np.ndarray:
    """``zero_fill`` or the mean of observed ``m`` features over the k_n-hop neighbourhood."""
    dim = store.dims[m]
    if mode == "zero_fill":
        return np.zeros(dim)
    if mode != "neighbor_mean":
        raise EvalError(f"unknown baseline {mode!r}")
    nodes = [v for v in sorted(k_hop_neighborhood(g, i, k_n)) if mask.observed[v, m]]
    if not nodes:
        return np.zeros(dim)
    return store.features[m][nodes].mean(axis=0)


def _context_relevance(nodes: Iterable[int], i: int, m: int, truth_vec, store, mask) -> float | None:
    vals = [cosine(store.features[m][v], truth_vec) for v in sorted(nodes) if v != i and mask.observed[v, m]]
    return float(np.mean(vals)) if vals else None


@dataclass
class RelevanceRow:
    query: int
    modality: int
    neighbor_mean: float | None
    retrieved_mean: float | None


def relevance_comparison(
    g: ItemGraph,
    store: ModalityStore,
    mask: ModalityMask,
    truth: ModalityStore,
    queries: Sequence[tuple[int, int]],
    rcfg: RetrievalConfig,
    retrieved: Callable[[int], Iterable[int]] | None = None,
) -> list[RelevanceRow]:
    """Neighbourhood context versus retrieved context, scored on the held-out modality.

    ``retrieved`` maps a query to its context nodes; by default the full
    retrieval pipeline runs under ``mask``.
    """
    from .retrieval import retrieve

    rows = []
    for i, m in queries:
        if mask.observed[i, m]:
            raise EvalError(f"query {i} has no held-out ground truth for modality {m}")
        t = truth.features[m][i]
        hood = k_hop_neighborhood(g, i, rcfg.k_n)
        if retrieved is None:
            nodes = retrieve(g, store, mask, i, rcfg.k, rcfg.t, rcfg.anchor_modality).subgraph.nodes
        else:
            nodes = retrieved(i)
        rows.append(
            RelevanceRow(
                i,
                m,
                _context_relevance(hood, i, m, t, store, mask),
                _context_relevance(nodes, i, m, t, store, mask),
            )
        )
    return rows


def summarize_relevance(rows: Sequence[RelevanceRow]) -> dict[str, float | int]:
    both = [r for r in rows if r.neighbor_mean is not None and r.retrieved_mean is not None]
    return {
        "n_queries": len(rows),
        "n_compared": len(both),
        "neighbor_mean": float(np.mean([r.neighbor_mean for r in both])) if both else float("nan"),
        "retrieved_mean": float(np.mean([r.retrieved_mean for r in both])) if both else float("nan"),
        "n_neighbor_absent": sum(r.neighbor_mean is None for r in rows),
    }


@dataclass
class EvalRun:
    report: dict
    relevance_rows: list[RelevanceRow]
    params: dict[str, np.ndarray]
    history: list[EpochLog]
    completions: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


def incomplete_queries(mask: ModalityMask, sample: int | None = None, rng=None) -> list[tuple[int, int]]:
    items = np.flatnonzero(~mask.observed.all(axis=1))
    if sample is not None and sample < items.size:
        items = np.sort(rng.choice(items, size=sample, replace=False))
    return [(int(i), int(m)) for i in items for m in np.flatnonzero(~mask.observed[i])]


def run_evaluation(
    g: ItemGraph,
    truth: ModalityStore,
    mask: ModalityMask,
    cfg: TrainConfig,
    rcfg: RetrievalConfig,
    threads: int = 1,
    sample: int | None = None,
    params: dict[str, np.ndarray] | None = None,
    config_echo: dict | None = None,
) -> EvalRun:
    """Train (unless ``params`` given), complete every masked slot, compare against baselines."""
    from .seeding import stage_rng

    timer = StageTimer()
    store = truth.zero_unobserved(mask)
    queries = incomplete_queries(mask, sample, stage_rng(cfg.seed, "sample"))
    items = sorted({i for i, _ in queries})

    with timer.stage("retrieval"):
        prepared = {i: prepare_sample(g, store, mask, i, rcfg, cfg.k) for i in items}
    history: list[EpochLog] = []
    with timer.stage("completion"):
        if params is None:
            params, history = train(g, store, mask, cfg, rcfg, threads=threads)
        completions = {}
        for i in items:
            sample_i, _ = prepared[i]
            missing = np.flatnonzero(~mask.observed[i]).tolist()
            fw = forward(sample_i.x_in, params, cfg, missing, None)
            for m in missing:
                completions[(i, m)] = fw.outputs[m]
    with timer.stage("evaluation"):
        truths = [truth.features[m][i] for i, m in queries]
        model_pred = [completions[q] for q in queries]
        nb_pred = [baseline(i, m, "neighbor_mean", g, store, mask, rcfg.k_n) for i, m in queries]
        zero_pred = [baseline(i, m, "zero_fill", g, store, mask, rcfg.k_n) for i, m in queries]
        rows = relevance_comparison(
            g, store, mask, truth, queries, rcfg, retrieved=lambda i: prepared[i][1].subgraph.nodes
        )
        completion = {
            "retrieval_model": completion_metrics(model_pred, truths),
            "neighbor_mean": completion_metrics(nb_pred, truths),
            "zero_fill": completion_metrics(zero_pred, truths),
            "definitions": {k: METRIC_DEFINITIONS[k] for k in ("mse", "mean_cosine")},
        }
    relevance = summarize_relevance(rows)
    relevance["definition"] = METRIC_DEFINITIONS["relevance"]
    report = {
        "relevance": relevance,
        "completion": completion,
        "timings": timer.report(),
        "config_echo": config_echo or {"train": cfg.to_dict(), "retrieval": rcfg.to_dict()},
    }
    if history:
        completion["training"] = {
            "epochs_run": len(history),
            "first_recon": history[0].recon,
            "last_recon": history[-1].recon,
            "best_val_recon": min(h.val_recon for h in history),
        }
    return EvalRun(report, rows, params, history, completions)
