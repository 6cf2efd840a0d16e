"""Reconstruction and codebook-balance losses, with batch gradients."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import Forward, ModelError, Noise, TrainConfig, backward, forward, zeros_like_params


@dataclass
class Sample:
    """One query: its token inputs (query in row 0) and the slot to reconstruct."""

    item: int
    tokens: list[int]
    x_in: np.ndarray
    target_modality: int | None = None
    target: np.ndarray | None = None


def loss_usage(g_batch: np.ndarray) -> float:
    """KL divergence of the batch-mean routing distribution from uniform."""
    g_bar = np.asarray(g_batch, dtype=np.float64).mean(axis=0)
    c = g_bar.shape[0]
    pos = g_bar > 0
    return float(np.sum(g_bar[pos] * np.log(g_bar[pos] * c)))


def usage_grad(g_batch: np.ndarray) -> np.ndarray:
    """d loss_usage / d g_i, identical for every row i."""
    b, c = g_batch.shape
    g_bar = g_batch.mean(axis=0)
    with np.errstate(divide="ignore"):
        d = np.where(g_bar > 0, np.log(g_bar * c) + 1.0, 0.0)
    return d / b


def loss_load(g_hat_batch: np.ndarray, p: int | None = None) -> float:
    """``C * sum_e load_e^2`` over the batch-mean hard assignment."""
    gh = np.asarray(g_hat_batch, dtype=np.float64)
    rows = gh.sum(axis=1)
    if p is not None and not np.all(rows == min(p, gh.shape[1])):
        raise ModelError(f"every row must select exactly {min(p, gh.shape[1])} entries")
    load = gh.mean(axis=0)
    return float(gh.shape[1] * np.sum(load * load))


def hard_assignments(fws: Sequence[Forward], c: int) -> np.ndarray:
    out = np.zeros((len(fws), c))
    for row, fw in enumerate(fws):
        out[row, fw.route.top] = 1.0
    return out


@dataclass
class BatchResult:
    total: float
    recon: float
    usage: float
    load: float
    grads: dict[str, np.ndarray] | None
    forwards: list[Forward]


def loss_total(
    params: dict[str, np.ndarray],
    cfg: TrainConfig,
    samples: Sequence[Sample],
    noises: Sequence[Noise | None] | None = None,
    with_grads: bool = True,
    pool: Executor | None = None,
) -> BatchResult:
    """Summed squared reconstruction error plus weighted usage and load terms.

    Only samples with a target contribute reconstruction error. Gradients
    treat the top-P selection and the Gumbel draw as constants; the load
    term therefore contributes no gradient.
    """
    if not samples:
        raise ModelError("empty batch")
    if not any(s.target is not None for s in samples):
        raise ModelError("no reconstructable slot in batch")
    noises = list(noises) if noises is not None else [None] * len(samples)

    def fwd(args):
        s, nz = args
        mods = [s.target_modality] if s.target is not None else []
        return forward(s.x_in, params, cfg, mods, nz)

    items = list(zip(samples, noises))
    fws = list(pool.map(fwd, items)) if pool is not None else [fwd(a) for a in items]
    recon = 0.0
    d_out = []
    for s, fw in zip(samples, fws):
        if s.target is None:
            d_out.append({})
            continue
        diff = fw.outputs[s.target_modality] - s.target
        recon += float(diff @ diff)
        d_out.append({s.target_modality: 2.0 * diff})
    g_batch = np.stack([fw.route.g for fw in fws])
    usage = loss_usage(g_batch)
    load = loss_load(hard_assignments(fws, cfg.codebook_size))
    total = recon + cfg.lambda_usage * usage + cfg.lambda_load * load
    grads = None
    if with_grads:
        dg = cfg.lambda_usage * usage_grad(g_batch)

        def bwd(args):
            fw, dout = args
            gr = zeros_like_params(params)
            backward(fw, dout, dg, params, cfg, gr)
            return gr

        pairs = list(zip(fws, d_out))
        parts = pool.map(bwd, pairs) if pool is not None else map(bwd, pairs)
        grads = zeros_like_params(params)
        for gr in parts:
            for k in grads:
                grads[k] += gr[k]
    return BatchResult(total, recon, usage, load, grads, fws)
