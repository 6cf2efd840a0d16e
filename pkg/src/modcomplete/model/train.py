"""Self-supervised training: hide an observed modality, reconstruct it."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..graph import ItemGraph
from ..modality import ModalityMask, ModalityStore
from ..seeding import stage_rng
from .network import ModelError, TrainConfig, draw_noise, init_params
from .objective import Sample, loss_total

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "recon", "usage", "load", "total", "val_recon")


@dataclass
class EpochLog:
    epoch: int
    recon: float
    usage: float
    load: float
    total: float
    val_recon: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(v)) for v in list(asdict(self).values())[1:]]


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, l2=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.l2 = lr, beta1, beta2, eps, l2
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k] + self.l2 * p if self.l2 else grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def training_pool(mask: ModalityMask) -> np.ndarray:
    """Items with at least two observed modalities."""
    return np.flatnonzero(mask.observed.sum(axis=1) >= 2)


def build_samples(g, store, mask, items, rcfg, pe_dim) -> list[Sample]:
    from ..pipeline import prepare_sample

    out = []
    for i in items:
        for h in np.flatnonzero(mask.observed[i]):
            out.append(prepare_sample(g, store, mask, int(i), rcfg, pe_dim, hidden=int(h))[0])
    return out


def evaluate_recon(params, cfg: TrainConfig, samples: list[Sample]) -> float:
    """Mean per-sample squared error with deterministic routing."""
    if not samples:
        return float("nan")
    total = 0.0
    for s in samples:
        res = loss_total(params, cfg, [s], with_grads=False)
        total += res.recon
    return total / len(samples)


def train(
    g: ItemGraph,
    store: ModalityStore,
    mask: ModalityMask,
    cfg: TrainConfig,
    rcfg,
    threads: int = 1,
    samples: tuple[list[Sample], list[Sample]] | None = None,
) -> tuple[dict[str, np.ndarray], list[EpochLog]]:
    """Fit the completion network and return the best-validation parameters."""
    if samples is None:
        pool_items = training_pool(mask)
        if pool_items.size == 0:
            raise ModelError("empty training pool: no item has two observed modalities")
        perm = stage_rng(cfg.seed, "split").permutation(pool_items)
        n_val = int(round(cfg.val_fraction * perm.size)) if perm.size > 1 else 0
        val_items, train_items = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        train_s = build_samples(g, store, mask, train_items, rcfg, cfg.k)
        val_s = build_samples(g, store, mask, val_items, rcfg, cfg.k)
    else:
        train_s, val_s = samples
    if not train_s:
        raise ModelError("empty training pool")
    return fit(train_s, val_s, cfg, store.dims, threads)


def fit(
    train_s: list[Sample],
    val_s: list[Sample],
    cfg: TrainConfig,
    dims,
    threads: int = 1,
    params: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], list[EpochLog]]:
    if params is None:
        params = init_params(cfg, dims, stage_rng(cfg.seed, "init"))
    opt = Adam(params, cfg.lr, l2=cfg.l2)
    shuffle = stage_rng(cfg.seed, "shuffle")
    noise_rng = stage_rng(cfg.seed, "gumbel")
    best, best_val, stale = None, np.inf, 0
    history: list[EpochLog] = []
    executor = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle.permutation(len(train_s))
            recon = usage = load = 0.0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_s[j] for j in order[start : start + cfg.batch_size]]
                noises = [draw_noise(cfg, s.x_in.shape[0], noise_rng, True) for s in batch]
                res = loss_total(params, cfg, batch, noises, pool=executor)
                opt.step(params, res.grads)
                recon += res.recon
                usage += res.usage
                load += res.load
                n_batches += 1
            recon /= len(train_s)
            usage /= n_batches
            load /= n_batches
            val = evaluate_recon(params, cfg, val_s) if val_s else recon
            history.append(
                EpochLog(epoch, recon, usage, load, recon + cfg.lambda_usage * usage + cfg.lambda_load * load, val)
            )
            log.info("epoch %d recon %.5f val %.5f", epoch, recon, val)
            if val < best_val:
                best_val, stale = val, 0
                best = {k: v.copy() for k, v in params.items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if executor is not None:
            executor.shutdown()
    return (best if best is not None else params), history
