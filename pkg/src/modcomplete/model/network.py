"""Token encoder, transformer, attention pooling, routed codebook and decoders.

Everything is plain numpy in float64 with explicit backward passes. A
forward call returns a cache; ``backward`` consumes it and accumulates
gradients into a dict keyed like the parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .layers import (
    layer_norm,
    layer_norm_backward,
    mlp2,
    mlp2_backward,
    softmax,
    softmax_backward,
)


class ModelError(ValueError):
    pass


@dataclass
class TrainConfig:
    d: int = 128
    k: int = 20
    layers: int = 2
    heads: int = 4
    codebook_size: int = 10
    top_p: int = 4
    tau: float = 0.5
    # multiplies the standard Gumbel draw; 1.0 is the textbook perturbation
    noise_scale: float = 1.0
    lambda_usage: float = 1.0
    lambda_load: float = 1.0
    lr: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 512
    dropout: float = 0.5
    epochs: int = 50
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.top_p > self.codebook_size:
            raise ModelError("top_p must not exceed codebook_size")
        if self.tau <= 0:
            raise ModelError("tau must be positive")
        if self.d % self.heads:
            raise ModelError("d must be divisible by heads")

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in raw.items() if k in known})


def init_params(cfg: TrainConfig, dims: Sequence[int], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, N(0, 1/d) codebook."""
    d, p = cfg.d, {}

    def lin(name: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        p[name + ".w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        p[name + ".b"] = np.zeros(fan_out)

    lin("tok.1", sum(dims) + cfg.k, d)
    lin("tok.2", d, d)
    for l in range(cfg.layers):
        pre = f"blk{l}."
        p[pre + "ln1.g"], p[pre + "ln1.b"] = np.ones(d), np.zeros(d)
        for name in ("q", "k", "v", "o"):
            lin(pre + "attn." + name, d, d)
        p[pre + "ln2.g"], p[pre + "ln2.b"] = np.ones(d), np.zeros(d)
        lin(pre + "ffn.1", d, 4 * d)
        lin(pre + "ffn.2", 4 * d, d)
    lin("pool.q", d, cfg.d_k)
    lin("pool.k", d, cfg.d_k)
    bound = 1.0 / np.sqrt(d)
    p["router.w"] = rng.uniform(-bound, bound, size=(d, cfg.codebook_size))
    p["codebook"] = rng.standard_normal((cfg.codebook_size, d)) / np.sqrt(d)
    for m, dim in enumerate(dims):
        lin(f"dec{m}.1", d, d)
        lin(f"dec{m}.2", d, dim)
    return p


@dataclass
class Noise:
    """Random draws for one forward pass, replayable for gradient checks."""

    gumbel: np.ndarray | None = None
    attn_masks: list[np.ndarray] | None = None
    ffn_masks: list[np.ndarray] | None = None
    top: np.ndarray | None = None


def draw_noise(cfg: TrainConfig, n_tokens: int, rng: np.random.Generator, train: bool) -> Noise:
    if not train:
        return Noise()
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=cfg.codebook_size)
    noise = Noise(gumbel=-np.log(-np.log(u)))
    if cfg.dropout > 0:
        keep = 1.0 - cfg.dropout
        noise.attn_masks = [
            (rng.random((cfg.heads, n_tokens, n_tokens)) < keep) / keep for _ in range(cfg.layers)
        ]
        noise.ffn_masks = [(rng.random((n_tokens, cfg.d)) < keep) / keep for _ in range(cfg.layers)]
    return noise


def embed_tokens(x_in: np.ndarray, params: dict[str, np.ndarray]):
    if x_in.ndim != 2 or x_in.shape[1] != params["tok.1.w"].shape[0]:
        raise ModelError(
            f"token input has shape {x_in.shape}, expected (*, {params['tok.1.w'].shape[0]})"
        )
    return mlp2(x_in, params["tok.1.w"], params["tok.1.b"], params["tok.2.w"], params["tok.2.b"])


def _attention(a, params, pre, heads, mask):
    n, d = a.shape
    dh = d // heads
    q = a @ params[pre + "q.w"] + params[pre + "q.b"]
    k = a @ params[pre + "k.w"] + params[pre + "k.b"]
    v = a @ params[pre + "v.w"] + params[pre + "v.b"]
    qh = q.reshape(n, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(n, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(n, heads, dh).transpose(1, 0, 2)
    att = softmax(qh @ kh.transpose(0, 2, 1) / np.sqrt(dh))
    att_d = att * mask if mask is not None else att
    o = (att_d @ vh).transpose(1, 0, 2).reshape(n, d)
    out = o @ params[pre + "o.w"] + params[pre + "o.b"]
    return out, (a, qh, kh, vh, att, att_d, o, mask)


def _attention_backward(dout, params, pre, heads, cache, grads):
    a, qh, kh, vh, att, att_d, o, mask = cache
    n, d = a.shape
    dh = d // heads
    grads[pre + "o.w"] += o.T @ dout
    grads[pre + "o.b"] += dout.sum(axis=0)
    do = (dout @ params[pre + "o.w"].T).reshape(n, heads, dh).transpose(1, 0, 2)
    datt_d = do @ vh.transpose(0, 2, 1)
    dvh = att_d.transpose(0, 2, 1) @ do
    datt = datt_d * mask if mask is not None else datt_d
    ds = softmax_backward(att, datt) / np.sqrt(dh)
    dqh = ds @ kh
    dkh = ds.transpose(0, 2, 1) @ qh
    da = np.zeros_like(a)
    for name, dh_ in (("q", dqh), ("k", dkh), ("v", dvh)):
        dflat = dh_.transpose(1, 0, 2).reshape(n, d)
        grads[pre + name + ".w"] += a.T @ dflat
        grads[pre + name + ".b"] += dflat.sum(axis=0)
        da += dflat @ params[pre + name + ".w"].T
    return da


def transformer_forward(h, params, cfg: TrainConfig, noise: Noise | None = None):
    """Pre-norm blocks with residuals; no final norm, so zero blocks are the identity."""
    caches = []
    for l in range(cfg.layers):
        pre = f"blk{l}."
        am = noise.attn_masks[l] if noise and noise.attn_masks else None
        fm = noise.ffn_masks[l] if noise and noise.ffn_masks else None
        a, ln1 = layer_norm(h, params[pre + "ln1.g"], params[pre + "ln1.b"])
        att_out, att_c = _attention(a, params, pre + "attn.", cfg.heads, am)
        h1 = h + att_out
        b, ln2 = layer_norm(h1, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f, ffn_c = mlp2(
            b, params[pre + "ffn.1.w"], params[pre + "ffn.1.b"], params[pre + "ffn.2.w"], params[pre + "ffn.2.b"]
        )
        h = h1 + (f * fm if fm is not None else f)
        caches.append((ln1, att_c, ln2, ffn_c, fm))
    return h, caches


def transformer_backward(dh, params, cfg: TrainConfig, caches, grads):
    for l in reversed(range(cfg.layers)):
        pre = f"blk{l}."
        ln1, att_c, ln2, ffn_c, fm = caches[l]
        df = dh * fm if fm is not None else dh
        db, dw1, db1, dw2, db2 = mlp2_backward(df, params[pre + "ffn.1.w"], params[pre + "ffn.2.w"], ffn_c)
        grads[pre + "ffn.1.w"] += dw1
        grads[pre + "ffn.1.b"] += db1
        grads[pre + "ffn.2.w"] += dw2
        grads[pre + "ffn.2.b"] += db2
        dx, dg, dbeta = layer_norm_backward(db, params[pre + "ln2.g"], ln2)
        grads[pre + "ln2.g"] += dg
        grads[pre + "ln2.b"] += dbeta
        dh1 = dh + dx
        da = _attention_backward(dh1, params, pre + "attn.", cfg.heads, att_c, grads)
        dx, dg, dbeta = layer_norm_backward(da, params[pre + "ln1.g"], ln1)
        grads[pre + "ln1.g"] += dg
        grads[pre + "ln1.b"] += dbeta
        dh = dh1 + dx
    return dh


def attention_pool(hl, query_row, params):
    """Softmax-weighted sum of token states, scored against the query token."""
    dk = params["pool.q.w"].shape[1]
    q = hl[query_row] @ params["pool.q.w"] + params["pool.q.b"]
    keys = hl @ params["pool.k.w"] + params["pool.k.b"]
    alpha = softmax(keys @ q / np.sqrt(dk))
    return alpha @ hl, (hl, query_row, q, keys, alpha)


def attention_pool_backward(dz, params, cache, grads):
    hl, query_row, q, keys, alpha = cache
    dk = q.shape[0]
    dhl = np.outer(alpha, dz)
    ds = softmax_backward(alpha, hl @ dz) / np.sqrt(dk)
    dkeys = np.outer(ds, q)
    dq = keys.T @ ds
    grads["pool.k.w"] += hl.T @ dkeys
    grads["pool.k.b"] += dkeys.sum(axis=0)
    dhl += dkeys @ params["pool.k.w"].T
    grads["pool.q.w"] += np.outer(hl[query_row], dq)
    grads["pool.q.b"] += dq
    dhl[query_row] += params["pool.q.w"] @ dq
    return dhl


@dataclass
class RoutingState:
    logits: np.ndarray
    g: np.ndarray
    top: np.ndarray
    q_mix: np.ndarray
    epsilon: np.ndarray


def top_indices(g: np.ndarray, p: int) -> np.ndarray:
    """Indices of the ``p`` largest weights, lower index first on ties."""
    return np.lexsort((np.arange(g.shape[0]), -g))[:p]


def route_codebook(z, params, cfg: TrainConfig, noise: Noise | None = None) -> RoutingState:
    """Perturbed softmax over codebook entries; mix the top ``P`` by raw weight."""
    logits = z @ params["router.w"]
    eps = np.zeros_like(logits)
    if noise is not None and noise.gumbel is not None:
        eps = cfg.noise_scale * noise.gumbel
    g = softmax((logits + eps) / cfg.tau)
    top = noise.top if noise is not None and noise.top is not None else top_indices(g, cfg.top_p)
    q_mix = g[top] @ params["codebook"][top]
    return RoutingState(logits, g, top, q_mix, eps)


def route_backward(dq, dg_extra, z, params, cfg: TrainConfig, state: RoutingState, grads):
    dg = np.zeros_like(state.g) if dg_extra is None else dg_extra.copy()
    dg[state.top] += params["codebook"][state.top] @ dq
    grads["codebook"][state.top] += np.outer(state.g[state.top], dq)
    dlogits = softmax_backward(state.g, dg) / cfg.tau
    grads["router.w"] += np.outer(z, dlogits)
    return params["router.w"] @ dlogits


def decode(q_mix, m: int, params):
    if f"dec{m}.1.w" not in params:
        raise ModelError(f"no decoder for modality {m}")
    return mlp2(q_mix, params[f"dec{m}.1.w"], params[f"dec{m}.1.b"], params[f"dec{m}.2.w"], params[f"dec{m}.2.b"])


def decode_backward(dy, m: int, params, cache, grads):
    dq, dw1, db1, dw2, db2 = mlp2_backward(dy, params[f"dec{m}.1.w"], params[f"dec{m}.2.w"], cache)
    grads[f"dec{m}.1.w"] += dw1
    grads[f"dec{m}.1.b"] += db1
    grads[f"dec{m}.2.w"] += dw2
    grads[f"dec{m}.2.b"] += db2
    return dq


@dataclass
class Forward:
    """Everything one sample's backward pass needs."""

    tok_cache: tuple
    blk_caches: list
    pool_cache: tuple
    z: np.ndarray
    route: RoutingState
    outputs: dict[int, np.ndarray]
    dec_caches: dict[int, tuple] = field(default_factory=dict)


def forward(x_in, params, cfg: TrainConfig, decode_modalities: Sequence[int], noise: Noise | None = None) -> Forward:
    """Full stack for one query whose token sits in row 0 of ``x_in``."""
    h0, tok_c = embed_tokens(x_in, params)
    hl, blk_c = transformer_forward(h0, params, cfg, noise)
    z, pool_c = attention_pool(hl, 0, params)
    route = route_codebook(z, params, cfg, noise)
    out, dec_c = {}, {}
    for m in decode_modalities:
        out[m], dec_c[m] = decode(route.q_mix, m, params)
    return Forward(tok_c, blk_c, pool_c, z, route, out, dec_c)


def backward(fw: Forward, d_out: dict[int, np.ndarray], dg_extra, params, cfg: TrainConfig, grads) -> None:
    dq = np.zeros_like(fw.route.q_mix)
    for m, dy in d_out.items():
        dq += decode_backward(dy, m, params, fw.dec_caches[m], grads)
    dz = route_backward(dq, dg_extra, fw.z, params, cfg, fw.route, grads)
    dhl = attention_pool_backward(dz, params, fw.pool_cache, grads)
    dh0 = transformer_backward(dhl, params, cfg, fw.blk_caches, grads)
    _, dw1, db1, dw2, db2 = mlp2_backward(dh0, params["tok.1.w"], params["tok.2.w"], fw.tok_cache)
    grads["tok.1.w"] += dw1
    grads["tok.1.b"] += db1
    grads["tok.2.w"] += dw2
    grads["tok.2.b"] += db2


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}
