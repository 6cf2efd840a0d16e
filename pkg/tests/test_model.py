import math

import numpy as np
import pytest

from gradcheck import SMALL, frozen_problem
from modcomplete.model.layers import layer_norm, softmax
from modcomplete.model.network import (
    ModelError,
    Noise,
    TrainConfig,
    attention_pool,
    decode,
    forward,
    init_params,
    route_codebook,
    transformer_forward,
)
from modcomplete.model.objective import Sample, loss_load, loss_total, loss_usage, usage_grad
from modcomplete.model.train import Adam, fit
from modcomplete.modality import apply_masking
from modcomplete.pipeline import RetrievalConfig, complete, prepare_sample


def tiny_cfg(**kw):
    base = dict(d=8, k=3, layers=2, heads=2, codebook_size=6, top_p=2, dropout=0.0)
    base.update(kw)
    return TrainConfig(**base)


def test_softmax_and_layer_norm_basics(rng):
    x = rng.standard_normal((4, 7))
    p = softmax(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    y, _ = layer_norm(x, np.ones(7), np.zeros(7))
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)


def test_single_token_attends_to_itself(rng):
    cfg = tiny_cfg(layers=1)
    params = init_params(cfg, (2, 2), rng)
    h = rng.standard_normal((1, 8))
    out, caches = transformer_forward(h, params, cfg)
    att = caches[0][1][4]
    np.testing.assert_allclose(att, 1.0)
    assert out.shape == (1, 8)


def test_zero_layers_is_identity(rng):
    cfg = tiny_cfg(layers=0)
    params = init_params(cfg, (2, 2), rng)
    h = rng.standard_normal((5, 8))
    np.testing.assert_array_equal(transformer_forward(h, params, cfg)[0], h)


def test_transformer_permutation_equivariant(rng):
    cfg = tiny_cfg()
    params = init_params(cfg, (2, 2), rng)
    h = rng.standard_normal((6, 8))
    perm = rng.permutation(6)
    a = transformer_forward(h, params, cfg)[0]
    b = transformer_forward(h[perm], params, cfg)[0]
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


def test_pool_uniform_when_keys_equal(rng):
    cfg = tiny_cfg()
    params = init_params(cfg, (2, 2), rng)
    params["pool.k.w"][:] = 0.0
    hl = rng.standard_normal((5, 8))
    z, cache = attention_pool(hl, 0, params)
    np.testing.assert_allclose(cache[4], 0.2)
    np.testing.assert_allclose(z, hl.mean(axis=0), atol=1e-12)


def test_pool_saturates_on_dominant_logit(rng):
    cfg = tiny_cfg()
    params = init_params(cfg, (2, 2), rng)
    dk = cfg.d_k
    params["pool.q.w"][:] = 0.0
    params["pool.q.b"][:] = 0.0
    params["pool.q.b"][0] = 1.0
    params["pool.k.w"][:] = 0.0
    params["pool.k.b"][:] = 0.0
    hl = rng.standard_normal((4, 8))
    # key of row 2 gets a +50 logit via its first feature
    params["pool.k.w"][0, 0] = 50 * math.sqrt(dk)
    hl[:, 0] = 0.0
    hl[2, 0] = 1.0
    z, cache = attention_pool(hl, 0, params)
    assert cache[4][2] > 1 - 1e-9
    assert cache[4].sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(z, hl[2], atol=1e-9 * np.abs(hl).max() * 4)


def test_routing_worked_example():
    cfg = TrainConfig(d=3, heads=1, codebook_size=3, top_p=3, tau=0.5)
    params = {"router.w": np.eye(3), "codebook": np.arange(9.0).reshape(3, 3)}
    st = route_codebook(np.array([2.0, 0.0, 0.0]), params, cfg)
    np.testing.assert_allclose(st.g, [0.96466, 0.01767, 0.01767], atol=1e-5)
    np.testing.assert_allclose(st.q_mix, st.g @ params["codebook"], atol=1e-12)


def test_routing_uniform_logits():
    cfg = TrainConfig(d=4, heads=1, codebook_size=4, top_p=2)
    params = {"router.w": np.zeros((4, 4)), "codebook": np.eye(4)}
    st = route_codebook(np.ones(4), params, cfg)
    np.testing.assert_allclose(st.g, 0.25)
    assert st.top.tolist() == [0, 1]


def test_routing_noise_scale_multiplies_gumbel():
    cfg = TrainConfig(d=2, heads=1, codebook_size=2, top_p=1, noise_scale=0.1)
    params = {"router.w": np.zeros((2, 2)), "codebook": np.eye(2)}
    st = route_codebook(np.zeros(2), params, cfg, Noise(gumbel=np.array([1.0, 0.0])))
    np.testing.assert_allclose(st.g, softmax(np.array([0.2, 0.0])))


def test_decoder_dims_and_zero_weights(rng):
    cfg = tiny_cfg()
    params = init_params(cfg, (4096, 384), rng)
    assert decode(rng.standard_normal(8), 0, params)[0].shape == (4096,)
    assert decode(rng.standard_normal(8), 1, params)[0].shape == (384,)
    for k in params:
        if k.startswith("dec1"):
            params[k][:] = 0.0
    assert not decode(rng.standard_normal(8), 1, params)[0].any()


def test_usage_loss_closed_forms():
    assert loss_usage(np.full((3, 5), 0.2)) < 1e-12
    assert loss_usage(np.tile([1.0, 0, 0, 0], (2, 1))) == pytest.approx(math.log(4), abs=1e-9)
    assert loss_usage(np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])) >= 0


def test_usage_gradient_orthogonal_to_simplex_at_uniform():
    grad = usage_grad(np.full((4, 5), 0.2))
    # directions preserving the mean have zero-sum components
    direction = np.array([0.3, -0.1, -0.1, 0.0, -0.1])
    assert abs(grad @ direction) < 1e-15


def test_load_loss_closed_forms():
    balanced = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=float)
    assert loss_load(balanced, 2) == pytest.approx(4.0, abs=1e-9)
    same = np.tile([1.0, 1.0, 0.0, 0.0], (5, 1))
    assert loss_load(same, 2) == pytest.approx(8.0, abs=1e-9)
    assert loss_load(np.array([[1.0, 0, 0, 0]]), 1) == pytest.approx(4.0)
    with pytest.raises(ModelError):
        loss_load(np.array([[1.0, 1.0, 0, 0]]), 1)


def test_total_loss_pure_recon_when_weights_zero(rng):
    cfg = tiny_cfg(lambda_usage=0.0, lambda_load=0.0)
    params = init_params(cfg, (2, 3), rng)
    x = rng.standard_normal((3, 2 + 3 + cfg.k))
    res = loss_total(params, cfg, [Sample(0, [0, 1, 2], x, 1, rng.standard_normal(3))])
    assert res.total == pytest.approx(res.recon)


def test_perfect_reconstruction_zero_recon_gradient(rng):
    cfg = tiny_cfg(lambda_usage=0.0, lambda_load=0.0)
    params = init_params(cfg, (2, 3), rng)
    x = rng.standard_normal((3, 2 + 3 + cfg.k))
    target = forward(x, params, cfg, [1]).outputs[1]
    res = loss_total(params, cfg, [Sample(0, [0, 1, 2], x, 1, target)])
    assert res.recon == 0.0
    assert all(not g.any() for g in res.grads.values())


def test_batch_without_targets_rejected(rng):
    params = init_params(tiny_cfg(), (2, 3), rng)
    with pytest.raises(ModelError, match="no reconstructable"):
        loss_total(params, tiny_cfg(), [Sample(0, [0], np.zeros((1, 8)))])


def test_gradients_spot_check():
    # full sweep lives in the acceptance suite; here a few entries per tensor
    params, samples, noises, res = frozen_problem()
    rng = np.random.default_rng(1)
    for name, val in params.items():
        idx = tuple(int(rng.integers(0, s)) for s in val.shape)
        old = val[idx]
        val[idx] = old + 1e-5
        up = loss_total(params, SMALL, samples, noises, with_grads=False).total
        val[idx] = old - 1e-5
        down = loss_total(params, SMALL, samples, noises, with_grads=False).total
        val[idx] = old
        num = (up - down) / 2e-5
        assert abs(num - res.grads[name][idx]) <= max(1e-8, 1e-4 * abs(num)), name


def test_threaded_batch_matches_sequential():
    from concurrent.futures import ThreadPoolExecutor

    params, samples, noises, res = frozen_problem()
    with ThreadPoolExecutor(3) as ex:
        par = loss_total(params, SMALL, samples, noises, pool=ex)
    assert par.total == res.total
    for k in res.grads:
        np.testing.assert_array_equal(par.grads[k], res.grads[k])


def test_adam_zero_lr_leaves_params(rng):
    params = {"w": rng.standard_normal(3)}
    before = params["w"].copy()
    opt = Adam(params, 0.0, l2=0.1)
    opt.step(params, {"w": np.ones(3)})
    np.testing.assert_array_equal(params["w"], before)
    assert opt.m["w"].any()


def _samples(data, mask, cfg, items):
    from modcomplete.model.train import build_samples

    rcfg = RetrievalConfig(k=4, t=3)
    return build_samples(data.graph, data.store.zero_unobserved(mask), mask, items, rcfg, cfg.k)


def test_fit_is_deterministic(small_data):
    cfg = tiny_cfg(epochs=3, batch_size=8, dropout=0.3, noise_scale=0.1)
    mask = apply_masking(small_data.store.n_items, 2, 0.4, 0)
    full = np.flatnonzero(mask.observed.all(axis=1))
    tr = _samples(small_data, mask, cfg, full[:8])
    va = _samples(small_data, mask, cfg, full[8:10])
    p1, h1 = fit(tr, va, cfg, small_data.store.dims)
    p2, h2 = fit(tr, va, cfg, small_data.store.dims)
    assert [h.row() for h in h1] == [h.row() for h in h2]
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])


def test_complete_contract(small_data):
    cfg = tiny_cfg()
    params = init_params(cfg, small_data.store.dims, np.random.default_rng(0))
    mask = apply_masking(small_data.store.n_items, 2, 0.4, 0)
    store = small_data.store.zero_unobserved(mask)
    rcfg = RetrievalConfig(k=4, t=3)
    i = int(np.flatnonzero(~mask.observed[:, 1])[0])
    a = complete(i, mask, store, small_data.graph, params, cfg, rcfg)
    b = complete(i, mask, store, small_data.graph, params, cfg, rcfg)
    assert list(a.vectors) == [1] and a.vectors[1].shape == (small_data.store.dims[1],)
    np.testing.assert_array_equal(a.vectors[1], b.vectors[1])
    j = int(np.flatnonzero(mask.observed.all(axis=1))[0])
    with pytest.raises(ModelError, match="nothing to complete"):
        complete(j, mask, store, small_data.graph, params, cfg, rcfg)


def test_token_inputs_zero_fill(small_data):
    mask = apply_masking(small_data.store.n_items, 2, 0.4, 0)
    store = small_data.store.zero_unobserved(mask)
    i = int(np.flatnonzero(~mask.observed[:, 1])[0])
    sample, ret = prepare_sample(small_data.graph, store, mask, i, RetrievalConfig(k=4, t=3), 5)
    d0, d1 = small_data.store.dims
    assert sample.tokens[0] == i
    assert not sample.x_in[0, d0 : d0 + d1].any()
    np.testing.assert_array_equal(sample.x_in[0, :d0], small_data.store.features[0][i])
    assert sample.x_in.shape == (len(set(ret.subgraph.nodes) | {i}), d0 + d1 + 5)
