import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hetvit import autodiff as ad
from hetvit.arch import CIFAR_CONFIG, DESK_CONFIG, AttentionAssignment, ViTConfig
from hetvit.attention import rs_attn, scale_attn
from hetvit.autodiff import Tensor
from hetvit.cost import CostTable, default_table
from hetvit.data import synth_shapes
from hetvit.errors import InvalidConfig, MissingCostEntry, ZeroLatency
from hetvit.model import build_vit, forward
from hetvit.search import (ArchParams, SearchConfig, balance_eta, binarize_threshold, binarize_topk, latency_grids,
                           layer_profile, mixed_attention_forward, mixed_gelu_forward, per_layer_uniform_baseline,
                           run_search, search_loss)


def _qkv(rng, n=5, d=4):
    return rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d))


def test_mixed_attention_endpoints(rng):
    Q, K, V = _qkv(rng)
    np.testing.assert_array_equal(mixed_attention_forward(Q, K, V, 1.0).data, rs_attn(Q, K, V))
    np.testing.assert_allclose(mixed_attention_forward(Q, K, V, 0.0).data, scale_attn(Q, K, V) / 2.0, rtol=1e-12, atol=1e-15)


def test_mixed_attention_alpha_grad(rng):
    Q, K, V = _qkv(rng)
    R = rng.normal(size=V.shape)
    a = Tensor(np.array(0.3), requires_grad=True)
    ad.tsum(mixed_attention_forward(Q, K, V, a) * Tensor(R)).backward()
    h = 1e-6
    f = lambda v: float(np.sum(mixed_attention_forward(Q, K, V, v).data * R))
    num = (f(0.3 + h) - f(0.3 - h)) / (2 * h)
    assert a.grad == pytest.approx(num, rel=1e-6)
    # closed form: RSAttn term minus scaled ScaleAttn term
    assert a.grad == pytest.approx(np.sum((rs_attn(Q, K, V) - scale_attn(Q, K, V) / 2.0) * R), rel=1e-10)


def test_mixed_gelu(rng):
    x, W = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
    np.testing.assert_array_equal(mixed_gelu_forward(x, 1.0, W).data, ad.gelu_tanh_np(x) @ W)
    np.testing.assert_array_equal(mixed_gelu_forward(x, 0.0, W).data, x @ W)
    b = Tensor(np.array(0.6), requires_grad=True)
    R = rng.normal(size=(4, 3))
    ad.tsum(mixed_gelu_forward(x, b, W) * Tensor(R)).backward()
    f = lambda v: float(np.sum(mixed_gelu_forward(x, v, W).data * R))
    assert b.grad == pytest.approx((f(0.6 + 1e-6) - f(0.6 - 1e-6)) / 2e-6, rel=1e-6)


def test_search_loss_examples():
    task = Tensor(np.array(1.25))
    a = Tensor(np.ones((7, 4)), requires_grad=True)
    b = Tensor(np.ones((7, 1)))
    lat = np.full((7, 4), 0.5)
    assert search_loss(task, a, b, lat, np.ones((7, 1)), 0.0, 0.0).item() == 1.25
    out = search_loss(task, a, b, lat, np.ones((7, 1)), 0.1, 0.0)
    assert out.item() == pytest.approx(1.25 + 0.1 * 7 * 4 * 0.5)
    out.backward()
    np.testing.assert_allclose(a.grad, 0.1 * lat)


@given(arrays(np.float64, (2, 3), elements=st.floats(0, 1)), st.integers(0, 5), st.floats(0.01, 1))
def test_penalty_monotone_in_alpha(alpha, idx, bump):
    lat = np.arange(1.0, 7.0).reshape(2, 3)
    i = np.unravel_index(idx, alpha.shape)
    up = alpha.copy()
    up[i] += bump
    p0 = search_loss(0.0, Tensor(alpha), None, lat, None, 0.2, 0.0).item()
    p1 = search_loss(0.0, Tensor(up), None, lat, None, 0.2, 0.0).item()
    assert p1 > p0


def test_balance_eta():
    assert balance_eta(0.1, 3.0, 3.0) == pytest.approx(0.1)
    assert balance_eta(0.1, 10.0, 1.0) == pytest.approx(0.01)
    la, lg = latency_grids(CIFAR_CONFIG, default_table())
    eta = balance_eta(1e-5, la, lg)
    assert 0 < eta < 1e-5  # GeLU total is below attention total on the default table
    with pytest.raises(ZeroLatency):
        balance_eta(0.1, 0.0, 1.0)


def test_latency_grids_need_entries():
    t = default_table("simulator")
    partial = CostTable([t[k] for k in t.kinds() if k != "gelu"])
    with pytest.raises(MissingCostEntry):
        latency_grids(DESK_CONFIG, partial)
    la, lg = latency_grids(DESK_CONFIG, t, "token")
    assert la.shape == (2, 2) and lg.shape == (2, DESK_CONFIG.tokens)
    assert np.all(la > 0) and np.all(lg > 0)


def test_binarize_topk_counts():
    rng = np.random.default_rng(0)
    alpha = rng.uniform(size=(7, 4))
    assert binarize_topk(alpha, 0.5).choice.sum() == 14
    assert binarize_topk(alpha, 1.0).choice.all()
    assert not binarize_topk(alpha, 0.0).choice.any()
    for mu in (0.1, 0.3, 0.5, 0.7):
        a = binarize_topk(alpha, mu)
        k = math.ceil(round(mu * 28, 9))
        assert a.choice.sum() == k
        assert alpha[a.choice].min() >= alpha[~a.choice].max()
    with pytest.raises(InvalidConfig):
        binarize_topk(alpha, 1.5)


def test_binarize_topk_tie_break():
    a = binarize_topk(np.ones((2, 2)), 0.5)
    np.testing.assert_array_equal(a.choice, [[True, True], [False, False]])
    a = binarize_topk(np.array([[0.2, 0.9], [0.9, 0.9]]), 0.5)
    np.testing.assert_array_equal(a.choice, [[False, True], [True, False]])


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(0, 1)),
       st.floats(0, 1))
def test_binarize_topk_cardinality(alpha, mu):
    a = binarize_topk(alpha, mu)
    assert a.choice.sum() == math.ceil(round(mu * alpha.size, 9))
    if a.choice.any() and (~a.choice).any():
        assert alpha[a.choice].min() >= alpha[~a.choice].max()


def test_binarize_threshold():
    beta = np.array([[0.0], [0.5], [0.8], [1.0]])
    np.testing.assert_array_equal(binarize_threshold(beta, 0.0).gelu_kept.ravel(), [False, True, True, True])
    assert not binarize_threshold(beta, 1.0).gelu_kept.any()
    np.testing.assert_array_equal(binarize_threshold(beta, 0.75).gelu_kept.ravel(), [False, False, True, True])
    assert binarize_threshold(np.ones((2, 5)), 0.75).granularity == "token"


def test_uniform_baseline():
    cfg = ViTConfig(depth=3, heads=4, dim=32)
    g = per_layer_uniform_baseline(cfg, 0.5).choice
    np.testing.assert_array_equal(g.sum(1), [2, 2, 2])
    assert g[:, :2].all()
    assert not per_layer_uniform_baseline(cfg, 0.0).choice.any()
    assert per_layer_uniform_baseline(cfg, 1.0).choice.all()


def test_arch_params_init_and_clamp():
    arch = ArchParams.init(DESK_CONFIG)
    assert np.all(arch.alpha.data == 1.0) and np.all(arch.beta.data == 1.0)
    arch.alpha.data[0, 0], arch.beta.data[1, 0] = 1.7, -0.3
    arch.clamp()
    assert arch.alpha.data[0, 0] == 1.0 and arch.beta.data[1, 0] == 0.0


def test_search_config_validation():
    with pytest.raises(InvalidConfig):
        SearchConfig(lam=-1)
    with pytest.raises(InvalidConfig):
        SearchConfig(mu=2)
    with pytest.raises(InvalidConfig):
        SearchConfig(lat_norm="bogus")


def test_run_search_deterministic_and_pressured():
    ds = synth_shapes(96, seed=3)
    model = build_vit(DESK_CONFIG, 0)
    cfg = SearchConfig(lam=0.5, epochs=2, batch_size=32, arch_lr=2e-2)
    table = default_table("simulator")
    r1 = run_search(model, ds, cfg, table)
    r2 = run_search(model, ds, cfg, table)
    np.testing.assert_array_equal(r1.alpha, r2.alpha)
    np.testing.assert_array_equal(r1.beta, r2.beta)
    assert np.all((r1.alpha >= 0) & (r1.alpha <= 1))
    assert r1.alpha.mean() < 1.0 and r1.beta.mean() < 1.0
    assert len(r1.history) == 2 and r1.history[0]["penalty"] > 0
    # the input model is untouched
    np.testing.assert_array_equal(model.params["b0.qkv_w"].data, build_vit(DESK_CONFIG, 0).params["b0.qkv_w"].data)
    # lat_norm: scaled total attention latency equals the initial task loss
    la, _ = latency_grids(DESK_CONFIG, table)
    init_loss = ad.cross_entropy(forward(model, ds.images[:256], alpha=Tensor(np.ones((2, 2))),
                                         beta=Tensor(np.ones((2, 1))))[0], ds.labels[:256]).item()
    assert la.sum() * r1.lat_scale == pytest.approx(init_loss)


def test_layer_profile():
    np.testing.assert_allclose(layer_profile([[1.0, 0.0], [0.5, 0.5]]), [0.5, 0.5])
    assert isinstance(per_layer_uniform_baseline(DESK_CONFIG, 0.5), AttentionAssignment)
