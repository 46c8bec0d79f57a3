import numpy as np
import pytest

from hetvit import autodiff as ad
from hetvit.autodiff import Tensor
from hetvit.errors import NotScalar, ShapeMismatch
from hetvit.optim import AdamW, adamw_step, cosine_lr

from fdcheck import fd_check


def _away(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def test_elementwise_and_matmul(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    fd_check(lambda x, y: x + y, [a, b])
    fd_check(lambda x, y: x - y, [a, b])
    fd_check(lambda x, y: x * y, [a, b])
    fd_check(lambda x: ad.scale(x, -2.5), [a])
    fd_check(lambda x, y: x @ y, [a, rng.normal(size=(4, 2))])
    fd_check(lambda x, y: x @ y, [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5))])
    # bias-style broadcast
    fd_check(lambda x, y: x + y, [a, rng.normal(size=(4,))])


def test_activations(rng):
    fd_check(ad.relu, [_away(rng, (4, 5))])
    fd_check(ad.gelu_tanh, [rng.normal(size=(4, 5)) * 2])
    fd_check(ad.softmax_rows, [rng.normal(size=(3, 6)) * 2])
    x = _away(rng, (3, 6))
    x[0] = -np.abs(x[0])  # an all-negative row
    fd_check(ad.relusoftmax_rows, [x])


def test_layernorm_grad(rng):
    fd_check(ad.layernorm, [rng.normal(size=(2, 3, 6)), rng.normal(size=(6,)), rng.normal(size=(6,))])


def test_shape_ops(rng):
    x = rng.normal(size=(2, 3, 4))
    fd_check(lambda t: ad.reshape(t, 6, 4), [x])
    fd_check(lambda t: ad.transpose(t, (2, 0, 1)), [x])
    fd_check(lambda t: t[:, 1:, ::2], [x])
    fd_check(lambda t: ad.tmean(t, axis=1), [x])
    fd_check(lambda t: ad.tsum(t, axis=(0, 2), keepdims=True), [x])
    fd_check(lambda t, u: ad.concat([t, u], axis=1), [x, rng.normal(size=(2, 2, 4))])


def test_losses(rng):
    labels = np.array([0, 2, 1])
    fd_check(lambda z: ad.cross_entropy(z, labels), [rng.normal(size=(3, 4))])
    fd_check(lambda s, t: ad.kl_div(s, t, 2.0), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])
    fd_check(lambda z: ad.l2_norm(z, axis=1), [rng.normal(size=(3, 5))])
    fd_check(lambda z: ad.l2_norm(z), [rng.normal(size=(3, 5))])


def test_relu_examples():
    x = Tensor(np.array([2.0, -2.0]), requires_grad=True)
    ad.tsum(ad.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 0.0])


def test_softmax_uniform_grad_symmetric():
    x = Tensor(np.zeros((1, 4)), requires_grad=True)
    y = ad.softmax_rows(x)
    (y[0, 0] * Tensor(1.0)).backward()
    g = x.grad[0]
    assert g[0] > 0
    np.testing.assert_allclose(g[1:], g[1])
    assert abs(g.sum()) < 1e-15


def test_backward_examples(rng):
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    ad.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))
    x, yv = Tensor(rng.normal(size=4), requires_grad=True), rng.normal(size=4)
    ad.tsum(x * Tensor(yv)).backward()
    np.testing.assert_array_equal(x.grad, yv)


def test_fan_out_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x
    ad.tsum(y).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_not_scalar_and_shapes(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with pytest.raises(NotScalar):
        (x * x).backward()
    with pytest.raises(ShapeMismatch):
        ad.kl_div(np.zeros((2, 3)), np.zeros((2, 4)))


def test_backward_is_deterministic(rng):
    a, w = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))

    def run():
        x, W = Tensor(a, requires_grad=True), Tensor(w, requires_grad=True)
        ad.cross_entropy(ad.gelu_tanh(x @ W), np.array([0, 1, 2, 0])).backward()
        return x.grad, W.grad

    g1, g2 = run(), run()
    for u, v in zip(g1, g2):
        np.testing.assert_array_equal(u, v)


def test_adamw_examples():
    p = [np.array([1.0, -2.0])]
    adamw_step(p, [np.zeros(2)], {}, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([w], lr=0.1, weight_decay=0.01)
    (w * w).backward()
    opt.step()
    assert w.data[0] ** 2 < 1.0
    with pytest.raises(ShapeMismatch):
        adamw_step([np.zeros(2)], [np.zeros(3)], {}, lr=0.1)


def test_cosine_endpoints():
    assert cosine_lr(0, 30, 3e-3, 1e-5) == 3e-3
    assert cosine_lr(30, 30, 3e-3, 1e-5) == pytest.approx(1e-5)
    assert cosine_lr(15, 30, 2.0, 0.0) == pytest.approx(1.0)
    lrs = [cosine_lr(e, 10, 1.0) for e in range(11)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
