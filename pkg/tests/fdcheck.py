import numpy as np

from hetvit import autodiff as ad
from hetvit.autodiff import Tensor

H = 1e-4


def fd_check(fn, inputs, seed=0, tol=1e-4):
    """Compare backward() against central differences of sum(fn(*inputs) * R)."""
    rng = np.random.default_rng(seed)
    ts = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = fn(*ts)
    R = rng.normal(size=out.shape)
    loss = ad.tsum(out * Tensor(R))
    loss.backward()

    def f(vals):
        return float(np.sum(fn(*[Tensor(v) for v in vals]).data * R))

    for k, x in enumerate(inputs):
        num = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            up = [v.copy() for v in inputs]
            dn = [v.copy() for v in inputs]
            up[k][i] += H
            dn[k][i] -= H
            num[i] = (f(up) - f(dn)) / (2 * H)
        got = ts[k].grad
        rel = np.linalg.norm(got - num) / max(np.linalg.norm(num), np.linalg.norm(got), 1e-8)
        assert rel <= tol, (k, rel)
