"""Shared finite-difference oracle used by unit and acceptance tests.

Everything here recomputes derivatives numerically, independent of the
autodiff engine under test.
"""

import numpy as np

from direplab import autodiff as ad
from direplab.autodiff import Tensor, backward
from direplab.networks import LayerSpec, Network


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at float64 array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
        it.iternext()
    return g


def rel_error(analytic, numeric):
    return np.max(np.abs(analytic - numeric)) / (np.max(np.abs(numeric)) + 1e-12)


def random_net_rel_error(seed):
    """Build a random small float64 net, compare backward to finite differences.

    The loss mixes every activation family: relu and sigmoid hiddens, a
    softmax head consumed by a log-based loss, plus sum-of-squares.
    Returns the worst relative error over all parameters.
    """
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(2, 6)) for _ in range(3)]
    d_in = int(rng.integers(2, 6))
    layers = [
        LayerSpec(d_in, widths[0], "relu"),
        LayerSpec(widths[0], widths[1], "sigmoid"),
        LayerSpec(widths[1], widths[2], "softmax"),
    ]
    net = Network("C", layers, rng, dtype=np.float64)
    x = rng.standard_normal((int(rng.integers(2, 5)), d_in))
    y = np.zeros((x.shape[0], widths[2]))
    y[np.arange(x.shape[0]), rng.integers(0, widths[2], x.shape[0])] = 1.0

    def loss_value(params_flat):
        offset = 0
        vals = []
        for p in net.params():
            size = p.data.size
            vals.append(params_flat[offset:offset + size].reshape(p.data.shape))
            offset += size
        h = x
        for spec, w, b in zip(net.layers, vals[0::2], vals[1::2]):
            h = h @ w + b
            if spec.activation == "relu":
                h = np.maximum(h, 0)
            elif spec.activation == "sigmoid":
                h = 1.0 / (1.0 + np.exp(-h))
            elif spec.activation == "softmax":
                z = h - h.max(axis=1, keepdims=True)
                h = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        ce = -np.mean(np.log(np.sum(h * y, axis=1)))
        return ce + 0.1 * np.sum(h * h)

    probs = net.forward(Tensor(x))
    picked = ad.matmul(ad.multiply(probs, Tensor(y)), Tensor(np.ones((widths[2], 1))))
    ce = ad.multiply(ad.sum_all(ad.log(picked)), -1.0 / x.shape[0])
    loss = ad.add(ce, ad.multiply(ad.sum_of_squares(probs), 0.1))
    backward(loss)

    flat = np.concatenate([p.data.ravel() for p in net.params()])
    numeric = numeric_grad(loss_value, flat, h=1e-6)
    analytic = np.concatenate([p.grad.ravel() for p in net.params()])
    return rel_error(analytic, numeric)
