"""Central finite-difference checks for every layer kind and the fused loss.

Each ``check_*`` function returns the worst relative error over all
inputs/parameters of one randomly drawn case. The loss probed is
``sum(out * R)`` for a fixed random ``R``.
"""
import numpy as np

from snapstack import layers as L
from snapstack.tensor import Rng
from snapstack.training import one_hot, weighted_cross_entropy

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place, restored)."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + step
        hi = f()
        x[i] = old - step
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.linalg.norm(a) + np.linalg.norm(n)
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def _probe(shape, gen):
    return gen.normal(size=shape)


def check_conv2d(shape, gen):
    n, h, w, cin, k, cout = shape
    x = gen.normal(size=(n, h, w, cin))
    kern = gen.normal(size=(k, k, cin, cout))
    bias = gen.normal(size=cout)
    R = _probe((n, h - k + 1, w - k + 1, cout), gen)
    f = lambda: float(np.sum(L.conv2d_forward(x, kern, bias)[0] * R))
    _, cache = L.conv2d_forward(x, kern, bias)
    dx, grads = L.conv2d_backward(R, cache)
    return max(rel_error(dx, numeric_grad(f, x)),
               rel_error(grads["kernel"], numeric_grad(f, kern)),
               rel_error(grads["bias"], numeric_grad(f, bias)))


def check_relu(shape, gen):
    x = gen.normal(size=shape)
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    R = _probe(shape, gen)
    f = lambda: float(np.sum(L.relu_forward(x)[0] * R))
    dx = L.relu_backward(R, L.relu_forward(x)[1])
    return rel_error(dx, numeric_grad(f, x))


def check_maxpool2d(shape, gen):
    # a permutation keeps every window's maximum separated from the runner-up by >= 1
    x = gen.permutation(np.prod(shape)).reshape(shape).astype(float)
    n, h, w, c = shape
    R = _probe((n, h // 2, w // 2, c), gen)
    f = lambda: float(np.sum(L.maxpool2d_forward(x)[0] * R))
    dx = L.maxpool2d_backward(R, L.maxpool2d_forward(x)[1])
    return rel_error(dx, numeric_grad(f, x))


def check_batchnorm(shape, gen, training=True):
    c = shape[-1]
    x = gen.normal(loc=1.0, scale=2.0, size=shape)
    gamma = gen.normal(size=c)
    beta = gen.normal(size=c)
    mm, mv = gen.normal(size=c), gen.uniform(0.5, 2.0, size=c)
    R = _probe(shape, gen)

    def f():
        return float(np.sum(L.batchnorm_forward(x, gamma, beta, mm.copy(), mv.copy(), training)[0] * R))

    _, cache = L.batchnorm_forward(x, gamma, beta, mm.copy(), mv.copy(), training)
    dx, grads = L.batchnorm_backward(R, cache)
    return max(rel_error(dx, numeric_grad(f, x)),
               rel_error(grads["gamma"], numeric_grad(f, gamma)),
               rel_error(grads["beta"], numeric_grad(f, beta)))


def check_dropout(shape, gen, p=0.3):
    x = gen.normal(size=shape)
    R = _probe(shape, gen)
    f = lambda: float(np.sum(L.dropout_forward(x, p, Rng(5), True)[0] * R))
    dx = L.dropout_backward(R, L.dropout_forward(x, p, Rng(5), True)[1])
    return rel_error(dx, numeric_grad(f, x))


def check_globalavgpool(shape, gen):
    x = gen.normal(size=shape)
    R = _probe((shape[0], shape[-1]), gen)
    f = lambda: float(np.sum(L.globalavgpool_forward(x)[0] * R))
    dx = L.globalavgpool_backward(R, L.globalavgpool_forward(x)[1])
    return rel_error(dx, numeric_grad(f, x))


def check_dense(shape, gen):
    n, fin, fout = shape
    x = gen.normal(size=(n, fin))
    kern = gen.normal(size=(fin, fout))
    bias = gen.normal(size=fout)
    R = _probe((n, fout), gen)
    f = lambda: float(np.sum(L.dense_forward(x, kern, bias)[0] * R))
    dx, grads = L.dense_backward(R, L.dense_forward(x, kern, bias)[1])
    return max(rel_error(dx, numeric_grad(f, x)),
               rel_error(grads["kernel"], numeric_grad(f, kern)),
               rel_error(grads["bias"], numeric_grad(f, bias)))


def check_softmax(shape, gen):
    x = gen.normal(size=shape)
    R = _probe(shape, gen)
    f = lambda: float(np.sum(L.softmax_forward(x)[0] * R))
    dx = L.softmax_backward(R, L.softmax_forward(x)[1])
    return rel_error(dx, numeric_grad(f, x))


def check_fused_loss(shape, gen):
    """Weighted cross-entropy composed with softmax, differentiated w.r.t. the logits."""
    n, c = shape
    z = gen.normal(size=(n, c))
    t = one_hot(gen.integers(0, c, size=n), c)
    w = gen.uniform(0.5, 30.0, size=c)
    f = lambda: weighted_cross_entropy(L.softmax_forward(z)[0], t, w)[0]
    _, grad = weighted_cross_entropy(L.softmax_forward(z)[0], t, w)
    return rel_error(grad, numeric_grad(f, z))


CASES = {
    "conv2d": (check_conv2d, [(2, 5, 5, 1, 3, 2), (1, 6, 4, 3, 2, 4), (3, 4, 5, 2, 1, 3)]),
    "relu": (check_relu, [(4,), (2, 3, 3, 2), (5, 7)]),
    "maxpool2d": (check_maxpool2d, [(1, 4, 4, 1), (2, 5, 7, 3), (2, 3, 6, 2)]),
    "batchnorm": (check_batchnorm, [(4, 3, 3, 2), (6, 2, 2, 3), (8, 5)]),
    "dropout": (check_dropout, [(10,), (2, 3, 3, 4), (4, 6)]),
    "globalavgpool": (check_globalavgpool, [(1, 3, 3, 2), (2, 4, 5, 3), (3, 1, 2, 4)]),
    "dense": (check_dense, [(1, 4, 3), (5, 3, 7), (2, 8, 2)]),
    "softmax": (check_softmax, [(1, 3), (4, 5), (6, 2)]),
    "fused_loss": (check_fused_loss, [(1, 3), (7, 3), (4, 6)]),
}


def run_all(seed=0):
    """``{(kind, shape): relative error}`` for every case."""
    out = {}
    for kind, (fn, shapes) in CASES.items():
        for i, shape in enumerate(shapes):
            out[(kind, shape)] = fn(shape, np.random.default_rng([seed, i]))
    return out
