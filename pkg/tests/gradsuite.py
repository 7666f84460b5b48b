"""Central finite-difference checks for every nnops operation.

Each case builds random small inputs, projects the op output onto a random
direction ``r`` (loss = sum(out * r)) and compares the hand-written backward
pass against central differences of that scalar.  Differences are always
taken in float64; the analytic side runs in the dtype under test.
"""

from __future__ import annotations

import numpy as np

from l3avc import nnops

STEP = {np.float32: 1e-3, np.float64: 1e-5}


def numeric_grad(f, x, h):
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def _spread(rng, shape, gap):
    """Values in random order whose pairwise gaps exceed ``gap`` and avoid zero."""
    n = int(np.prod(shape))
    vals = (np.arange(n) + 1) * gap * 3 * rng.choice([-1.0, 1.0], n)
    return rng.permutation(vals).reshape(shape) * rng.uniform(0.7, 1.5)


def case_conv2d(rng, dtype):
    n, c, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    h, w = rng.integers(2, 6), rng.integers(2, 6)
    x = rng.standard_normal((n, c, h, w))
    kern = rng.standard_normal((k, c, 3, 3))
    b = rng.standard_normal(k)
    r = rng.standard_normal((n, k, h, w))

    def loss():
        out, _ = nnops.conv2d_forward(x, kern, b)
        return float((out * r).sum())

    out, cache = nnops.conv2d_forward(x.astype(dtype), kern.astype(dtype), b.astype(dtype))
    dx, dk, db = nnops.conv2d_backward(r.astype(dtype), cache)
    return [(dx, x), (dk, kern), (db, b)], loss


def case_batchnorm(rng, dtype, train=True):
    # at least 8 values per channel: with only 2 the normalised output is
    # always +-1 and the true input gradient vanishes
    n, c = rng.integers(2, 5), rng.integers(1, 4)
    h, w = rng.integers(2, 4), rng.integers(2, 4)
    x = rng.standard_normal((n, c, h, w)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
    gamma = rng.uniform(0.5, 1.5, c)
    beta = rng.standard_normal(c)
    rm = rng.standard_normal(c)
    rv = rng.uniform(0.5, 2, c)
    r = rng.standard_normal((n, c, h, w))

    def loss():
        out, _, _ = nnops.batchnorm_forward(x, gamma, beta, rm, rv, train)
        return float((out * r).sum())

    cast = [a.astype(dtype) for a in (x, gamma, beta, rm, rv)]
    out, cache, _ = nnops.batchnorm_forward(*cast, train)
    dx, dg, db = nnops.batchnorm_backward(r.astype(dtype), cache)
    return [(dx, x), (dg, gamma), (db, beta)], loss


def case_batchnorm_eval(rng, dtype):
    return case_batchnorm(rng, dtype, train=False)


def case_maxpool2d(rng, dtype):
    k = int(rng.integers(1, 4))
    n, c = rng.integers(1, 3), rng.integers(1, 3)
    h, w = rng.integers(k, 7), rng.integers(k, 7)
    x = _spread(rng, (n, c, h, w), 0.05)
    r = rng.standard_normal((n, c, h // k, w // k))

    def loss():
        out, _ = nnops.maxpool2d_forward(x, k)
        return float((out * r).sum())

    _, cache = nnops.maxpool2d_forward(x.astype(dtype), k)
    return [(nnops.maxpool2d_backward(r.astype(dtype), cache), x)], loss


def case_global_maxpool(rng, dtype):
    n, c = rng.integers(1, 3), rng.integers(1, 4)
    h, w = rng.integers(1, 5), rng.integers(1, 5)
    x = _spread(rng, (n, c, h, w), 0.05)
    r = rng.standard_normal((n, c))

    def loss():
        out, _ = nnops.global_maxpool_forward(x)
        return float((out * r).sum())

    _, cache = nnops.global_maxpool_forward(x.astype(dtype))
    return [(nnops.global_maxpool_backward(r.astype(dtype), cache), x)], loss


def case_fc(rng, dtype):
    n, d, m = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 6)
    x = rng.standard_normal((n, d))
    wts = rng.standard_normal((d, m))
    b = rng.standard_normal(m)
    r = rng.standard_normal((n, m))

    def loss():
        out, _ = nnops.fc_forward(x, wts, b)
        return float((out * r).sum())

    _, cache = nnops.fc_forward(x.astype(dtype), wts.astype(dtype), b.astype(dtype))
    dx, dw, db = nnops.fc_backward(r.astype(dtype), cache)
    return [(dx, x), (dw, wts), (db, b)], loss


def case_relu(rng, dtype):
    shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
    x = _spread(rng, shape, 0.05)
    r = rng.standard_normal(shape)

    def loss():
        out, _ = nnops.relu_forward(x)
        return float((out * r).sum())

    _, mask = nnops.relu_forward(x.astype(dtype))
    return [(nnops.relu_backward(r.astype(dtype), mask), x)], loss


def case_softmax_cross_entropy(rng, dtype):
    n, k = rng.integers(1, 6), rng.integers(2, 6)
    logits = rng.standard_normal((n, k)) * 2
    targets = rng.integers(0, k, n)

    def loss():
        return nnops.softmax_cross_entropy(logits, targets)[0]

    _, g = nnops.softmax_cross_entropy(logits.astype(dtype), targets)
    return [(g, logits)], loss


CASES = {
    "conv2d": case_conv2d,
    "batchnorm_train": case_batchnorm,
    "batchnorm_eval": case_batchnorm_eval,
    "maxpool2d": case_maxpool2d,
    "global_maxpool": case_global_maxpool,
    "fully_connected": case_fc,
    "relu": case_relu,
    "softmax_cross_entropy": case_softmax_cross_entropy,
}


def check_op(name, instances=20, dtype=np.float32, seed=0):
    """Worst relative error over ``instances`` random cases of one op."""
    rng = np.random.default_rng([seed, len(name)] + [ord(ch) for ch in name])
    worst = 0.0
    for _ in range(instances):
        pairs, loss = CASES[name](rng, dtype)
        for analytic, x in pairs:
            numeric = numeric_grad(loss, x, STEP[dtype])
            worst = max(worst, rel_error(analytic, numeric))
    return worst


def run_suite(instances=20, dtype=np.float32, seed=0):
    return {name: check_op(name, instances, dtype, seed) for name in CASES}
