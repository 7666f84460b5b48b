"""Layer primitives with hand-written backward passes, plus the Adam update.

Every forward function returns ``(output, cache)`` and the matching backward
takes ``(output_grad, cache)``.  Arrays are plain numpy arrays in NCHW layout;
the dtype of the inputs is preserved so the same code can be checked against
finite differences in float64 and run in float32 for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


# -- convolution -----------------------------------------------------------

def conv2d_forward(x, kernel, bias):
    """3x3 cross-correlation, zero padding 1, stride 1 (spatial size kept)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    k = kernel.shape[0]
    if kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be 3x3, got {kernel.shape[2:]}")
    if kernel.shape[1] != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {kernel.shape[1]}")
    if bias.shape != (k,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({k},)")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # (N, C, 3, 3, H, W) -> (N, C*9, H*W)
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3)).transpose(0, 1, 4, 5, 2, 3)
    cols = cols.reshape(n, c * 9, h * w)
    wmat = kernel.reshape(k, c * 9)
    out = np.matmul(wmat, cols)
    out += bias[None, :, None]
    return out.reshape(n, k, h, w), (cols, kernel, x.shape)


def conv2d_backward(dout, cache, input_grad=True):
    """Gradients (dx, dkernel, dbias); ``dx`` is None when ``input_grad`` is off."""
    cols, kernel, xshape = cache
    n, c, h, w = xshape
    k = kernel.shape[0]
    d = dout.reshape(n, k, h * w)
    db = d.sum(axis=(0, 2))
    if h * w >= 64:
        # per-sample GEMMs avoid transposing the large column buffer
        dw = np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0)
    else:
        dw = np.tensordot(d, cols, axes=([0, 2], [0, 2]))
    dw = dw.reshape(kernel.shape)
    if not input_grad:
        return None, dw, db
    # input gradient = same-padded correlation of dout with the flipped,
    # channel-transposed kernel
    flipped = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = conv2d_forward(dout, flipped, np.zeros(c, dtype=dout.dtype))
    return dx, dw, db


# -- batch normalisation ---------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=0.99, eps=1e-5):
    """Per-channel batch norm over (N, H, W).

    Returns ``(out, cache, (new_running_mean, new_running_var))``; in eval
    mode the running statistics come back unchanged.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm gamma/beta must have shape ({c},)")
    bshape = (1, c, 1, 1)
    if train:
        m = n * h * w
        if m < 2:
            raise ValueError("batchnorm in train mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        xc = x - mean.reshape(bshape)
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        xhat = xc * inv_std.reshape(bshape)
        unbiased = var * (m / (m - 1))
        new_mean = (momentum * running_mean + (1 - momentum) * mean).astype(running_mean.dtype)
        new_var = (momentum * running_var + (1 - momentum) * unbiased).astype(running_var.dtype)
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x - running_mean.reshape(bshape).astype(x.dtype)) * inv_std.reshape(bshape)
        new_mean, new_var = running_mean, running_var
    out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, train), (new_mean, new_var)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    c = gamma.shape[0]
    bshape = (1, c, 1, 1)
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(bshape)
    if not train:
        return dxhat * inv_std.reshape(bshape), dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3)).reshape(bshape)
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(bshape)
    dx = (inv_std.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# -- pooling -----------------------------------------------------------------

def _pool_dims(kernel):
    if isinstance(kernel, (tuple, list)):
        kh, kw = int(kernel[0]), int(kernel[1])
    else:
        kh = kw = int(kernel)
    if kh < 1 or kw < 1:
        raise ValueError(f"pool kernel must be >= 1, got {kernel}")
    return kh, kw


def maxpool2d_forward(x, kernel):
    """Max pool with stride equal to the kernel, no padding, floor output size.

    ``kernel`` is an int or an ``(kh, kw)`` pair; the full spatial extent
    gives global max pooling.
    """
    kh, kw = _pool_dims(kernel)
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"pool kernel {(kh, kw)} larger than input {(h, w)}")
    ho, wo = h // kh, w // kw
    tiles = x[:, :, :ho * kh, :wo * kw].reshape(n, c, ho, kh, wo, kw)
    tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, kh * kw)
    # argmax returns the first maximum in row-major tile order
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, kh, kw)


def maxpool2d_backward(dout, cache):
    idx, xshape, kh, kw = cache
    n, c, h, w = xshape
    ho, wo = idx.shape[2], idx.shape[3]
    dtiles = np.zeros((n, c, ho, wo, kh * kw), dtype=dout.dtype)
    np.put_along_axis(dtiles, idx[..., None], dout[..., None], axis=-1)
    dtiles = dtiles.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(xshape, dtype=dout.dtype)
    dx[:, :, :ho * kh, :wo * kw] = dtiles.reshape(n, c, ho * kh, wo * kw)
    return dx


def global_maxpool_forward(x):
    """Spatial max over every location: N x C x H x W -> N x C."""
    out, cache = maxpool2d_forward(x, (x.shape[2], x.shape[3]))
    return out[:, :, 0, 0], cache


def global_maxpool_backward(dout, cache):
    return maxpool2d_backward(dout[:, :, None, None], cache)


# -- dense layers and activations ----------------------------------------

def fc_forward(x, weights, bias):
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"fc shape mismatch: input {x.shape}, weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"fc bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias, (x, weights)


def fc_backward(dout, cache):
    x, weights = cache
    return dout @ weights.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    targets = np.asarray(targets)
    n, k = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} != ({n},)")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= k:
        raise ValueError(f"target index out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, targets]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, targets] -= 1
    return loss, (grad / n).astype(logits.dtype, copy=False)


# -- optimiser -----------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update with weight decay folded into the gradient.

    Only names present in ``grads`` are updated.  Returns the new parameter
    dict (unchanged entries are shared) and the advanced state.
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m, v = dict(state.m), dict(state.v)
    new = dict(params)
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        mi = m.get(name)
        vi = v.get(name)
        if mi is None:
            mi = np.zeros_like(p)
            vi = np.zeros_like(p)
        mi = b1 * mi + (1 - b1) * g
        vi = b2 * vi + (1 - b2) * (g * g)
        step = state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.epsilon)
        new[name] = (p - step).astype(p.dtype, copy=False)
        m[name] = mi.astype(p.dtype, copy=False)
        v[name] = vi.astype(p.dtype, copy=False)
    return new, AdamState(state.lr, state.weight_decay, b1, b2, state.epsilon, t, m, v)


# -- initialisation -------------------------------------------------------

def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
