"""The two-stream correspondence network: vision trunk, audio trunk, fusion head.

Parameters live in flat dicts keyed ``"<trunk>/<layer>/<tensor>"``, e.g.
``vision/conv1_1/kernel`` or ``fusion/fc2/bias``.  Batch-norm running
statistics are kept apart from the trainable weights so optimisers never see
them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnops

TRUNKS = ("vision", "audio")
CONV_LAYERS = [f"conv{b}_{i}" for b in range(1, 5) for i in (1, 2)]


@dataclass(frozen=True)
class L3Config:
    vision_input: tuple = (224, 224)
    spectrogram_input: tuple = (257, 199)
    block_channels: tuple = (64, 128, 256, 512)
    fusion_hidden: int = 128
    width_multiplier: float = 1.0

    def __post_init__(self):
        if len(self.block_channels) != 4:
            raise ValueError("the trunk has exactly 4 blocks")
        if not 0 < self.width_multiplier <= 1:
            raise ValueError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        for h in (*self.vision_input, *self.spectrogram_input):
            if h < 16:
                raise ValueError("inputs must be at least 16 pixels on each side")

    @property
    def channels(self):
        return tuple(max(1, int(round(c * self.width_multiplier))) for c in self.block_channels)

    @property
    def embedding_dim(self):
        return self.channels[-1]

    @property
    def fusion_input(self):
        return 2 * self.embedding_dim

    def input_shape(self, trunk):
        if trunk == "vision":
            return (3, *self.vision_input)
        return (1, *self.spectrogram_input)

    def map_shape(self, trunk):
        """Spatial size of the conv4_2 map after the four halvings."""
        h, w = self.input_shape(trunk)[1:]
        return h // 16, w // 16


@dataclass
class ModelParams:
    config: L3Config
    weights: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def copy(self):
        return ModelParams(self.config,
                           {k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.stats.items()})

    def trunk_names(self, trunk):
        return [k for k in self.weights if k.startswith(trunk + "/")]


def _trunk_params(rng, config, trunk, weights, stats):
    c_in = 3 if trunk == "vision" else 1
    for b, c_out in enumerate(config.channels, start=1):
        for i in (1, 2):
            name = f"{trunk}/conv{b}_{i}"
            weights[f"{name}/kernel"] = nnops.glorot_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, c_out * 9)
            weights[f"{name}/bias"] = np.zeros(c_out, np.float32)
            weights[f"{name}/gamma"] = np.ones(c_out, np.float32)
            weights[f"{name}/beta"] = np.zeros(c_out, np.float32)
            stats[f"{name}/running_mean"] = np.zeros(c_out, np.float32)
            stats[f"{name}/running_var"] = np.ones(c_out, np.float32)
            c_in = c_out


def _dense(rng, weights, name, d_in, d_out):
    weights[f"{name}/weights"] = nnops.glorot_uniform(rng, (d_in, d_out), d_in, d_out)
    weights[f"{name}/bias"] = np.zeros(d_out, np.float32)


def init_params(config=L3Config(), seed=0):
    rng = np.random.default_rng(seed)
    weights, stats = {}, {}
    for trunk in TRUNKS:
        _trunk_params(rng, config, trunk, weights, stats)
    _dense(rng, weights, "fusion/fc1", config.fusion_input, config.fusion_hidden)
    _dense(rng, weights, "fusion/fc2", config.fusion_hidden, 2)
    return ModelParams(config, weights, stats)


def add_classifier_head(params, num_classes, seed=0):
    """Attach ``head/fc1`` (D x hidden) and ``head/fc2`` (hidden x K)."""
    rng = np.random.default_rng(seed)
    cfg = params.config
    _dense(rng, params.weights, "head/fc1", cfg.embedding_dim, cfg.fusion_hidden)
    _dense(rng, params.weights, "head/fc2", cfg.fusion_hidden, num_classes)
    return params


# -- trunk -----------------------------------------------------------------

@dataclass
class TrunkOutput:
    embedding: np.ndarray      # N x D, global spatial max of conv4_2 (post-ReLU)
    conv4_2: np.ndarray        # N x D x h x w, post-ReLU
    conv4_2_pre: np.ndarray    # same, before the ReLU
    caches: list | None = None
    stats: dict | None = None  # updated running statistics (train mode)


def trunk_forward(params, trunk, x, train=False, keep_cache=False, bn_momentum=0.99):
    """conv -> BN -> ReLU for each conv, 2x2 pool closing each block.

    Within a block's second conv the pool is applied before the ReLU (the
    two commute), which exposes the pre-ReLU conv4_2 map directly.
    """
    cfg = params.config
    expected = cfg.input_shape(trunk)
    if trunk == "vision":
        # fully convolutional: any size that survives four halvings
        if x.ndim != 4 or x.shape[1] != 3 or min(x.shape[2:]) < 16:
            raise nnops.ShapeError(f"vision input must be N x 3 x H x W with H, W >= 16, got {x.shape}")
    elif x.ndim != 4 or x.shape[1:] != expected:
        raise nnops.ShapeError(f"{trunk} input must be N x {' x '.join(map(str, expected))}, got {x.shape}")
    w, s = params.weights, params.stats
    caches = [] if keep_cache else None
    new_stats = {}
    h = x.astype(np.float32, copy=False)
    pre = None
    for layer in CONV_LAYERS:
        name = f"{trunk}/{layer}"
        h, c_conv = nnops.conv2d_forward(h, w[f"{name}/kernel"], w[f"{name}/bias"])
        h, c_bn, (rm, rv) = nnops.batchnorm_forward(
            h, w[f"{name}/gamma"], w[f"{name}/beta"],
            s[f"{name}/running_mean"], s[f"{name}/running_var"], train, momentum=bn_momentum)
        if train:
            new_stats[f"{name}/running_mean"] = rm
            new_stats[f"{name}/running_var"] = rv
        c_pool = None
        if layer.endswith("_2"):
            h, c_pool = nnops.maxpool2d_forward(h, 2)
            pre = h
        h, c_relu = nnops.relu_forward(h)
        if keep_cache:
            caches.append((c_conv, c_bn, c_pool, c_relu))
    emb, c_gmax = nnops.global_maxpool_forward(h)
    if keep_cache:
        caches.append(c_gmax)
    return TrunkOutput(emb, h, pre, caches, new_stats if train else None)


def trunk_backward(params, trunk, d_embedding, out):
    grads = {}
    caches = out.caches
    d = nnops.global_maxpool_backward(d_embedding, caches[-1])
    for layer, (c_conv, c_bn, c_pool, c_relu) in zip(reversed(CONV_LAYERS), reversed(caches[:-1])):
        name = f"{trunk}/{layer}"
        d = nnops.relu_backward(d, c_relu)
        if c_pool is not None:
            d = nnops.maxpool2d_backward(d, c_pool)
        d, grads[f"{name}/gamma"], grads[f"{name}/beta"] = nnops.batchnorm_backward(d, c_bn)
        d, grads[f"{name}/kernel"], grads[f"{name}/bias"] = nnops.conv2d_backward(
            d, c_conv, input_grad=(layer != "conv1_1"))
    return grads


def vision_forward(params, images, mode="eval"):
    """Returns (embedding N x D, post-ReLU conv4_2 map N x D x h x w)."""
    out = trunk_forward(params, "vision", images, train=(mode == "train"))
    return out.embedding, out.conv4_2


def audio_forward(params, spectrograms, mode="eval"):
    out = trunk_forward(params, "audio", spectrograms, train=(mode == "train"))
    return out.embedding, out.conv4_2


# -- two-layer heads -------------------------------------------------------

def mlp_forward(params, prefix, x):
    w = params.weights
    h, c1 = nnops.fc_forward(x, w[f"{prefix}/fc1/weights"], w[f"{prefix}/fc1/bias"])
    h, cr = nnops.relu_forward(h)
    logits, c2 = nnops.fc_forward(h, w[f"{prefix}/fc2/weights"], w[f"{prefix}/fc2/bias"])
    return logits, (c1, cr, c2)


def mlp_backward(prefix, dlogits, cache):
    c1, cr, c2 = cache
    g = {}
    d, g[f"{prefix}/fc2/weights"], g[f"{prefix}/fc2/bias"] = nnops.fc_backward(dlogits, c2)
    d = nnops.relu_backward(d, cr)
    d, g[f"{prefix}/fc1/weights"], g[f"{prefix}/fc1/bias"] = nnops.fc_backward(d, c1)
    return g, d


def avc_forward(params, images, spectrograms, mode="eval"):
    """Correspondence logits N x 2 (column 1 = "corresponds")."""
    if images.shape[0] != spectrograms.shape[0]:
        raise nnops.ShapeError(f"batch mismatch: {images.shape[0]} images, {spectrograms.shape[0]} spectrograms")
    v, _ = vision_forward(params, images, mode)
    a, _ = audio_forward(params, spectrograms, mode)
    logits, _ = mlp_forward(params, "fusion", np.concatenate([v, a], axis=1))
    return logits


def avc_loss_and_grads(params, images, spectrograms, labels, freeze_trunks=False):
    """Training-mode loss, gradients and refreshed BN statistics.

    With ``freeze_trunks`` the trunks run in eval mode, contribute no
    gradients and leave their running statistics alone.
    """
    train_trunks = not freeze_trunks
    vo = trunk_forward(params, "vision", images, train=train_trunks, keep_cache=train_trunks)
    ao = trunk_forward(params, "audio", spectrograms, train=train_trunks, keep_cache=train_trunks)
    d_v = vo.embedding.shape[1]
    logits, cache = mlp_forward(params, "fusion", np.concatenate([vo.embedding, ao.embedding], axis=1))
    loss, dlogits = nnops.softmax_cross_entropy(logits, labels)
    grads, dfeat = mlp_backward("fusion", dlogits, cache)
    stats = {}
    if train_trunks:
        gv = trunk_backward(params, "vision", dfeat[:, :d_v], vo)
        ga = trunk_backward(params, "audio", dfeat[:, d_v:], ao)
        grads.update(gv)
        grads.update(ga)
        stats.update(vo.stats)
        stats.update(ao.stats)
    return loss, grads, stats, logits


def classifier_forward(params, trunk, x, mode="eval"):
    out = trunk_forward(params, trunk, x, train=(mode == "train"))
    logits, _ = mlp_forward(params, "head", out.embedding)
    return logits


def classifier_loss_and_grads(params, trunk, x, labels):
    out = trunk_forward(params, trunk, x, train=True, keep_cache=True)
    logits, cache = mlp_forward(params, "head", out.embedding)
    loss, dlogits = nnops.softmax_cross_entropy(logits, labels)
    grads, demb = mlp_backward("head", dlogits, cache)
    gt = trunk_backward(params, trunk, demb, out)
    grads.update(gt)
    return loss, grads, out.stats, logits
