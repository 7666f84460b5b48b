"""Evaluation protocols: AVC accuracy, supervised baselines, audio and visual transfer."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import model as M
from .audio import log_spectrogram
from .corpus import resize_bilinear, sample_avc_batch
from .nnops import AdamState, adam_step, maxpool2d_forward, softmax, softmax_cross_entropy
from .profiles import TINY

CHANCE = 0.5
FEATURE_LIMIT = 10000


# -- AVC accuracy --------------------------------------------------------------

def eval_pairs(corpus, split, n_pairs, seed=0, profile=TINY):
    """Balanced, deterministic evaluation pairs (centre crops, no jitter)."""
    if n_pairs < 2:
        raise ValueError("n_pairs must be at least 2")
    rng = np.random.default_rng(seed)
    return sample_avc_batch(corpus, split, n_pairs - n_pairs % 2, rng, profile.pairs, train_mode=False)


def predict_avc(params, images, spectrograms, chunk=256):
    out = []
    for i in range(0, len(images), chunk):
        out.append(M.avc_forward(params, images[i:i + chunk], spectrograms[i:i + chunk]).argmax(axis=1))
    return np.concatenate(out)


def eval_avc_accuracy(model, corpus, split, n_pairs, seed=0, profile=TINY):
    """Fraction of balanced pairs classified correctly.

    ``model`` is either ModelParams (argmax of the fusion logits) or a callable
    ``(images, spectrograms) -> predicted labels``.
    """
    batch = eval_pairs(corpus, split, n_pairs, seed, profile)
    if callable(model):
        pred = np.asarray(model(batch.images, batch.spectrograms))
    else:
        pred = predict_avc(model, batch.images, batch.spectrograms)
    return float(np.mean(pred == batch.labels))


# -- supervised baselines ------------------------------------------------------

def _check_probs(p, name):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1) > 1e-5):
        raise ValueError(f"{name} must be a probability vector (non-negative, summing to 1)")
    return p


def direct_combination_score(vision_probs, audio_probs):
    """Scalar product of the two class-probability vectors (row-wise for 2-D input)."""
    v = _check_probs(vision_probs, "vision_probs")
    a = _check_probs(audio_probs, "audio_probs")
    if v.shape != a.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {a.shape}")
    return np.sum(v * a, axis=-1)


def choose_threshold(scores, labels):
    """Threshold maximising accuracy of ``score >= threshold`` (smallest on ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    cands = np.unique(scores)
    cands = np.concatenate([[-np.inf], (cands[:-1] + cands[1:]) / 2, [np.inf]]) if cands.size else np.array([0.0])
    accs = [np.mean((scores >= t) == (labels == 1)) for t in cands]
    return float(cands[int(np.argmax(accs))])


def _class_probs(params, modality, x, chunk=256):
    return np.concatenate([softmax(M.classifier_forward(params, modality, x[i:i + chunk]).astype(np.float64))
                           for i in range(0, len(x), chunk)])


def direct_combination_accuracy(vision_clf, audio_clf, corpus, n_pairs, seed=0, profile=TINY,
                                val_split="val", test_split="test"):
    """Threshold picked on ``val_split`` pairs, accuracy reported on ``test_split``."""
    def scores(split, s):
        b = eval_pairs(corpus, split, n_pairs, s, profile)
        return direct_combination_score(_class_probs(vision_clf, "vision", b.images),
                                         _class_probs(audio_clf, "audio", b.spectrograms)), b.labels

    s_val, y_val = scores(val_split, seed + 1)
    threshold = choose_threshold(s_val, y_val)
    s_test, y_test = scores(test_split, seed)
    return float(np.mean((s_test >= threshold) == (y_test == 1))), threshold


def assemble_pretrained(vision_clf, audio_clf, seed=0):
    """AVC network with both supervised trunks and a fresh fusion head."""
    fresh = M.init_params(vision_clf.config, seed)
    weights = {k: v for k, v in fresh.weights.items() if k.startswith("fusion/")}
    stats = {}
    for trunk, src in (("vision", vision_clf), ("audio", audio_clf)):
        weights.update({k: v.copy() for k, v in src.weights.items() if k.startswith(trunk + "/")})
        stats.update({k: v.copy() for k, v in src.stats.items() if k.startswith(trunk + "/")})
    return M.ModelParams(vision_clf.config, weights, stats)


def run_baselines(corpus, sup_config, avc_config, profile=TINY, n_pairs=1000, seed=0):
    """Train both modality classifiers and score the two supervised baselines.

    Returns a report dict plus the classifier checkpoints.
    """
    from .train import classifier_accuracy, train_avc, train_supervised_classifier

    vis, _ = train_supervised_classifier(corpus, "vision", sup_config, profile)
    aud, _ = train_supervised_classifier(corpus, "audio", sup_config, profile)
    direct, threshold = direct_combination_accuracy(vis.params, aud.params, corpus, n_pairs, seed, profile)
    init = assemble_pretrained(vis.params, aud.params, avc_config.seed)
    pre, _ = train_avc(corpus, replace(avc_config, freeze_trunks=True), profile, init=init)
    pretraining = eval_avc_accuracy(pre.params, corpus, "test", n_pairs, seed, profile)
    report = {
        "direct_combination_accuracy": direct,
        "direct_combination_threshold": threshold,
        "supervised_pretraining_accuracy": pretraining,
        "vision_classifier_accuracy": classifier_accuracy(vis.params, corpus, "test", "vision", n_pairs, seed, profile),
        "audio_classifier_accuracy": classifier_accuracy(aud.params, corpus, "test", "audio", n_pairs, seed, profile),
        "chance": CHANCE,
    }
    return report, vis, aud, pre


# -- transfer features -------------------------------------------------------

def subclip_starts(duration, n, clip_len=1.0):
    """``n`` equally spaced window starts covering [0, duration - clip_len]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if duration < clip_len:
        raise ValueError(f"duration {duration} shorter than clip length {clip_len}")
    if n == 1:
        return [0.0]
    span = duration - clip_len
    # (n - 1) * span / (n - 1) can round one ulp past span: pin the endpoint
    return [min(i * span / (n - 1), span) for i in range(n - 1)] + [span]


def transfer_pool_size(c, h, w, limit=FEATURE_LIMIT):
    """Smallest equal kernel/stride whose max-pooled size falls below ``limit``."""
    k = 1
    while c * (h // k) * (w // k) >= limit:
        k += 1
        if k > min(h, w):
            raise ValueError(f"cannot pool a {c} x {h} x {w} map below {limit} values")
    return k


def _pool_flatten(maps, k):
    if k > 1:
        maps, _ = maxpool2d_forward(maps, k)
    # h x w x C order
    return maps.transpose(0, 2, 3, 1).reshape(len(maps), -1)


def audio_features(params, spectrograms):
    """Pre-ReLU conv4_2, max-pooled to below 10k values per item."""
    out = M.trunk_forward(params, "audio", spectrograms)
    _, c, h, w = out.conv4_2_pre.shape
    return _pool_flatten(out.conv4_2_pre, transfer_pool_size(c, h, w))


def extract_audio_feature(params, clip_1s, spec_cfg=TINY.pairs.spectrogram):
    if len(clip_1s) != spec_cfg.clip_samples or clip_1s.sample_rate != spec_cfg.sample_rate:
        raise ValueError(f"expected {spec_cfg.clip_samples} samples at {spec_cfg.sample_rate} Hz")
    return audio_features(params, log_spectrogram(clip_1s, spec_cfg)[None, None])[0]


def extract_recording_features(params, buf, n_subclips, spec_cfg=TINY.pairs.spectrogram):
    """One feature row per equally spaced 1 s subclip of a longer recording."""
    specs = [log_spectrogram(buf.segment(s, spec_cfg.clip_sec), spec_cfg)
             for s in subclip_starts(buf.duration, n_subclips, spec_cfg.clip_sec)]
    return audio_features(params, np.stack(specs)[:, None])


def visual_features(params, images):
    """Post-ReLU conv4_2, max-pooled to below 10k values per item (images N x 3 x S x S)."""
    out = M.trunk_forward(params, "vision", images)
    _, c, h, w = out.conv4_2.shape
    return _pool_flatten(out.conv4_2, transfer_pool_size(c, h, w))


def extract_visual_feature(params, image, size=256):
    image = np.asarray(image, dtype=np.float32)
    if image.shape != (size, size, 3):
        raise ValueError(f"expected a {size} x {size} x 3 image, got {image.shape}")
    return visual_features(params, image.transpose(2, 0, 1)[None])[0]


# -- feature matrices --------------------------------------------------------

@dataclass
class FeatureMatrix:
    values: np.ndarray
    ids: list
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or len(self.ids) != len(self.values):
            raise ValueError("values must be rows x dims with one id per row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix has non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if len(self.labels) != len(self.values):
                raise ValueError("labels length must equal row count")


def save_features(fm, path):
    """Tensor encoding at ``path`` plus ``<path>.ids`` (id<TAB>label per row)."""
    from .train import encode_tensors

    with open(path, "wb") as f:
        encode_tensors(f, [("features", fm.values.astype(np.float32))])
    with open(str(path) + ".ids", "w") as f:
        for i, item in enumerate(fm.ids):
            label = "" if fm.labels is None else str(int(fm.labels[i]))
            f.write(f"{item}\t{label}\n")


def load_features(path):
    from .train import decode_tensors

    (_, values), = decode_tensors(Path(path).read_bytes(), str(path))
    ids, labels = [], []
    for line in Path(str(path) + ".ids").read_text().splitlines():
        item, label = line.split("\t")
        ids.append(item)
        labels.append(label)
    lab = np.array([int(x) for x in labels]) if all(labels) else None
    return FeatureMatrix(values, ids, lab)


# -- one-vs-all linear SVM ----------------------------------------------------

@dataclass
class SvmModel:
    weights: np.ndarray   # K x D
    biases: np.ndarray    # K
    classes: np.ndarray
    C: float
    mean: np.ndarray
    std: np.ndarray


def zscore_stats(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std <= 1e-12] = 1.0
    return mean, std


def svm_objective(w, b, x, y, C):
    margins = y * (x @ w + b)
    return 0.5 * (w @ w + b * b) + C * np.sum(np.maximum(0.0, 1 - margins))


def _binary_svm(x, y, C, rng, max_epochs=1000, tol=1e-4):
    """Dual coordinate descent for the L2-regularised hinge loss.

    The bias is an extra constant feature (so it is regularised too).
    """
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    q = np.einsum("ij,ij->i", xa, xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    for _ in range(max_epochs):
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(n):
            g = y[i] * (xa[i] @ w) - 1
            a = alpha[i]
            pg = min(g, 0.0) if a == 0 else max(g, 0.0) if a == C else g
            pg_max, pg_min = max(pg_max, pg), min(pg_min, pg)
            if pg != 0:
                new = min(max(a - g / q[i], 0.0), C)
                w += (new - a) * y[i] * xa[i]
                alpha[i] = new
        if pg_max - pg_min < tol:
            break
    return w[:-1], w[-1]


def svm_fit(train, C=1.0, seed=0):
    """z-score on the training rows, then one binary hinge-loss SVM per class."""
    if train.labels is None:
        raise ValueError("svm_fit needs labelled features")
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise ValueError("svm_fit needs at least two classes")
    mean, std = zscore_stats(train.values)
    x = (train.values - mean) / std
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for k in classes:
        w, b = _binary_svm(x, np.where(train.labels == k, 1.0, -1.0), C, rng)
        ws.append(w)
        bs.append(b)
    return SvmModel(np.array(ws), np.array(bs), classes, C, mean, std)


def svm_decision(model, values):
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] != model.weights.shape[1]:
        raise ValueError(f"feature dim {values.shape[1]} != model dim {model.weights.shape[1]}")
    return ((values - model.mean) / model.std) @ model.weights.T + model.biases


def svm_score_clip(model, subclip_features):
    """Mean per-class decision value over subclips; argmax with ties to the lowest index."""
    scores = svm_decision(model, subclip_features)
    if len(scores) < 1:
        raise ValueError("need at least one subclip")
    mean = scores.mean(axis=0)
    return mean, model.classes[int(np.argmax(mean))]


def recording_accuracy(model, recordings):
    """``recordings``: list of (subclip feature matrix, label)."""
    hits = [svm_score_clip(model, feats)[1] == label for feats, label in recordings]
    return float(np.mean(hits))


def read_folds(path):
    """One fold per line: whitespace-separated clip ids."""
    return [line.split() for line in Path(path).read_text().splitlines() if line.strip()]


def write_folds(path, folds):
    Path(path).write_text("".join(" ".join(f) + "\n" for f in folds))


def run_folds(recordings, folds, C=1.0):
    """Leave-one-fold-out accuracy; z-score statistics come from the training folds only.

    ``recordings`` maps clip id -> (subclip features, label).
    """
    accs = []
    for i, held in enumerate(folds):
        train_ids = [c for j, f in enumerate(folds) if j != i for c in f]
        rows = np.concatenate([recordings[c][0] for c in train_ids])
        labels = np.concatenate([[recordings[c][1]] * len(recordings[c][0]) for c in train_ids])
        ids = [f"{c}#{s}" for c in train_ids for s in range(len(recordings[c][0]))]
        model = svm_fit(FeatureMatrix(rows, ids, labels), C)
        accs.append(recording_accuracy(model, [recordings[c] for c in held]))
    return float(np.mean(accs)), accs


def corpus_recordings(params, corpus, clips, n_subclips, profile=TINY):
    spec = profile.pairs.spectrogram
    return {c.id: (extract_recording_features(params, c.audio_at(spec.sample_rate), n_subclips, spec), c.label)
            for c in clips}


def eval_transfer_audio(params, corpus, n_subclips=10, C=1.0, profile=TINY, folds=None):
    """Audio transfer: subclip features -> z-score -> one-vs-all SVM -> clip-mean scoring.

    With ``folds`` the leave-one-fold-out mean is reported, otherwise train on
    the train split and test on the test split.
    """
    if folds is not None:
        clips = [corpus[c] for f in folds for c in f]
        recs = corpus_recordings(params, corpus, clips, n_subclips, profile)
        acc, per_fold = run_folds(recs, folds, C)
        return {"accuracy": acc, "fold_accuracies": per_fold, "subclips": n_subclips}
    train = corpus_recordings(params, corpus, corpus.split("train"), n_subclips, profile)
    test = corpus_recordings(params, corpus, corpus.split("test"), n_subclips, profile)
    rows = np.concatenate([f for f, _ in train.values()])
    labels = np.concatenate([[y] * len(f) for f, y in train.values()])
    ids = [f"{c}#{s}" for c, (f, _) in train.items() for s in range(len(f))]
    model = svm_fit(FeatureMatrix(rows, ids, labels), C)
    return {"accuracy": recording_accuracy(model, list(test.values())), "subclips": n_subclips,
            "feature_dim": int(rows.shape[1])}


# -- visual linear probe -----------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 500
    lr: float = 1e-2
    batch_size: int = 128
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class LinearProbe:
    weights: np.ndarray
    bias: np.ndarray
    classes: np.ndarray

    def predict(self, values):
        return self.classes[np.argmax(np.asarray(values, dtype=np.float32) @ self.weights + self.bias, axis=1)]


def linear_probe_fit(train, config=ProbeConfig(), holdout=None):
    """Softmax-regression probe trained with Adam on a cosine-decayed learning rate.

    Returns the probe and its top-1 accuracy on ``holdout`` (on ``train`` when
    no holdout is given).
    """
    if train.labels is None:
        raise ValueError("linear_probe_fit needs labelled features")
    classes = np.unique(train.labels)
    y = np.searchsorted(classes, train.labels)
    x = train.values.astype(np.float32)
    rng = np.random.default_rng(config.seed)
    params = {"w": np.zeros((x.shape[1], classes.size), np.float32), "b": np.zeros(classes.size, np.float32)}
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    for step in range(config.steps):
        idx = rng.integers(0, len(x), size=min(config.batch_size, len(x)))
        logits = x[idx] @ params["w"] + params["b"]
        _, d = softmax_cross_entropy(logits, y[idx])
        state.lr = 0.5 * config.lr * (1 + np.cos(np.pi * step / config.steps))
        params, state = adam_step(params, {"w": x[idx].T @ d, "b": d.sum(axis=0)}, state)
    probe = LinearProbe(params["w"], params["b"], classes)
    ref = holdout if holdout is not None else train
    return probe, float(np.mean(probe.predict(ref.values) == ref.labels))


def frame_features(params, corpus, split, size, frames_per_clip=None):
    """Visual transfer features of clip frames resized to ``size`` x ``size``."""
    rows, ids, labels = [], [], []
    for clip in corpus.split(split):
        idx = range(len(clip.frames)) if frames_per_clip is None else \
            np.linspace(0, len(clip.frames) - 1, frames_per_clip).round().astype(int)
        imgs = np.stack([resize_bilinear(clip.frames[i], size, size) for i in idx]).transpose(0, 3, 1, 2)
        rows.append(visual_features(params, imgs.astype(np.float32)))
        ids.extend(f"{clip.id}@{clip.frame_times[i]:.3f}" for i in idx)
        labels.extend([clip.label] * len(idx))
    return FeatureMatrix(np.concatenate(rows), ids, np.array(labels))


def eval_transfer_visual(params, corpus, config=ProbeConfig(), profile=TINY):
    train = frame_features(params, corpus, "train", profile.transfer_size)
    test = frame_features(params, corpus, "test", profile.transfer_size)
    _, acc = linear_probe_fit(train, config, test)
    return {"accuracy": acc, "feature_dim": int(train.values.shape[1])}


def write_report(path, report):
    """Append one JSON object per line."""
    with open(path, "a") as f:
        f.write(json.dumps(report, sort_keys=True) + "\n")
