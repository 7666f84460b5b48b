"""Training loops (AVC and supervised), learning-rate grid search, checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .corpus import CorpusError, sample_avc_batch, sample_labelled_batch, worker_rng
from .nnops import AdamState, adam_step
from .profiles import TINY

log = logging.getLogger(__name__)

MAGIC = b"L3CK"
VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 256
    steps: int = 1000
    seed: int = 0
    freeze_trunks: bool = False
    eval_every: int = 0
    eval_pairs: int = 512
    workers: int = 0
    bn_recal_batches: int = 16   # batches used to re-estimate BN statistics; 0 disables

    def __post_init__(self):
        if self.bn_recal_batches < 0:
            raise ValueError("bn_recal_batches must be non-negative")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2 or self.steps < 0 or self.eval_every < 0 or self.workers < 0:
            raise ValueError("batch_size >= 2 and non-negative steps/eval_every/workers required")


@dataclass
class Checkpoint:
    params: M.ModelParams
    adam: AdamState
    step: int = 0
    config: dict = field(default_factory=dict)
    rng_state: dict | None = None


# -- data streams ------------------------------------------------------------

class BatchStream:
    """Deterministic batch source.

    With ``workers == 0`` one generator seeded by ``seed`` feeds every batch.
    Otherwise batch ``i`` comes from worker ``i % workers``, each worker owning
    the independent stream :func:`worker_rng` (seed, worker); batches are
    produced ahead on threads but consumed in index order, so the sequence
    does not depend on thread timing.
    """

    def __init__(self, make_batch, seed, workers=0, prefetch=2):
        self.make_batch = make_batch
        self.workers = workers
        self.index = 0
        if workers == 0:
            self.rng = np.random.default_rng(seed)
            return
        self.rngs = [worker_rng(seed, w) for w in range(workers)]
        self.pools = [ThreadPoolExecutor(max_workers=1) for _ in range(workers)]
        self.pending = deque()
        self.submitted = 0
        for _ in range(prefetch * workers):
            self._submit()

    def _submit(self):
        w = self.submitted % self.workers
        self.pending.append(self.pools[w].submit(self.make_batch, self.rngs[w]))
        self.submitted += 1

    def __next__(self):
        self.index += 1
        if self.workers == 0:
            return self.make_batch(self.rng)
        fut = self.pending.popleft()
        self._submit()
        return fut.result()

    def close(self):
        if self.workers:
            for p in self.pools:
                p.shutdown(wait=True, cancel_futures=True)

    @property
    def rng_state(self):
        return self.rng.bit_generator.state if self.workers == 0 else None


def _check_loss(loss, step):
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r} at step {step}; lower the learning rate")


def recalibrate_bn(params, trunk_inputs):
    """Replace running BN statistics by their average over the given batches.

    ``trunk_inputs`` yields ``{trunk: batch}`` dicts; weights are left as is.
    The averaged statistics match the final weights, unlike the exponential
    averages collected while those weights were still moving.
    """
    params = params.copy()
    for j, inputs in enumerate(trunk_inputs, start=1):
        for trunk, x in inputs.items():
            out = M.trunk_forward(params, trunk, x, train=True, bn_momentum=1 - 1 / j)
            params.stats.update(out.stats)
    return params


def _recal_rng(seed):
    return np.random.default_rng([seed, 0x5EED])


# -- AVC -----------------------------------------------------------------------

def recalibrate_avc(params, corpus, n_batches, batch_size, seed=0, profile=TINY):
    rng = _recal_rng(seed)
    batches = (sample_avc_batch(corpus, "train", batch_size, rng, profile.pairs) for _ in range(n_batches))
    return recalibrate_bn(params, ({"vision": b.images, "audio": b.spectrograms} for b in batches))


def train_avc(corpus, config=TrainConfig(), profile=TINY, init=None, on_step=None):
    """Train the correspondence network; returns ``(checkpoint, metrics)``.

    ``metrics`` holds one dict per step (step, loss, lr and, every
    ``eval_every`` steps, val_accuracy).  ``init`` optionally supplies starting
    parameters (e.g. supervised trunks for the pretraining baseline).
    """
    from .evalkit import eval_avc_accuracy

    if not corpus.splits.get("train"):
        raise CorpusError("train split is empty")
    params = init.copy() if init is not None else M.init_params(profile.model, config.seed)

    def finish(p):
        if config.freeze_trunks or not config.bn_recal_batches:
            return p
        return recalibrate_avc(p, corpus, config.bn_recal_batches, config.batch_size, config.seed, profile)

    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    metrics = []
    stream = BatchStream(
        lambda rng: sample_avc_batch(corpus, "train", config.batch_size, rng, profile.pairs),
        config.seed, config.workers)
    try:
        for step in range(1, config.steps + 1):
            batch = next(stream)
            loss, grads, stats, _ = M.avc_loss_and_grads(
                params, batch.images, batch.spectrograms, batch.labels, config.freeze_trunks)
            _check_loss(loss, step)
            if config.freeze_trunks:
                grads = {k: v for k, v in grads.items() if k.startswith("fusion/")}
            params.weights, state = adam_step(params.weights, grads, state)
            params.stats.update(stats)
            row = {"step": step, "loss": round(loss, 7), "lr": config.lr}
            if config.eval_every and step % config.eval_every == 0:
                row["val_accuracy"] = eval_avc_accuracy(finish(params), corpus, "val", config.eval_pairs,
                                                        seed=config.seed, profile=profile)
                log.info("step %d loss %.4f val %.3f", step, loss, row["val_accuracy"])
            metrics.append(row)
            if on_step is not None:
                on_step(row)
    finally:
        stream.close()
    if config.steps:
        params = finish(params)
    snapshot = {"task": "avc", "profile": profile.name, "train": asdict(config)}
    return Checkpoint(params, state, config.steps, snapshot, stream.rng_state), metrics


def loss_on_fixed_batch(params, batch, steps, lr=1e-4, weight_decay=1e-5):
    """Losses from repeatedly stepping on one batch (optimiser smoke check)."""
    params = params.copy()
    state = AdamState(lr=lr, weight_decay=weight_decay)
    losses = []
    for _ in range(steps):
        loss, grads, stats, _ = M.avc_loss_and_grads(params, batch.images, batch.spectrograms, batch.labels)
        losses.append(loss)
        params.weights, state = adam_step(params.weights, grads, state)
        params.stats.update(stats)
    return losses


# -- supervised classifiers ---------------------------------------------------

def train_supervised_classifier(corpus, modality, config=TrainConfig(), profile=TINY):
    """Single-modality trunk plus a two-layer head trained with cross-entropy.

    With ``eval_every`` set, the returned parameters are the snapshot with the
    best val accuracy.
    """
    if modality not in M.TRUNKS:
        raise ValueError(f"modality must be one of {M.TRUNKS}, got {modality!r}")
    if not corpus.labelled:
        raise CorpusError("supervised training needs a labelled corpus")
    k = corpus.num_classes
    best = None
    params = M.add_classifier_head(M.init_params(profile.model, config.seed), k, config.seed + 1)

    def finish(p):
        if not config.bn_recal_batches:
            return p
        rng = _recal_rng(config.seed)
        batches = (sample_labelled_batch(corpus, "train", modality, config.batch_size, rng, profile.pairs)[0]
                   for _ in range(config.bn_recal_batches))
        return recalibrate_bn(p, ({modality: x} for x in batches))

    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    metrics = []
    stream = BatchStream(
        lambda rng: sample_labelled_batch(corpus, "train", modality, config.batch_size, rng, profile.pairs),
        config.seed, config.workers)
    try:
        for step in range(1, config.steps + 1):
            x, y = next(stream)
            loss, grads, stats, logits = M.classifier_loss_and_grads(params, modality, x, y)
            _check_loss(loss, step)
            params.weights, state = adam_step(params.weights, grads, state)
            params.stats.update(stats)
            row = {"step": step, "loss": round(loss, 7), "lr": config.lr,
                   "train_accuracy": float(np.mean(logits.argmax(axis=1) == y))}
            if config.eval_every and step % config.eval_every == 0:
                snap = finish(params)
                row["val_accuracy"] = classifier_accuracy(snap, corpus, "val", modality, config.eval_pairs,
                                                          config.seed, profile)
                if best is None or row["val_accuracy"] > best[0]:
                    best = (row["val_accuracy"], step, snap if snap is not params else params.copy())
            metrics.append(row)
    finally:
        stream.close()
    # early stopping: keep the snapshot with the best val accuracy (earliest on ties)
    if best is not None:
        params = best[2]
    elif config.steps:
        params = finish(params)
    snapshot = {"task": f"supervised-{modality}", "profile": profile.name, "classes": k,
                "train": asdict(config), "selected_step": best[1] if best else config.steps}
    return Checkpoint(params, state, config.steps, snapshot, stream.rng_state), metrics


def classifier_accuracy(params, corpus, split, modality, n, seed=0, profile=TINY):
    rng = np.random.default_rng(seed)
    x, y = sample_labelled_batch(corpus, split, modality, n, rng, profile.pairs, train_mode=False)
    correct = 0
    for i in range(0, n, 256):
        logits = M.classifier_forward(params, modality, x[i:i + 256])
        correct += int(np.sum(logits.argmax(axis=1) == y[i:i + 256]))
    return correct / n


def lr_grid_search(corpus, config=TrainConfig(), lr_list=(1e-3, 1e-4, 1e-5), profile=TINY):
    """Short run per distinct lr; best val accuracy wins, ties go to the smaller lr."""
    from .evalkit import eval_avc_accuracy

    if len(lr_list) == 0:
        raise ValueError("lr_list must not be empty")
    lrs = sorted(set(float(x) for x in lr_list))
    rows = []
    for lr in lrs:
        cfg = TrainConfig(**{**asdict(config), "lr": lr, "eval_every": 0})
        ckpt, _ = train_avc(corpus, cfg, profile)
        acc = eval_avc_accuracy(ckpt.params, corpus, "val", config.eval_pairs, seed=config.seed, profile=profile)
        rows.append({"lr": lr, "val_accuracy": acc})
    best = max(rows, key=lambda r: (r["val_accuracy"], -r["lr"]))
    return best["lr"], rows


# -- checkpoint file -------------------------------------------------------

def _config_to_json(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def _config_from_json(d):
    return M.L3Config(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _write_tensors(f, tensors):
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def encode_tensors(f, tensors):
    """Write ``[(name, array)]`` in the checkpoint tensor encoding."""
    _write_tensors(f, tensors)


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated at byte {len(self.data)} while reading {what} "
                f"(needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def tensors(self, section):
        count = self.u32(f"{section} tensor count")
        out = []
        for i in range(count):
            name = self.take(self.u32(f"{section} tensor {i} name length"), f"{section} tensor {i} name").decode("utf-8")
            ndim = self.u32(f"ndim of {name}")
            if ndim > 8:
                raise CheckpointError(f"{self.path}: tensor {name} claims {ndim} dimensions")
            dims = struct.unpack(f"<{ndim}Q", self.take(8 * ndim, f"dims of {name}"))
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(self.take(4 * size, f"data of {name}"), dtype="<f4").reshape(dims)
            out.append((name, arr.astype(np.float32)))
        return out


def decode_tensors(data, path="<bytes>"):
    return _Reader(data, path).tensors("tensors")


def _meta_tensor(meta):
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def save_checkpoint(ckpt, path):
    adam = ckpt.adam
    meta = {
        "model": _config_to_json(ckpt.params.config),
        "config": ckpt.config,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "adam": {"lr": adam.lr, "weight_decay": adam.weight_decay, "beta1": adam.beta1,
                 "beta2": adam.beta2, "epsilon": adam.epsilon, "t": adam.t},
    }
    main = list(ckpt.params.weights.items())
    main += [(f"stats/{k}", v) for k, v in ckpt.params.stats.items()]
    main.append(("meta/json", _meta_tensor(meta)))
    opt = [(f"m/{k}", v) for k, v in adam.m.items()] + [(f"v/{k}", v) for k, v in adam.v.items()]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        _write_tensors(f, main)
        _write_tensors(f, opt)


def load_checkpoint(path):
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    main = r.tensors("parameter")
    opt = r.tensors("optimizer")
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after optimizer state")
    weights, stats, meta = {}, {}, None
    for name, arr in main:
        if name == "meta/json":
            meta = json.loads(arr.astype(np.uint8).tobytes().decode("utf-8"))
        elif name.startswith("stats/"):
            stats[name[len("stats/"):]] = arr
        else:
            weights[name] = arr
    if meta is None:
        raise CheckpointError(f"{path}: missing meta/json record")
    a = meta["adam"]
    adam = AdamState(a["lr"], a["weight_decay"], a["beta1"], a["beta2"], a["epsilon"], a["t"],
                     {n[2:]: v for n, v in opt if n.startswith("m/")},
                     {n[2:]: v for n, v in opt if n.startswith("v/")})
    params = M.ModelParams(_config_from_json(meta["model"]), weights, stats)
    return Checkpoint(params, adam, meta["step"], meta["config"], meta["rng_state"])


def write_metrics(path, metrics):
    with open(path, "w") as f:
        for row in metrics:
            f.write(json.dumps(row, sort_keys=True) + "\n")
