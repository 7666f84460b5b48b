"""Unit rankings, conv4_2 heatmaps, high-preference counts, k-means + NMI, embedding export."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .audio import AudioBuffer, log_spectrogram
from .corpus import augment_frame
from .profiles import TINY


@dataclass
class UnitRanking:
    unit: int
    items: np.ndarray    # item indices, best first
    values: np.ndarray   # matching activations, non-increasing
    ids: list | None = None


@dataclass
class Heatmap:
    unit: int
    grid: np.ndarray     # h x w slice of post-ReLU conv4_2
    item: str
    embedding_value: float


def _check_unit(unit, dim):
    if not 0 <= unit < dim:
        raise ValueError(f"unit {unit} out of range for embedding dim {dim}")


def rank_by_unit(embeddings, unit, top_k, ids=None):
    """Items sorted by one embedding component, descending; ties keep index order."""
    embeddings = np.asarray(embeddings)
    _check_unit(unit, embeddings.shape[1])
    if not 1 <= top_k <= len(embeddings):
        raise ValueError(f"top_k must lie in [1, {len(embeddings)}], got {top_k}")
    col = embeddings[:, unit]
    order = np.argsort(-col, kind="stable")[:top_k]
    return UnitRanking(unit, order, col[order], None if ids is None else [ids[i] for i in order])


def rank_all_units(embeddings, top_k, ids=None):
    return [rank_by_unit(embeddings, u, top_k, ids) for u in range(np.asarray(embeddings).shape[1])]


def unit_heatmap(params, item, modality, unit, item_id=""):
    """Channel ``unit`` of the post-ReLU conv4_2 map for a single item (C x H x W)."""
    _check_unit(unit, params.config.embedding_dim)
    out = M.trunk_forward(params, modality, np.asarray(item, dtype=np.float32)[None])
    grid = out.conv4_2[0, unit]
    return Heatmap(unit, grid, item_id, float(out.embedding[0, unit]))


def heatmaps_for_items(params, items, modality, units, item_ids=None):
    """Heatmaps for (item, unit) pairs from one batched pass; the embedding is the map's own max."""
    out = M.trunk_forward(params, modality, np.asarray(items, dtype=np.float32))
    ids = item_ids or [str(i) for i in range(len(items))]
    return [[Heatmap(u, out.conv4_2[i, u], ids[i], float(out.embedding[i, u])) for u in units]
            for i in range(len(items))]


def write_pgm(path, grid):
    """8-bit P5 image normalised per map to [0, 255]; the raw max goes in a comment."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = grid.min(), grid.max()
    scaled = np.zeros_like(grid) if hi <= lo else (grid - lo) / (hi - lo) * 255
    h, w = grid.shape
    header = f"P5\n# max {float(hi)!r}\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + np.round(scaled).astype(np.uint8).tobytes())


def read_pgm_max(path):
    for line in Path(path).read_bytes().split(b"\n")[:4]:
        if line.startswith(b"# max "):
            return float(line[6:])
    raise ValueError(f"{path}: no max comment")


def high_preference_classes(rankings, labels, top_n=5, threshold=4, groups=None):
    """(class, unit) pairs where at least ``threshold`` of a unit's top ``top_n`` items share a class.

    With ``groups`` (e.g. clip ids) only the best item of each group counts,
    so several frames of one clip cannot fill a unit's top list.  Returns the
    pair set, per-class counts of high-preference units, and the number of
    classes with at least one such unit.
    """
    if not 1 <= threshold <= top_n:
        raise ValueError(f"threshold must lie in [1, top_n={top_n}]")
    labels = np.asarray(labels)
    pairs = set()
    for r in rankings:
        if np.any(r.items >= len(labels)):
            raise ValueError("labels do not cover every ranked item")
        top, seen = [], set()
        for i in r.items:
            g = None if groups is None else groups[i]
            if g is not None and g in seen:
                continue
            seen.add(g)
            top.append(labels[i])
            if len(top) == top_n:
                break
        for cls, n in Counter(top).items():
            if n >= threshold:
                pairs.add((int(cls), r.unit))
    counts = Counter(cls for cls, _ in pairs)
    return pairs, dict(sorted(counts.items())), len(counts)


# -- clustering ------------------------------------------------------------------

def _kmeans_pp(x, k, rng):
    centres = [x[rng.integers(len(x))]]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centres.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def kmeans_cluster(embeddings, k=64, seed=0, max_iter=300, tol=1e-6, return_objective=False):
    """Lloyd iterations from k-means++ seeds; empty clusters restart at the farthest point."""
    x = np.asarray(embeddings, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least k={k} items, got {len(x)}")
    rng = np.random.default_rng(seed)
    centres = _kmeans_pp(x, k, rng)
    x2 = (x * x).sum(axis=1)[:, None]
    prev = np.inf
    for _ in range(max_iter):
        d2 = np.maximum(x2 - 2 * x @ centres.T + (centres * centres).sum(axis=1), 0)
        assign = d2.argmin(axis=1)
        dist = d2[np.arange(len(x)), assign]
        for c in range(k):
            members = assign == c
            if members.any():
                centres[c] = x[members].mean(axis=0)
            else:
                far = int(dist.argmax())
                centres[c] = x[far]
                assign[far] = c
                dist[far] = 0.0
        obj = dist.sum()
        if np.isfinite(prev) and prev - obj <= tol * prev:
            break
        prev = obj
    d2 = np.maximum(x2 - 2 * x @ centres.T + (centres * centres).sum(axis=1), 0)
    assign = d2.argmin(axis=1)
    if return_objective:
        # direct differences: the expanded form leaves rounding residue at zero distance
        return assign, float(((x - centres[assign]) ** 2).sum())
    return assign


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(assignments, labels):
    """Mutual information over the arithmetic mean of the two entropies."""
    a = np.asarray(assignments)
    b = np.asarray(labels)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1)
    ha, hb = _entropy(joint.sum(axis=1)), _entropy(joint.sum(axis=0))
    if ha == 0 and hb == 0:
        return 1.0
    # identical partitions up to relabelling: exactly 1 rather than 1 - ulp
    nonzero = joint > 0
    if np.all(nonzero.sum(axis=0) == 1) and np.all(nonzero.sum(axis=1) == 1):
        return 1.0
    pj = joint / a.size
    outer = pj.sum(axis=1, keepdims=True) * pj.sum(axis=0, keepdims=True)
    nz = pj > 0
    mi = float((pj[nz] * np.log(pj[nz] / outer[nz])).sum())
    return float(np.clip(mi / ((ha + hb) / 2), 0.0, 1.0))


def random_assignment(n, k, seed=0):
    return np.random.default_rng(seed).integers(0, k, size=n)


# -- embedding sets ------------------------------------------------------------

def item_input(clip, t, modality, profile=TINY):
    """Network input for the item at time ``t`` of ``clip``.

    Vision: the nearest frame, centre-cropped.  Audio: the 1 s window ending
    at ``t`` (clamped to the recording).
    """
    if modality == "vision":
        i = int(np.argmin(np.abs(clip.frame_times - t)))
        return augment_frame(clip.frames[i], None, train_mode=False, cfg=profile.pairs.augment).transpose(2, 0, 1)
    spec = profile.pairs.spectrogram
    buf = clip.audio_at(spec.sample_rate)
    start = int(round(min(max(t - spec.clip_sec, 0.0), buf.duration - spec.clip_sec) * spec.sample_rate))
    return log_spectrogram(AudioBuffer(buf.samples[start:start + spec.clip_samples], spec.sample_rate), spec)[None]


def embed_split(params, corpus, split, modality, profile=TINY, chunk=256):
    """Eval-mode embeddings for one item per frame of every clip in ``split``.

    Returns (embeddings, labels, item ids ``<clip>@<time>``, clip ids).
    """
    inputs, labels, ids, groups = [], [], [], []
    for clip in corpus.split(split):
        for t in clip.frame_times:
            inputs.append(item_input(clip, t, modality, profile))
            labels.append(clip.label)
            ids.append(f"{clip.id}@{t:.3f}")
            groups.append(clip.id)
    x = np.stack(inputs).astype(np.float32)
    emb = np.concatenate([M.trunk_forward(params, modality, x[i:i + chunk]).embedding
                          for i in range(0, len(x), chunk)])
    return emb, np.array(labels), ids, groups


def clustering_report(embeddings, labels, k=64, seed=0):
    assign = kmeans_cluster(embeddings, k, seed)
    return {"k": k, "items": len(labels), "nmi": nmi(assign, labels),
            "random_assignment_nmi": nmi(random_assignment(len(labels), k, seed), labels)}


# -- export ----------------------------------------------------------------------

def export_embeddings(embeddings, labels, path, ids=None):
    """Tab-separated: id, label, one column per dimension, 9 significant digits."""
    embeddings = np.asarray(embeddings)
    dim = embeddings.shape[1] if embeddings.ndim == 2 else 0
    ids = ids if ids is not None else [str(i) for i in range(len(embeddings))]
    lines = ["\t".join(["id", "label"] + [f"d{j}" for j in range(dim)])]
    for item, label, row in zip(ids, labels, embeddings):
        lines.append("\t".join([str(item), str(label)] + [f"{v:.9g}" for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def import_embeddings(path):
    rows = Path(path).read_text().splitlines()
    dim = len(rows[0].split("\t")) - 2
    ids, labels, values = [], [], []
    for line in rows[1:]:
        parts = line.split("\t")
        ids.append(parts[0])
        labels.append(parts[1])
        values.append([float(v) for v in parts[2:]])
    return np.array(values, dtype=np.float64).reshape(len(ids), dim), labels, ids


def write_jsonl(path, rows):
    with open(path, "a") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")
