"""Command-line entry point: ``l3avc <command> [--key value ...]``.

Every config key is also a flag (``lr_grid`` -> ``--lr-grid``); flags override
the ``--config`` file.  Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analyze as A
from . import evalkit as E
from . import model as M
from . import train as T
from .audio import log_spectrogram, read_wav, resample, write_matrix
from .config import SCHEMA_VERSION, RunConfig, coerce, format_config, load_config
from .corpus import export_corpus, generate_synthetic_corpus, ingest_directory
from .profiles import get_profile

COMMANDS = {
    "gen-data": "generate a synthetic labelled corpus directory",
    "ingest": "validate a corpus directory and summarise it",
    "spectrogram": "log-spectrogram of a 1 s WAV window",
    "train-avc": "train the correspondence network",
    "train-supervised": "train a single-modality classifier",
    "grid-lr": "learning-rate grid search on val AVC accuracy",
    "eval-avc": "AVC accuracy of a checkpoint",
    "eval-baselines": "direct-combination and supervised-pretraining baselines",
    "extract-features": "transfer features for a split",
    "eval-transfer-audio": "subclip features + SVM clip classification",
    "eval-transfer-visual": "frame features + linear probe",
    "analyze-units": "per-unit rankings and high-preference counts",
    "analyze-heatmaps": "conv4_2 heatmaps as PGM images",
    "analyze-nmi": "k-means NMI for trained, random-weights and random assignment",
    "export-embeddings": "embeddings as TSV",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": message, "exit": code}), file=sys.stderr)
    return code


def build_parser():
    parser = _Parser(prog="l3avc", description="Audio-visual correspondence learning.")
    parser.add_argument("--version", action="store_true", help="print version and config schema")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        for f in dataclasses.fields(RunConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.type.upper())
    return parser


def _output_dir(cfg, required=True):
    if not cfg.out:
        if required:
            raise UsageError("--out is required")
        return None
    out = Path(cfg.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise FileExistsError(f"{out}: output directory already exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(format_config(cfg))
    return out


def _need(cfg, *keys):
    for k in keys:
        if not getattr(cfg, k):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _report(out, report):
    text = json.dumps(report, sort_keys=True)
    print(text)
    if out is not None:
        (out / "report.json").write_text(text + "\n")


def _load(cfg, profile):
    ckpt = T.load_checkpoint(cfg.ckpt)
    if ckpt.params.config != profile.model:
        raise ValueError(f"{cfg.ckpt}: checkpoint model does not match profile {profile.name!r}")
    return ckpt


def _train_config(cfg, steps=None):
    return T.TrainConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
                         steps=cfg.steps if steps is None else steps, seed=cfg.seed,
                         freeze_trunks=cfg.freeze_trunks, eval_every=cfg.eval_every,
                         eval_pairs=cfg.eval_pairs, workers=cfg.workers,
                         bn_recal_batches=cfg.bn_recal_batches)


# -- commands ------------------------------------------------------------------

def cmd_gen_data(cfg, profile):
    out = _output_dir(cfg)
    spec = dataclasses.replace(profile.synthetic, num_classes=cfg.classes, clips_per_class=cfg.clips_per_class,
                               decorrelated_fraction=cfg.decorrelated_fraction, variants=cfg.variants,
                               duration=cfg.duration, seed=cfg.seed)
    corpus = generate_synthetic_corpus(spec)
    export_corpus(corpus, out)
    _report(None, {"clips": len(corpus.clips), "classes": corpus.num_classes,
                   "splits": {k: len(v) for k, v in corpus.splits.items()}})


def cmd_ingest(cfg, profile):
    _need(cfg, "corpus")
    out = _output_dir(cfg, required=False)
    corpus = ingest_directory(cfg.corpus)
    _report(out, {"clips": len(corpus.clips), "classes": corpus.num_classes if corpus.labelled else 0,
                  "labelled": corpus.labelled, "splits": {k: len(v) for k, v in corpus.splits.items()}})


def cmd_spectrogram(cfg, profile):
    _need(cfg, "input")
    out = _output_dir(cfg)
    spec = profile.pairs.spectrogram
    buf = resample(read_wav(cfg.input), spec.sample_rate)
    s = log_spectrogram(buf.segment(cfg.start, spec.clip_sec), spec)
    write_matrix(out / "spectrogram.mat", s)
    _report(out, {"shape": list(s.shape), "sample_rate": spec.sample_rate})


def cmd_train_avc(cfg, profile):
    _need(cfg, "corpus")
    out = _output_dir(cfg)
    corpus = ingest_directory(cfg.corpus)
    ckpt, metrics = T.train_avc(corpus, _train_config(cfg), profile)
    (out / "ckpt").mkdir()
    T.save_checkpoint(ckpt, out / "ckpt" / "final.ckpt")
    T.write_metrics(out / "metrics.jsonl", metrics)
    _report(out, {"steps": ckpt.step, "final_loss": metrics[-1]["loss"] if metrics else None})


def cmd_train_supervised(cfg, profile):
    _need(cfg, "corpus")
    out = _output_dir(cfg)
    corpus = ingest_directory(cfg.corpus)
    ckpt, metrics = T.train_supervised_classifier(corpus, cfg.modality, _train_config(cfg), profile)
    (out / "ckpt").mkdir()
    T.save_checkpoint(ckpt, out / "ckpt" / "final.ckpt")
    T.write_metrics(out / "metrics.jsonl", metrics)
    acc = T.classifier_accuracy(ckpt.params, corpus, cfg.split, cfg.modality, cfg.pairs, cfg.seed, profile)
    _report(out, {"modality": cfg.modality, "split": cfg.split, "accuracy": acc,
                  "chance": 1 / corpus.num_classes})


def cmd_grid_lr(cfg, profile):
    _need(cfg, "corpus")
    out = _output_dir(cfg, required=False)
    lrs = [float(x) for x in cfg.lr_grid.split(",") if x.strip()]
    best, rows = T.lr_grid_search(ingest_directory(cfg.corpus), _train_config(cfg), lrs, profile)
    _report(out, {"best_lr": best, "runs": rows})


def cmd_eval_avc(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg, required=False)
    ckpt = _load(cfg, profile)
    acc = E.eval_avc_accuracy(ckpt.params, ingest_directory(cfg.corpus), cfg.split, cfg.pairs, cfg.seed, profile)
    _report(out, {"accuracy": acc, "chance": E.CHANCE, "split": cfg.split, "pairs": cfg.pairs - cfg.pairs % 2})


def cmd_eval_baselines(cfg, profile):
    _need(cfg, "corpus")
    out = _output_dir(cfg)
    corpus = ingest_directory(cfg.corpus)
    report, vis, aud, pre = E.run_baselines(corpus, _train_config(cfg, cfg.supervised_steps), _train_config(cfg),
                                            profile, cfg.pairs, cfg.seed)
    (out / "ckpt").mkdir()
    for name, ck in (("vision", vis), ("audio", aud), ("pretrained", pre)):
        T.save_checkpoint(ck, out / "ckpt" / f"{name}.ckpt")
    _report(out, report)


def _feature_matrix(cfg, profile, params, corpus):
    if cfg.modality == "vision":
        return E.frame_features(params, corpus, cfg.split, profile.transfer_size)
    spec = profile.pairs.spectrogram
    rows, ids, labels = [], [], []
    for clip in corpus.split(cfg.split):
        feats = E.extract_recording_features(params, clip.audio_at(spec.sample_rate), cfg.subclips, spec)
        rows.append(feats)
        ids.extend(f"{clip.id}#{s}" for s in range(len(feats)))
        labels.extend([clip.label if clip.label is not None else -1] * len(feats))
    return E.FeatureMatrix(np.concatenate(rows), ids, np.array(labels))


def cmd_extract_features(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg)
    fm = _feature_matrix(cfg, profile, _load(cfg, profile).params, ingest_directory(cfg.corpus))
    E.save_features(fm, out / "features.bin")
    _report(out, {"rows": len(fm.ids), "dim": int(fm.values.shape[1]), "modality": cfg.modality})


def cmd_eval_transfer_audio(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg, required=False)
    folds = E.read_folds(cfg.folds) if cfg.folds else None
    report = E.eval_transfer_audio(_load(cfg, profile).params, ingest_directory(cfg.corpus), cfg.subclips,
                                   cfg.svm_c, profile, folds)
    _report(out, report)


def cmd_eval_transfer_visual(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg, required=False)
    probe = E.ProbeConfig(steps=cfg.probe_steps, lr=cfg.probe_lr, seed=cfg.seed)
    _report(out, E.eval_transfer_visual(_load(cfg, profile).params, ingest_directory(cfg.corpus), probe, profile))


def _units_summary(params, corpus, cfg, profile):
    emb, labels, ids, groups = A.embed_split(params, corpus, cfg.split, cfg.modality, profile)
    rankings = A.rank_all_units(emb, min(len(emb), max(cfg.top_k, 4 * cfg.top_n)), ids)
    _, counts, covered = A.high_preference_classes(rankings, labels, cfg.top_n, cfg.threshold, groups)
    return rankings, {"classes_with_high_preference": covered, "per_class_units": counts}


def cmd_analyze_units(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg)
    corpus = ingest_directory(cfg.corpus)
    rankings, trained = _units_summary(_load(cfg, profile).params, corpus, cfg, profile)
    _, control = _units_summary(M.init_params(profile.model, cfg.seed), corpus, cfg, profile)
    A.write_jsonl(out / "rankings.jsonl", [
        {"unit": r.unit, "items": r.ids[:cfg.top_k], "values": [float(v) for v in r.values[:cfg.top_k]]}
        for r in rankings])
    _report(out, {"trained": trained, "random_weights": control, "top_n": cfg.top_n,
                  "threshold": cfg.threshold, "modality": cfg.modality})


def cmd_analyze_heatmaps(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg)
    params = _load(cfg, profile).params
    corpus = ingest_directory(cfg.corpus)
    units = [int(u) for u in cfg.units.split(",") if u.strip()]
    emb, _, ids, _ = A.embed_split(params, corpus, cfg.split, cfg.modality, profile)
    (out / "heatmaps").mkdir()
    rows = []
    for u in units:
        ranking = A.rank_by_unit(emb, u, min(cfg.items, len(emb)), ids)
        for rank, item_id in enumerate(ranking.ids):
            clip_id, t = item_id.split("@")
            item = A.item_input(corpus[clip_id], float(t), cfg.modality, profile)
            hm = A.unit_heatmap(params, item, cfg.modality, u, item_id)
            path = out / "heatmaps" / f"u{u:03d}_r{rank:02d}.pgm"
            A.write_pgm(path, hm.grid)
            rows.append({"unit": u, "rank": rank, "item": item_id, "max": float(hm.grid.max()),
                         "embedding": hm.embedding_value, "file": path.name})
    A.write_jsonl(out / "heatmaps.jsonl", rows)
    _report(out, {"heatmaps": len(rows), "units": units})


def cmd_analyze_nmi(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg, required=False)
    corpus = ingest_directory(cfg.corpus)
    report = {"modality": cfg.modality, "split": cfg.split}
    for name, params in (("trained", _load(cfg, profile).params),
                         ("random_weights", M.init_params(profile.model, cfg.seed))):
        emb, labels, _, _ = A.embed_split(params, corpus, cfg.split, cfg.modality, profile)
        rep = A.clustering_report(emb, labels, cfg.kmeans_k, cfg.seed)
        report[name] = rep["nmi"]
        report["random_assignment"] = rep["random_assignment_nmi"]
        report["k"], report["items"] = rep["k"], rep["items"]
    _report(out, report)


def cmd_export_embeddings(cfg, profile):
    _need(cfg, "corpus", "ckpt")
    out = _output_dir(cfg)
    emb, labels, ids, _ = A.embed_split(_load(cfg, profile).params, ingest_directory(cfg.corpus), cfg.split,
                                        cfg.modality, profile)
    A.export_embeddings(emb, labels, out / "embeddings.tsv", ids)
    _report(out, {"rows": len(ids), "dim": int(emb.shape[1])})


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.version:
            print(f"l3avc {__version__} (config schema {SCHEMA_VERSION})")
            return 0
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        overrides = {k: coerce(k, v) for k, v in vars(args).items()
                     if k not in ("command", "config", "version") and v is not None}
        cfg = load_config(args.config, overrides)
        profile = get_profile(cfg.profile)
    except (UsageError, ValueError) as exc:  # ConfigError is a ValueError
        return _fail("usage", str(exc), 2)
    try:
        HANDLERS[args.command](cfg, profile)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except Exception as exc:  # one-line report for any runtime failure
        return _fail("runtime", f"{type(exc).__name__}: {exc}", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
