import dataclasses

import numpy as np
import pytest

from l3avc.corpus import CorpusError, generate_synthetic_corpus, sample_avc_batch
from l3avc.model import avc_forward, init_params
from l3avc.profiles import TINY
from l3avc.train import (MAGIC, CheckpointError, TrainConfig, TrainingError, classifier_accuracy, load_checkpoint,
                         loss_on_fixed_batch, lr_grid_search, save_checkpoint, train_avc,
                         train_supervised_classifier, write_metrics)

QUICK = TrainConfig(lr=1e-3, batch_size=8, steps=3, seed=5, eval_pairs=16, bn_recal_batches=2)


def weights_equal(a, b):
    return set(a.weights) == set(b.weights) and all(a.weights[k].tobytes() == b.weights[k].tobytes()
                                                      for k in a.weights)


def test_config_validation():
    for bad in (dict(lr=0), dict(batch_size=1), dict(steps=-1), dict(bn_recal_batches=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_zero_steps_returns_init(small_corpus):
    ckpt, metrics = train_avc(small_corpus, dataclasses.replace(QUICK, steps=0))
    init = init_params(TINY.model, QUICK.seed)
    assert metrics == []
    assert weights_equal(ckpt.params, init)
    assert all(ckpt.params.stats[k].tobytes() == init.stats[k].tobytes() for k in init.stats)


def test_frozen_trunks_are_bitwise_unchanged(small_corpus):
    ckpt, _ = train_avc(small_corpus, dataclasses.replace(QUICK, freeze_trunks=True))
    init = init_params(TINY.model, QUICK.seed)
    for k, v in init.weights.items():
        same = ckpt.params.weights[k].tobytes() == v.tobytes()
        assert same != k.startswith("fusion/"), k
    assert all(ckpt.params.stats[k].tobytes() == init.stats[k].tobytes() for k in init.stats)


def test_fixed_batch_loss_decreases(small_corpus):
    batch = sample_avc_batch(small_corpus, "train", TINY.batch_size, np.random.default_rng(0), TINY.pairs)
    losses = loss_on_fixed_batch(init_params(TINY.model, 0), batch, 11, lr=1e-4)
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_training_is_reproducible(small_corpus, tmp_path):
    cfg = dataclasses.replace(QUICK, eval_every=3)
    a_ckpt, a = train_avc(small_corpus, cfg)
    b_ckpt, b = train_avc(small_corpus, cfg)
    write_metrics(tmp_path / "a.jsonl", a)
    write_metrics(tmp_path / "b.jsonl", b)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert [sorted(r) for r in a] == [["loss", "lr", "step"]] * 2 + [["loss", "lr", "step", "val_accuracy"]]
    assert weights_equal(a_ckpt.params, b_ckpt.params)


def test_worker_mode_is_reproducible(small_corpus):
    cfg = dataclasses.replace(QUICK, workers=2)
    _, a = train_avc(small_corpus, cfg)
    _, b = train_avc(small_corpus, cfg)
    _, single = train_avc(small_corpus, QUICK)
    assert a == b
    assert a != single


def test_batches_are_balanced(small_corpus):
    rng = np.random.default_rng(1)
    labels = np.concatenate([sample_avc_batch(small_corpus, "train", 8, rng, TINY.pairs).labels
                             for _ in range(1000)])
    assert 0.48 <= labels.mean() <= 0.52


def test_empty_train_split_rejected(small_corpus):
    corpus = dataclasses.replace(small_corpus, splits={"train": [], "val": [],
                                                       "test": [c.id for c in small_corpus.clips]})
    with pytest.raises(CorpusError):
        train_avc(corpus, QUICK)


def test_divergence_aborts_with_diagnostic(small_corpus):
    with pytest.raises(TrainingError, match="step"), np.errstate(all="ignore"):
        train_avc(small_corpus, dataclasses.replace(QUICK, lr=1e30, steps=5))


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip_is_bitwise(small_corpus, tmp_path):
    ckpt, _ = train_avc(small_corpus, QUICK)
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert back.step == 3 and back.config == ckpt.config
    assert back.adam.t == ckpt.adam.t
    batch = sample_avc_batch(small_corpus, "test", 6, np.random.default_rng(0), TINY.pairs, train_mode=False)
    a = avc_forward(ckpt.params, batch.images, batch.spectrograms)
    b = avc_forward(back.params, batch.images, batch.spectrograms)
    assert a.tobytes() == b.tobytes()


def test_truncated_checkpoint_is_an_error(tmp_path):
    ckpt, _ = train_avc(generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, num_classes=2,
                                                                      clips_per_class=4)),
                        dataclasses.replace(QUICK, steps=0))
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    data = (tmp_path / "a.ckpt").read_bytes()
    for cut in (2, 7, 100, len(data) // 2, len(data) - 1):
        (tmp_path / "t.ckpt").write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError, match=repr(MAGIC).replace("'", ".")):
        load_checkpoint(tmp_path / "x.ckpt")
    (tmp_path / "v.ckpt").write_bytes(data[:4] + b"\x63\x00\x00\x00" + data[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")


# -- learning-rate search ----------------------------------------------------

def test_lr_grid_single_and_duplicates(small_corpus):
    cfg = dataclasses.replace(QUICK, steps=1)
    best, rows = lr_grid_search(small_corpus, cfg, [3e-4])
    assert best == 3e-4 and len(rows) == 1
    best, rows = lr_grid_search(small_corpus, cfg, [1e-3, 1e-3, 1e-4, 1e-5])
    assert [r["lr"] for r in rows] == [1e-5, 1e-4, 1e-3]
    assert best in (1e-5, 1e-4, 1e-3)
    top = max(r["val_accuracy"] for r in rows)
    assert best == min(r["lr"] for r in rows if r["val_accuracy"] == top)
    with pytest.raises(ValueError):
        lr_grid_search(small_corpus, cfg, [])


# -- supervised classifiers --------------------------------------------------

def test_classifier_head_width_for_34_classes():
    corpus = generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, num_classes=34, clips_per_class=2,
                                                           split_fractions=(0.5, 0.5, 0.0)))
    ckpt, _ = train_supervised_classifier(corpus, "audio", dataclasses.replace(QUICK, steps=0))
    assert ckpt.params.weights["head/fc2/weights"].shape == (TINY.model.fusion_hidden, 34)
    assert ckpt.params.weights["head/fc1/weights"].shape == (TINY.model.embedding_dim, TINY.model.fusion_hidden)


@pytest.mark.parametrize("modality", ["vision", "audio"])
def test_untrained_classifier_is_at_chance(small_corpus, modality):
    ckpt, _ = train_supervised_classifier(small_corpus, modality, dataclasses.replace(QUICK, steps=0))
    acc = classifier_accuracy(ckpt.params, small_corpus, "train", modality, 2000, seed=1)
    assert abs(acc - 1 / 4) <= 0.05, acc


def test_supervised_vision_reaches_high_train_accuracy(small_corpus):
    cfg = TrainConfig(lr=1e-3, batch_size=TINY.batch_size, steps=150, seed=0)
    ckpt, metrics = train_supervised_classifier(small_corpus, "vision", cfg)
    assert classifier_accuracy(ckpt.params, small_corpus, "train", "vision", 512, seed=2) >= 0.9
    assert ckpt.config["selected_step"] == 150


def test_early_stopping_keeps_best_val_snapshot(small_corpus):
    cfg = dataclasses.replace(QUICK, steps=4, eval_every=2)
    ckpt, metrics = train_supervised_classifier(small_corpus, "audio", cfg)
    vals = [(r["val_accuracy"], -r["step"]) for r in metrics if "val_accuracy" in r]
    assert ckpt.config["selected_step"] == -max(vals)[1]


def test_unlabelled_corpus_rejected(small_corpus):
    clips = [dataclasses.replace(c, label=None) for c in small_corpus.clips]
    corpus = dataclasses.replace(small_corpus, clips=clips, class_names=None)
    with pytest.raises(CorpusError):
        train_supervised_classifier(corpus, "vision", QUICK)
    with pytest.raises(ValueError):
        train_supervised_classifier(small_corpus, "smell", QUICK)
