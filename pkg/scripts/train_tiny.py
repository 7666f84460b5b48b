"""Train the tiny-profile network on the synthetic corpus and report test AVC accuracy.

    python scripts/train_tiny.py --steps 2000 --out runs/tiny
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from l3avc.corpus import generate_synthetic_corpus, separability_accuracy
from l3avc.evalkit import eval_avc_accuracy
from l3avc.profiles import TINY
from l3avc.train import TrainConfig, save_checkpoint, train_avc, write_metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--decorrelated", type=float, default=0.1)
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    corpus = generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, decorrelated_fraction=args.decorrelated))
    oracle = separability_accuracy(generate_synthetic_corpus(TINY.synthetic), TINY.pairs.spectrogram)
    cfg = TrainConfig(lr=TINY.lr, batch_size=TINY.batch_size, steps=args.steps, seed=args.seed,
                      eval_every=max(args.steps // 10, 1), eval_pairs=256)
    start = time.perf_counter()
    ckpt, metrics = train_avc(corpus, cfg, TINY)
    minutes = (time.perf_counter() - start) / 60
    acc = eval_avc_accuracy(ckpt.params, corpus, "test", args.pairs, profile=TINY)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_metrics(args.out / "metrics.jsonl", metrics)
        save_checkpoint(ckpt, args.out / "final.ckpt")
    print(json.dumps({"separability_oracle": oracle, "test_accuracy": acc, "chance": 0.5,
                      "steps": len(metrics), "minutes": round(minutes, 2)}))


if __name__ == "__main__":
    main()
