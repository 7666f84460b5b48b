"""Direct-combination and supervised-pretraining baselines next to self-supervised AVC.

    python scripts/baselines.py --avc-ckpt runs/tiny/final.ckpt
"""

import argparse
import dataclasses
import json
from pathlib import Path

from l3avc.corpus import generate_synthetic_corpus
from l3avc.evalkit import eval_avc_accuracy, run_baselines
from l3avc.profiles import TINY
from l3avc.train import TrainConfig, load_checkpoint, train_avc


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--supervised-steps", type=int, default=1000)
    ap.add_argument("--avc-steps", type=int, default=2000)
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--avc-ckpt", type=Path, default=None, help="reuse a trained checkpoint instead of training")
    args = ap.parse_args()

    corpus = generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, decorrelated_fraction=0.1))
    sup = TrainConfig(lr=TINY.lr, batch_size=TINY.batch_size, steps=args.supervised_steps,
                      eval_every=50, eval_pairs=512)
    avc = TrainConfig(lr=TINY.lr, batch_size=TINY.batch_size, steps=args.avc_steps)
    report, *_ = run_baselines(corpus, sup, avc, TINY, n_pairs=args.pairs)
    if args.avc_ckpt is not None:
        params = load_checkpoint(args.avc_ckpt).params
    else:
        params = train_avc(corpus, avc, TINY)[0].params
    report["self_supervised_accuracy"] = eval_avc_accuracy(params, corpus, "test", args.pairs, profile=TINY)
    print(json.dumps(report, indent=1))


if __name__ == "__main__":
    main()
