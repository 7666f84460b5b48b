"""Clustering NMI and high-preference unit counts: trained vs random-weights embeddings.

    python scripts/nmi.py runs/tiny/final.ckpt --k 8 16 64
"""

import argparse
import dataclasses
from pathlib import Path

from l3avc.analyze import clustering_report, embed_split, high_preference_classes, rank_all_units
from l3avc.corpus import generate_synthetic_corpus
from l3avc.model import init_params
from l3avc.profiles import TINY
from l3avc.train import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("ckpt", type=Path)
    ap.add_argument("--k", type=int, nargs="+", default=[16])
    ap.add_argument("--random-seed", type=int, default=1)
    ap.add_argument("--split", default="test")
    args = ap.parse_args()

    corpus = generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, decorrelated_fraction=0.1))
    nets = {"trained": load_checkpoint(args.ckpt).params, "random": init_params(TINY.model, args.random_seed)}
    print("modality  net      k   nmi    random-assign  hp@4  hp@3")
    for modality in ("vision", "audio"):
        for name, params in nets.items():
            emb, labels, ids, groups = embed_split(params, corpus, args.split, modality, TINY)
            rankings = rank_all_units(emb, len(emb), ids)
            hp = [high_preference_classes(rankings, labels, 5, t, groups)[2] for t in (4, 3)]
            for k in args.k:
                r = clustering_report(emb, labels, k, seed=0)
                print(f"{modality:8}  {name:7} {k:3}  {r['nmi']:.3f}  {r['random_assignment_nmi']:.3f}"
                      f"          {hp[0]:4}  {hp[1]:4}")


if __name__ == "__main__":
    main()
