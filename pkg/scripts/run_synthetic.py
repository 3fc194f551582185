"""Train every architecture/representation pair on the synthetic corpus and print a metrics table for each.

    python scripts/run_synthetic.py --sentences 2000 --seed 0 [--only lstm:subword]
"""

import argparse
import logging
import time

from codemix_lid.experiment import PAIRS, synthetic_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sentences", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--only", action="append", default=[], help="arch:repr, repeatable")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    pairs = [tuple(p.split(":")) for p in args.only] or PAIRS
    for arch, rep in pairs:
        t0 = time.perf_counter()
        metrics, reports = synthetic_run(arch, rep, n_sentences=args.sentences, seed=args.seed,
                                         epochs_max=args.epochs)
        print(f"== {arch} / {rep}: {len(reports)} epochs, {time.perf_counter() - t0:.1f}s")
        print(metrics.table())


if __name__ == "__main__":
    main()
