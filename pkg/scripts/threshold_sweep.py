"""Yield/precision trade-off over tau, delta, rho and lambda on a synthetic corpus.

    python3 scripts/threshold_sweep.py --out runs/sweep --n-segments 2000 --seed 0

Writes the corpus under OUT/corpus, the grid as OUT/sweep.csv, and prints
one line per grid point sorted by yield.
"""

import argparse
import json
from pathlib import Path

from pramana.synthcorpus import SynthConfig, TranscriberProfile, generate, sweep, sweep_csv

RHO_GRID = (
    {"sonar": 0.6, "rnnt_conf": 0.5},
    {"sonar": 0.8, "rnnt_conf": 0.7},
    {"sonar": 0.9, "rnnt_conf": 0.85},
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-segments", type=int, default=1000)
    ap.add_argument("--rnnt-cer", type=float, default=0.05)
    ap.add_argument("--ctc-cer", type=float, default=0.08)
    ap.add_argument("--tau", type=float, nargs="+", default=[0.8, 0.9, 1.0])
    ap.add_argument("--delta", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--lam", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args(argv)

    out = Path(args.out)
    profiles = (TranscriberProfile("rnnt", args.rnnt_cer), TranscriberProfile("ctc", args.ctc_cer))
    corpus = generate(SynthConfig(seed=args.seed, n_segments=args.n_segments, transcriber_profiles=profiles),
                      out / "corpus")
    rows = sweep(corpus.root, args.tau, args.delta, RHO_GRID, args.lam)
    (out / "sweep.csv").write_text(sweep_csv(rows), encoding="utf-8")

    print(f"{'tau':>5} {'delta':>5} {'rho':<34} {'lam':>3} {'yield':>7} {'prec':>7} {'cer':>7}")
    for r in sorted(rows, key=lambda r: -r.yield_fraction):
        prec = "-" if r.precision is None else f"{r.precision:.4f}"
        cer = "-" if r.cer is None else f"{r.cer:.4f}"
        print(f"{r.tau:>5} {r.delta:>5} {json.dumps(r.rho, sort_keys=True):<34} {r.lam:>3} "
              f"{r.yield_fraction:>7.4f} {prec:>7} {cer:>7}")


if __name__ == "__main__":
    main()
