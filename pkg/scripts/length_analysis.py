#!/usr/bin/env python3
"""BLEU by reference length and the length-difference histogram for several systems.

    python scripts/length_analysis.py --ref test.en --baseline seq2seq.hyp trdec.hyp lin.hyp
"""
import argparse

from trdec.bleu import DEFAULT_BUCKETS, bleu, bleu_by_length, gain_table, length_diff_histogram


def read(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("hyps", nargs="+")
    p.add_argument("--ref", required=True)
    p.add_argument("--baseline", help="system the gains are measured against")
    p.add_argument("--buckets", default=",".join(map(str, DEFAULT_BUCKETS)))
    args = p.parse_args()

    refs = read(args.ref)
    edges = tuple(int(x) for x in args.buckets.split(",") if x)
    base = read(args.baseline) if args.baseline else None
    for path in args.hyps:
        hyps = read(path)
        print(f"== {path}  BLEU {bleu(hyps, refs).bleu:.2f}")
        if base is not None:
            for lab, n, s, b, g in gain_table(hyps, base, refs, edges):
                print(f"  {lab:>6s}  n={n:<5d} {s:6.2f}  base {b:6.2f}  gain {g:+6.2f}")
        else:
            for lab, (n, rep, _) in bleu_by_length(hyps, refs, edges).items():
                print(f"  {lab:>6s}  n={n:<5d} {rep.bleu if rep else 0.0:6.2f}")
        hist = length_diff_histogram(hyps, refs)
        print("  length difference (hyp - ref):", " ".join(f"{k:+d}:{v}" for k, v in hist.items()))


if __name__ == "__main__":
    main()
