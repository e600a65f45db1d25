#!/usr/bin/env python3
"""Train every tree variant plus the flat baselines on a small parallel corpus.

Defaults to the toy corpus under tests/data and evaluates on the training
sentences (a memorization check).  Point --src/--tgt/--trees at real data
and pass --test-src/--test-tgt for a held-out evaluation.

    python scripts/toy_experiment.py --epochs 30 --out runs/toy
"""
import argparse
import time
from pathlib import Path

from trdec.bleu import bleu, gain_table
from trdec.builders import build_targets
from trdec.config import Config
from trdec.corpus import bpe_learn, join_subwords, read_bracketed_trees, read_conll_deps, read_lines
from trdec.decoder import TruncationError, beam_decode, save_model
from trdec.train import make_examples, make_model, step_accuracy, train

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def systems(args):
    out = [("seq2seq", "seq2seq", None), ("lin", "lin", "con"), ("trdec-con", "trdec", "con"),
           ("trdec-con-null", "trdec", "con-null"), ("trdec-binary", "trdec", "binary")]
    if args.deps:
        out.append(("trdec-dep", "trdec", "dep"))
    return out


def targets_for(variant, en, args, bpe):
    if variant is None:
        return [bpe.apply(s) for s in en]
    if variant == "dep":
        return build_targets(en, "dep", read_conll_deps(args.deps), bpe)
    if variant == "binary":
        return build_targets(en, "binary", None, bpe)
    return build_targets(en, variant, read_bracketed_trees(args.trees), bpe)


def translate(model, sources, beam):
    out = []
    for s in sources:
        ids = model.src_vocab.encode(s)
        try:
            words = beam_decode(model, ids, beam)[0].words
        except TruncationError as e:
            words = e.partial_tree.leaves() if e.partial_tree is not None else []
        out.append(join_subwords(words))
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--src", default=DATA / "toy.src")
    p.add_argument("--tgt", default=DATA / "toy.en")
    p.add_argument("--trees", default=DATA / "toy.en.trees")
    p.add_argument("--deps", help="CoNLL dependency parses of --tgt (enables the dep variant)")
    p.add_argument("--test-src")
    p.add_argument("--test-tgt")
    p.add_argument("--merges", type=int, default=40)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--only", nargs="*", help="restrict to these system names")
    p.add_argument("--out", default="runs/toy")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src, en = read_lines(args.src), read_lines(args.tgt)
    test_src = read_lines(args.test_src) if args.test_src else src
    test_ref = read_lines(args.test_tgt) if args.test_tgt else en
    bpe = bpe_learn(en, args.merges)
    bpe.save(out / "bpe.en")

    results = {}
    for name, mode, variant in systems(args):
        if args.only and name not in args.only:
            continue
        targets = targets_for(variant, en, args, bpe)
        sources = [s for s in src for _ in range(2)] if variant == "binary" else src
        config = Config(mode=mode, variant=variant or "con", hidden=args.hidden, embed=args.hidden,
                        lr=args.lr, epochs=args.epochs)
        t0 = time.time()
        model = make_model(config, sources, targets)
        examples = make_examples(model, sources, targets)
        with open(out / f"{name}.log", "w") as log:
            train(model, examples, log=lambda line: print(line, file=log, flush=True))
        acc = step_accuracy(model, examples)
        save_model(model, out / f"{name}.ckpt", {"bpe_marked": True})
        hyps = translate(model, test_src, args.beam)
        (out / f"{name}.hyp").write_text("".join(" ".join(h) + "\n" for h in hyps))
        results[name] = hyps
        score = bleu(hyps, test_ref).bleu
        print(f"{name:16s} bleu {score:6.2f}  step-acc {acc:.3f}  {time.time() - t0:5.1f}s", flush=True)

    if "seq2seq" in results:
        edges = (5, 7)
        for name, hyps in results.items():
            if name == "seq2seq":
                continue
            print(f"\n{name} vs seq2seq by reference length")
            for lab, n, s, b, g in gain_table(hyps, results["seq2seq"], test_ref, edges):
                print(f"  {lab:6s} n={n:3d}  {s:6.2f} {b:6.2f}  gain {g:+6.2f}")


if __name__ == "__main__":
    main()
