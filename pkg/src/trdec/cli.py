"""Command-line entry point: ``trdec <subcommand> ...``."""
from __future__ import annotations

import argparse
import contextlib
import sys
import time

from .bleu import DEFAULT_BUCKETS, bleu, bleu_by_length, gain_table, length_diff_histogram
from .builders import TreeVariant, build_targets
from .config import Config
from .corpus import (
    BpeModel,
    MARKER,
    bpe_learn,
    join_subwords,
    read_bracketed_trees,
    read_conll_deps,
    read_lines,
    write_bracketed_trees,
)
from .decoder import TruncationError, beam_decode, greedy_decode, load_model, save_model
from .train import make_examples, make_model, train
from .tree import GrammarError, prepare_target


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as f:
            yield f


def cmd_learn_bpe(args) -> int:
    model = bpe_learn(read_lines(args.input), args.merges)
    model.save(args.out)
    print(f"learned {len(model.merges)} merges", file=sys.stderr)
    return 0


def cmd_apply_bpe(args) -> int:
    model = BpeModel.load(args.bpe)
    with _open_out(args.out) as f:
        for sent in read_lines(args.input):
            f.write(" ".join(model.apply(sent)) + "\n")
    return 0


def cmd_build_trees(args) -> int:
    variant = TreeVariant(args.variant)
    bpe = BpeModel.load(args.bpe) if args.bpe else None
    if variant is TreeVariant.DEPENDENCY:
        if not args.deps:
            raise SystemExit("--deps is required for the dep variant")
        trees = read_conll_deps(args.deps)
        corpus = [list(d.tokens) for d in trees]
    elif variant is TreeVariant.BINARY_CONCAT:
        if args.text:
            corpus = read_lines(args.text)
        elif args.trees:
            corpus = [t.leaves() for t in read_bracketed_trees(args.trees)]
        else:
            raise SystemExit("--text or --trees is required for the binary variant")
        trees = None
    else:
        if not args.trees:
            raise SystemExit(f"--trees is required for the {variant.value} variant")
        trees = read_bracketed_trees(args.trees)
        corpus = [t.leaves() for t in trees]
    out = build_targets(corpus, variant, trees, bpe)
    write_bracketed_trees(out, args.out)
    print(f"wrote {len(out)} trees", file=sys.stderr)
    return 0


def _load_targets(config: Config, trees_path, tgt_path):
    if trees_path:
        return [prepare_target(t) for t in read_bracketed_trees(trees_path)]
    if config.mode == "trdec" or config.mode == "lin":
        raise SystemExit(f"--trees is required in {config.mode} mode")
    return read_lines(tgt_path)


def cmd_train(args) -> int:
    config = Config.read(args.config) if args.config else Config()
    if args.mode:
        config = config.replace(mode=args.mode)
    if args.epochs is not None:
        config = config.replace(epochs=args.epochs)
    sources = read_lines(args.src)
    targets = _load_targets(config, args.trees, args.tgt)
    if config.mode == "trdec" and config.variant == "binary" and len(targets) == 2 * len(sources):
        # binary targets hold two trees per sentence
        sources = [s for s in sources for _ in range(2)]
    if len(sources) != len(targets):
        raise SystemExit(f"{len(sources)} source sentences but {len(targets)} targets")
    model = make_model(config, sources, targets)
    examples = make_examples(model, sources, targets)
    dev = None
    if args.dev_src:
        dev_src = read_lines(args.dev_src)
        dev_tgt = _load_targets(config, args.dev_trees, args.dev_tgt)
        dev = []
        skipped = 0
        for s, t in zip(dev_src, dev_tgt):
            try:
                dev += make_examples(model, [s], [t])
            except GrammarError:
                skipped += 1
        if skipped:
            print(f"skipped {skipped} dev sentences with rules unseen in training", file=sys.stderr)
    flat = [t.leaves() if hasattr(t, "leaves") else t for t in targets]
    marked = all(sent and sent[0].startswith(MARKER) for sent in flat)
    t0 = time.time()
    with _open_out(args.log) as log:
        print("step\tloss\tdev_loss", file=log, flush=True)
        train(model, examples, dev=dev, log=lambda line: print(line, file=log, flush=True))
    save_model(model, args.out, {"bpe_marked": marked})
    print(f"trained {len(examples)} examples in {time.time() - t0:.1f}s -> {args.out}", file=sys.stderr)
    return 0


def cmd_translate(args) -> int:
    model = load_model(args.checkpoint)
    join = model.meta.get("bpe_marked", False) and not args.subwords
    sources = read_lines(args.src)
    tree_out = open(args.dump_trees, "w", encoding="utf-8") if args.dump_trees else None
    failures = 0
    with _open_out(args.out) as out:
        for sent in sources:
            ids = model.src_vocab.encode(sent)
            try:
                if args.beam <= 1:
                    hyp = greedy_decode(model, ids)
                else:
                    hyp = beam_decode(model, ids, args.beam)[0]
                words, tree = hyp.words, hyp.tree
            except TruncationError as e:
                failures += 1
                tree = e.partial_tree
                words = tree.leaves() if tree is not None else []
            out.write(" ".join(join_subwords(words) if join else words) + "\n")
            if tree_out is not None:
                tree_out.write((tree.to_bracket() if tree is not None else "()") + "\n")
    if tree_out is not None:
        tree_out.close()
    if failures:
        print(f"{failures} sentences hit the decoding limit (partial output written)", file=sys.stderr)
    return 0


def _read_text(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def cmd_evaluate(args) -> int:
    rep = bleu(_read_text(args.hyp), _read_text(args.ref))
    print("\n".join(rep.lines()))
    return 0


def _parse_buckets(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def cmd_analyze_length(args) -> int:
    hyps, refs = _read_text(args.hyp), _read_text(args.ref)
    edges = _parse_buckets(args.buckets)
    with _open_out(args.out) as out:
        _write_length_tables(out, hyps, refs, args.baseline_hyp, edges)
    return 0


def _write_length_tables(out, hyps, refs, baseline_path, edges):
    if baseline_path:
        out.write("bucket\tcount\tbleu\tbaseline_bleu\tgain\n")
        for lab, n, s, b, g in gain_table(hyps, _read_text(baseline_path), refs, edges):
            out.write(f"{lab}\t{n}\t{s:.2f}\t{b:.2f}\t{g:.2f}\n")
    else:
        out.write("bucket\tcount\tbleu\n")
        for lab, (n, rep, _) in bleu_by_length(hyps, refs, edges).items():
            out.write(f"{lab}\t{n}\t{rep.bleu if rep else 0.0:.2f}\n")
    out.write("\nlength_diff\tcount\n")
    for diff, count in length_diff_histogram(hyps, refs).items():
        out.write(f"{diff}\t{count}\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trdec", description="Tree-structured NMT decoder")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("learn-bpe", help="learn BPE merges from a tokenized text file")
    s.add_argument("--input", required=True)
    s.add_argument("--merges", type=int, default=8000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_learn_bpe)

    s = sub.add_parser("apply-bpe", help="segment a text file with learned merges")
    s.add_argument("--bpe", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_apply_bpe)

    s = sub.add_parser("build-trees", help="build target trees for one tree variant")
    s.add_argument("--variant", required=True, choices=[v.value for v in TreeVariant])
    s.add_argument("--trees", help="bracketed constituency trees")
    s.add_argument("--deps", help="CoNLL dependency trees")
    s.add_argument("--text", help="tokenized target sentences (binary variant)")
    s.add_argument("--bpe", help="BPE merge file for the target side")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_trees)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--src", required=True)
    s.add_argument("--trees", help="target trees from build-trees")
    s.add_argument("--tgt", help="flat target subwords (seq2seq mode)")
    s.add_argument("--dev-src")
    s.add_argument("--dev-trees")
    s.add_argument("--dev-tgt")
    s.add_argument("--mode", choices=["trdec", "seq2seq", "lin"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--log", help="write the loss log here instead of stdout")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="decode a source file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--src", required=True)
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--out")
    s.add_argument("--dump-trees", help="write decoded trees (bracketed) here")
    s.add_argument("--subwords", action="store_true", help="do not join BPE pieces")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="corpus BLEU")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze-length", help="BLEU by reference length and length-difference histogram")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--baseline-hyp")
    s.add_argument("--buckets", default=",".join(map(str, DEFAULT_BUCKETS)))
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_length)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
