"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` or
``python tests/test_acceptance.py``.
"""
import contextlib
import random
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import numeric_grad, relative_error
from models import SIX_RULE_TREES, SIX_RULES, gold_for, grammar, scale_params, tiny_trdec
from strategies import (
    CAT_MERGES,
    CAT_PARENTS,
    CAT_STEPS,
    cat_tree,
    random_parse,
    random_projective_deps,
    random_sentence,
)
from trdec import autodiff as ad
from trdec.bleu import BleuStats, bleu, bleu_by_length, report
from trdec.builders import binary_v1, binary_v2, build_targets, make_tree_v1
from trdec.config import Config
from trdec.corpus import BpeModel, Vocab, bpe_learn, join_subwords, read_bracketed_trees, read_lines
from trdec.decoder import TruncationError, beam_decode, greedy_decode, load_model, loss_only, save_model, train_step
from trdec.train import make_examples, make_model, step_accuracy, train
from trdec.tree import (
    EOP,
    PRE,
    Grammar,
    Kind,
    Tree,
    canonical_derivation,
    extract_grammar,
    node_rule,
    prepare_target,
    replay_derivation,
)

DATA = Path(__file__).parent / "data"


@pytest.fixture
def verdict(capsys, request):
    """Print ``PASS``/``FAIL`` for the criterion even when output is captured."""

    @contextlib.contextmanager
    def judge(label):
        t0 = time.time()
        status = "FAIL"
        try:
            yield
            status = "PASS"
        finally:
            with capsys.disabled():
                print(f"\n{status} criterion {label} ({time.time() - t0:.1f}s)")

    return judge


# 1 ---------------------------------------------------------------------------


def test_gradients_of_tiny_model(verdict, float64):
    with verdict("1 gradient check"):
        t0 = time.time()
        model = tiny_trdec(SIX_RULES, n_words=15, hidden=8, embed=8, seed=11)
        assert len(model.grammar) - 1 == 6 and len(model.tgt_vocab) == 20
        scale_params(model, 0.5, seed=11)
        gold, _ = gold_for(model, SIX_RULE_TREES[0])
        src = [5, 6, 7]
        params = list(model.params)
        ad.zero_grad(params)
        train_step(model, src, gold)
        worst = {}
        for name, p in model.params.items():
            numeric = numeric_grad(lambda: ad.constant(loss_only(model, src, gold)), p, eps=1e-4)
            worst[name] = relative_error(p.grad, numeric)
        elapsed = time.time() - t0
        bad = {k: v for k, v in worst.items() if not v < 1e-4}
        assert not bad, bad
        assert elapsed < 60, f"gradient check took {elapsed:.1f}s"


# 2 ---------------------------------------------------------------------------


def all_variant_trees(n_sentences, seed=0):
    rng = random.Random(seed)
    sents = [random_sentence(rng, 1, 12) for _ in range(n_sentences)]
    bpe = bpe_learn(sents, 30)
    trees = []
    trees += build_targets(sents, "con", [random_parse(rng, s) for s in sents], bpe)
    trees += build_targets(sents, "con-null", [random_parse(rng, s) for s in sents], bpe)
    trees += build_targets(sents, "dep", [random_projective_deps(rng, s) for s in sents], bpe)
    trees += build_targets(sents, "binary", None, bpe)
    return trees


def test_derivation_round_trip(verdict):
    with verdict("2 derivation round trip"):
        trees = all_variant_trees(260)
        assert len(trees) >= 1000
        g = extract_grammar(trees)
        for t in trees:
            assert replay_derivation(canonical_derivation(t, g), g) == t

        cat = prepare_target(cat_tree(), BpeModel(CAT_MERGES))
        g = extract_grammar([cat])
        d = canonical_derivation(cat, g)
        assert [g.symbol(s.value) if s.is_rule else s.value for s in d] == CAT_STEPS
        assert [s.parent for s in d] == CAT_PARENTS


# 3 ---------------------------------------------------------------------------


def reference_halving(items):
    """Direct recursion: the left part takes ceil(n/2) items."""
    if len(items) == 1:
        return items[0]
    k = (len(items) + 1) // 2
    return (Kind.NONTERMINAL, "NULL", [reference_halving(items[:k]), reference_halving(items[k:])])


def same_nodes(a: Tree, b: Tree) -> bool:
    if len(a) != len(b):
        return False
    for i, j in zip(a.preorder(), b.preorder()):
        x, y = a[i], b[j]
        if (x.kind, x.label, len(x.children)) != (y.kind, y.label, len(y.children)):
            return False
    return True


def test_tree_builders(verdict):
    with verdict("3 tree builders"):
        for n in range(1, 65):
            ws = [f"t{i}" for i in range(n)]
            got = Tree.build(make_tree_v1(ws, 0, n - 1))
            assert same_nodes(got, Tree.build(reference_halving(ws))), n
        assert binary_v2(list("abcde")).to_bracket() == "(NULL (NULL (NULL a b) (NULL c d)) e)"
        corpus = [random_sentence(random.Random(i), 1, 10) for i in range(30)]
        out = build_targets(corpus, "binary")
        assert len(out) == 2 * len(corpus)
        for k, s in enumerate(corpus):
            assert out[2 * k].leaves() == s and out[2 * k + 1].leaves() == s


# 4 ---------------------------------------------------------------------------


def violations(steps, training_grammar: Grammar, model_grammar: Grammar, complete: bool):
    """Independent check of a (possibly partial) decoded derivation."""
    problems = []
    stack = [training_grammar.start]
    for t, s in enumerate(steps, start=1):
        if s.is_rule:
            if s.value == model_grammar.eos_id:
                if stack:
                    problems.append(f"step {t}: <eos> with {stack} open")
                if t != len(steps):
                    problems.append(f"step {t}: steps continue after <eos>")
                continue
            rule = model_grammar.rule(s.value)
            if rule not in training_grammar:
                problems.append(f"step {t}: {rule} not in the training grammar")
            if not stack or stack[-1] != rule.lhs:
                problems.append(f"step {t}: {rule} applied with {stack[-1:] or 'nothing'} open")
                continue
            stack.pop()
            stack.extend(reversed(rule.rhs))
        else:
            if not stack or stack[-1] != PRE:
                problems.append(f"step {t}: word while {stack[-1:] or 'nothing'} open")
                continue
            if s.value == EOP:
                stack.pop()
    ended = bool(steps) and steps[-1].is_rule and steps[-1].value == model_grammar.eos_id
    if complete and not ended:
        problems.append("complete hypothesis without <eos>")
    if not complete and ended:
        problems.append("truncated hypothesis ends in <eos>")
    return problems


def tree_violations(tree: Tree, training_grammar: Grammar):
    out = []
    for i in tree.preorder():
        node = tree[i]
        if node.kind is Kind.NONTERMINAL:
            if not node.children:
                continue  # an unexpanded symbol of a partial tree
            rule = node_rule(tree, i)
            if rule not in training_grammar:
                out.append(f"{rule} not in the training grammar")
    return out


def test_grammaticality(verdict, tmp_path):
    with verdict("4 grammaticality"):
        trees = build_targets(read_lines(DATA / "toy.en"), "con", read_bracketed_trees(DATA / "toy.en.trees"))
        training_grammar = extract_grammar(trees)
        sources = read_lines(DATA / "toy.src")
        rng = random.Random(4)
        decodes = problems = truncated = 0
        for ck in range(10):
            config = Config(hidden=12, embed=12, seed=100 + ck, max_steps_factor=6, min_max_steps=20)
            model = make_model(config, sources, trees)
            scale_params(model, rng.choice([0.1, 0.5, 1.0, 2.0]), seed=ck)
            save_model(model, tmp_path / f"r{ck}.ckpt")
            model = load_model(tmp_path / f"r{ck}.ckpt")
            for k in range(50):
                src = [rng.randrange(5, len(model.src_vocab)) for _ in range(rng.randint(1, 6))]
                beam = 1 if k % 2 == 0 else rng.choice([2, 3, 5])
                try:
                    hyps = [greedy_decode(model, src)] if beam == 1 else beam_decode(model, src, beam)
                    for h in hyps:
                        found = violations(h.steps, training_grammar, model.grammar, complete=True)
                        found += tree_violations(h.tree, training_grammar)
                        assert h.tree.leaves() == h.words
                        problems += len(found)
                except TruncationError as e:
                    truncated += 1
                    problems += len(violations(e.steps, training_grammar, model.grammar, complete=False))
                    if e.partial_tree is not None:
                        problems += len(tree_violations(e.partial_tree, training_grammar))
                decodes += 1
        assert decodes == 500
        assert problems == 0, f"{problems} violations ({truncated} truncated decodes)"


# 5 ---------------------------------------------------------------------------

TIME_LIMIT = 300


def overfit(config, sources, targets):
    t0 = time.time()
    model = make_model(config, sources, targets)
    examples = make_examples(model, sources, targets)
    acc = [0.0]

    # train until every teacher-forced step is right: greedy decoding then
    # follows the gold path exactly
    def stop(epoch, loss):
        acc[0] = step_accuracy(model, examples)
        return acc[0] == 1.0 or time.time() - t0 > TIME_LIMIT

    train(model, examples, epochs=200, stop=stop)
    exact = 0
    for ex in examples:
        hyp = greedy_decode(model, ex.src)
        if model.mode == "trdec":
            exact += hyp.tree == ex.target
        else:
            exact += hyp.words == list(ex.target)
    return acc[0], exact, time.time() - t0


def toy_corpus():
    src, en = read_lines(DATA / "toy.src"), read_lines(DATA / "toy.en")
    return src, en, bpe_learn(en, 40)


OVERFIT_CONFIG = Config(hidden=64, embed=64, lr=0.01, seed=1, dtype="float32")


@pytest.mark.slow
@pytest.mark.parametrize("setting", ["binary", "seq2seq", "con-null"])
def test_overfit_toy_corpus(verdict, setting):
    with verdict(f"5 overfit ({setting})"):
        src, en, bpe = toy_corpus()
        if setting == "binary":
            targets = [prepare_target(binary_v1(s), bpe) for s in en]
            config = OVERFIT_CONFIG
        elif setting == "seq2seq":
            targets = [bpe.apply(s) for s in en]
            config = OVERFIT_CONFIG.replace(mode="seq2seq")
        else:
            targets = build_targets(en, "con-null", read_bracketed_trees(DATA / "toy.en.trees"), bpe)
            config = OVERFIT_CONFIG
        acc, exact, elapsed = overfit(config, src, targets)
        assert acc >= 0.99, f"step accuracy {acc:.4f}"
        assert exact == 20, f"{exact}/20 reproduced"
        assert elapsed < TIME_LIMIT, f"{elapsed:.0f}s"


# 6 ---------------------------------------------------------------------------

ORACLE_RULES = ["ROOT -> pre", "ROOT -> A", "A -> pre"]
ORACLE_LIMIT = 5


def enumerate_derivations(g: Grammar, vocab: Vocab, limit: int):
    """Every complete derivation of at most `limit` steps, as (rule or word id) choices."""
    word_ids = [i for i in range(len(vocab)) if i not in (Vocab.pad_id, Vocab.sos_id, Vocab.eos_id)]
    out = []

    def expand(stack, choices, n_word_steps):
        if len(choices) >= limit:
            return
        if not stack:
            out.append((choices + [g.eos_id], n_word_steps))
            return
        top = stack[-1]
        if top == PRE:
            for w in word_ids:
                rest = stack[:-1] if w == Vocab.eop_id else stack
                expand(rest, choices + [w], n_word_steps + 1)
            return
        for rid in range(1, len(g)):
            rule = g.rule(rid)
            if rule.lhs == top:
                expand(stack[:-1] + list(reversed(rule.rhs)), choices + [rid], n_word_steps)

    expand([g.start], [], 0)
    return out


def test_beam_matches_exhaustive_search(verdict, float64):
    with verdict("6 beam oracle"):
        g = grammar(ORACLE_RULES)
        for seed in range(5):
            model = tiny_trdec(ORACLE_RULES, n_words=5, hidden=8, embed=8, seed=seed)
            scale_params(model, 1.0, seed)
            src = [5, 6, 7]
            space = enumerate_derivations(g, model.tgt_vocab, ORACLE_LIMIT)
            assert 0 < len(space) <= 100
            scored = []
            for choices, n_words in space:
                logp = -loss_only(model, src, choices)
                scored.append((logp / n_words, choices))
            best_norm, best = max(scored)
            hyp = beam_decode(model, src, 100, max_steps=ORACLE_LIMIT)[0]
            assert model.gold_choices(canonical_derivation(hyp.tree, model.grammar)) == best
            assert hyp.normalized == pytest.approx(best_norm, abs=1e-9)


# 7 ---------------------------------------------------------------------------


def test_masked_softmax_is_exact(verdict):
    with verdict("7 masked softmax"):
        trees = build_targets(read_lines(DATA / "toy.en"), "con", read_bracketed_trees(DATA / "toy.en.trees"))
        sources = read_lines(DATA / "toy.src")
        model = make_model(Config(hidden=16, embed=16, seed=7), sources, trees)
        scale_params(model, 0.5, seed=7)
        checked = []
        propose = model.propose

        def recording(state, enc):
            pending = propose(state, enc)
            checked.append((pending.logp.data.copy(), pending.mask.copy()))
            return pending

        model.propose = recording
        for s in sources[:10]:
            ids = model.src_vocab.encode(s)
            for decode in (lambda: greedy_decode(model, ids), lambda: beam_decode(model, ids, 4)):
                try:
                    decode()
                except TruncationError:
                    pass
        assert len(checked) > 100
        for logp, mask in checked:
            p = np.exp(logp.astype(np.float64))
            assert (p[~mask] == 0.0).all()
            assert abs(p[mask].sum() - 1.0) <= 1e-6


# 8 ---------------------------------------------------------------------------


def test_bleu_sanity(verdict):
    with verdict("8 BLEU sanity"):
        refs = [s for s in read_lines(DATA / "toy.en")]
        assert bleu(refs, refs).bleu == 100.0
        rep = bleu(["the the the the"], ["the cat sat down"])
        assert rep.precisions[0] == 0.25
        rng = random.Random(8)
        hyps = [[w for w in r if rng.random() < 0.9] or r[:1] for r in refs]
        total = BleuStats()
        for _, _, stats in bleu_by_length(hyps, refs, (4, 6, 8)).values():
            total = total + stats
        assert report(total).bleu == bleu(hyps, refs).bleu


# 9 ---------------------------------------------------------------------------


def test_bpe_round_trip(verdict):
    with verdict("9 BPE round trip"):
        rng = random.Random(9)
        sents = [random_sentence(rng, 1, 15) for _ in range(1000)]
        model = bpe_learn(sents, 300)
        for s in sents:
            assert join_subwords(model.apply(s)) == s
        unseen = [random_sentence(rng, 1, 15) for _ in range(200)]
        for s in unseen:
            assert join_subwords(model.apply(s)) == s
        cat = BpeModel(CAT_MERGES).apply("The cat eats fish .".split())
        assert " ".join(cat) == "_The _cat _eat s _fi sh _."


# 10 --------------------------------------------------------------------------


def loss_log(tmp_path, run):
    sources = read_lines(DATA / "toy.src")[:6]
    en = read_lines(DATA / "toy.en")[:6]
    trees = build_targets(en, "con", read_bracketed_trees(DATA / "toy.en.trees")[:6], bpe_learn(en, 20))
    config = Config(hidden=16, embed=16, seed=5, dtype="float64", epochs=3, log_every=2, lr=0.005)
    model = make_model(config, sources, trees)
    lines = []
    train(model, make_examples(model, sources, trees), log=lines.append)
    path = tmp_path / f"run{run}.log"
    path.write_text("\n".join(lines) + "\n")
    return path.read_bytes()


def test_determinism(verdict, tmp_path):
    with verdict("10 determinism"):
        a, b = loss_log(tmp_path, 1), loss_log(tmp_path, 2)
        assert len(a.splitlines()) == 3 + 9  # epoch lines plus every second update
        assert a == b


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
