import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import random_parse, random_projective_deps, random_sentence
from trdec.builders import (
    NonProjectiveError,
    TreeVariant,
    binary_v1,
    binary_v2,
    build_targets,
    dep_to_constituency,
    make_tree_v1,
    make_tree_v2,
    strip_tags,
)
from trdec.corpus import DependencyTree, bpe_learn, join_subwords
from trdec.tree import NULL_TAG, Kind, Tree, canonical_derivation, extract_grammar, parse_bracket


def reference_v1(words):
    """Halving with the left part taking the extra word, written independently of make_tree_v1."""
    if len(words) == 1:
        return words[0]
    k = (len(words) + 1) // 2
    return f"({NULL_TAG} {reference_v1(words[:k])} {reference_v1(words[k:])})"


def test_v1_base_case():
    assert make_tree_v1(["a"], 0, 0) == "a"
    assert binary_v1(["a"])[0].kind is Kind.TERMINAL


def test_v1_three_words():
    assert binary_v1(list("abc")).to_bracket() == "(NULL (NULL a b) c)"


def test_v1_four_words():
    assert binary_v1(list("abcd")).to_bracket() == "(NULL (NULL a b) (NULL c d))"


def test_v1_empty_span():
    with pytest.raises(ValueError):
        make_tree_v1(["a"], 1, 0)


@pytest.mark.parametrize("n", range(1, 65))
def test_v1_matches_reference_and_is_balanced(n):
    words = [f"w{i}" for i in range(n)]
    t = binary_v1(words)
    assert t.to_bracket() == reference_v1(words)
    assert t.depth() == (n - 1).bit_length()  # ceil(log2 n)


def test_v2_pair():
    assert binary_v2(["a", "b"]).to_bracket() == "(NULL a b)"


def test_v2_five_words():
    assert binary_v2(list("abcde")).to_bracket() == "(NULL (NULL (NULL a b) (NULL c d)) e)"


def test_v2_empty():
    with pytest.raises(ValueError):
        make_tree_v2([])


@given(st.lists(st.sampled_from(["a", "b", "c", "dd"]), min_size=1, max_size=40))
def test_binary_leaves_in_order(words):
    assert binary_v1(words).leaves() == words
    assert binary_v2(words).leaves() == words


def test_strip_tags():
    t = parse_bracket("(ROOT (S (NP (pre a)) (VP (pre b))))")
    stripped = strip_tags(t)
    assert stripped.to_bracket() == "(ROOT (NULL (NULL (pre a)) (NULL (pre b))))"
    assert strip_tags(stripped) == stripped


def test_strip_tags_single_node():
    assert strip_tags(parse_bracket("(X (pre a))")).to_bracket() == "(NULL (pre a))"


def test_dep_single_word():
    t = dep_to_constituency(DependencyTree(["eats"], [0]))
    assert t.to_bracket() == "(NULL eats)"


def test_dep_conversion():
    dep = DependencyTree("The cat eats fish".split(), [2, 3, 0, 3])
    t = dep_to_constituency(dep)
    assert t.to_bracket() == "(NULL (NULL (NULL The) cat) eats (NULL fish))"
    assert t.leaves() == list(dep.tokens)


def test_dep_non_projective():
    # arcs 3->1 and 4->2 cross
    dep = DependencyTree(["w1", "w2", "w3", "w4"], [3, 4, 0, 3])
    with pytest.raises(NonProjectiveError) as err:
        dep_to_constituency(dep, sentence=7)
    assert err.value.sentence == 7
    assert set(err.value.arcs) == {(3, 1), (4, 2)}


def test_dep_crossing_root():
    dep = DependencyTree(["a", "b", "c"], [3, 0, 2])
    with pytest.raises(NonProjectiveError):
        dep_to_constituency(dep)


def test_nested_head_list_is_projective():
    # heads [3,1,0]: arc 1->2 is nested inside 3->1, so word order survives
    assert dep_to_constituency(DependencyTree("a b c".split(), [3, 1, 0])).leaves() == ["a", "b", "c"]


@given(st.integers(0, 10**9))
def test_dep_node_count(seed):
    rng = random.Random(seed)
    words = random_sentence(rng)
    t = dep_to_constituency(random_projective_deps(rng, words))
    assert t.count(Kind.NONTERMINAL) == len(words)
    assert t.count(Kind.TERMINAL) == len(words)
    assert t.leaves() == words


def test_binary_concat_doubles():
    rng = random.Random(1)
    corpus = [random_sentence(rng) for _ in range(100)]
    assert len(build_targets(corpus, TreeVariant.BINARY_CONCAT)) == 200


def test_binary_concat_single_word():
    a, b = build_targets([["w"]], "binary")
    assert a == b
    assert a.to_bracket() == "(ROOT (NULL (pre w)))"


def test_binary_subwords_sit_under_word_preterminals():
    bpe = bpe_learn([["catalog", "cat"]], 3)
    (v1, _) = build_targets([["catalog", "dog"]], "binary", bpe=bpe)
    pres = [v1.leaves_of(i) for i in v1.preorder() if v1[i].kind is Kind.PRETERMINAL]
    assert pres == [bpe.apply(["catalog"]), bpe.apply(["dog"])]


def test_alignment_mismatch():
    with pytest.raises(ValueError, match="alignment"):
        build_targets([["a"], ["b"]], "con", [parse_bracket("(X a)")])


@given(st.integers(0, 10**9))
@settings(max_examples=60)
def test_every_variant_is_valid(seed):
    rng = random.Random(seed)
    words = random_sentence(rng)
    bpe = bpe_learn([words], 5)
    parse = random_parse(rng, words)
    deps = random_projective_deps(rng, words)
    outputs = (
        build_targets([words], "con", [parse], bpe)
        + build_targets([words], "con-null", [parse], bpe)
        + build_targets([words], "dep", [deps], bpe)
        + build_targets([words], "binary", None, bpe)
    )
    for t in outputs:
        t.validate()
        assert join_subwords(t.leaves()) == words
        assert t[t.root].label == "ROOT"
    # tag stripping never changes the derivation length
    con, null = outputs[0], outputs[1]
    assert len(canonical_derivation(con, extract_grammar([con]))) == len(
        canonical_derivation(null, extract_grammar([null]))
    )
    assert build_targets([words], "dep", [deps], bpe) == build_targets([words], "dep", [deps], bpe)
