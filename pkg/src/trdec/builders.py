"""Target tree variants: constituency, null-tag constituency, dependency, balanced binary."""
from __future__ import annotations

import enum
from typing import Sequence

from .corpus import BpeModel, DependencyError, DependencyTree
from .tree import NULL_TAG, ROOT, Kind, Tree, TreeError, form_preterminals, wrap_root


class TreeVariant(enum.Enum):
    CONSTITUENCY_FULL = "con"
    CONSTITUENCY_NULL = "con-null"
    DEPENDENCY = "dep"
    BINARY_CONCAT = "binary"


class NonProjectiveError(DependencyError):
    def __init__(self, sentence: int, arc1: tuple[int, int], arc2: tuple[int, int]):
        super().__init__(sentence, f"non-projective: arc {arc1[0]}->{arc1[1]} crosses arc {arc2[0]}->{arc2[1]}")
        self.arcs = (arc1, arc2)


def strip_tags(tree: Tree) -> Tree:
    """Replace every nonterminal tag except ROOT by the null tag."""

    def visit(spec):
        if isinstance(spec, str):
            return spec
        kind, label, kids = spec
        if kind is Kind.NONTERMINAL and label != ROOT:
            label = NULL_TAG
        return (kind, label, [visit(k) for k in kids])

    return Tree.build(visit(tree.to_spec()))


def _crossing_arc(dep: DependencyTree):
    arcs = [(h, d) for d, h in enumerate(dep.heads, start=1) if h != 0]
    for i, (h1, d1) in enumerate(arcs):
        lo1, hi1 = sorted((h1, d1))
        for h2, d2 in arcs[i + 1 :]:
            lo2, hi2 = sorted((h2, d2))
            if lo1 < lo2 < hi1 < hi2 or lo2 < lo1 < hi2 < hi1:
                return (h1, d1), (h2, d2)
    # crossing the root's projection line
    r = dep.root
    for h, d in arcs:
        lo, hi = sorted((h, d))
        if lo < r < hi:
            return (h, d), (0, r)
    return None


def dep_to_constituency(dep: DependencyTree, sentence: int = 0) -> Tree:
    """One null-tag node per word; each word sits in its own slot among its dependents."""
    dep.validate(sentence)

    def node(i):
        kids = sorted(dep.dependents(i) + [i])
        return (Kind.NONTERMINAL, NULL_TAG, [dep.tokens[i - 1] if k == i else node(k) for k in kids])

    tree = Tree.build(node(dep.root))
    if tree.leaves() != list(dep.tokens):
        crossing = _crossing_arc(dep)
        if crossing is None:  # pragma: no cover - leaf order only breaks on a crossing
            raise DependencyError(sentence, "conversion permutes word order")
        raise NonProjectiveError(sentence, *crossing)
    return tree


def make_tree_v1(words: Sequence, l: int, r: int):
    """Recursive halving over ``words[l..r]`` (inclusive).

    Items may be words (strings) or already-built subtree specs; returns a
    nested spec for `Tree.build`.
    """
    if l > r:
        raise ValueError(f"empty span: l={l} > r={r}")
    if l == r:
        return words[l]
    m = (l + r) // 2
    return (Kind.NONTERMINAL, NULL_TAG, [make_tree_v1(words, l, m), make_tree_v1(words, m + 1, r)])


def make_tree_v2(words: Sequence[str]):
    if not words:
        raise ValueError("make_tree_v2 needs at least one word")
    nodes = []
    i = 0
    while i < len(words) - 1:
        nodes.append((Kind.NONTERMINAL, NULL_TAG, [words[i], words[i + 1]]))
        i += 2
    if i != len(words):
        nodes.append(words[i])
    return make_tree_v1(nodes, 0, len(nodes) - 1)


def binary_v1(words: Sequence[str]) -> Tree:
    return Tree.build(make_tree_v1(list(words), 0, len(words) - 1))


def binary_v2(words: Sequence[str]) -> Tree:
    return Tree.build(make_tree_v2(list(words)))


def build_targets(
    corpus: Sequence[Sequence[str]],
    variant: TreeVariant | str,
    trees: Sequence | None = None,
    bpe: BpeModel | None = None,
) -> list[Tree]:
    """Turn word-level targets into ROOT-wrapped training trees.

    `trees` holds parsed constituency `Tree`s for the constituency variants
    and `DependencyTree`s for the dependency variant.  Each output tree's
    leaves are the BPE segmentation of its sentence.
    """
    variant = TreeVariant(variant)

    def finish(t: Tree) -> Tree:
        return wrap_root(form_preterminals(t, bpe))

    if variant is TreeVariant.BINARY_CONCAT:
        out = []
        for words in corpus:
            out.append(finish(binary_v1(words)))
            out.append(finish(binary_v2(words)))
        return out

    if trees is None:
        raise ValueError(f"variant {variant.value} needs parsed trees")
    if len(trees) != len(corpus):
        raise ValueError(f"alignment mismatch: {len(corpus)} sentences but {len(trees)} trees")
    out = []
    for n, (words, t) in enumerate(zip(corpus, trees), start=1):
        if variant is TreeVariant.DEPENDENCY:
            t = dep_to_constituency(t, n)
        if t[t.root].label == ROOT and len(t[t.root].children) == 1:
            t = Tree.build(t.to_spec(t[t.root].children[0]))
        if t.leaves() != list(words):
            raise TreeError(f"sentence {n}: tree leaves do not match the target sentence")
        t = finish(t)
        if variant is TreeVariant.CONSTITUENCY_NULL:
            t = strip_tags(t)
        out.append(t)
    return out
