"""Corpus ingestion: parallel text, bracketed trees, CoNLL dependencies, BPE, vocabularies."""
from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .tree import EOP, EOS, Tree, TreeError, parse_bracket

MARKER = "_"

PAD, UNK, SOS = "<pad>", "<unk>", "<sos>"
RESERVED = (PAD, UNK, SOS, EOS, EOP)


class CorpusError(ValueError):
    pass


class DependencyError(ValueError):
    def __init__(self, sentence: int, msg: str):
        super().__init__(f"sentence {sentence}: {msg}")
        self.sentence = sentence


# ---------------------------------------------------------------------------
# parallel text


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    name: str = ""

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]


def read_lines(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def read_parallel(src_path, tgt_path, name: str = "") -> ParallelCorpus:
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise CorpusError(f"line-count mismatch: {src_path} has {len(src)} lines, {tgt_path} has {len(tgt)}")
    for side, lines, path in (("source", src, src_path), ("target", tgt, tgt_path)):
        for i, toks in enumerate(lines, start=1):
            if not toks:
                raise CorpusError(f"empty {side} sentence at {path}:{i}")
    return ParallelCorpus(list(zip(src, tgt)), name or Path(src_path).stem)


# ---------------------------------------------------------------------------
# BPE


def _word_symbols(word: str) -> list[str]:
    return [MARKER + word[0]] + list(word[1:])


@dataclass
class BpeModel:
    """Ordered merge list; word-initial pieces carry a ``_`` prefix."""

    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self._ranks = {m: i for i, m in enumerate(self.merges)}
        self._cache: dict[str, list[str]] = {}

    def segment_word(self, word: str) -> list[str]:
        if word in self._cache:
            return self._cache[word]
        syms = _word_symbols(word)
        while len(syms) > 1:
            pairs = [(self._ranks.get(p, len(self._ranks)), i) for i, p in enumerate(zip(syms, syms[1:]))]
            rank, _ = min(pairs)
            if rank == len(self._ranks):
                break
            a, b = self.merges[rank]
            merged, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            syms = merged
        self._cache[word] = syms
        return syms

    def apply(self, sentence: Sequence[str]) -> list[str]:
        return [piece for w in sentence for piece in self.segment_word(w)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for a, b in self.merges:
                f.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        merges = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2:
                    raise CorpusError(f"{path}:{n}: expected 'left right'")
                merges.append((parts[0], parts[1]))
        return cls(merges)


def join_subwords(pieces: Iterable[str]) -> list[str]:
    """Undo segmentation: a ``_``-prefixed piece starts a new word."""
    words: list[str] = []
    for p in pieces:
        if p.startswith(MARKER) or not words:
            words.append(p[len(MARKER):] if p.startswith(MARKER) else p)
        else:
            words[-1] += p
    return words


def bpe_learn(corpus: Iterable[Sequence[str]], num_merges: int) -> BpeModel:
    """Greedy merge learning; ties go to the lexicographically smallest pair."""
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    freqs = collections.Counter(w for sent in corpus for w in sent)
    if not freqs:
        raise CorpusError("cannot learn BPE from an empty corpus")
    vocab = {w: _word_symbols(w) for w in freqs}
    pair_counts: collections.Counter = collections.Counter()
    where: dict[tuple[str, str], set[str]] = collections.defaultdict(set)
    for w, syms in vocab.items():
        for p in zip(syms, syms[1:]):
            pair_counts[p] += freqs[w]
            where[p].add(w)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges:
        live = [(c, p) for p, c in pair_counts.items() if c > 0]
        if not live:
            break
        best_count = max(c for c, _ in live)
        best = min(p for c, p in live if c == best_count)
        merges.append(best)
        a, b = best
        for w in list(where.pop(best, ())):
            syms = vocab[w]
            f = freqs[w]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
            merged, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            vocab[w] = merged
            for p in zip(merged, merged[1:]):
                pair_counts[p] += f
                where[p].add(w)
        del pair_counts[best]
    return BpeModel(merges)


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Token <-> id map with five reserved ids at the front."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    pad_id, unk_id, sos_id, eos_id, eop_id = range(5)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int | None = None) -> Vocab:
    if max_size is not None and max_size <= len(RESERVED):
        raise ValueError(f"max_size must exceed the {len(RESERVED)} reserved tokens")
    counts = collections.Counter(t for sent in corpus for t in sent if t not in RESERVED)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[: max_size - len(RESERVED)]
    return Vocab(ranked)


# ---------------------------------------------------------------------------
# trees


def read_bracketed_trees(path) -> list[Tree]:
    trees = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                raise TreeError(f"line {n}: empty tree")
            trees.append(parse_bracket(line, n))
    return trees


def write_bracketed_trees(trees: Iterable[Tree], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(t.to_bracket() + "\n")


@dataclass(frozen=True)
class DependencyTree:
    """Words with 1-based head indices; head 0 marks the root."""

    tokens: tuple[str, ...]
    heads: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(self.heads))

    def validate(self, sentence: int = 0) -> None:
        n = len(self.tokens)
        if n == 0:
            raise DependencyError(sentence, "empty sentence")
        if len(self.heads) != n:
            raise DependencyError(sentence, "token and head counts differ")
        for i, h in enumerate(self.heads, start=1):
            if not 0 <= h <= n:
                raise DependencyError(sentence, f"head {h} of token {i} out of range [0, {n}]")
            if h == i:
                raise DependencyError(sentence, f"token {i} is its own head (cycle)")
        roots = [i for i, h in enumerate(self.heads, start=1) if h == 0]
        if len(roots) != 1:
            raise DependencyError(sentence, f"expected one root, found {len(roots)}")
        for i in range(1, n + 1):
            seen = set()
            j = i
            while j != 0:
                if j in seen:
                    raise DependencyError(sentence, f"cycle through token {j}")
                seen.add(j)
                j = self.heads[j - 1]

    @property
    def root(self) -> int:
        return self.heads.index(0) + 1

    def dependents(self, i: int) -> list[int]:
        return [d for d, h in enumerate(self.heads, start=1) if h == i]


def read_conll_deps(path) -> list[DependencyTree]:
    """Read blank-line separated blocks.

    Three tab-separated columns (index, form, head) or CoNLL-X style
    rows, where the head sits in the seventh column.
    """
    with open(path, encoding="utf-8") as f:
        text = f.read()
    out = []
    block: list[list[str]] = []
    lines = text.splitlines() + [""]
    for line in lines:
        if line.strip():
            if not line.startswith("#"):
                block.append(line.rstrip("\n").split("\t"))
            continue
        if not block:
            continue
        sent_no = len(out) + 1
        tokens, heads = [], []
        for k, cols in enumerate(block, start=1):
            if len(cols) < 3:
                raise DependencyError(sent_no, f"row {k} has {len(cols)} columns")
            head_col = 6 if len(cols) >= 7 else 2
            try:
                idx, head = int(cols[0]), int(cols[head_col])
            except ValueError:
                raise DependencyError(sent_no, f"row {k}: non-integer index or head") from None
            if idx != k:
                raise DependencyError(sent_no, f"row {k} has index {idx}")
            tokens.append(cols[1])
            heads.append(head)
        dep = DependencyTree(tokens, heads)
        dep.validate(sent_no)
        out.append(dep)
        block = []
    return out
