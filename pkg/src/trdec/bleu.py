"""Corpus BLEU-4 and the length analyses (gain per reference-length bucket, length-difference histogram)."""
from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field
from typing import Sequence

DEFAULT_BUCKETS = (10, 20, 30, 40)


@dataclass
class BleuStats:
    """Aggregated sufficient statistics; BLEU is computed from these only."""

    matches: list[int] = field(default_factory=lambda: [0] * 4)
    totals: list[int] = field(default_factory=lambda: [0] * 4)
    hyp_len: int = 0
    ref_len: int = 0

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.totals, other.totals)],
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    ratio: float
    hyp_len: int
    ref_len: int

    def lines(self) -> list[str]:
        out = [f"bleu\t{self.bleu:.2f}"]
        out += [f"p{n}\t{p * 100:.2f}" for n, p in enumerate(self.precisions, start=1)]
        out += [f"bp\t{self.brevity_penalty:.4f}", f"ratio\t{self.ratio:.4f}",
                f"hyp_len\t{self.hyp_len}", f"ref_len\t{self.ref_len}"]
        return out


def _ngrams(tokens: Sequence[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp: Sequence[str], ref: Sequence[str]) -> BleuStats:
    s = BleuStats(hyp_len=len(hyp), ref_len=len(ref))
    for n in range(1, 5):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        s.matches[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        s.totals[n - 1] = max(0, len(hyp) - n + 1)
    return s


def corpus_stats(hyps, refs) -> BleuStats:
    hyps, refs = _check(hyps, refs)
    total = BleuStats()
    for h, r in zip(hyps, refs):
        total = total + sentence_stats(h, r)
    return total


def report(stats: BleuStats) -> BleuReport:
    precisions = [m / t if t else 0.0 for m, t in zip(stats.matches, stats.totals)]
    if stats.hyp_len == 0:
        bp = 0.0
    elif stats.hyp_len >= stats.ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - stats.ref_len / stats.hyp_len)
    if min(precisions) > 0:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / 4)
    else:
        score = 0.0
    ratio = stats.hyp_len / stats.ref_len if stats.ref_len else 0.0
    return BleuReport(min(score, 100.0), precisions, bp, ratio, stats.hyp_len, stats.ref_len)


def _tok(s):
    return s.split() if isinstance(s, str) else list(s)


def _check(hyps, refs):
    hyps, refs = [_tok(h) for h in hyps], [_tok(r) for r in refs]
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ValueError("empty hypothesis set")
    return hyps, refs


def bleu(hyps, refs) -> BleuReport:
    """Corpus BLEU-4 over whitespace tokens, single reference, no smoothing."""
    return report(corpus_stats(hyps, refs))


def bucket_of(length: int, edges: Sequence[int]) -> int:
    """Bucket index for a reference length; `edges` are inclusive upper bounds."""
    for i, e in enumerate(edges):
        if length <= e:
            return i
    return len(edges)


def bucket_labels(edges: Sequence[int]) -> list[str]:
    labels, lo = [], 1
    for e in edges:
        labels.append(f"{lo}-{e}")
        lo = e + 1
    labels.append(f"{lo}+")
    return labels


def bleu_by_length(hyps, refs, edges: Sequence[int] = DEFAULT_BUCKETS) -> dict[str, tuple[int, BleuReport | None, BleuStats]]:
    """Per reference-length bucket: (sentence count, BLEU report or None if empty, stats)."""
    hyps, refs = _check(hyps, refs)
    labels = bucket_labels(edges)
    stats = [BleuStats() for _ in labels]
    counts = [0] * len(labels)
    for h, r in zip(hyps, refs):
        b = bucket_of(len(r), edges)
        stats[b] = stats[b] + sentence_stats(h, r)
        counts[b] += 1
    return {lab: (n, report(s) if n else None, s) for lab, n, s in zip(labels, counts, stats)}


def length_diff_histogram(hyps, refs) -> dict[int, int]:
    hyps, refs = _check(hyps, refs)
    return dict(sorted(collections.Counter(len(h) - len(r) for h, r in zip(hyps, refs)).items()))


def gain_table(hyps, baseline, refs, edges: Sequence[int] = DEFAULT_BUCKETS) -> list[tuple[str, int, float, float, float]]:
    """(bucket, count, system BLEU, baseline BLEU, gain) rows."""
    sys_b = bleu_by_length(hyps, refs, edges)
    base_b = bleu_by_length(baseline, refs, edges)
    rows = []
    for lab, (n, rep, _) in sys_b.items():
        base = base_b[lab][1]
        s = rep.bleu if rep else 0.0
        b = base.bleu if base else 0.0
        rows.append((lab, n, s, b, s - b))
    return rows
