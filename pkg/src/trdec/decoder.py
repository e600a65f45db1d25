"""TrDec: a rule RNN and a word RNN that jointly generate a target tree.

Every time step advances the rule RNN.  When the opening symbol is a
nonterminal the rule RNN's output picks a grammar rule (softmax masked to
rules whose LHS is that symbol, or to ``<eos>`` once nothing is open);
when it is ``pre`` the word RNN also advances and picks a subword or
``<eop>``.  A flat attention seq2seq model with the same interface serves
as the baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import Config
from .corpus import Vocab
from .nn import Attention, Embedding, Encoder, EncoderOutput, LstmCell, Params, Linear
from .tree import (
    EOP,
    PRE,
    SENTINEL,
    Derivation,
    DerivationError,
    Grammar,
    GrammarError,
    Step,
    StepKind,
    Tree,
    TreeError,
    canonical_derivation,
    delinearize,
    is_bracket_token,
    replay_derivation,
)

START, RULE, WORD = "start", "rule", "word"


class TruncationError(RuntimeError):
    """Decoding hit the step or depth limit; carries what was built so far."""

    def __init__(self, msg: str, partial_tree: Tree | None = None, steps: list | None = None):
        super().__init__(msg)
        self.partial_tree = partial_tree
        self.steps = steps or []


# ---------------------------------------------------------------------------
# decoder state


@dataclass
class DecoderState:
    rule_state: tuple[Tensor, Tensor]
    word_state: tuple[Tensor, Tensor]
    last_word_state: Tensor
    ctx: Tensor
    open_stack: list[tuple[str, int, int]]  # (symbol, parent step, depth), top last
    step_states: list[Tensor]                # rule-RNN h per step; index 0 is the initial state
    t: int = 0
    prev: tuple[str, int] = (START, 0)
    last_word: int = Vocab.sos_id
    phrase_open: bool = False
    finished: bool = False
    score: float = 0.0
    n_words: int = 0
    history: tuple | None = None             # linked list (previous, Step)
    # filled by `propose`
    pending: str | None = None
    logp: Tensor | None = None
    mask: np.ndarray | None = None

    def steps(self) -> list[Step]:
        out = []
        node = self.history
        while node is not None:
            node, s = node
            out.append(s)
        return out[::-1]

    @property
    def top(self) -> str | None:
        return self.open_stack[-1][0] if self.open_stack else None


def apply_rule(state: DecoderState, grammar: Grammar, rid: int) -> DecoderState:
    """Expand the opening nonterminal with rule `rid` (or close with ``<eos>``)."""
    stack = list(state.open_stack)
    if rid == grammar.eos_id:
        if stack:
            raise GrammarError(f"<eos> while {stack[-1][0]} is open")
        parent, finished = SENTINEL, True
    else:
        if not stack:
            raise GrammarError("apply_rule on an empty stack")
        rule = grammar.rule(rid)
        sym, parent, depth = stack.pop()
        if sym != rule.lhs:
            raise GrammarError(f"rule {rule} applied to open symbol {sym}")
        t = state.t + 1
        stack.extend((s, t, depth + 1) for s in reversed(rule.rhs))
        finished = False
    return replace(
        state,
        open_stack=stack,
        t=state.t + 1,
        prev=(RULE, rid),
        finished=finished,
        history=(state.history, Step(StepKind.RULE, rid, parent)),
        pending=None,
        logp=None,
        mask=None,
    )


# ---------------------------------------------------------------------------
# TrDec


class TrdecModel:
    mode = "trdec"

    def __init__(self, grammar: Grammar, src_vocab: Vocab, tgt_vocab: Vocab, config: Config | None = None):
        self.config = config or Config()
        self.grammar = grammar
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        H, E = self.config.hidden, self.config.embed
        self.params = Params(self.config.seed)
        p = self.params
        self.encoder = Encoder(p, len(src_vocab), E, H)
        # last row is the start-of-derivation input
        self.rule_embed = Embedding(p, "decoder.rule_embed", len(grammar) + 1, E)
        self.word_embed = Embedding(p, "decoder.word_embed", len(tgt_vocab), E)
        self.rule_rnn = LstmCell(p, "decoder.rule", E + 2 * H + H + H, H)
        self.word_rnn = LstmCell(p, "decoder.word", H + E + 2 * H, H)
        self.attention = Attention(p, "decoder.attention", H, 2 * H)
        self.w_rule = Linear(p, "decoder.w_rule", 2 * H, len(grammar), bias=False)
        self.w_word = Linear(p, "decoder.w_word", 2 * H, len(tgt_vocab), bias=False)
        self.word_mask = np.ones(len(tgt_vocab), dtype=bool)
        self.word_mask[[Vocab.pad_id, Vocab.sos_id, Vocab.eos_id]] = False
        self._rule_masks: dict[str | None, np.ndarray] = {}

    # -- masks

    def rule_mask(self, open_symbol: str | None) -> np.ndarray:
        m = self._rule_masks.get(open_symbol)
        if m is None:
            legal = self.grammar.legal(open_symbol)
            if not legal:
                raise GrammarError(f"no rule expands {open_symbol}")
            m = np.zeros(len(self.grammar), dtype=bool)
            m[legal] = True
            self._rule_masks[open_symbol] = m
        return m

    # -- generation steps

    def encode(self, src: Sequence[int]) -> EncoderOutput:
        return self.encoder(src)

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        h0 = enc.final_state
        c0 = ad.constant(np.zeros(self.config.hidden))
        zero_h = ad.constant(np.zeros(self.config.hidden))
        return DecoderState(
            rule_state=(h0, c0),
            word_state=(h0, c0),
            last_word_state=zero_h,
            ctx=ad.constant(np.zeros(2 * self.config.hidden)),
            open_stack=[(self.grammar.start, SENTINEL, 0)],
            step_states=[h0],
        )

    def _prev_embedding(self, state: DecoderState) -> Tensor:
        kind, idx = state.prev
        if kind == START:
            return self.rule_embed(len(self.grammar))
        if kind == RULE:
            return self.rule_embed(idx)
        return self.word_embed(idx)

    def _advance_rule_rnn(self, state: DecoderState, s_parent: Tensor):
        x = ad.concat([self._prev_embedding(state), state.ctx, s_parent, state.last_word_state])
        return self.rule_rnn(x, state.rule_state)

    def rule_step(self, state: DecoderState, enc: EncoderOutput) -> DecoderState:
        """Advance for a rule decision; returns a pending state holding masked log-probs."""
        if state.top == PRE:
            raise DerivationError("rule_step called while a preterminal is open")
        parent = state.open_stack[-1][1] if state.open_stack else SENTINEL
        rule_h, rule_c = self._advance_rule_rnn(state, state.step_states[parent])
        logits = self.w_rule(ad.tanh(ad.concat([rule_h, state.last_word_state])))
        mask = self.rule_mask(state.top)
        ctx, _ = self.attention(rule_h, enc)
        return replace(
            state,
            rule_state=(rule_h, rule_c),
            ctx=ctx,
            step_states=state.step_states + [rule_h],
            pending=RULE,
            logp=ad.log_softmax_masked(logits, mask),
            mask=mask,
        )

    def word_step(self, state: DecoderState, enc: EncoderOutput) -> DecoderState:
        if state.top != PRE:
            raise DerivationError(f"word_step called while open symbol is {state.top}")
        s_parent = state.step_states[state.open_stack[-1][1]]
        rule_h, rule_c = self._advance_rule_rnn(state, s_parent)
        word_state = state.word_state
        if not state.phrase_open and self.config.word_init == "phrase":
            word_state = (state.step_states[0], ad.constant(np.zeros(self.config.hidden)))
        x = ad.concat([s_parent, self.word_embed(state.last_word), state.ctx])
        word_h, word_c = self.word_rnn(x, word_state)
        logits = self.w_word(ad.tanh(ad.concat([rule_h, word_h])))
        ctx, _ = self.attention(word_h, enc)
        return replace(
            state,
            rule_state=(rule_h, rule_c),
            word_state=(word_h, word_c),
            ctx=ctx,
            step_states=state.step_states + [rule_h],
            pending=WORD,
            logp=ad.log_softmax_masked(logits, self.word_mask),
            mask=self.word_mask,
        )

    def propose(self, state: DecoderState, enc: EncoderOutput) -> DecoderState:
        return self.word_step(state, enc) if state.top == PRE else self.rule_step(state, enc)

    def emit_word(self, state: DecoderState, wid: int) -> DecoderState:
        if state.top != PRE:
            raise DerivationError("emit_word without an open preterminal")
        stack = list(state.open_stack)
        parent = stack[-1][1]
        phrase_open = True
        if wid == Vocab.eop_id:
            stack.pop()
            phrase_open = False
        word = self.tgt_vocab.itos[wid]
        return replace(
            state,
            open_stack=stack,
            t=state.t + 1,
            prev=(WORD, wid),
            last_word=wid,
            last_word_state=state.word_state[0],
            phrase_open=phrase_open,
            n_words=state.n_words + 1,
            history=(state.history, Step(StepKind.WORD, word, parent)),
            pending=None,
            logp=None,
            mask=None,
        )

    def commit(self, pending: DecoderState, choice: int) -> DecoderState:
        if pending.pending == RULE:
            return apply_rule(pending, self.grammar, choice)
        if pending.pending == WORD:
            return self.emit_word(pending, choice)
        raise DerivationError("commit without a proposed distribution")

    def depth_ok(self, state: DecoderState) -> bool:
        return not state.open_stack or max(d for _, _, d in state.open_stack) <= self.config.max_depth

    # -- gold data

    def gold_choices(self, deriv: Derivation) -> list[int]:
        return [s.value if s.is_rule else self.tgt_vocab.id(s.value) for s in deriv.steps]

    def gold_derivation(self, tree: Tree) -> Derivation:
        return canonical_derivation(tree, self.grammar)

    def output(self, state: DecoderState):
        steps = state.steps()
        tree = replay_derivation(Derivation(steps), self.grammar)
        return tree, tree.leaves()

    def partial_tree(self, state: DecoderState) -> Tree:
        from .tree import Automaton

        auto = Automaton(self.grammar)
        for s in state.steps():
            auto.step(s)
        return auto.tree()


# ---------------------------------------------------------------------------
# flat seq2seq baseline


@dataclass
class FlatState:
    word_state: tuple[Tensor, Tensor]
    ctx: Tensor
    t: int = 0
    last_word: int = Vocab.sos_id
    finished: bool = False
    score: float = 0.0
    n_words: int = 0
    history: tuple | None = None
    pending: str | None = None
    logp: Tensor | None = None
    mask: np.ndarray | None = None
    h_out: Tensor | None = None

    def steps(self) -> list[int]:
        out = []
        node = self.history
        while node is not None:
            node, w = node
            out.append(w)
        return out[::-1]


class Seq2SeqModel:
    """Encoder, one LSTM decoder with input feeding, attention; targets end in ``<eos>``."""

    mode = "seq2seq"

    def __init__(self, src_vocab: Vocab, tgt_vocab: Vocab, config: Config | None = None):
        self.config = config or Config(mode="seq2seq")
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.grammar = None
        H, E = self.config.hidden, self.config.embed
        self.params = Params(self.config.seed)
        p = self.params
        self.encoder = Encoder(p, len(src_vocab), E, H)
        self.word_embed = Embedding(p, "decoder.word_embed", len(tgt_vocab), E)
        self.word_rnn = LstmCell(p, "decoder.word", E + 2 * H, H)
        self.attention = Attention(p, "decoder.attention", H, 2 * H)
        self.w_word = Linear(p, "decoder.w_word", H, len(tgt_vocab), bias=False)
        self.word_mask = np.ones(len(tgt_vocab), dtype=bool)
        self.word_mask[[Vocab.pad_id, Vocab.sos_id, Vocab.eop_id]] = False

    def encode(self, src: Sequence[int]) -> EncoderOutput:
        return self.encoder(src)

    def initial_state(self, enc: EncoderOutput) -> FlatState:
        return FlatState(
            word_state=(enc.final_state, ad.constant(np.zeros(self.config.hidden))),
            ctx=ad.constant(np.zeros(2 * self.config.hidden)),
        )

    def propose(self, state: FlatState, enc: EncoderOutput) -> FlatState:
        x = ad.concat([self.word_embed(state.last_word), state.ctx])
        h, c = self.word_rnn(x, state.word_state)
        logits = self.w_word(ad.tanh(h))
        ctx, _ = self.attention(h, enc)
        return replace(
            state,
            word_state=(h, c),
            ctx=ctx,
            pending=WORD,
            logp=ad.log_softmax_masked(logits, self.word_mask),
            mask=self.word_mask,
        )

    def commit(self, pending: FlatState, wid: int) -> FlatState:
        return replace(
            pending,
            t=pending.t + 1,
            last_word=wid,
            finished=wid == Vocab.eos_id,
            n_words=pending.n_words + 1,
            history=(pending.history, wid),
            pending=None,
            logp=None,
            mask=None,
        )

    def depth_ok(self, state) -> bool:
        return True

    def gold_choices(self, target: Sequence[str]) -> list[int]:
        return self.tgt_vocab.encode(target) + [Vocab.eos_id]

    def output(self, state: FlatState):
        tokens = self.tgt_vocab.decode(w for w in state.steps() if w != Vocab.eos_id)
        if self.config.mode != "lin":
            return None, tokens
        # bracket tokens are structure, not output words
        try:
            tree = delinearize(tokens)
        except TreeError:
            tree = None
        return tree, [t for t in tokens if not is_bracket_token(t)]

    def partial_tree(self, state):
        return None


# ---------------------------------------------------------------------------
# training objective and search


def teacher_forced(model, src_ids: Sequence[int], gold: Sequence[int], trace: list | None = None):
    """Run the model along `gold` decisions.

    Returns the summed loss tensor and the number of steps whose argmax
    matched the gold decision.  With `trace` given, the open stack before
    each step is appended to it (TrDec only).
    """
    enc = model.encode(src_ids)
    state = model.initial_state(enc)
    losses = []
    correct = 0
    for choice in gold:
        if state.finished:
            raise DerivationError("gold derivation continues after it finished")
        if trace is not None:
            trace.append(tuple(s for s, _, _ in state.open_stack))
        pending = model.propose(state, enc)
        if not pending.mask[choice]:
            raise GrammarError(f"gold decision {choice} is illegal at step {state.t + 1}")
        losses.append(ad.cross_entropy(pending.logp, choice))
        correct += int(np.argmax(np.where(pending.mask, pending.logp.data, -np.inf)) == choice)
        state = model.commit(pending, choice)
    if not state.finished:
        raise DerivationError("gold derivation ended before <eos>")
    return ad.add_n(losses), correct


def train_step(model, src_ids: Sequence[int], gold: Sequence[int]) -> tuple[float, int]:
    """Loss and gradients for one example; gradients accumulate into the parameters."""
    with ad.Tape() as tape:
        loss, correct = teacher_forced(model, src_ids, gold)
        tape.backward(loss)
    return loss.item(), correct


def loss_only(model, src_ids, gold) -> float:
    loss, _ = teacher_forced(model, src_ids, gold)
    return loss.item()


@dataclass
class Hypothesis:
    tree: Tree | None
    words: list[str]
    score: float            # total log-probability
    normalized: float       # score / number of word steps
    steps: list = field(default_factory=list)


def _hypothesis(model, state) -> Hypothesis:
    tree, words = model.output(state)
    return Hypothesis(tree, words, state.score, state.score / max(1, state.n_words), state.steps())


def _limit(model, src_len: int, max_steps: int | None) -> int:
    return max_steps if max_steps is not None else model.config.max_steps(src_len)


def greedy_decode(model, src_ids: Sequence[int], max_steps: int | None = None) -> Hypothesis:
    enc = model.encode(src_ids)
    state = model.initial_state(enc)
    limit = _limit(model, len(src_ids), max_steps)
    while not state.finished:
        if state.t >= limit:
            raise TruncationError(f"step limit {limit} reached", model.partial_tree(state), state.steps())
        pending = model.propose(state, enc)
        logp = np.where(pending.mask, pending.logp.data, -np.inf)
        choice = int(np.argmax(logp))
        state = model.commit(pending, choice)
        state.score = pending.score + float(logp[choice])
        if not model.depth_ok(state):
            raise TruncationError(
                f"depth limit {model.config.max_depth} exceeded", model.partial_tree(state), state.steps()
            )
    return _hypothesis(model, state)


def beam_decode(model, src_ids: Sequence[int], beam_size: int, max_steps: int | None = None,
                nbest: int | None = None) -> list[Hypothesis]:
    """Beam search over interleaved steps, pruning on total log-probability.

    Finished hypotheses are ranked by log-probability per word step.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    enc = model.encode(src_ids)
    limit = _limit(model, len(src_ids), max_steps)
    beam = [model.initial_state(enc)]
    finished = []
    while beam and len(finished) < beam_size:
        candidates = []
        for b, state in enumerate(beam):
            if state.t >= limit:
                continue
            pending = model.propose(state, enc)
            logp = np.where(pending.mask, pending.logp.data, -np.inf)
            legal = np.flatnonzero(pending.mask)
            order = legal[np.argsort(-logp[legal], kind="stable")][:beam_size]
            for c in order:
                candidates.append((state.score + float(logp[c]), b, int(c), pending))
        if not candidates:
            break
        candidates.sort(key=lambda x: (-x[0], x[1], x[2]))
        beam = []
        for score, _, c, pending in candidates[:beam_size]:
            state = model.commit(pending, c)
            state.score = score
            if not model.depth_ok(state):
                continue
            (finished if state.finished else beam).append(state)
    if not finished:
        best = max(beam, key=lambda s: s.score) if beam else None
        raise TruncationError(
            f"no hypothesis finished within {limit} steps",
            model.partial_tree(best) if best is not None else None,
            best.steps() if best is not None else [],
        )
    hyps = [_hypothesis(model, s) for s in finished]
    hyps.sort(key=lambda h: -h.normalized)
    return hyps[: nbest or beam_size]


# ---------------------------------------------------------------------------
# persistence


def build_model(meta: dict):
    config = Config(**meta["config"])
    src_vocab = Vocab(meta["src_vocab"][5:])
    tgt_vocab = Vocab(meta["tgt_vocab"][5:])
    if meta["mode"] == "trdec":
        return TrdecModel(Grammar.loads(meta["grammar"]), src_vocab, tgt_vocab, config)
    return Seq2SeqModel(src_vocab, tgt_vocab, config)


def model_meta(model, extra: dict | None = None) -> dict:
    import dataclasses

    meta = {
        "mode": model.mode,
        "config": dataclasses.asdict(model.config),
        "src_vocab": model.src_vocab.itos,
        "tgt_vocab": model.tgt_vocab.itos,
        "grammar": model.grammar.dumps() if model.grammar is not None else None,
    }
    meta.update(extra or {})
    return meta


def save_model(model, path, extra: dict | None = None) -> None:
    tensors = model.params.state_dict()
    blob = json.dumps(model_meta(model, extra)).encode("utf-8")
    tensors["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
    ad.save_tensors(path, tensors)


def load_model(path):
    tensors = ad.load_tensors(path)
    meta = json.loads(tensors.pop("__meta__").tobytes().decode("utf-8"))
    config = meta["config"]
    ad.set_default_dtype(config.get("dtype", "float32"))
    model = build_model(meta)
    model.params.load_state_dict(tensors)
    model.meta = meta
    return model
