"""Model construction from data and the MLE training loop."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from . import autodiff as ad
from .config import Config
from .corpus import build_vocab
from .decoder import Seq2SeqModel, TrdecModel, loss_only, teacher_forced, train_step
from .tree import Tree, canonical_derivation, extract_grammar, linearize


@dataclass
class Example:
    src: list[int]
    gold: list[int]
    target: Tree | list[str]


def flat_target(config: Config, target) -> list[str]:
    if config.mode == "lin":
        return linearize(target)
    return target.leaves() if isinstance(target, Tree) else list(target)


def make_model(config: Config, sources: Sequence[Sequence[str]], targets: Sequence):
    """Build vocabularies (and for TrDec the grammar) from training data.

    `targets` are formed trees for ``trdec`` and ``lin`` modes; flat
    subword lists are also accepted for ``seq2seq``.
    """
    ad.set_default_dtype(config.dtype)
    src_vocab = build_vocab(sources, config.src_vocab_size or None)
    if config.mode == "trdec":
        tgt_vocab = build_vocab([t.leaves() for t in targets], config.tgt_vocab_size or None)
        return TrdecModel(extract_grammar(targets), src_vocab, tgt_vocab, config)
    flat = [flat_target(config, t) for t in targets]
    tgt_vocab = build_vocab(flat, config.tgt_vocab_size or None)
    return Seq2SeqModel(src_vocab, tgt_vocab, config)


def make_examples(model, sources: Sequence[Sequence[str]], targets: Sequence) -> list[Example]:
    out = []
    for src, tgt in zip(sources, targets):
        src_ids = model.src_vocab.encode(src)
        if model.mode == "trdec":
            gold = model.gold_choices(canonical_derivation(tgt, model.grammar))
        else:
            gold = model.gold_choices(flat_target(model.config, tgt))
        out.append(Example(src_ids, gold, tgt))
    return out


def make_optimizer(model, config: Config):
    if config.optimizer == "adam":
        return ad.Adam(model.params, lr=config.lr, clip=config.clip)
    params = list(model.params)

    class _Sgd:
        def step(self):
            ad.sgd_step(params, lr=config.lr, clip=config.clip)

    return _Sgd()


def evaluate_loss(model, examples: Sequence[Example]) -> float:
    return sum(loss_only(model, ex.src, ex.gold) for ex in examples)


def step_accuracy(model, examples: Sequence[Example]) -> float:
    """Teacher-forced fraction of steps whose argmax equals the gold decision."""
    correct = total = 0
    for ex in examples:
        _, c = teacher_forced(model, ex.src, ex.gold)
        correct += c
        total += len(ex.gold)
    return correct / max(1, total)


def train(
    model,
    examples: Sequence[Example],
    epochs: int | None = None,
    dev: Sequence[Example] | None = None,
    log: Callable[[str], None] | None = None,
    stop: Callable[[int, float], bool] | None = None,
) -> list[float]:
    """Shuffled MLE training with one optimizer update per `batch_size` examples.

    Returns the per-update training loss.  `stop(epoch, epoch_loss)` may end
    training early.
    """
    config = model.config
    epochs = config.epochs if epochs is None else epochs
    rng = ad.rng_stream(config.seed, "shuffle")
    opt = make_optimizer(model, config)
    params = list(model.params)
    history: list[float] = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            ad.zero_grad(params)
            batch_loss = 0.0
            for k in order[start : start + config.batch_size]:
                ex = examples[k]
                loss, _ = train_step(model, ex.src, ex.gold)
                batch_loss += loss
            opt.step()
            step += 1
            history.append(batch_loss)
            epoch_loss += batch_loss
            if log is not None and step % config.log_every == 0:
                log(f"{step}\t{batch_loss:.6f}\t")
        if log is not None:
            dev_loss = f"{evaluate_loss(model, dev):.6f}" if dev else ""
            log(f"{step}\t{epoch_loss:.6f}\t{dev_loss}")
        if stop is not None and stop(epoch, epoch_loss):
            break
    return history


def overfit_single(model, example: Example, steps: int) -> list[float]:
    """Repeated updates on one example (the loss curve used by convergence checks)."""
    opt = make_optimizer(model, model.config)
    params = list(model.params)
    curve = []
    for _ in range(steps):
        ad.zero_grad(params)
        loss, _ = train_step(model, example.src, example.gold)
        opt.step()
        curve.append(loss)
    return curve

