"""LSTM cell, bidirectional encoder, bilinear attention and parameter storage."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_SCALE = 0.1


class Params:
    """Flat, ordered store of named parameters (``encoder.fwd.w_ih`` ...)."""

    def __init__(self, seed: int = 1):
        self.seed = seed
        self.tensors: dict[str, Tensor] = {}

    def new(self, name: str, shape: Sequence[int], init: str = "uniform") -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        if init == "uniform":
            rng = ad.rng_stream(self.seed, name)
            data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=tuple(shape))
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = ad.parameter(data, name=name)
        self.tensors[name] = t
        return t

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.tensors) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, t in self.tensors.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} != model shape {t.shape}")
            t.data = state[k].astype(t.data.dtype)

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


class LstmCell:
    """Gate blocks are stacked in the order input, forget, cell, output."""

    def __init__(self, params: Params, prefix: str, input_size: int, hidden_size: int):
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.w_ih = params.new(f"{prefix}.w_ih", (4 * H, input_size))
        self.w_hh = params.new(f"{prefix}.w_hh", (4 * H, H))
        self.bias = params.new(f"{prefix}.bias", (4 * H,), init="zeros")
        self.bias.data[H : 2 * H] = 1.0

    def zero_state(self) -> tuple[Tensor, Tensor]:
        z = ad.constant(np.zeros(self.hidden_size))
        return z, z

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        return lstm_step(self, x, state)


def lstm_step(cell: LstmCell, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    h, c = state
    if x.shape != (cell.input_size,) or h.shape != (cell.hidden_size,) or c.shape != (cell.hidden_size,):
        raise ad.ShapeError(
            f"lstm_step: expected input ({cell.input_size},) and state ({cell.hidden_size},), "
            f"got {x.shape}, {h.shape}, {c.shape}"
        )
    H = cell.hidden_size
    gates = ad.add_n([ad.matmul(cell.w_ih, x), ad.matmul(cell.w_hh, h), cell.bias])
    sig = ad.sigmoid(gates)
    i, f, o = sig[0:H], sig[H : 2 * H], sig[3 * H : 4 * H]
    g = ad.tanh(gates[2 * H : 3 * H])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


class Linear:
    def __init__(self, params: Params, prefix: str, in_size: int, out_size: int, bias: bool = True):
        self.weight = params.new(f"{prefix}.weight", (out_size, in_size))
        self.bias = params.new(f"{prefix}.bias", (out_size,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(self.weight, x)
        return ad.add(y, self.bias) if self.bias is not None else y


class Embedding:
    def __init__(self, params: Params, name: str, num: int, dim: int):
        self.table = params.new(name, (num, dim))

    def __call__(self, idx: int) -> Tensor:
        return ad.embedding_lookup(self.table, idx)


@dataclass
class EncoderOutput:
    hidden_states: list[Tensor]  # per position, forward||backward, size 2H
    matrix: Tensor               # the same states stacked, (L, 2H)
    final_state: Tensor          # decoder initialization, size H

    def __len__(self) -> int:
        return len(self.hidden_states)


class Encoder:
    def __init__(self, params: Params, vocab_size: int, embed: int, hidden: int, tie_directions: bool = False):
        self.embed = Embedding(params, "encoder.embed", vocab_size, embed)
        self.fwd = LstmCell(params, "encoder.fwd", embed, hidden)
        self.bwd = self.fwd if tie_directions else LstmCell(params, "encoder.bwd", embed, hidden)
        self.bridge = Linear(params, "encoder.bridge", 2 * hidden, hidden)
        self.hidden = hidden

    def __call__(self, source: Sequence[int]) -> EncoderOutput:
        return encode(self, source)


def encode(enc: Encoder, source: Sequence[int]) -> EncoderOutput:
    if len(source) == 0:
        raise ValueError("encode: empty source sentence")
    xs = [enc.embed(i) for i in source]
    state = enc.fwd.zero_state()
    fwd = []
    for x in xs:
        state = enc.fwd(x, state)
        fwd.append(state[0])
    state = enc.bwd.zero_state()
    bwd = [None] * len(xs)
    for k in range(len(xs) - 1, -1, -1):
        state = enc.bwd(xs[k], state)
        bwd[k] = state[0]
    states = [ad.concat([f, b]) for f, b in zip(fwd, bwd)]
    final = ad.tanh(enc.bridge(ad.concat([fwd[-1], bwd[0]])))
    return EncoderOutput(states, ad.stack(states), final)


def encode_batch(enc: Encoder, sources: Sequence[Sequence[int]]) -> list[EncoderOutput]:
    return [encode(enc, s) for s in sources]


class Attention:
    """Bilinear scoring: score_j = q^T W e_j."""

    def __init__(self, params: Params, prefix: str, query_size: int, key_size: int):
        self.weight = params.new(f"{prefix}.weight", (query_size, key_size))

    def __call__(self, query: Tensor, enc: EncoderOutput) -> tuple[Tensor, Tensor]:
        return attend(self, query, enc)


def attend(att: Attention, query: Tensor, enc: EncoderOutput) -> tuple[Tensor, Tensor]:
    proj = ad.matmul(query, att.weight)
    scores = ad.matmul(enc.matrix, proj)
    weights = ad.softmax(scores)
    return ad.matmul(weights, enc.matrix), weights
