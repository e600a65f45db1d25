"""Run configuration and its key-value file format (``key = value``, ``#`` comments)."""
import dataclasses
from dataclasses import dataclass


@dataclass
class Config:
    mode: str = "trdec"            # trdec | seq2seq | lin
    variant: str = "binary"        # con | con-null | dep | binary (informational for train)
    hidden: int = 256
    embed: int = 256
    optimizer: str = "adam"        # adam | sgd
    lr: float = 1e-3
    clip: float = 5.0
    epochs: int = 10
    batch_size: int = 1
    seed: int = 1
    dtype: str = "float32"
    max_steps_factor: int = 8
    max_depth: int = 64
    min_max_steps: int = 16
    word_init: str = "sentence"    # sentence | phrase
    src_vocab_size: int = 0        # 0 keeps every type
    tgt_vocab_size: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.mode not in ("trdec", "seq2seq", "lin"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.word_init not in ("sentence", "phrase"):
            raise ValueError(f"unknown word_init {self.word_init!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def max_steps(self, src_len: int) -> int:
        return max(self.min_max_steps, self.max_steps_factor * src_len)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def loads(cls, text: str) -> "Config":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise ValueError(f"config line {n}: unknown or malformed entry {line!r}")
            kind = types[key]
            kw[key] = kind(value)
        return cls(**kw)

    @classmethod
    def read(cls, path) -> "Config":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read())
