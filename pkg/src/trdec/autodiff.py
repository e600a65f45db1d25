"""Small reverse-mode autodiff over numpy arrays.

Operations executed inside an active `Tape` are recorded in creation
order, which is already a topological order; `Tape.backward` walks that
record in reverse.  Outside a tape nothing is recorded, which is what
decoding uses.
"""
from __future__ import annotations

import struct
import zlib
from typing import Iterable, Sequence

import numpy as np

_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


def default_dtype():
    return _DTYPE


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=_DTYPE) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, item):
        return slice_(self, item)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DTYPE))


class Tape:
    """Records differentiable operations while active (``with Tape() as tape``)."""

    current: "Tape | None" = None

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = Tape.current
        Tape.current = self
        return self

    def __exit__(self, *exc) -> None:
        Tape.current = self._prev

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                # never in-place: gradient arrays may be shared between parents
                parent.grad = g if parent.grad is None else parent.grad + g
            # intermediate gradients are no longer needed
            node.grad = None


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = Tape.current
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        tape.nodes.append(out)
    return out


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def sum_(x: Tensor) -> Tensor:
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    data = xs[0].data.copy()
    for x in xs[1:]:
        data = data + x.data
    return _record(data, tuple(xs), lambda g: tuple(g for _ in xs))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0 if b.data.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:  # (n,) @ (n, m)
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:  # (k, n) @ (n,)
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), backward)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate vectors (or arrays along their last axis)."""
    xs = [_t(x) for x in xs]
    lead = {x.shape[:-1] for x in xs}
    if len(lead) != 1:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}")
    sizes = [x.shape[-1] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., offsets[i] : offsets[i + 1]] for i in range(len(xs)))

    return _record(np.concatenate([x.data for x in xs], axis=-1), tuple(xs), backward)


def stack(xs: Sequence[Tensor]) -> Tensor:
    xs = [_t(x) for x in xs]
    if len({x.shape for x in xs}) != 1:
        raise ShapeError(f"stack: incompatible shapes {[x.shape for x in xs]}")
    return _record(np.stack([x.data for x in xs]), tuple(xs), lambda g: tuple(g[i] for i in range(len(xs))))


def slice_(x: Tensor, item) -> Tensor:
    out = x.data[item]

    def backward(g):
        full = np.zeros_like(x.data)
        full[item] += g
        return (full,)

    return _record(np.array(out), (x,), backward)


def embedding_lookup(table: Tensor, idx: int) -> Tensor:
    if not 0 <= idx < table.shape[0]:
        raise ShapeError(f"embedding_lookup: id {idx} out of range for table {table.shape}")

    def backward(g):
        # rows are accumulated sparsely straight into the table's gradient;
        # tables must only be read through embedding_lookup
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        table.grad[idx] += g
        return (None,)

    return _record(table.data[idx].copy(), (table,), backward)


# ---------------------------------------------------------------------------
# probabilities


def _check_mask(mask, n):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"softmax_masked: mask shape {mask.shape} does not match logits ({n},)")
    if not mask.any():
        raise ValueError("softmax_masked: mask allows no entries")
    return mask


def _masked_softmax_np(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    p = np.zeros_like(z)
    zm = z[mask]
    e = np.exp(zm - zm.max())
    p[mask] = e / e.sum()
    return p


def softmax(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(z - z.max())
    p = e / e.sum()
    return _record(p, (x,), lambda g: (p * (g - (g * p).sum()),))


def softmax_masked(x: Tensor, mask) -> Tensor:
    """Softmax restricted to ``mask``; masked entries get exactly 0 probability and gradient."""
    mask = _check_mask(mask, x.shape[0])
    p = _masked_softmax_np(x.data, mask)
    return _record(p, (x,), lambda g: (p * (g - (g * p).sum()),))


def log_softmax_masked(x: Tensor, mask=None) -> Tensor:
    z = x.data
    if mask is None:
        mask = np.ones(z.shape[0], dtype=bool)
    else:
        mask = _check_mask(mask, z.shape[0])
    zm = z[mask]
    m = zm.max()
    lse = m + np.log(np.exp(zm - m).sum())
    out = np.full_like(z, -np.inf)
    out[mask] = zm - lse
    p = np.where(mask, np.exp(out), 0.0).astype(z.dtype)

    def backward(g):
        gm = np.where(mask, g, 0.0)
        return ((gm - p * gm.sum()).astype(z.dtype),)

    return _record(out, (x,), backward)


def cross_entropy(logp: Tensor, target: int) -> Tensor:
    """Negative log-probability of `target` under log-probabilities `logp`."""
    if not np.isfinite(logp.data[target]):
        raise ValueError(f"cross_entropy: target {target} has zero probability")

    def backward(g):
        full = np.zeros_like(logp.data)
        full[target] = -g
        return (full,)

    return _record(np.asarray(-logp.data[target]), (logp,), backward)


# ---------------------------------------------------------------------------
# optimizers


def _check_finite(params):
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in {p.name or 'parameter'}")


def sgd_step(params: Iterable[Tensor], lr: float = 0.1, clip: float | None = None) -> None:
    params = list(params)
    _check_finite(params)
    scale = _clip_scale(params, clip)
    for p in params:
        if p.grad is not None:
            p.data -= (lr * scale) * p.grad


def _clip_scale(params, clip):
    if clip is None:
        return 1.0
    norm = np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None))
    return min(1.0, clip / norm) if norm > 0 else 1.0


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip: float | None = 5.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        _check_finite(self.params)
        scale = _clip_scale(self.params, self.clip)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def adam_step(params, state: Adam | None = None, **hyper) -> Adam:
    """Functional wrapper: one Adam update, creating the moment state on first use."""
    if state is None:
        state = Adam(params, **hyper)
    state.step()
    return state


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# seeded streams


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stream of one run seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"TRDECKPT"
VERSION = 1
_TAGS = {np.dtype(np.float32): b"f", np.dtype(np.float64): b"d", np.dtype(np.uint8): b"B", np.dtype(np.int64): b"q"}
_DTYPES = {v: k for k, v in _TAGS.items()}


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.require(np.asarray(arr), requirements="C")
            tag = _TAGS.get(arr.dtype)
            if tag is None:
                raise TypeError(f"cannot serialize dtype {arr.dtype} ({name})")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(tag)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if not buf.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (count,) = take("<I")
    out = {}
    for _ in range(count):
        (n,) = take("<I")
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        dtype = _DTYPES[buf[pos : pos + 1]]
        pos += 1
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=int(np.prod(shape, dtype=np.int64)), offset=pos)
        pos += nbytes
        out[name] = arr.astype(dtype).reshape(shape)
    return out
