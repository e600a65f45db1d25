"""Central finite differences, kept separate from the tape it checks."""
import numpy as np

from trdec import autodiff as ad


def numeric_grad(loss_fn, param, eps=1e-4, index=None):
    flat = param.data.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        up = float(loss_fn().data)
        flat[i] = old - eps
        down = float(loss_fn().data)
        flat[i] = old
        out[i] = (up - down) / (2 * eps)
    return out.reshape(param.shape)


def analytic_grads(loss_fn, params):
    for p in params:
        p.grad = None
    with ad.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def relative_error(a, n):
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-10:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check(loss_fn, params, eps=1e-4):
    """Worst relative error (norm-wise, per parameter tensor)."""
    grads = analytic_grads(loss_fn, params)
    return max(relative_error(g, numeric_grad(loss_fn, p, eps)) for g, p in zip(grads, params))
