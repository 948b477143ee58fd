"""Central finite-difference checks against the tape's analytic gradients.

Both helpers only ever call the forward function, so the numeric side stays
independent of the backward rules it is checking.  Run them under
``autodiff.precision(np.float64)``.
"""

import numpy as np

from . import autodiff as ad


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def analytic_grads(loss_fn, params):
    for p in params:
        p.grad = None
    with ad.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def numeric_grad(loss_fn, param, eps=1e-5):
    """Entry-wise central difference of ``loss_fn()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = loss_fn().item()
        flat[i] = old - eps
        down = loss_fn().item()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def check_entries(loss_fn, params, eps=1e-5):
    """Max relative error over every entry of every parameter."""
    analytic = analytic_grads(loss_fn, params)
    return max(relative_error(a, numeric_grad(loss_fn, p, eps)) for a, p in zip(analytic, params))


def check_directions(loss_fn, params, rng, eps=1e-5, directions=3):
    """Compare <grad, v> with the central difference along random unit
    directions ``v``, one set per parameter.  Returns the worst relative
    error and the name of the parameter it occurred on."""
    analytic = analytic_grads(loss_fn, params)
    worst, where = 0.0, None
    for g, p in zip(analytic, params):
        base = p.data.copy()
        for _ in range(directions):
            v = rng.standard_normal(p.shape)
            v /= np.linalg.norm(v) or 1.0
            p.data = base + eps * v
            up = loss_fn().item()
            p.data = base - eps * v
            down = loss_fn().item()
            p.data = base
            num = (up - down) / (2 * eps)
            ana = float(np.sum(g * v))
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
            if err > worst:
                worst, where = err, p.name
    return worst, where
