"""Finite-difference gradient oracle, independent of the tape."""

import numpy as np

from glassrec import tensor as T


def numeric_grad(loss_fn, param, h=1e-5):
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for n in range(flat.size):
        orig = flat[n]
        flat[n] = orig + h
        with T.no_grad():
            up = loss_fn().item()
        flat[n] = orig - h
        with T.no_grad():
            down = loss_fn().item()
        flat[n] = orig
        grad.reshape(-1)[n] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """Max-abs deviation relative to the largest numeric gradient entry.

    The 1e-6 floor keeps central-difference rounding noise (about 1e-11) from
    dominating when the true gradient is identically zero.
    """
    scale = max(np.abs(numeric).max(), 1e-6)
    return float(np.abs(analytic - numeric).max() / scale)


def gradient_check(loss_fn, params, h=1e-5):
    """Max relative error over ``params`` (dict or list of leaf tensors).

    ``loss_fn`` must rebuild the graph on each call and be deterministic.
    """
    params = list(params.values()) if isinstance(params, dict) else list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numeric_grad(loss_fn, p, h)))
    return worst
