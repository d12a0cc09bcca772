import numpy as np

from .exceptions import ContractError


class Adam:
    """Bias-corrected Adam over a fixed, named set of tensors.

    State lives in plain dicts keyed by parameter name so it can be
    checkpointed alongside the parameters.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        self.t = adam_step(
            {k: p.data for k, p in self.params.items()}, grads, self.m, self.v,
            self.lr, self.t + 1, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, m, v, lr, t, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update of ``params``, ``m`` and ``v``; returns ``t``."""
    if t < 1:
        raise ContractError(f"Adam step counter must be >= 1, got {t}")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or m[k].shape != p.shape or v[k].shape != p.shape:
            raise ContractError(
                f"Adam state for {k!r} has shape {m[k].shape}/{v[k].shape}, "
                f"gradient {g.shape}, parameter {p.shape}")
        m[k] *= beta1
        m[k] += (1.0 - beta1) * g
        v[k] *= beta2
        v[k] += (1.0 - beta2) * (g * g)
        p -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
    return t
