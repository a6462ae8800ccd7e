"""SGD with classical momentum and cosine learning-rate annealing."""

import numpy as np


def cosine_lr(step, total_steps, lr0):
    """lr0 * 0.5 * (1 + cos(pi * step / total_steps))."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    return float(lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps)))


def sgd_step(params, grads, velocities, lr, momentum, weight_decay):
    """One in-place update: v <- m*v + g + wd*p; p <- p - lr*v.

    ``params``/``grads``/``velocities`` are name-keyed dicts of arrays;
    a missing gradient counts as zero.  Non-finite gradients abort.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = momentum * v + g + weight_decay * p
        velocities[name] = v
        p -= lr * v
    return params


class SGD:
    """Stateful wrapper over ``sgd_step`` for Tensor parameter dicts."""

    def __init__(self, params, momentum=0.9, weight_decay=1e-4):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self, lr):
        raw = {n: t.data for n, t in self.params.items()}
        grads = {n: t.grad for n, t in self.params.items() if t.grad is not None}
        sgd_step(raw, grads, self.velocities, lr, self.momentum, self.weight_decay)
