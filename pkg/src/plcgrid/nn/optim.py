"""Optimisers and a minibatch training loop."""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from .layers import NNError, Sequential, Tensor


class TrainingDiverged(NNError):
    pass


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self._v):
            if p.frozen:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.frozen:
                continue
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data


def check_finite(value: float, where: str):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss at {where}")


def train(
    net: Sequential,
    X: np.ndarray,
    y: np.ndarray,
    loss: Callable,
    optimizer,
    epochs: int = 10,
    batch_size: int = 32,
    seed: int = 0,
    step_fn: Optional[Callable] = None,
) -> List[float]:
    """Minibatch training. Returns the per-epoch mean loss.

    ``step_fn(net, xb, yb, idx)`` may replace the default forward/loss/backward
    step; it must return the batch loss and leave gradients populated.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            net.zero_grad()
            if step_fn is None:
                out = net.forward(X[idx])
                value, grad = loss(out, y[idx])
                check_finite(value, f"epoch {epoch}, batch {start // batch_size}")
                net.backward(grad)
            else:
                value = step_fn(net, X[idx], y[idx], idx)
                check_finite(value, f"epoch {epoch}, batch {start // batch_size}")
            optimizer.step()
            total += value * len(idx)
        curve.append(total / n)
    for p in net.params():
        if not np.all(np.isfinite(p.data)):
            raise TrainingDiverged(f"non-finite parameter {p.name}")
    return curve
