"""Finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import NNError, Sequential


def grad_check(net: Sequential, x: np.ndarray, loss: Callable, eps: float = 1e-4) -> float:
    """Largest relative error between backprop and central-difference gradients.

    ``loss(out)`` returns ``(value, grad)``. Frozen parameters are skipped.
    The relative error of an entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    params = [p for p in net.params() if not p.frozen]
    if not all(np.all(np.isfinite(p.data)) for p in params):
        raise NNError("non-finite parameter")
    net.zero_grad()
    value, g = loss(net.forward(x))
    if not np.isfinite(value):
        raise NNError("loss is not finite")
    net.backward(g)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        af = a.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss(net.forward(x))[0]
            flat[i] = old - eps
            down = loss(net.forward(x))[0]
            flat[i] = old
            num = (up - down) / (2 * eps)
            err = abs(af[i] - num) / max(1e-8, abs(af[i]) + abs(num))
            worst = max(worst, err)
    net.zero_grad()
    return float(worst)
