"""Loss functions. Each returns ``(value, grad)`` with ``grad`` shaped like the prediction."""
from __future__ import annotations

from typing import Optional

import numpy as np


def mae(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64)
    n = max(diff.size, 1)
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64)
    n = max(diff.size, 1)
    return float((diff**2).sum() / n), 2.0 * diff / n


def bce_with_logits(logits, targets, mask: Optional[np.ndarray] = None):
    """Binary cross-entropy on raw logits, averaged over entries where ``mask`` is true."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    m = np.ones_like(z) if mask is None else np.asarray(mask, dtype=np.float64)
    n = m.sum()
    if n == 0:
        return 0.0, np.zeros_like(z)
    # log(1 + e^z) - y z, written to stay finite for large |z|
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float((per * m).sum() / n), (sig - y) * m / n


def supervised_contrastive(embeddings, labels, temperature: float = 0.1):
    """Supervised contrastive loss over L2-normalised embeddings.

    Anchors without any same-label partner contribute nothing; the loss is the
    mean over the remaining anchors.
    """
    if np.shape(embeddings)[0] < 2:
        raise ValueError("need at least two embeddings")
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    b = e.shape[0]
    norms = np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
    z = e / norms
    s = z @ z.T / temperature
    eye = np.eye(b, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        raise ValueError("no anchor has a same-label partner")
    s_off = np.where(eye, -np.inf, s)
    row_max = s_off.max(axis=1, keepdims=True)
    ex = np.exp(s_off - row_max)
    denom = ex.sum(axis=1, keepdims=True)
    log_prob = s_off - row_max - np.log(denom)
    soft = ex / denom
    per_anchor = -np.where(pos, log_prob, 0.0).sum(axis=1) / np.maximum(n_pos, 1)
    n_valid = valid.sum()
    value = float(per_anchor[valid].sum() / n_valid)

    G = soft - pos / np.maximum(n_pos, 1)[:, None]
    G = np.where(valid[:, None], G, 0.0) / n_valid
    G[eye] = 0.0
    dz = (G + G.T) @ z / temperature
    de = (dz - z * (z * dz).sum(axis=1, keepdims=True)) / norms
    return value, de


LOSSES = {"mae": mae, "mse": mse}
