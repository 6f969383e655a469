"""Cable-joint counting from one-day SNR windows, with gradient saliency.

The regressor averages a day window over time, convolves the resulting
917-channel spectrum with a small residual 1-d CNN and maps the flattened
feature map to a single real output. A dense head keeps channel positions,
which is where joint fingerprints live.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from . import nn
from .core import N_CHANNELS, SLOTS_PER_DAY, DayWindow, PLCError, iter_day_windows


class JointsError(PLCError, ValueError):
    pass


@dataclass(frozen=True)
class JointSample:
    window: DayWindow
    joint_count: int
    section_id: int


@dataclass(frozen=True)
class JointParams:
    channels: Tuple[int, ...] = (16, 32, 64, 64)
    kernel_size: int = 5
    embed_dim: int = 32
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    contrastive_weight: float = 0.1
    temperature: float = 0.1
    input_shift: float = 15.0
    input_scale: float = 10.0


@dataclass
class JointModel:
    trunk: nn.Sequential
    head: nn.Sequential
    params: JointParams
    seed: int
    loss_curve: List[float] = field(default_factory=list)

    @property
    def network(self) -> nn.Sequential:
        return nn.Sequential([self.trunk, self.head], seed=self.seed)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.head.forward(self.trunk.forward(x))[:, 0]

    def save(self, path: str):
        meta = {"params": asdict(self.params), "loss_curve": self.loss_curve}
        nn.save(self.network, path, meta)

    @classmethod
    def load(cls, path: str) -> "JointModel":
        net, meta = nn.load(path)
        p = meta["params"]
        p["channels"] = tuple(p["channels"])
        trunk, head = net.layers
        return cls(trunk, head, JointParams(**p), net.seed, list(meta.get("loss_curve", [])))


@dataclass(frozen=True)
class SensitivityProfile:
    per_channel: np.ndarray
    n_windows: int
    err_tolerance: float

    def smoothed(self, width: int = 5) -> np.ndarray:
        return uniform_filter1d(self.per_channel, size=width, mode="nearest")

    def top_peaks(self, k: int = 3, width: int = 5, min_distance: int = 20) -> List[int]:
        """Channels of the ``k`` highest local maxima of the smoothed profile."""
        s = self.smoothed(width)
        peaks, _ = find_peaks(s, distance=min_distance)
        order = peaks[np.argsort(-s[peaks], kind="stable")]
        return sorted(int(c) for c in order[:k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["channel", "sensitivity"])
        for i, v in enumerate(self.per_channel):
            w.writerow([i, f"{v:.9e}"])
        return buf.getvalue()


# ------------------------------------------------------------------ dataset


def _val_sections(counts: Dict[int, int], val_fraction: float = 0.2) -> set:
    """Stratified section split: in every joint-count group with at least two
    sections, the highest section ids go to validation."""
    groups: Dict[int, List[int]] = {}
    for sid, c in sorted(counts.items()):
        groups.setdefault(c, []).append(sid)
    val = set()
    for c, sids in sorted(groups.items()):
        if len(sids) < 2:
            continue
        n_val = max(1, int(round(val_fraction * len(sids))))
        val.update(sids[-n_val:])
    return val


def build_joint_dataset(dataset, ground_truth=None, val_fraction: float = 0.2) -> Tuple[List[JointSample], List[JointSample]]:
    """Day windows of every direct link labeled with its section's joint count,
    split by section id so that no section appears on both sides."""
    gt = ground_truth if ground_truth is not None else dataset.ground_truth
    topo = gt.topology
    counts = {}
    for link in topo.plc_links:
        if link.direct:
            sid = link.path[0]
            counts[sid] = topo.section(sid).joints
    if len(set(counts.values())) < 2:
        raise JointsError("need at least two distinct joint counts")
    val_ids = _val_sections(counts, val_fraction)
    train, val = [], []
    for link in topo.plc_links:
        if not link.direct:
            continue
        sid = link.path[0]
        for cid in link.connection_ids():
            if cid not in dataset.series:
                continue
            for w in iter_day_windows(dataset.series[cid]):
                (val if sid in val_ids else train).append(JointSample(w, counts[sid], sid))
    return train, val


def stack_windows(samples: Sequence[JointSample]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.window.matrix for s in samples]).astype(np.float64)
    y = np.array([s.joint_count for s in samples], dtype=np.float64)
    return X, y


# -------------------------------------------------------------------- model


def build_joint_network(params: JointParams, seed: int, n_channels: int = N_CHANNELS) -> Tuple[nn.Sequential, nn.Sequential]:
    """Trunk (input to embedding) and regression head; ``n_channels`` only
    shrinks the spectral axis for cheap gradient checks."""
    rng = np.random.default_rng(seed)
    layers: List[nn.Layer] = [
        nn.MeanPool(axis=1),
        nn.Standardize(params.input_shift, params.input_scale),
        nn.Conv1d(1, params.channels[0], params.kernel_size, 1, "same", rng),
        nn.ReLU(),
    ]
    length = n_channels
    prev = params.channels[0]
    for ch in params.channels:
        layers += [nn.residual_block(prev, ch, params.kernel_size, 1, rng), nn.ReLU(), nn.AvgPool1d(2)]
        length //= 2
        prev = ch
    layers += [nn.Flatten(), nn.Dense(prev * length, params.embed_dim, rng), nn.ReLU()]
    head = nn.Sequential([nn.Dense(params.embed_dim, 1, rng)])
    return nn.Sequential(layers, seed=seed), head


def train_joint_regressor(train: Sequence[JointSample], params: JointParams = JointParams(), seed: int = 0) -> JointModel:
    """Fit with ``MAE + w * SupCon`` on the penultimate embedding."""
    if not train:
        raise JointsError("empty training set")
    X, y = stack_windows(train)
    trunk, head = build_joint_network(params, seed)
    model = JointModel(trunk, head, params, seed)
    net = model.network
    opt = nn.Adam(net.params(), lr=params.lr, weight_decay=params.weight_decay)

    def step(net_, xb, yb, idx):
        emb = trunk.forward(xb)
        out = head.forward(emb)
        value, g = nn.mae(out[:, 0], yb)
        g_emb = head.backward(g[:, None])
        w = params.contrastive_weight
        if w > 0 and len(yb) >= 2 and len(np.unique(yb)) < len(yb):
            c, gc = nn.supervised_contrastive(emb, yb.astype(int), params.temperature)
            value += w * c
            g_emb = g_emb + w * gc
        trunk.backward(g_emb)
        return value

    model.loss_curve = nn.train(net, X, y, None, opt, params.epochs, params.batch_size, seed, step_fn=step)
    return model


def round_count(raw) -> np.ndarray:
    """Half-to-even rounding clamped at zero."""
    return np.maximum(0, np.round(np.asarray(raw, dtype=np.float64))).astype(int)


def predict_joints(model: JointModel, windows, batch_size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """Raw real outputs and rounded counts for a window or stack of windows."""
    if isinstance(windows, DayWindow):
        windows = [windows]
    if isinstance(windows, (list, tuple)):
        X = np.stack([w.matrix if isinstance(w, DayWindow) else np.asarray(w) for w in windows])
    else:
        X = np.asarray(windows)
        if X.ndim == 2:
            X = X[None]
    if X.shape[1:] != (SLOTS_PER_DAY, N_CHANNELS):
        raise nn.ShapeError(f"expected windows of shape ({SLOTS_PER_DAY}, {N_CHANNELS}), got {X.shape[1:]}")
    raw = np.concatenate([model.forward(X[i : i + batch_size].astype(np.float64)) for i in range(0, len(X), batch_size)])
    return raw, round_count(raw)


def regression_activation_map(model: JointModel, window) -> np.ndarray:
    """``|d output / d input|`` for one window (96 x 917); parameter gradients are left untouched."""
    x = np.asarray(window.matrix if isinstance(window, DayWindow) else window, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    net = model.network
    saved = [p.grad.copy() for p in net.params()]
    model.forward(x)
    g = model.trunk.backward(model.head.backward(np.ones((x.shape[0], 1))))
    for p, s in zip(net.params(), saved):
        p.grad = s
    out = np.abs(g)
    return out[0] if out.shape[0] == 1 else out


def channel_sensitivity(model: JointModel, samples: Sequence[JointSample], err_tolerance: float = np.inf) -> SensitivityProfile:
    """Mean saliency over time and over samples predicted within ``err_tolerance``, normalised to sum 1."""
    if not samples:
        raise JointsError("no samples")
    X, y = stack_windows(samples)
    raw, _ = predict_joints(model, X)
    keep = np.flatnonzero(np.abs(raw - y) <= err_tolerance)
    if keep.size == 0:
        raise JointsError(f"no sample within err_tolerance={err_tolerance}; try a looser tolerance")
    total = np.zeros(N_CHANNELS)
    for i in range(0, keep.size, 64):
        sal = regression_activation_map(model, X[keep[i : i + 64]])
        sal = sal.reshape(-1, SLOTS_PER_DAY, N_CHANNELS)
        total += sal.mean(axis=1).sum(axis=0)
    total /= keep.size
    s = total.sum()
    profile = total / s if s > 0 else np.full(N_CHANNELS, 1.0 / N_CHANNELS)
    return SensitivityProfile(profile, int(keep.size), float(err_tolerance))


# ------------------------------------------------------------------ reports


def evaluate_joints(model: JointModel, samples: Sequence[JointSample]) -> dict:
    """Per-section predictions, their spread across windows, and overall MAE."""
    X, y = stack_windows(samples)
    raw, rounded = predict_joints(model, X)
    sids = np.array([s.section_id for s in samples])
    sections = []
    for sid in sorted(set(sids.tolist())):
        m = sids == sid
        sections.append(
            {
                "section_id": int(sid),
                "joint_count": int(y[m][0]),
                "n_windows": int(m.sum()),
                "mean_raw": float(raw[m].mean()),
                "raw_variance": float(raw[m].var()),
                "rounded_mode": int(np.bincount(rounded[m]).argmax()),
                "rounded_accuracy": float((rounded[m] == y[m]).mean()),
            }
        )
    return {
        "n_windows": int(len(samples)),
        "mae": float(np.abs(raw - y).mean()),
        "rounded_accuracy": float((rounded == y).mean()),
        "sections": sections,
    }


def report_json(evaluation: dict, profile: Optional[SensitivityProfile] = None, extra: Optional[dict] = None) -> str:
    out = dict(evaluation)
    if profile is not None:
        out["sensitivity"] = {
            "n_windows": profile.n_windows,
            "err_tolerance": None if np.isinf(profile.err_tolerance) else profile.err_tolerance,
            "top_peaks": profile.top_peaks(),
        }
    out.update(extra or {})
    return json.dumps(out, indent=2, sort_keys=True)
