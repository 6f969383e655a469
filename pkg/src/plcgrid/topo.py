"""Separating direct from indirect PLC neighbours.

A neighbourhood's SNR spectra at one timestep form an n x n x 917 adjacency
tensor. Each measured (unmasked) entry is embedded by a pretrained MLP
encoder; the embeddings, taken in row-major order of the matrix, form a
sequence that two dilated convolutions turn into one logit per entry.
Directional predictions are merged afterwards by symmetrisation and by voting
across overlapping neighbourhoods and timesteps.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .core import N_CHANNELS, SLOT_SECONDS, PLCError


class TopologyError(PLCError, ValueError):
    pass


@dataclass(frozen=True)
class Neighborhood:
    center: int
    members: Tuple[int, ...]

    def __post_init__(self):
        members = tuple(sorted(int(m) for m in self.members))
        if len(set(members)) != len(members):
            raise TopologyError("duplicate neighbourhood members")
        if self.center not in members:
            raise TopologyError("center must be a member")
        if len(members) < 2:
            raise TopologyError("a neighbourhood needs at least two members")
        object.__setattr__(self, "members", members)

    @property
    def n(self) -> int:
        return len(self.members)


def neighborhood_around(topology, center: int, radius: int = 2, max_size: int = 8) -> Neighborhood:
    """Nodes within ``radius`` hops of ``center``, keeping the closest ``max_size``
    (ties broken by node id). Truncating in hop order keeps the member set
    closed under tree paths, so hop distances inside equal those of the grid."""
    reach = topology.bfs(center)
    ranked = sorted((h, v) for v, (h, _) in reach.items() if h <= radius)
    return Neighborhood(center, tuple(v for _, v in ranked[:max_size]))


def grid_neighborhoods(topology, radius: int = 2, max_size: int = 8, min_size: int = 2) -> List[Neighborhood]:
    out = []
    seen = set()
    for c in topology.node_ids:
        nb = neighborhood_around(topology, c, radius, max_size)
        if nb.n >= min_size and nb.members not in seen:
            seen.add(nb.members)
            out.append(nb)
    return out


@dataclass(frozen=True, eq=False)
class AdjacencyTensor:
    tensor: np.ndarray
    mask: np.ndarray
    timestamp: int
    members: Tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.members)

    def edges(self) -> List[Tuple[int, int]]:
        """Unmasked entries in row-major order (matrix indices)."""
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.mask))]

    def edge_spectra(self) -> np.ndarray:
        return self.tensor[self.mask].astype(np.float64)


@dataclass(frozen=True, eq=False)
class TopologyPrediction:
    confidence: np.ndarray
    binary: np.ndarray
    threshold: float
    mask: np.ndarray
    members: Tuple[int, ...] = ()


def build_adjacency_tensor(dataset, neighborhood: Neighborhood, t: int) -> AdjacencyTensor:
    if t % SLOT_SECONDS:
        raise TopologyError("timestamp must lie on the 15-minute grid")
    members = neighborhood.members
    n = len(members)
    sentinel = dataset.profile.range_min
    tensor = np.full((n, n, N_CHANNELS), sentinel, dtype=np.float32)
    mask = np.zeros((n, n), dtype=bool)
    for i, a in enumerate(members):
        for j, b in enumerate(members):
            if i == j:
                continue
            s = dataset.series.get(f"{a}-{b}")
            if s is None:
                continue
            k = int(np.searchsorted(s.timestamps, t))
            if k < len(s) and s.timestamps[k] == t:
                tensor[i, j] = s.spectra[k]
                mask[i, j] = True
    if not mask.any():
        raise TopologyError(f"no measured pairs in neighbourhood {members} at {t}")
    return AdjacencyTensor(tensor, mask, int(t), members)


def direct_labels(ground_truth, members: Sequence[int]) -> np.ndarray:
    n = len(members)
    out = np.zeros((n, n), dtype=bool)
    for i, a in enumerate(members):
        for j, b in enumerate(members):
            if i != j:
                out[i, j] = ground_truth.is_direct(a, b)
    return out


# -------------------------------------------------------------------- model


@dataclass(frozen=True)
class TopoParams:
    hidden: int = 128
    embed_dim: int = 64
    ae_epochs: int = 30
    ae_batch_size: int = 64
    ae_lr: float = 1e-3
    filter_channels: int = 32
    kernel_size: int = 3
    dilations: Tuple[int, int] = (1, 2)
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    input_shift: float = 15.0
    input_scale: float = 10.0


def build_autoencoder(params: TopoParams, seed: int) -> Tuple[nn.Sequential, nn.Sequential]:
    rng = np.random.default_rng(seed)
    encoder = nn.Sequential(
        [
            nn.Standardize(params.input_shift, params.input_scale),
            nn.Dense(N_CHANNELS, params.hidden, rng),
            nn.ReLU(),
            nn.Dense(params.hidden, params.embed_dim, rng),
        ],
        seed=seed,
    )
    decoder = nn.Sequential(
        [nn.ReLU(), nn.Dense(params.embed_dim, params.hidden, rng), nn.ReLU(), nn.Dense(params.hidden, N_CHANNELS, rng)]
    )
    return encoder, decoder


@dataclass
class EncoderFit:
    encoder: nn.Sequential
    loss_curve: List[float]
    initial_mse: float


def pretrain_encoder(edge_spectra: np.ndarray, params: TopoParams = TopoParams(), seed: int = 0) -> EncoderFit:
    """Autoencoder on standardised spectra; returns the encoding half."""
    X = np.asarray(edge_spectra, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_CHANNELS:
        raise TopologyError(f"expected m x {N_CHANNELS} spectra")
    if X.shape[0] < params.ae_batch_size:
        raise TopologyError(f"need at least {params.ae_batch_size} spectra, got {X.shape[0]}")
    encoder, decoder = build_autoencoder(params, seed)
    ae = nn.Sequential([encoder, decoder], seed=seed)
    target = (X - params.input_shift) / params.input_scale
    initial = nn.mse(ae.forward(X), target)[0]
    opt = nn.Adam(ae.params(), lr=params.ae_lr)
    curve = nn.train(ae, X, target, nn.mse, opt, params.ae_epochs, params.ae_batch_size, seed)
    return EncoderFit(encoder, curve, float(initial))


def reconstruction_mse(encoder: nn.Sequential, decoder: nn.Sequential, X: np.ndarray, params: TopoParams) -> float:
    target = (X - params.input_shift) / params.input_scale
    return nn.mse(decoder.forward(encoder.forward(X)), target)[0]


def build_filter(params: TopoParams, seed: int) -> nn.Sequential:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    d1, d2 = params.dilations
    return nn.Sequential(
        [
            nn.Conv1d(params.embed_dim, params.filter_channels, params.kernel_size, d1, "same", rng),
            nn.ReLU(),
            nn.Conv1d(params.filter_channels, 1, params.kernel_size, d2, "same", rng),
        ],
        seed=seed,
    )


@dataclass
class TopologyModel:
    encoder: nn.Sequential
    filter: nn.Sequential
    params: TopoParams
    seed: int
    loss_curve: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.network = nn.Sequential([self.encoder, nn.ToSequence(), self.filter], seed=self.seed)

    def logits(self, adj: AdjacencyTensor) -> np.ndarray:
        """One logit per unmasked entry, row-major."""
        return self.network.forward(adj.edge_spectra())[0, 0]

    def backward(self, grad_logits: np.ndarray):
        self.network.backward(grad_logits[None, None])

    def save(self, path: str):
        p = asdict(self.params)
        nn.save(self.network, path, {"params": p, "loss_curve": self.loss_curve})

    @classmethod
    def load(cls, path: str) -> "TopologyModel":
        net, meta = nn.load(path)
        p = meta["params"]
        p["dilations"] = tuple(p["dilations"])
        enc, _, filt = net.layers
        return cls(enc, filt, TopoParams(**p), net.seed, list(meta.get("loss_curve", [])))


@dataclass(frozen=True, eq=False)
class TopologySample:
    adjacency: AdjacencyTensor
    labels: np.ndarray


def make_samples(dataset, neighborhoods: Sequence[Neighborhood], timestamps: Iterable[int], ground_truth=None) -> List[TopologySample]:
    gt = ground_truth if ground_truth is not None else dataset.ground_truth
    out = []
    labels = {nb.members: direct_labels(gt, nb.members) for nb in neighborhoods}
    for t in timestamps:
        for nb in neighborhoods:
            out.append(TopologySample(build_adjacency_tensor(dataset, nb, int(t)), labels[nb.members]))
    return out


def sample_loss(model: TopologyModel, sample: TopologySample) -> Tuple[float, np.ndarray]:
    adj = sample.adjacency
    z = model.logits(adj)
    y = sample.labels[adj.mask].astype(np.float64)
    return nn.bce_with_logits(z, y)


def train_topology_filter(
    samples: Sequence[TopologySample], encoder: nn.Sequential, params: TopoParams = TopoParams(), seed: int = 0
) -> TopologyModel:
    """Fit encoder and convolution filter jointly on masked BCE."""
    if not samples:
        raise TopologyError("no training samples")
    all_labels = np.concatenate([s.labels[s.adjacency.mask] for s in samples])
    if all_labels.all() or not all_labels.any():
        raise TopologyError("training labels contain a single class")
    enc = nn.loads(nn.dumps(encoder))[0]
    model = TopologyModel(enc, build_filter(params, seed), params, seed)
    net = model.network
    opt = nn.Adam(net.params(), lr=params.lr)
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(params.epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), params.batch_size):
            idx = order[start : start + params.batch_size]
            net.zero_grad()
            for i in idx:
                value, g = sample_loss(model, samples[i])
                nn.optim.check_finite(value, f"epoch {epoch}")
                model.backward(g / len(idx))
                total += value
            opt.step()
        curve.append(total / len(samples))
    model.loss_curve = curve
    return model


def predict_topology(model: TopologyModel, adj: AdjacencyTensor, threshold: float = 0.5) -> TopologyPrediction:
    conf = np.zeros(adj.mask.shape)
    z = model.logits(adj)
    conf[adj.mask] = 0.5 * (1.0 + np.tanh(0.5 * z))
    binary = (conf >= threshold) & adj.mask
    return TopologyPrediction(conf, binary, float(threshold), adj.mask.copy(), adj.members)


# ------------------------------------------------------------ post-processing

_RULES = {"mean": lambda a, b: 0.5 * (a + b), "min": np.minimum, "max": np.maximum}


def symmetrize(confidence: np.ndarray, mask: Optional[np.ndarray] = None, rule: str = "mean") -> np.ndarray:
    """Merge ``c_ij`` and ``c_ji``. Where only one direction is present its value
    is copied to both; where neither is, the result is zero."""
    if rule not in _RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {sorted(_RULES)}")
    c = np.asarray(confidence, dtype=np.float64)
    m = np.ones(c.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    both = m & m.T
    out = np.where(both, _RULES[rule](c, c.T), 0.0)
    out = np.where(m & ~m.T, c, out)
    out = np.where(~m & m.T, c.T, out)
    np.fill_diagonal(out, 0.0)
    return out


def symmetrize_prediction(pred: TopologyPrediction, rule: str = "mean") -> TopologyPrediction:
    conf = symmetrize(pred.confidence, pred.mask, rule)
    mask = pred.mask | pred.mask.T
    return TopologyPrediction(conf, (conf >= pred.threshold) & mask, pred.threshold, mask, pred.members)


@dataclass(frozen=True)
class EdgeDecision:
    a: int
    b: int
    confidence: float
    votes: int
    direct: bool

    def to_dict(self) -> dict:
        return asdict(self)


def collect_votes(predictions: Sequence[TopologyPrediction], threshold: float = 0.5) -> Dict[Tuple[int, int], EdgeDecision]:
    """Mean confidence per unordered node pair over every prediction covering it.

    A prediction covering both directions contributes the mean of the two."""
    sums: Dict[Tuple[int, int], List[float]] = {}
    for p in predictions:
        members = p.members
        n = len(members)
        for i in range(n):
            for j in range(i + 1, n):
                vals = [p.confidence[x, y] for x, y in ((i, j), (j, i)) if p.mask[x, y]]
                if vals:
                    key = (min(members[i], members[j]), max(members[i], members[j]))
                    sums.setdefault(key, []).append(float(np.mean(vals)))
    return {
        k: EdgeDecision(k[0], k[1], float(np.mean(v)), len(v), bool(np.mean(v) >= threshold))
        for k, v in sorted(sums.items())
    }


def overlap_vote(predictions: Sequence[TopologyPrediction], edge: Tuple[int, int], threshold: float = 0.5) -> EdgeDecision:
    key = (min(edge), max(edge))
    decisions = collect_votes(predictions, threshold)
    if key not in decisions:
        raise TopologyError(f"edge {key} is not covered by any prediction")
    return decisions[key]


def apply_decisions(pred: TopologyPrediction, decisions: Dict[Tuple[int, int], EdgeDecision]) -> np.ndarray:
    """Binary matrix for one prediction's members using the voted decisions."""
    m = pred.members
    out = np.zeros(pred.mask.shape, dtype=bool)
    for i, j in zip(*np.nonzero(pred.mask)):
        out[i, j] = decisions[(min(m[i], m[j]), max(m[i], m[j]))].direct
    return out


def eval_topology(preds, truths, masks) -> dict:
    """Entrywise accuracy over unmasked off-diagonal entries, fraction of
    matrices predicted perfectly, and precision/recall of the direct class."""
    if isinstance(preds, np.ndarray) and preds.ndim == 2:
        preds, truths, masks = [preds], [truths], [masks]
    if not (len(preds) == len(truths) == len(masks)):
        raise TopologyError("prediction, truth and mask lists differ in length")
    tp = fp = fn = correct = total = exact = 0
    for p, t, m in zip(preds, truths, masks):
        p, t, m = np.asarray(p, bool), np.asarray(t, bool), np.asarray(m, bool).copy()
        if p.shape != t.shape or p.shape != m.shape:
            raise TopologyError(f"shape mismatch {p.shape} vs {t.shape} vs {m.shape}")
        np.fill_diagonal(m, False)
        pv, tv = p[m], t[m]
        correct += int((pv == tv).sum())
        total += int(m.sum())
        exact += int(np.array_equal(pv, tv))
        tp += int((pv & tv).sum())
        fp += int((pv & ~tv).sum())
        fn += int((~pv & tv).sum())
    return {
        "entrywise_acc": correct / total if total else float("nan"),
        "exact_matrix_acc": exact / len(preds) if preds else float("nan"),
        "precision": tp / (tp + fp) if tp + fp else float("nan"),
        "recall": tp / (tp + fn) if tp + fn else float("nan"),
        "n_entries": total,
        "n_matrices": len(preds),
    }


# ------------------------------------------------------------------- export


def edges_json(decisions: Dict[Tuple[int, int], EdgeDecision]) -> str:
    rows = [{"a": d.a, "b": d.b, "confidence": round(d.confidence, 6), "votes": d.votes, "direct": d.direct} for d in decisions.values()]
    return json.dumps(rows, indent=2, sort_keys=True)


def to_dot(decisions: Dict[Tuple[int, int], EdgeDecision], name: str = "plc") -> str:
    """Undirected graph of predicted direct neighbours (Graphviz DOT)."""
    nodes = sorted({d.a for d in decisions.values()} | {d.b for d in decisions.values()})
    lines = [f"graph {name} {{"]
    lines += [f"  n{v} [label=\"{v}\"];" for v in nodes]
    for d in decisions.values():
        if d.direct:
            lines.append(f"  n{d.a} -- n{d.b} [label=\"{d.confidence:.2f}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"
