"""Connection-state sequences: DTW template mining, anomaly scoring, radial diagrams."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from . import _dtw
from .core import SLOT_SECONDS, SLOTS_PER_DAY, MeasurementSeries, PLCError, ValidationError, format_timestamp
from .embed import NOISE, StateModel, assign_states

METRICS = ("mismatch01", "centroid_euclidean", "centroid_cosine")
DEFAULT_RADIUS_FRACTION = 0.1
DEFAULT_THRESHOLD_FACTOR = 2.0


class TemplateError(PLCError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StateSequence:
    connection_id: str
    timestamps: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        st = np.asarray(self.states, dtype=np.int64).reshape(-1)
        if ts.shape != st.shape:
            raise ValidationError("states and timestamps must have equal length")
        if np.any(ts % SLOT_SECONDS):
            raise ValidationError("timestamps must lie on the 15-minute grid")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "states", st)

    def __len__(self) -> int:
        return int(self.states.size)

    def __eq__(self, other):
        if not isinstance(other, StateSequence):
            return NotImplemented
        return (
            self.connection_id == other.connection_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.states, other.states)
        )

    __hash__ = None

    def slice(self, start: int, stop: int) -> "StateSequence":
        return StateSequence(self.connection_id, self.timestamps[start:stop], self.states[start:stop])


def to_state_sequence(series: MeasurementSeries, model: StateModel) -> StateSequence:
    if len(series) == 0:
        return StateSequence(series.connection_id, np.zeros(0, np.int64), np.zeros(0, np.int64))
    return StateSequence(series.connection_id, series.timestamps, assign_states(model, series.spectra))


def split_sequence(seq: StateSequence, ratio: float = 0.75) -> Tuple[StateSequence, StateSequence]:
    """Chronological split: the first ``floor(ratio * t)`` states train, the rest evaluate."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie strictly between 0 and 1, got {ratio}")
    if len(seq) < 4:
        raise ValueError(f"sequence of length {len(seq)} too short to split (need at least 4)")
    cut = int(math.floor(ratio * len(seq)))
    return seq.slice(0, cut), seq.slice(cut, len(seq))


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True, eq=False)
class SymbolMetric:
    """Distance between connection states.

    ``table[i, j]`` is the distance between ``alphabet[i]`` and ``alphabet[j]``.
    States outside the alphabet sit at ``unknown_distance`` from everything
    but themselves.
    """

    name: str
    alphabet: np.ndarray
    table: np.ndarray
    unknown_distance: float = 1.0

    def encode(self, *seqs) -> Tuple[List[np.ndarray], np.ndarray]:
        seqs = [np.asarray(s, dtype=np.int64).reshape(-1) for s in seqs]
        extra = np.setdiff1d(np.unique(np.concatenate(seqs)) if seqs else np.zeros(0, np.int64), self.alphabet)
        alphabet = np.concatenate([self.alphabet, extra])
        table = self.table
        if extra.size:
            k = alphabet.size
            table = np.full((k, k), float(self.unknown_distance))
            table[: self.alphabet.size, : self.alphabet.size] = self.table
            np.fill_diagonal(table, 0.0)
        order = np.argsort(alphabet, kind="stable")
        codes = [order[np.searchsorted(alphabet[order], s)] for s in seqs]
        return codes, np.ascontiguousarray(table, dtype=np.float64)

    @property
    def mean_distance(self) -> float:
        k = self.table.shape[0]
        if k < 2:
            return float(self.unknown_distance)
        return float(self.table[~np.eye(k, dtype=bool)].mean())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alphabet": self.alphabet.tolist(),
            "table": self.table.tolist(),
            "unknown_distance": self.unknown_distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SymbolMetric":
        return cls(d["name"], np.array(d["alphabet"], dtype=np.int64), np.array(d["table"]), d["unknown_distance"])


def make_metric(
    metric: Union[str, SymbolMetric] = "mismatch01", centroids: Optional[Dict[int, np.ndarray]] = None
) -> SymbolMetric:
    if isinstance(metric, SymbolMetric):
        return metric
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if metric == "mismatch01":
        return SymbolMetric(metric, np.zeros(0, np.int64), np.zeros((0, 0)), 1.0)
    if not centroids:
        raise ValueError(f"metric {metric} needs cluster centroids")
    labels = np.array(sorted(centroids), dtype=np.int64)
    C = np.stack([np.asarray(centroids[k], dtype=np.float64) for k in labels])
    if metric == "centroid_euclidean":
        table = np.sqrt(np.maximum(((C[:, None, :] - C[None, :, :]) ** 2).sum(axis=2), 0.0))
    else:
        norm = np.linalg.norm(C, axis=1)
        norm[norm == 0] = 1.0
        U = C / norm[:, None]
        table = np.clip(1.0 - U @ U.T, 0.0, 2.0)
    np.fill_diagonal(table, 0.0)
    unknown = float(table.max()) if table.size and table.max() > 0 else 1.0
    return SymbolMetric(metric, labels, table, unknown)


def dtw(a, b, metric: Union[str, SymbolMetric] = "mismatch01", centroids=None) -> Tuple[float, List[Tuple[int, int]]]:
    """Dynamic time warping between two state sequences.

    Steps are down, right and diagonal; the returned path starts at ``(0, 0)``
    and ends at ``(len(a) - 1, len(b) - 1)``.
    """
    a = np.asarray(a, dtype=np.int64).reshape(-1)
    b = np.asarray(b, dtype=np.int64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("DTW needs non-empty sequences")
    m = make_metric(metric, centroids)
    (ca, cb), table = m.encode(a, b)
    acc = _dtw.accumulated_cost(ca, cb, table)
    i, j = a.size - 1, b.size - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            moves = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
            _, i, j = min(moves, key=lambda t: t[0])
        path.append((i, j))
    path.reverse()
    return float(acc[-1, -1]), path


def dtw_cost(a, b, metric: Union[str, SymbolMetric] = "mismatch01", centroids=None) -> float:
    m = make_metric(metric, centroids)
    (ca, cb), table = m.encode(a, b)
    if ca.size == 0 or cb.size == 0:
        raise ValueError("DTW needs non-empty sequences")
    return float(_dtw.dtw_cost(ca, cb, table, np.inf))


# ----------------------------------------------------------------- templates


def sliding_windows(states: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    if states.size < length:
        return np.zeros((0, length), dtype=np.int64)
    return np.lib.stride_tricks.sliding_window_view(states, length)[::stride].copy()


@dataclass(eq=False)
class TemplateSet:
    templates: np.ndarray
    radius: float
    metric: SymbolMetric
    support: List[int]
    window_length: int
    coverage: float = 0.0
    n_windows: int = 0
    starts: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.templates.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TemplateSet):
            return NotImplemented
        return (
            np.array_equal(self.templates, other.templates)
            and self.radius == other.radius
            and self.support == other.support
            and self.starts == other.starts
            and self.metric.name == other.metric.name
        )

    def to_dict(self) -> dict:
        return {
            "templates": self.templates.tolist(),
            "radius": self.radius,
            "metric": self.metric.to_dict(),
            "support": self.support,
            "window_length": self.window_length,
            "coverage": self.coverage,
            "n_windows": self.n_windows,
            "starts": self.starts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateSet":
        return cls(
            np.array(d["templates"], dtype=np.int64),
            d["radius"],
            SymbolMetric.from_dict(d["metric"]),
            d["support"],
            d["window_length"],
            d.get("coverage", 0.0),
            d.get("n_windows", 0),
            d.get("starts", []),
        )


def default_radius(metric: SymbolMetric, length: int) -> float:
    return DEFAULT_RADIUS_FRACTION * length * metric.mean_distance


def mine_templates(
    train: Union[StateSequence, np.ndarray],
    L: int = SLOTS_PER_DAY,
    radius: Optional[float] = None,
    min_support: int = 2,
    metric: Union[str, SymbolMetric] = "mismatch01",
    centroids=None,
) -> TemplateSet:
    """Greedy cover of the training windows by recurring patterns.

    All windows of length ``L`` (stride 1) are candidates. The candidate with
    the most other remaining windows within ``radius`` becomes a template if
    that count reaches ``min_support``; it and its neighbours then leave the
    candidate pool. Ties go to the earliest window.
    """
    states = train.states if isinstance(train, StateSequence) else np.asarray(train, dtype=np.int64)
    if states.size < L:
        raise TemplateError(f"training sequence of length {states.size} shorter than window length {L}")
    if min_support < 2:
        raise ValueError("min_support must be at least 2")
    m = make_metric(metric, centroids)
    windows = sliding_windows(states, L)
    (codes,), table = m.encode(windows.reshape(-1))
    codes = codes.reshape(windows.shape)
    if radius is None:
        radius = default_radius(m, L)
    if radius < 0:
        raise ValueError("radius must be non-negative")

    # identical windows are scored once and weighted by multiplicity
    uniq, first, inverse, counts = np.unique(codes, axis=0, return_index=True, return_inverse=True, return_counts=True)
    order = np.argsort(first)
    uniq, first, counts = uniq[order], first[order], counts[order]
    near = _dtw.within_radius_matrix(np.ascontiguousarray(uniq), table, float(radius))

    remaining = counts.astype(np.int64).copy()
    chosen, support = [], []
    while True:
        score = near.astype(np.int64) @ remaining - 1
        score[remaining == 0] = -1
        best = int(np.argmax(score))  # first maximum == earliest window
        if score[best] < min_support:
            break
        chosen.append(best)
        support.append(int(score[best]))
        remaining[near[best]] = 0
    if not chosen:
        raise TemplateError(
            f"no window has {min_support} others within radius {radius:g}; increase the radius or lower min_support"
        )
    covered = near[chosen].any(axis=0)
    return TemplateSet(
        templates=windows[first[chosen]],
        radius=float(radius),
        metric=m,
        support=support,
        window_length=L,
        coverage=float(counts[covered].sum() / counts.sum()),
        n_windows=int(counts.sum()),
        starts=[int(first[c]) for c in chosen],
    )


# ----------------------------------------------------------------- anomalies


@dataclass
class AnomalyInterval:
    start: int
    end: int
    max_score: float
    windows: List[int]

    def to_dict(self) -> dict:
        return {
            "start": format_timestamp(self.start),
            "end": format_timestamp(self.end),
            "start_epoch": self.start,
            "end_epoch": self.end,
            "max_score": self.max_score,
            "windows": self.windows,
        }


@dataclass
class AnomalyReport:
    connection_id: str
    threshold: float
    window_starts: np.ndarray
    window_ends: np.ndarray
    scores: np.ndarray
    flags: np.ndarray
    intervals: List[AnomalyInterval]

    def to_dict(self) -> dict:
        return {
            "connection_id": self.connection_id,
            "threshold": self.threshold,
            "windows": [
                {"start": int(s), "end": int(e), "score": float(c), "flag": bool(f)}
                for s, e, c, f in zip(self.window_starts, self.window_ends, self.scores, self.flags)
            ],
            "intervals": [iv.to_dict() for iv in self.intervals],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def eval_windows(n: int, length: int, stride: Optional[int] = None) -> List[Tuple[int, int]]:
    """Window index ranges over a sequence of length ``n``; a final window is
    aligned to the end when the stride does not reach it."""
    stride = stride or length
    if n <= length:
        return [(0, n)] if n else []
    out = [(s, s + length) for s in range(0, n - length + 1, stride)]
    if out[-1][1] < n:
        out.append((n - length, n))
    return out


def score_anomalies(
    eval_seq: StateSequence,
    templates: TemplateSet,
    threshold: Optional[float] = None,
    stride: Optional[int] = None,
) -> AnomalyReport:
    """Score evaluation windows by their DTW distance to the nearest template.

    A window is flagged when its score exceeds ``threshold`` (default: twice
    the template radius); runs of overlapping or adjacent flagged windows are
    merged into intervals.
    """
    if len(templates) == 0:
        raise TemplateError("template set is empty")
    if threshold is None:
        threshold = DEFAULT_THRESHOLD_FACTOR * templates.radius
    spans = eval_windows(len(eval_seq), templates.window_length, stride)
    scores = np.zeros(len(spans))
    if spans:
        (codes, tcodes), table = templates.metric.encode(eval_seq.states, templates.templates.reshape(-1))
        tcodes = np.ascontiguousarray(tcodes.reshape(templates.templates.shape))
        for k, (s, e) in enumerate(spans):
            w = np.ascontiguousarray(codes[s:e][None, :])
            scores[k] = _dtw.min_cost_to_templates(w, tcodes, table)[0]
    flags = scores > threshold
    ts = eval_seq.timestamps
    starts = np.array([ts[s] for s, _ in spans], dtype=np.int64)
    ends = np.array([ts[e - 1] + SLOT_SECONDS for _, e in spans], dtype=np.int64)

    intervals: List[AnomalyInterval] = []
    for k in np.flatnonzero(flags):
        s, e = spans[k]
        if intervals and intervals[-1].windows[-1] == k - 1 and spans[k - 1][1] >= s:
            iv = intervals[-1]
            iv.end = int(ends[k])
            iv.max_score = max(iv.max_score, float(scores[k]))
            iv.windows.append(int(k))
        else:
            intervals.append(AnomalyInterval(int(starts[k]), int(ends[k]), float(scores[k]), [int(k)]))
    return AnomalyReport(eval_seq.connection_id, float(threshold), starts, ends, scores, flags, intervals)


# -------------------------------------------------------------------- radial

DEFAULT_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
NOISE_COLOR = "#c8c8c8"


def _state_colors(states: Sequence[int], palette) -> Dict[int, str]:
    if isinstance(palette, dict):
        return {int(s): palette.get(int(s), NOISE_COLOR) for s in states}
    palette = list(palette or DEFAULT_PALETTE)
    colors, k = {}, 0
    for s in sorted(set(int(x) for x in states)):
        if s == NOISE:
            colors[s] = NOISE_COLOR
        else:
            colors[s] = palette[k % len(palette)]
            k += 1
    return colors


def radial_layout(seq: StateSequence, period: str = "day"):
    """Ring, slot and state of every arc plus the number of slots per ring."""
    if period == "day":
        days = seq.timestamps // 86400
        rings = days - days.min()
        slots = (seq.timestamps % 86400) // SLOT_SECONDS
        return rings.astype(int), slots.astype(int), seq.states.copy(), SLOTS_PER_DAY
    if period == "year":
        import datetime as dt

        days = seq.timestamps // 86400
        uniq = np.unique(days)
        majority = []
        for d in uniq:
            vals, counts = np.unique(seq.states[days == d], return_counts=True)
            majority.append(int(vals[np.argmax(counts)]))
        dates = [dt.date(1970, 1, 1) + dt.timedelta(days=int(d)) for d in uniq]
        years = np.array([d.year for d in dates])
        slots = np.array([min(d.timetuple().tm_yday - 1, 364) for d in dates])
        return years - years.min(), slots, np.array(majority), 365
    raise ValueError(f"period must be 'day' or 'year', got {period!r}")


def render_radial(seq: StateSequence, period: str = "day", palette=None, size: int = 640) -> bytes:
    """Radial state diagram as a standalone SVG document.

    The angle is the position within the period (clockwise from the top) and
    each period occupies one ring, innermost first.
    """
    if len(seq) < 1:
        raise ValueError("cannot render an empty sequence")
    rings, slots, states, per_ring = radial_layout(seq, period)
    colors = _state_colors(states, palette)
    n_rings = int(rings.max()) + 1
    cx = cy = size / 2
    inner = size * 0.08
    width = (size * 0.45 - inner) / n_rings
    legend_h = 24 + 18 * len(colors)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + legend_h}" '
        f'viewBox="0 0 {size} {size + legend_h}" data-period="{period}" data-rings="{n_rings}">',
        f"<title>{escape(seq.connection_id or 'connection')} states per {period}</title>",
        '<g id="arcs">',
    ]
    step = 2 * math.pi / per_ring
    for r, s, st in zip(rings, slots, states):
        r0 = inner + r * width
        r1 = r0 + width
        a0 = s * step
        a1 = a0 + step

        def pt(radius, ang):
            return cx + radius * math.sin(ang), cy - radius * math.cos(ang)

        x0, y0 = pt(r1, a0)
        x1, y1 = pt(r1, a1)
        x2, y2 = pt(r0, a1)
        x3, y3 = pt(r0, a0)
        d = (
            f"M{x0:.2f} {y0:.2f}A{r1:.2f} {r1:.2f} 0 0 1 {x1:.2f} {y1:.2f}"
            f"L{x2:.2f} {y2:.2f}A{r0:.2f} {r0:.2f} 0 0 0 {x3:.2f} {y3:.2f}Z"
        )
        parts.append(
            f'<path class="arc" data-ring="{int(r)}" data-slot="{int(s)}" data-state="{int(st)}" '
            f'fill="{colors[int(st)]}" d="{d}"/>'
        )
    parts.append("</g>")
    parts.append(f'<g id="legend" transform="translate(12,{size + 8})">')
    for k, (st, color) in enumerate(sorted(colors.items())):
        label = "noise" if st == NOISE else f"state {st}"
        parts.append(
            f'<rect class="legend-swatch" data-state="{st}" x="0" y="{18 * k}" width="12" height="12" fill="{color}"/>'
        )
        parts.append(f'<text x="18" y="{18 * k + 10}" font-size="12" font-family="sans-serif">{label}</text>')
    parts.append("</g>")
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")
