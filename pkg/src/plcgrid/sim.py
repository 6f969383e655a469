"""Synthetic low-voltage PLC grid.

Attenuation is modeled in dB and composes additively along the cable path
between two modems. Each section contributes a length-proportional loss that
grows with channel index plus Gaussian-shaped notches for every cable joint.
Noise is a daily and a seasonal sinusoid, scheduled band-limited interferers
and white Gaussian noise; it is drawn independently per direction, so the two
directions of a link are only approximately symmetric.
"""
from __future__ import annotations

import datetime as dt
import json
import os
import zlib
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    N_CHANNELS,
    PROFILES,
    SLOT_SECONDS,
    MeasurementSeries,
    PhaseMeasurements,
    PLCError,
    Profile,
    ChannelSpectrum,
    derive_tonemap,
    get_profile,
    parse_measurement_file,
    serialize_measurement_file,
)

DEFAULT_JOINT_CHANNELS = (120, 430, 780)
FUSE_RAMP = 0.3 + 0.7 * np.arange(N_CHANNELS) / (N_CHANNELS - 1)
EVENT_KINDS = ("fuse_failure", "transient_interferer", "cable_degradation")


class SimulationError(PLCError, ValueError):
    pass


# ------------------------------------------------------------------ topology


@dataclass(frozen=True)
class Node:
    id: int
    kind: str


@dataclass(frozen=True)
class Section:
    id: int
    a: int
    b: int
    length_m: float
    joints: int
    joint_channels: Tuple[Tuple[int, ...], ...] = ()

    @property
    def endpoints(self) -> Tuple[int, int]:
        return (self.a, self.b)


@dataclass(frozen=True)
class PlcLink:
    """An undirected pair of modems that hear each other (a < b)."""

    a: int
    b: int
    path: Tuple[int, ...]
    direct: bool

    @property
    def key(self) -> str:
        return f"{self.a}-{self.b}"

    def connection_ids(self) -> Tuple[str, str]:
        return (f"{self.a}-{self.b}", f"{self.b}-{self.a}")


@dataclass(frozen=True)
class GridTopology:
    nodes: Tuple[Node, ...]
    sections: Tuple[Section, ...]
    plc_links: Tuple[PlcLink, ...]
    hop_radius: int = 3

    def __post_init__(self):
        adj = {n.id: [] for n in self.nodes}
        for s in self.sections:
            adj[s.a].append((s.b, s.id))
            adj[s.b].append((s.a, s.id))
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_links", {(l.a, l.b): l for l in self.plc_links})
        object.__setattr__(self, "_sections", {s.id: s for s in self.sections})

    @property
    def node_ids(self) -> List[int]:
        return [n.id for n in self.nodes]

    def section(self, sid: int) -> Section:
        return self._sections[sid]

    def neighbors(self, node: int) -> List[int]:
        return sorted(nb for nb, _ in self._adj[node])

    def link(self, a: int, b: int) -> Optional[PlcLink]:
        return self._links.get((min(a, b), max(a, b)))

    def bfs(self, source: int) -> Dict[int, Tuple[int, Tuple[int, ...]]]:
        """Hop count and section path from ``source`` to every node."""
        out = {source: (0, ())}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            hops, path = out[u]
            for v, sid in sorted(self._adj[u]):
                if v not in out:
                    out[v] = (hops + 1, path + (sid,))
                    queue.append(v)
        return out

    def section_path(self, a: int, b: int) -> Tuple[int, ...]:
        return self.bfs(a)[b][1]

    def hop_distance(self, a: int, b: int) -> int:
        return self.bfs(a)[b][0]

    def is_tree(self) -> bool:
        return len(self.sections) == len(self.nodes) - 1 and len(self.bfs(self.nodes[0].id)) == len(self.nodes)

    def to_dict(self) -> dict:
        return {
            "hop_radius": self.hop_radius,
            "nodes": [asdict(n) for n in self.nodes],
            "sections": [
                {**asdict(s), "joint_channels": [list(c) for c in s.joint_channels]} for s in self.sections
            ],
            "plc_links": [{"a": l.a, "b": l.b, "path": list(l.path), "direct": l.direct} for l in self.plc_links],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridTopology":
        return cls(
            nodes=tuple(Node(**n) for n in d["nodes"]),
            sections=tuple(
                Section(**{**s, "joint_channels": tuple(tuple(c) for c in s["joint_channels"])}) for s in d["sections"]
            ),
            plc_links=tuple(PlcLink(l["a"], l["b"], tuple(l["path"]), l["direct"]) for l in d["plc_links"]),
            hop_radius=d.get("hop_radius", 3),
        )


@dataclass
class GroundTruth:
    topology: GridTopology
    events: List[dict] = field(default_factory=list)

    @property
    def link_labels(self) -> Dict[str, bool]:
        return {l.key: l.direct for l in self.topology.plc_links}

    @property
    def section_joints(self) -> Dict[int, int]:
        return {s.id: s.joints for s in self.topology.sections}

    def is_direct(self, a: int, b: int) -> bool:
        link = self.topology.link(a, b)
        return link is not None and link.direct

    def with_event(self, event: "EventSpec") -> "GroundTruth":
        return GroundTruth(self.topology, [*self.events, event.to_dict()])

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.to_dict(),
            "links": self.link_labels,
            "sections": {
                str(s.id): {
                    "endpoints": [s.a, s.b],
                    "length_m": s.length_m,
                    "joints": s.joints,
                    "joint_channels": [list(c) for c in s.joint_channels],
                }
                for s in self.topology.sections
            },
            "events": self.events,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(GridTopology.from_dict(d["topology"]), list(d.get("events", [])))


@dataclass(frozen=True)
class TopologyConfig:
    n_nodes: int = 12
    max_degree: int = 3
    joint_count_range: Tuple[int, int] = (0, 5)
    hop_radius: int = 3
    length_range_m: Tuple[float, float] = (60.0, 110.0)
    joint_types: Tuple[Tuple[int, ...], ...] = (DEFAULT_JOINT_CHANNELS,)
    seed: int = 0


def _plc_links(n_nodes: int, edges: Sequence[Tuple[int, int]], hop_radius: int) -> Tuple[PlcLink, ...]:
    probe = GridTopology(
        nodes=tuple(Node(i, "household") for i in range(n_nodes)),
        sections=tuple(Section(k, a, b, 0.0, 0) for k, (a, b) in enumerate(edges)),
        plc_links=(),
    )
    links = []
    for a in range(n_nodes):
        for b, (hops, path) in sorted(probe.bfs(a).items()):
            if b > a and hops <= hop_radius:
                links.append(PlcLink(a, b, path, hops == 1))
    return tuple(links)


def build_topology(
    edges: Sequence[Tuple[int, int]],
    lengths_m: Sequence[float],
    joints: Sequence[int],
    hop_radius: int = 3,
    joint_types: Sequence[Sequence[int]] = (DEFAULT_JOINT_CHANNELS,),
    joint_type_of: Optional[Sequence[Sequence[int]]] = None,
) -> Tuple[GridTopology, GroundTruth]:
    """Assemble a radial grid from an explicit edge list (node ids ``0..n-1``).

    ``joint_type_of[k]`` picks the joint type of each joint on section ``k``;
    by default every joint uses the first type.
    """
    n_nodes = len(edges) + 1
    degree = np.zeros(n_nodes, dtype=int)
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    kinds = ["substation"] + ["cabinet" if degree[i] >= 3 else "household" for i in range(1, n_nodes)]
    sections = []
    for k, (a, b) in enumerate(edges):
        types = joint_type_of[k] if joint_type_of is not None else [0] * int(joints[k])
        channels = tuple(tuple(int(c) for c in joint_types[t]) for t in types)
        sections.append(Section(k, int(a), int(b), float(lengths_m[k]), int(joints[k]), channels))
    topo = GridTopology(
        nodes=tuple(Node(i, kinds[i]) for i in range(n_nodes)),
        sections=tuple(sections),
        plc_links=_plc_links(n_nodes, edges, hop_radius),
        hop_radius=hop_radius,
    )
    if not topo.is_tree():
        raise SimulationError("edges must form a connected radial (acyclic) grid")
    return topo, GroundTruth(topo)


def generate_topology(config: TopologyConfig) -> Tuple[GridTopology, GroundTruth]:
    """Random radial grid rooted at a substation (node 0)."""
    if config.n_nodes < 2:
        raise SimulationError("n_nodes must be at least 2")
    if config.max_degree < 2 and config.n_nodes > 2:
        raise SimulationError("max_degree must be at least 2 for more than two nodes")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, zlib.crc32(b"topology")]))
    degree = np.zeros(config.n_nodes, dtype=int)
    edges = []
    for v in range(1, config.n_nodes):
        open_nodes = np.flatnonzero(degree[:v] < config.max_degree)
        u = int(rng.choice(open_nodes))
        edges.append((u, v))
        degree[u] += 1
        degree[v] += 1
    lo, hi = config.length_range_m
    lengths = np.round(rng.uniform(lo, hi, size=len(edges)), 1)
    jlo, jhi = config.joint_count_range
    joints = rng.integers(jlo, jhi + 1, size=len(edges))
    type_of = [list(rng.integers(0, len(config.joint_types), size=int(j))) for j in joints]
    return build_topology(edges, lengths, joints, config.hop_radius, config.joint_types, type_of)


# ------------------------------------------------------------------- physics


@dataclass(frozen=True, eq=False)
class TransferModel:
    base_loss_db_per_km: np.ndarray
    joint_notch_depth_db: float = 6.0
    joint_notch_width_channels: float = 2.0
    tx_headroom_db: float = 38.0

    def __post_init__(self):
        loss = np.asarray(self.base_loss_db_per_km, dtype=np.float64)
        if loss.shape != (N_CHANNELS,):
            raise SimulationError(f"base loss must have {N_CHANNELS} entries")
        if np.any(loss < 0) or self.joint_notch_depth_db < 0:
            raise SimulationError("losses must be non-negative")
        if self.joint_notch_width_channels < 1:
            raise SimulationError("notch width must be at least one channel")
        object.__setattr__(self, "base_loss_db_per_km", loss)

    @classmethod
    def default(
        cls, low_db_per_km: float = 15.0, high_db_per_km: float = 110.0, **kwargs
    ) -> "TransferModel":
        x = np.arange(N_CHANNELS) / (N_CHANNELS - 1)
        loss = low_db_per_km + (high_db_per_km - low_db_per_km) * (0.5 * np.sqrt(x) + 0.5 * x)
        return cls(loss, **kwargs)

    @classmethod
    def flat(cls, **kwargs) -> "TransferModel":
        return cls(np.zeros(N_CHANNELS), **kwargs)

    def params(self) -> dict:
        return {
            "base_loss_low_db_per_km": float(self.base_loss_db_per_km[0]),
            "base_loss_high_db_per_km": float(self.base_loss_db_per_km[-1]),
            "joint_notch_depth_db": self.joint_notch_depth_db,
            "joint_notch_width_channels": self.joint_notch_width_channels,
            "tx_headroom_db": self.tx_headroom_db,
        }


@dataclass(frozen=True)
class Interferer:
    """Band-limited noise source active daily between two UTC hours."""

    band: Tuple[int, int]
    depth_db: float
    start_hour: float = 0.0
    end_hour: float = 24.0

    def active(self, hours: np.ndarray) -> np.ndarray:
        if self.start_hour <= self.end_hour:
            return (hours >= self.start_hour) & (hours < self.end_hour)
        return (hours >= self.start_hour) | (hours < self.end_hour)


@dataclass(frozen=True)
class NoiseModel:
    daily_amp_db: float = 2.0
    seasonal_amp_db: float = 1.0
    awgn_sigma_db: float = 1.0
    interferers: Tuple[Interferer, ...] = ()

    def __post_init__(self):
        if min(self.daily_amp_db, self.seasonal_amp_db, self.awgn_sigma_db) < 0:
            raise SimulationError("noise amplitudes must be non-negative")
        for itf in self.interferers:
            if itf.depth_db < 0:
                raise SimulationError("interferer depth must be non-negative")

    @classmethod
    def off(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, ())

    def sample(self, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Noise in dB for each timestamp (t x 917); positive values lower the SNR."""
        times = np.asarray(times, dtype=np.int64)
        hours = (times % 86400) / 3600.0
        days = times / 86400.0
        doy = (days - 0.0) % 365.25
        common = self.daily_amp_db * np.sin(2 * np.pi * (hours - 13.0) / 24.0)
        common = common + self.seasonal_amp_db * np.cos(2 * np.pi * doy / 365.25)
        noise = np.repeat(common[:, None], N_CHANNELS, axis=1)
        for itf in self.interferers:
            lo, hi = itf.band
            on = itf.active(hours)
            noise[on, lo : hi + 1] += itf.depth_db
        if self.awgn_sigma_db > 0:
            noise += self.awgn_sigma_db * rng.standard_normal(noise.shape)
        return noise


def joint_notches(joint_channels: Iterable[Sequence[int]], depth_db: float, width: float) -> np.ndarray:
    i = np.arange(N_CHANNELS, dtype=np.float64)
    out = np.zeros(N_CHANNELS)
    for channels in joint_channels:
        for c in channels:
            out += depth_db * np.exp(-(((i - c) / width) ** 2))
    return out


def section_attenuation(section: Section, transfer_model: TransferModel) -> np.ndarray:
    """Per-channel attenuation (dB) of one cable section."""
    base = transfer_model.base_loss_db_per_km * (section.length_m / 1000.0)
    return base + joint_notches(
        section.joint_channels, transfer_model.joint_notch_depth_db, transfer_model.joint_notch_width_channels
    )


def path_attenuation(topology: GridTopology, path: Sequence[int], transfer_model: TransferModel) -> np.ndarray:
    total = np.zeros(N_CHANNELS)
    for sid in path:
        total += section_attenuation(topology.section(sid), transfer_model)
    return total


def link_rng(seed: int, key: str) -> np.random.Generator:
    """Independent random stream per (seed, link or node key)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(key.encode())]))


def link_snr(topology: GridTopology, link: PlcLink, transfer_model: TransferModel, noise=None) -> np.ndarray:
    """Unclipped, unquantised SNR (dB) of a link; ``noise`` is t x 917 dB or None."""
    snr = transfer_model.tx_headroom_db - path_attenuation(topology, link.path, transfer_model)
    if noise is None:
        return snr
    return snr[None, :] - np.asarray(noise, dtype=np.float64)


def _compose_snr(atten: np.ndarray, noise: np.ndarray, transfer_model: TransferModel, profile: Profile) -> np.ndarray:
    snr = transfer_model.tx_headroom_db - atten[None, :] - noise
    snr = np.clip(snr, profile.range_min, profile.range_max)
    return np.round(snr, 3).astype(np.float32)


def path_snr(
    topology: GridTopology,
    link: PlcLink,
    t: int,
    transfer_model: TransferModel,
    noise_model: NoiseModel,
    rng: np.random.Generator,
    profile: Union[str, Profile] = "fin2",
) -> ChannelSpectrum:
    """SNR spectrum of ``link`` at a single instant."""
    prof = get_profile(profile)
    atten = path_attenuation(topology, link.path, transfer_model)
    noise = noise_model.sample(np.array([t]), rng)
    return ChannelSpectrum(_compose_snr(atten, noise, transfer_model, prof)[0], prof)


# -------------------------------------------------------------------- events


@dataclass(frozen=True)
class EventSpec:
    """An injected disturbance.

    ``target`` is ``"node:<id>"`` (all links touching the node) or
    ``"link:<a>-<b>"`` (both directions of the link). The event covers
    ``[start, start + duration)``.
    """

    kind: str
    target: str
    start: int
    duration: int
    severity_db: float
    band: Tuple[int, int] = (600, 700)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        d["end"] = self.start + self.duration
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventSpec":
        return cls(
            kind=d["kind"],
            target=str(d["target"]),
            start=int(d["start"]),
            duration=int(d["duration"]),
            severity_db=float(d["severity_db"]),
            band=tuple(d.get("band", (600, 700))),
        )

    def affects(self, connection_id: str) -> bool:
        tx, rx = (int(x) for x in connection_id.split("-"))
        kind, _, ref = self.target.partition(":")
        if kind == "node":
            return int(ref) in (tx, rx)
        if kind == "link":
            a, b = (int(x) for x in ref.split("-"))
            return {a, b} == {tx, rx}
        raise SimulationError(f"bad event target {self.target!r}")


# ------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    series: Dict[str, MeasurementSeries]
    ground_truth: GroundTruth
    profile: Profile = PROFILES["fin2"]
    time_range: Tuple[int, int] = (0, 0)
    transfer_model: Optional[TransferModel] = None

    @property
    def topology(self) -> GridTopology:
        return self.ground_truth.topology

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, key: str) -> MeasurementSeries:
        return self.series[key]

    def all_spectra(self) -> np.ndarray:
        return np.concatenate([s.spectra for s in self.series.values()])

    @property
    def timestamps(self) -> np.ndarray:
        start, end = self.time_range
        return np.arange(start, end, SLOT_SECONDS, dtype=np.int64)

    def write(self, out_dir: str) -> List[str]:
        os.makedirs(os.path.join(out_dir, "series"), exist_ok=True)
        entries = []
        for cid, s in sorted(self.series.items()):
            rel = f"series/{cid}.csv"
            with open(os.path.join(out_dir, rel), "wb") as fh:
                fh.write(serialize_measurement_file(s))
            tx, rx = (int(x) for x in cid.split("-"))
            link = self.topology.link(tx, rx)
            entries.append(
                {
                    "connection_id": cid,
                    "file": rel,
                    "profile": self.profile.name,
                    "tx": tx,
                    "rx": rx,
                    "rows": len(s),
                    "direct": bool(link.direct) if link else None,
                }
            )
        manifest = {"profile": self.profile.name, "time_range": list(self.time_range), "series": entries}
        if self.transfer_model is not None:
            manifest["transfer_model"] = self.transfer_model.params()
        _write_json(os.path.join(out_dir, "manifest.json"), manifest)
        _write_json(os.path.join(out_dir, "ground_truth.json"), self.ground_truth.to_dict())
        return [e["file"] for e in entries]

    @classmethod
    def read(cls, in_dir: str) -> "Dataset":
        with open(os.path.join(in_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(os.path.join(in_dir, "ground_truth.json")) as fh:
            gt = GroundTruth.from_dict(json.load(fh))
        series = {}
        for entry in manifest["series"]:
            with open(os.path.join(in_dir, entry["file"]), "rb") as fh:
                series[entry["connection_id"]] = parse_measurement_file(
                    fh.read(), entry.get("profile", manifest["profile"]), entry["connection_id"]
                )
        tm = manifest.get("transfer_model")
        transfer = None
        if tm is not None:
            transfer = TransferModel.default(
                tm["base_loss_low_db_per_km"],
                tm["base_loss_high_db_per_km"],
                joint_notch_depth_db=tm["joint_notch_depth_db"],
                joint_notch_width_channels=tm["joint_notch_width_channels"],
                tx_headroom_db=tm["tx_headroom_db"],
            )
        return cls(series, gt, get_profile(manifest["profile"]), tuple(manifest["time_range"]), transfer)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _node_phases(seed: int, node: int, times: np.ndarray) -> PhaseMeasurements:
    rng = link_rng(seed, f"node{node}")
    hours = (times % 86400) / 3600.0
    t = len(times)
    sag = 4.0 * np.sin(2 * np.pi * (hours - 13.0) / 24.0)
    voltage = 230.0 + rng.normal(0, 1.5, size=3)[None, :] - sag[:, None] + rng.normal(0, 0.5, size=(t, 3))
    thd = np.abs(0.02 + 0.01 * np.sin(2 * np.pi * (hours - 13.0) / 24.0)[:, None] + rng.normal(0, 0.002, size=(t, 3)))
    angle = (np.array([0.0, 120.0, 240.0])[None, :] + rng.normal(0, 0.3, size=(t, 3))) % 360.0
    return PhaseMeasurements(np.round(voltage, 3), np.round(thd, 3), np.round(angle, 3) % 360.0)


def synthesize_dataset(
    topology: GridTopology,
    transfer_model: TransferModel,
    noise_model: NoiseModel,
    time_range: Tuple[int, int],
    seed: int,
    profile: Union[str, Profile] = "fin2",
    link_noise: Optional[Dict[str, NoiseModel]] = None,
    ground_truth: Optional[GroundTruth] = None,
    phases: bool = True,
    tonemaps: bool = True,
) -> Tuple[Dataset, GroundTruth]:
    """One series per direction of every PLC link over ``[start, end)``.

    ``link_noise`` overrides the noise model per undirected link key
    (``"a-b"``, a < b).
    """
    prof = get_profile(profile)
    start, end = (int(x) for x in time_range)
    if start % SLOT_SECONDS or end % SLOT_SECONDS:
        raise SimulationError("time range must be aligned to the 15-minute grid")
    if end <= start:
        raise SimulationError("empty time range")
    times = np.arange(start, end, SLOT_SECONDS, dtype=np.int64)
    gt = ground_truth if ground_truth is not None else GroundTruth(topology)
    node_phase = {}
    series = {}
    for link in topology.plc_links:
        atten = path_attenuation(topology, link.path, transfer_model)
        model = (link_noise or {}).get(link.key, noise_model)
        for cid in link.connection_ids():
            noise = model.sample(times, link_rng(seed, cid))
            snr = _compose_snr(atten, noise, transfer_model, prof)
            rx = int(cid.split("-")[1])
            if phases and rx not in node_phase:
                node_phase[rx] = _node_phases(seed, rx, times)
            series[cid] = MeasurementSeries(
                connection_id=cid,
                timestamps=times,
                spectra=snr,
                tonemaps=derive_tonemap(snr, prof) if tonemaps else None,
                phases=node_phase.get(rx) if phases else None,
                profile=prof,
            )
    series = dict(sorted(series.items()))
    return Dataset(series, gt, prof, (start, end), transfer_model), gt


def event_effect(event: EventSpec, times: np.ndarray, transfer_model: Optional[TransferModel] = None) -> np.ndarray:
    """SNR reduction (dB, t x 917) caused by ``event`` at ``times``."""
    effect = np.zeros((len(times), N_CHANNELS))
    if event.duration <= 0:
        return effect
    end = event.start + event.duration
    if event.kind == "fuse_failure":
        on = (times >= event.start) & (times < end)
        effect[on] = event.severity_db * FUSE_RAMP
    elif event.kind == "transient_interferer":
        on = (times >= event.start) & (times < end)
        lo, hi = event.band
        effect[np.ix_(on, np.arange(lo, hi + 1))] = event.severity_db
    elif event.kind == "cable_degradation":
        if transfer_model is not None and transfer_model.base_loss_db_per_km.max() > 0:
            shape = transfer_model.base_loss_db_per_km / transfer_model.base_loss_db_per_km.max()
        else:
            shape = np.ones(N_CHANNELS)
        frac = np.clip((times - event.start) / event.duration, 0.0, 1.0)
        effect = event.severity_db * frac[:, None] * shape[None, :]
    else:
        raise SimulationError(f"unknown event kind {event.kind!r}; expected one of {EVENT_KINDS}")
    return effect


def inject_event(dataset: Dataset, event: EventSpec) -> Dataset:
    """Return a copy of ``dataset`` with ``event`` applied and logged."""
    if event.kind not in EVENT_KINDS:
        raise SimulationError(f"unknown event kind {event.kind!r}; expected one of {EVENT_KINDS}")
    start, end = dataset.time_range
    if event.start < start or event.start + max(event.duration, 0) > end or event.duration < 0:
        raise SimulationError("event must lie within the dataset time range")
    prof = dataset.profile
    series = {}
    for cid, s in dataset.series.items():
        if event.duration == 0 or not event.affects(cid):
            series[cid] = s
            continue
        effect = event_effect(event, s.timestamps, dataset.transfer_model)
        snr = np.clip(s.spectra.astype(np.float64) - effect, prof.range_min, prof.range_max)
        snr = np.round(snr, 3).astype(np.float32)
        series[cid] = replace(s, spectra=snr, tonemaps=None if s.tonemaps is None else derive_tonemap(snr, prof))
    return Dataset(series, dataset.ground_truth.with_event(event), prof, dataset.time_range, dataset.transfer_model)


# ---------------------------------------------------------------- top level


def epoch(date: Union[str, dt.date]) -> int:
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    return int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp())


@dataclass(frozen=True)
class SimConfig:
    topology: TopologyConfig = TopologyConfig()
    transfer: dict = field(default_factory=dict)
    noise: NoiseModel = NoiseModel()
    start_date: str = "2021-01-01"
    days: int = 7
    profile: str = "fin2"
    events: Tuple[EventSpec, ...] = ()
    phases: bool = True
    seed: int = 0

    @property
    def time_range(self) -> Tuple[int, int]:
        start = epoch(self.start_date)
        return (start, start + self.days * 86400)

    def transfer_model(self) -> TransferModel:
        t = dict(self.transfer)
        low = t.pop("base_loss_low_db_per_km", 15.0)
        high = t.pop("base_loss_high_db_per_km", 110.0)
        return TransferModel.default(low, high, **t)


def simulate(config: SimConfig) -> Dataset:
    topo_cfg = replace(config.topology, seed=config.seed)
    topology, gt = generate_topology(topo_cfg)
    dataset, _ = synthesize_dataset(
        topology,
        config.transfer_model(),
        config.noise,
        config.time_range,
        config.seed,
        profile=config.profile,
        ground_truth=gt,
        phases=config.phases,
    )
    for event in config.events:
        dataset = inject_event(dataset, event)
    return dataset
