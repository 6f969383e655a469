"""Pipeline stages. Each writes its artifacts under ``<out>/<stage>/`` and
returns a JSON-ready report; only ``wall_time_s`` varies between identical runs."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import joints as J
from . import plotting
from . import topo as T
from .config import RunConfig, stage_seed, to_plain
from .core import PLCError, SLOTS_PER_DAY, format_timestamp
from .embed import StateModel, components_for_variance, fit_connection_states
from .sim import DEFAULT_JOINT_CHANNELS, Dataset, simulate
from .stateseq import (
    TemplateError,
    make_metric,
    mine_templates,
    radial_layout,
    render_radial,
    score_anomalies,
    split_sequence,
    to_state_sequence,
)

log = logging.getLogger("plcgrid")

STAGES = ("states", "anomaly", "joints", "topo", "radial")


class DependencyError(PLCError, RuntimeError):
    pass


def _write_json(path: Path, obj) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_plain(obj), indent=1, sort_keys=True) + "\n")
    return str(path)


def _finish(report: dict, out_dir: Path, t0: float) -> dict:
    report["wall_time_s"] = round(time.perf_counter() - t0, 3)
    _write_json(out_dir / "report.json", report)
    return report


def _rel(paths: List[str], root: Path) -> List[str]:
    return sorted(str(Path(p).relative_to(root)) for p in paths)


def load_dataset(cfg: RunConfig, out: Path) -> Dataset:
    d = cfg.dataset_dir(str(out))
    if not (d / "manifest.json").exists():
        raise DependencyError(f"no dataset at {d}; run the 'simulate' command first")
    return Dataset.read(str(d))


def load_state_model(out: Path) -> StateModel:
    p = out / "states" / "model.json"
    if not p.exists():
        raise DependencyError(f"no state model at {p}; run 'pipeline states' first")
    return StateModel.from_json(p.read_text())


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    sim = cfg.sim_config()
    dataset = simulate(sim)
    ddir = cfg.dataset_dir(str(out))
    files = dataset.write(str(ddir))
    stage_dir = out / "simulate"
    first = sorted(dataset.series)[0]
    fig = plotting.snr_heatmap(dataset.series[first].spectra, f"SNR of connection {first}", stage_dir / f"snr_{first}.png")
    n_direct = sum(l.direct for l in dataset.topology.plc_links)
    report = {
        "stage": "simulate",
        "seed": cfg.seed,
        "params": to_plain(sim),
        "dataset_dir": str(ddir.relative_to(out)) if ddir.is_relative_to(out) else str(ddir),
        "n_nodes": len(dataset.topology.nodes),
        "n_sections": len(dataset.topology.sections),
        "n_links": len(dataset.topology.plc_links),
        "n_direct_links": n_direct,
        "n_series": len(files),
        "n_timesteps": int(len(dataset.timestamps)),
        "events": dataset.ground_truth.events,
        "artifacts": _rel([fig], out),
    }
    return _finish(report, stage_dir, t0)


# ------------------------------------------------------------------ states


def run_states(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    dataset = load_dataset(cfg, out)
    seed = stage_seed(cfg.seed, "states")
    n_total = sum(len(s) for s in dataset.series.values())
    sample = min(cfg.states.sample_size, n_total)
    model = fit_connection_states(dataset, sample, cfg.states.params, seed)
    d = out / "states"
    d.mkdir(parents=True, exist_ok=True)
    (d / "model.json").write_text(model.to_json())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["connection_id", "timestamp", "state"])
    counts: Dict[int, int] = {}
    for cid in sorted(dataset.series):
        seq = to_state_sequence(dataset.series[cid], model)
        for t, s in zip(seq.timestamps, seq.states):
            w.writerow([cid, format_timestamp(int(t)), int(s)])
            counts[int(s)] = counts.get(int(s), 0) + 1
    (d / "sequences.csv").write_text(buf.getvalue())
    fig = plotting.embedding_scatter(model.reference_points, model.reference_labels, model.kl_trace, d / "embedding.png")
    labels = model.reference_labels
    report = {
        "stage": "states",
        "seed": cfg.seed,
        "stage_seed": seed,
        "params": {**model.params, "sample_size": sample},
        "n_states": len(model.centroids),
        "noise_fraction": float(np.mean(labels < 0)),
        "final_kl": model.kl_trace[-1] if model.kl_trace else None,
        "pca_components_95": components_for_variance(model.reference_spectra, 0.95),
        "state_counts": {str(k): v for k, v in sorted(counts.items())},
        "artifacts": _rel([str(d / "model.json"), str(d / "sequences.csv"), fig], out),
    }
    return _finish(report, d, t0)


# ----------------------------------------------------------------- anomaly


def run_anomaly(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    model = load_state_model(out)
    dataset = load_dataset(cfg, out)
    a = cfg.anomaly
    metric = make_metric(a.metric, model.centroids)
    d = out / "anomaly"
    d.mkdir(parents=True, exist_ok=True)
    templates, results, skipped, plot_data = {}, [], {}, {}
    for cid in sorted(dataset.series):
        seq = to_state_sequence(dataset.series[cid], model)
        try:
            train, ev = split_sequence(seq, a.split)
            ts = mine_templates(train, a.window_length, a.radius, a.min_support, metric)
        except (TemplateError, ValueError) as exc:
            skipped[cid] = str(exc)
            continue
        rep = score_anomalies(ev, ts, a.threshold, a.stride)
        templates[cid] = ts.to_dict()
        results.append(rep.to_dict())
        plot_data[cid] = (rep.window_starts // 900 - ev.timestamps[0] // 900, rep.scores, rep.threshold)
    _write_json(d / "templates.json", templates)
    _write_json(d / "anomalies.json", results)
    fig = plotting.anomaly_scores(plot_data, d / "scores.png") if plot_data else None
    n_intervals = sum(len(r["intervals"]) for r in results)
    report = {
        "stage": "anomaly",
        "seed": cfg.seed,
        "params": to_plain(a),
        "n_connections": len(results),
        "n_intervals": n_intervals,
        "flagged_connections": sorted(r["connection_id"] for r in results if r["intervals"]),
        "skipped": skipped,
        "artifacts": _rel([str(d / "templates.json"), str(d / "anomalies.json")] + ([fig] if fig else []), out),
    }
    return _finish(report, d, t0)


# ------------------------------------------------------------------ joints


def run_joints(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    dataset = load_dataset(cfg, out)
    seed = stage_seed(cfg.seed, "joints")
    train, val = J.build_joint_dataset(dataset)
    if not val:
        raise J.JointsError("validation split is empty; simulate a larger grid")
    model = J.train_joint_regressor(train, cfg.joints, seed)
    d = out / "joints"
    d.mkdir(parents=True, exist_ok=True)
    model.save(str(d / "model.plcnn"))
    evaluation = J.evaluate_joints(model, val)
    profile = J.channel_sensitivity(model, val)
    (d / "sensitivity.csv").write_text(profile.to_csv())
    peaks = profile.top_peaks()
    figs = [
        plotting.sensitivity_profile(profile.per_channel, profile.smoothed(), peaks, d / "sensitivity.png", DEFAULT_JOINT_CHANNELS),
        plotting.loss_curves({"train": model.loss_curve}, d / "loss.png"),
    ]
    report = json.loads(J.report_json(evaluation, profile))
    report.update(
        {
            "stage": "joints",
            "seed": cfg.seed,
            "stage_seed": seed,
            "params": to_plain(cfg.joints),
            "n_train": len(train),
            "n_val": len(val),
            "train_sections": sorted({s.section_id for s in train}),
            "val_sections": sorted({s.section_id for s in val}),
            "loss_curve": model.loss_curve,
            "artifacts": _rel([str(d / "model.plcnn"), str(d / "sensitivity.csv")] + figs, out),
        }
    )
    return _finish(report, d, t0)


# -------------------------------------------------------------------- topo


def topo_timestamps(dataset: Dataset, per_day: int, train_fraction: float):
    start, end = dataset.time_range
    days = (end - start) // 86400
    step = 86400 // per_day
    stamps = [start + k * 86400 + j * step for k in range(days) for j in range(per_day)]
    n_train_days = max(1, int(math.floor(train_fraction * days))) if days > 1 else 1
    cut = n_train_days * per_day
    if days == 1:
        cut = max(1, int(math.floor(train_fraction * per_day)))
    return stamps[:cut], stamps[cut:]


def evaluate_topology(model, samples, threshold=0.5, rule="mean") -> dict:
    preds = [T.predict_topology(model, s.adjacency, threshold) for s in samples]
    truths = [s.labels for s in samples]
    masks = [s.adjacency.mask for s in samples]
    raw = T.eval_topology([p.binary for p in preds], truths, masks)
    decisions = T.collect_votes([T.symmetrize_prediction(p, rule) for p in preds], threshold)
    post = T.eval_topology([T.apply_decisions(p, decisions) for p in preds], truths, masks)
    return {"raw": raw, "post": post, "decisions": decisions, "predictions": preds}


def run_topo(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    dataset = load_dataset(cfg, out)
    seed = stage_seed(cfg.seed, "topo")
    tc = cfg.topo
    nbs = T.grid_neighborhoods(dataset.topology, tc.radius, tc.max_size, tc.min_size)
    if not nbs:
        raise T.TopologyError(f"no neighbourhood with at least {tc.min_size} members")
    train_ts, eval_ts = topo_timestamps(dataset, tc.timesteps_per_day, tc.train_fraction)
    if not eval_ts:
        raise T.TopologyError("no evaluation timesteps; simulate more days or lower train_fraction")
    train = T.make_samples(dataset, nbs, train_ts)
    spectra = np.concatenate([s.adjacency.edge_spectra() for s in train])
    fit = T.pretrain_encoder(spectra, tc.params, seed)
    model = T.train_topology_filter(train, fit.encoder, tc.params, seed)
    ev_samples = T.make_samples(dataset, nbs, eval_ts)
    res = evaluate_topology(model, ev_samples, tc.threshold, tc.symmetrize_rule)
    sweep = {}
    for thr in (0.1, 0.3, 0.5, 0.7, 0.9):
        r = T.eval_topology([p.confidence >= thr for p in res["predictions"]], [s.labels for s in ev_samples], [s.adjacency.mask for s in ev_samples])
        sweep[f"{thr:.1f}"] = {"entrywise_acc": r["entrywise_acc"], "precision": r["precision"], "recall": r["recall"]}

    d = out / "topo"
    d.mkdir(parents=True, exist_ok=True)
    model.save(str(d / "model.plcnn"))
    (d / "edges.json").write_text(T.edges_json(res["decisions"]) + "\n")
    (d / "graph.dot").write_text(T.to_dot(res["decisions"]))
    nodes = dataset.topology.node_ids
    conf = np.zeros((len(nodes), len(nodes)))
    for (a, b), dec in res["decisions"].items():
        conf[a, b] = conf[b, a] = dec.confidence
    truth = T.direct_labels(dataset.ground_truth, nodes)
    fig = plotting.confidence_matrix(conf, truth, nodes, d / "confidence.png")
    curves = plotting.loss_curves({"autoencoder MSE": fit.loss_curve, "filter BCE": model.loss_curve}, d / "loss.png")
    report = {
        "stage": "topo",
        "seed": cfg.seed,
        "stage_seed": seed,
        "params": to_plain(tc),
        "n_neighborhoods": len(nbs),
        "neighborhood_sizes": sorted(nb.n for nb in nbs),
        "n_train_samples": len(train),
        "n_eval_samples": len(ev_samples),
        "entrywise_acc": res["post"]["entrywise_acc"],
        "exact_matrix_acc": res["post"]["exact_matrix_acc"],
        "precision": res["post"]["precision"],
        "recall": res["post"]["recall"],
        "raw": res["raw"],
        "post": res["post"],
        "threshold_sweep": sweep,
        "autoencoder": {"initial_mse": fit.initial_mse, "final_mse": fit.loss_curve[-1]},
        "filter_loss_curve": model.loss_curve,
        "artifacts": _rel([str(d / "model.plcnn"), str(d / "edges.json"), str(d / "graph.dot"), fig, curves], out),
    }
    return _finish(report, d, t0)


# ------------------------------------------------------------------ radial


def render_connection(cfg: RunConfig, out: Path, connection: Optional[str] = None, period: Optional[str] = None,
                      target: Optional[Path] = None) -> dict:
    model = load_state_model(out)
    dataset = load_dataset(cfg, out)
    cid = connection or cfg.radial.connection or sorted(dataset.series)[0]
    if cid not in dataset.series:
        raise PLCError(f"unknown connection {cid!r}")
    period = period or cfg.radial.period
    seq = to_state_sequence(dataset.series[cid], model)
    svg = render_radial(seq, period, size=cfg.radial.size)
    target = target or out / "radial" / f"{cid}_{period}.svg"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(svg)
    rings, slots, states, per_ring = radial_layout(seq, period)
    return {"connection_id": cid, "period": period, "n_rings": int(rings.max()) + 1, "n_arcs": int(len(states)),
            "slots_per_ring": int(per_ring), "file": str(target)}


def run_radial(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    info = render_connection(cfg, out)
    d = out / "radial"
    artifacts = _rel([info.pop("file")], out)
    report = {"stage": "radial", "seed": cfg.seed, "params": to_plain(cfg.radial), **info, "artifacts": artifacts}
    return _finish(report, d, t0)


RUNNERS = {"states": run_states, "anomaly": run_anomaly, "joints": run_joints, "topo": run_topo, "radial": run_radial}
