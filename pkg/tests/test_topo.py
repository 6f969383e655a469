import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plcgrid import nn, sim, topo
from plcgrid.core import N_CHANNELS

START = sim.epoch("2021-03-01")
SMALL = topo.TopoParams(hidden=16, embed_dim=8, ae_epochs=3, ae_batch_size=16, filter_channels=4, epochs=4, batch_size=4, lr=3e-3)


def pair_dataset():
    t, _ = sim.build_topology([(0, 1)], [80.0], [1])
    ds, _ = sim.synthesize_dataset(t, sim.TransferModel.default(), sim.NoiseModel(), (START, START + 86400), 0)
    return ds


@pytest.fixture(scope="module")
def grid():
    return sim.simulate(sim.SimConfig(topology=sim.TopologyConfig(n_nodes=12), days=1, seed=0, phases=False))


def t0(ds):
    return int(min(s.timestamps[0] for s in ds.series.values()))


@pytest.fixture(scope="module")
def trained(grid):
    nbs = topo.grid_neighborhoods(grid.topology, min_size=4)
    samples = topo.make_samples(grid, nbs, t0(grid) + 900 * np.arange(0, 96, 12))
    spectra = np.concatenate([s.adjacency.edge_spectra() for s in samples])
    fit = topo.pretrain_encoder(spectra, SMALL, seed=0)
    return fit, samples, topo.train_topology_filter(samples, fit.encoder, SMALL, seed=0)


def test_two_node_tensor():
    ds = pair_dataset()
    adj = topo.build_adjacency_tensor(ds, topo.Neighborhood(0, (0, 1)), START + 900)
    assert adj.tensor.shape == (2, 2, N_CHANNELS)
    assert adj.mask.tolist() == [[False, True], [True, False]]
    assert np.array_equal(adj.tensor[0, 1], ds.series["0-1"].spectra[1])
    assert np.array_equal(adj.tensor[1, 0], ds.series["1-0"].spectra[1])
    assert np.all(adj.tensor[0, 0] == ds.profile.range_min)


def test_tensor_errors():
    ds = pair_dataset()
    nb = topo.Neighborhood(0, (0, 1))
    with pytest.raises(topo.TopologyError):
        topo.build_adjacency_tensor(ds, nb, START + 10)
    with pytest.raises(topo.TopologyError):
        topo.build_adjacency_tensor(ds, nb, START - 900)
    with pytest.raises(topo.TopologyError):
        topo.Neighborhood(5, (0, 1))


def test_neighborhoods(grid):
    for nb in topo.grid_neighborhoods(grid.topology):
        assert 2 <= nb.n <= 8 and nb.center in nb.members
        hops = grid.topology.bfs(nb.center)
        assert all(hops[m][0] <= 2 for m in nb.members)
    assert topo.Neighborhood(0, (3, 0, 1)).members == (0, 1, 3)


def test_symmetrize_examples():
    c = np.array([[0.0, 0.9], [0.1, 0.0]])
    assert topo.symmetrize(c).tolist() == [[0.0, 0.5], [0.5, 0.0]]
    assert topo.symmetrize(c, rule="min")[0, 1] == 0.1
    assert topo.symmetrize(c, rule="max")[1, 0] == 0.9
    sym = np.array([[0.0, 0.3], [0.3, 0.0]])
    assert np.array_equal(topo.symmetrize(sym), sym)
    with pytest.raises(ValueError):
        topo.symmetrize(c, rule="median")


def test_symmetrize_one_direction_copied():
    c = np.array([[0.0, 0.8], [0.0, 0.0]])
    m = np.array([[False, True], [False, False]])
    assert topo.symmetrize(c, m)[1, 0] == 0.8


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)), arrays(bool, (5, 5)), st.sampled_from(["mean", "min", "max"]))
def test_symmetrize_exact_and_idempotent(c, m, rule):
    s = topo.symmetrize(c, m, rule)
    assert np.all(s - s.T == 0)
    assert np.array_equal(topo.symmetrize(s, m | m.T, rule), s)


def pred(conf, members, mask=None):
    conf = np.asarray(conf, float)
    mask = ~np.eye(len(members), dtype=bool) if mask is None else mask
    return topo.TopologyPrediction(conf, conf >= 0.5, 0.5, mask, tuple(members))


def test_overlap_vote():
    preds = [pred([[0, c], [c, 0]], (3, 7)) for c in (0.8, 0.4, 0.9)]
    d = topo.overlap_vote(preds, (7, 3))
    assert d.confidence == pytest.approx(0.7) and d.direct and d.votes == 3
    one = topo.overlap_vote(preds[1:2], (3, 7))
    assert one.confidence == 0.4 and not one.direct
    with pytest.raises(topo.TopologyError):
        topo.overlap_vote(preds, (3, 9))


def test_eval_counting():
    truth = np.zeros((4, 4), bool)
    truth[0, 1] = truth[1, 0] = True
    mask = ~np.eye(4, dtype=bool)
    assert topo.eval_topology(truth, truth, mask)["entrywise_acc"] == 1.0
    wrong = truth.copy()
    wrong[2, 3] = True
    r = topo.eval_topology(wrong, truth, mask)
    assert r["entrywise_acc"] == 11 / 12 and r["exact_matrix_acc"] == 0.0
    with pytest.raises(topo.TopologyError):
        topo.eval_topology(truth, truth[:3, :3], mask)


def test_eval_all_false_base_rate():
    mask = np.zeros((5, 5), bool)
    mask[0, 1:] = mask[1, 2:] = mask[2, 3:] = mask[3, 4] = True  # 10 entries
    truth = np.zeros((5, 5), bool)
    truth[0, 1] = truth[0, 2] = truth[1, 3] = True
    assert topo.eval_topology(np.zeros((5, 5), bool), truth, mask)["entrywise_acc"] == pytest.approx(0.7)


def test_pretrain_encoder(trained):
    fit, samples, _ = trained
    assert fit.loss_curve[-1] < fit.initial_mse
    x = samples[0].adjacency.edge_spectra()
    assert fit.encoder.forward(x).shape == (len(x), SMALL.embed_dim)
    spectra = np.concatenate([s.adjacency.edge_spectra() for s in samples])
    again = topo.pretrain_encoder(spectra, SMALL, seed=0)
    assert nn.dumps(again.encoder) == nn.dumps(fit.encoder)
    with pytest.raises(topo.TopologyError):
        topo.pretrain_encoder(spectra[:3], SMALL)


def test_training_loss_decreases(trained):
    _, _, model = trained
    assert model.loss_curve[-1] < model.loss_curve[0]


def test_single_class_rejected(trained):
    fit, samples, _ = trained
    s = samples[0]
    flat = topo.TopologySample(s.adjacency, np.zeros_like(s.labels))
    with pytest.raises(topo.TopologyError):
        topo.train_topology_filter([flat], fit.encoder, SMALL)


def test_variable_sizes(grid, trained):
    _, _, model = trained
    order = grid.topology.bfs(0)
    near = sorted(order, key=lambda v: (order[v][0], v))
    for n in (4, 8):
        nb = topo.Neighborhood(0, tuple(near[:n]))
        p = topo.predict_topology(model, topo.build_adjacency_tensor(grid, nb, t0(grid)))
        assert p.confidence.shape == (n, n)
        assert np.all((p.confidence >= 0) & (p.confidence <= 1))
        assert not p.binary.diagonal().any()


def test_thresholds_and_monotonicity(trained):
    _, samples, model = trained
    adj = samples[0].adjacency
    assert np.array_equal(topo.predict_topology(model, adj, 0.0).binary, adj.mask)
    assert not topo.predict_topology(model, adj, 1 + 1e-9).binary.any()
    prev = adj.mask
    for th in np.linspace(0, 1, 11):
        b = topo.predict_topology(model, adj, th).binary
        assert not (b & ~prev).any()
        prev = b


def test_masked_entries_do_not_affect_loss(trained):
    _, samples, model = trained
    s = next(s for s in samples if not s.adjacency.mask[~np.eye(s.adjacency.n, dtype=bool)].all())
    adj = s.adjacency
    t = adj.tensor.copy()
    t[~adj.mask] = 37.0
    other = topo.TopologySample(topo.AdjacencyTensor(t, adj.mask, adj.timestamp, adj.members), s.labels)
    assert topo.sample_loss(model, s)[0] == topo.sample_loss(model, other)[0]


def test_member_order_is_canonical(grid, trained):
    _, _, model = trained
    a = topo.build_adjacency_tensor(grid, topo.Neighborhood(1, (4, 1, 0, 2)), t0(grid))
    b = topo.build_adjacency_tensor(grid, topo.Neighborhood(1, (0, 2, 1, 4)), t0(grid))
    assert np.array_equal(topo.predict_topology(model, a).confidence, topo.predict_topology(model, b).confidence)


def test_export_and_round_trip(trained, tmp_path):
    _, samples, model = trained
    preds = [topo.symmetrize_prediction(topo.predict_topology(model, s.adjacency)) for s in samples]
    decisions = topo.collect_votes(preds)
    rows = json.loads(topo.edges_json(decisions))
    assert {"a", "b", "confidence", "votes"} <= set(rows[0])
    dot = topo.to_dot(decisions)
    assert dot.startswith("graph plc {") and dot.rstrip().endswith("}")
    model.save(str(tmp_path / "t.plcnn"))
    back = topo.TopologyModel.load(str(tmp_path / "t.plcnn"))
    assert np.array_equal(back.logits(samples[0].adjacency), model.logits(samples[0].adjacency))
