import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from plcgrid import sim
from plcgrid.core import N_CHANNELS

START = sim.epoch("2021-03-01")


def test_two_node_grid():
    topo, _ = sim.generate_topology(sim.TopologyConfig(n_nodes=2))
    assert len(topo.sections) == 1
    assert [l.direct for l in topo.plc_links] == [True]


def test_chain_of_four():
    topo, _ = sim.build_topology([(0, 1), (1, 2), (2, 3)], [80] * 3, [0] * 3, hop_radius=3)
    direct = [l for l in topo.plc_links if l.direct]
    indirect = [l for l in topo.plc_links if not l.direct]
    assert len(direct) == 3 and len(indirect) == 3
    assert sorted(len(l.path) for l in indirect) == [2, 2, 3]


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10_000), st.integers(2, 4))
def test_topology_invariants(n, seed, max_degree):
    topo, gt = sim.generate_topology(sim.TopologyConfig(n_nodes=n, max_degree=max_degree, seed=seed))
    assert topo.is_tree()
    assert len(topo.sections) == n - 1
    for link in topo.plc_links:
        assert link.direct == (len(link.path) == 1)
        assert link.path == topo.section_path(link.a, link.b)
        ends = [topo.section(s).endpoints for s in link.path]
        nodes = {x for e in ends for x in e}
        assert {link.a, link.b} <= nodes
    again, _ = sim.generate_topology(sim.TopologyConfig(n_nodes=n, max_degree=max_degree, seed=seed))
    assert again.to_dict() == topo.to_dict()


def test_section_attenuation_zero():
    s = sim.Section(0, 0, 1, 0.0, 0)
    assert np.all(sim.section_attenuation(s, sim.TransferModel.default()) == 0)


def test_single_notch():
    tm = sim.TransferModel.default()
    s = sim.Section(0, 0, 1, 100.0, 1, ((300,),))
    base = sim.section_attenuation(sim.Section(0, 0, 1, 100.0, 0), tm)
    a = sim.section_attenuation(s, tm)
    assert a[300] - base[300] == pytest.approx(6.0)
    assert a[302] - base[302] == pytest.approx(6 * np.exp(-1.0))
    two = sim.section_attenuation(sim.Section(0, 0, 1, 100.0, 2, ((300,), (300,))), tm)
    assert two[300] - base[300] == pytest.approx(12.0)


def test_indirect_link_weaker_than_prefix():
    topo, _ = sim.build_topology([(0, 1), (1, 2)], [80, 90], [1, 2])
    tm, off = sim.TransferModel.default(), sim.NoiseModel.off()
    rng = np.random.default_rng(0)
    ab = sim.path_snr(topo, topo.link(0, 1), START, tm, off, rng).values
    ac = sim.path_snr(topo, topo.link(0, 2), START, tm, off, rng).values
    assert np.all(ac <= ab)


def test_zero_attenuation_is_headroom():
    topo, _ = sim.build_topology([(0, 1)], [0.0], [0])
    tm = sim.TransferModel.flat(tx_headroom_db=50.0)
    spec = sim.path_snr(topo, topo.link(0, 1), START, tm, sim.NoiseModel.off(), np.random.default_rng(0))
    assert np.all(spec.values == 40.0)


def test_path_snr_deterministic():
    topo, _ = sim.build_topology([(0, 1)], [80.0], [2])
    args = (topo, topo.link(0, 1), START, sim.TransferModel.default(), sim.NoiseModel())
    a = sim.path_snr(*args, np.random.default_rng(5)).values
    b = sim.path_snr(*args, np.random.default_rng(5)).values
    assert np.array_equal(a, b)


def test_link_snr_matches_dataset_before_quantisation():
    topo, _ = sim.build_topology([(0, 1), (1, 2)], [70, 95], [3, 1])
    tm = sim.TransferModel.default()
    ds, _ = sim.synthesize_dataset(topo, tm, sim.NoiseModel.off(), (START, START + 86400), 0)
    exact = np.clip(sim.link_snr(topo, topo.link(0, 2), tm), -10, 40)
    assert np.max(np.abs(ds.series["0-2"].spectra[0] - exact)) <= 5e-4 + 1e-6


def test_two_node_day():
    topo, _ = sim.build_topology([(0, 1)], [80.0], [1])
    ds, _ = sim.synthesize_dataset(topo, sim.TransferModel.default(), sim.NoiseModel(), (START, START + 86400), 0)
    assert sorted(ds.series) == ["0-1", "1-0"]
    assert all(len(s) == 96 for s in ds.series.values())


def test_series_count_matches_bfs_oracle():
    ds = sim.simulate(sim.SimConfig(topology=sim.TopologyConfig(n_nodes=6), days=30, seed=3, phases=False))
    topo = ds.topology
    n = len(topo.nodes)
    rows = [s.a for s in topo.sections] + [s.b for s in topo.sections]
    cols = [s.b for s in topo.sections] + [s.a for s in topo.sections]
    hops = shortest_path(csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)), unweighted=True)
    pairs = sum(1 for a in range(n) for b in range(a + 1, n) if hops[a, b] <= 3)
    assert len(ds.series) == 2 * pairs


def test_write_is_byte_identical(tmp_path):
    cfg = sim.SimConfig(topology=sim.TopologyConfig(n_nodes=4), days=1, seed=1)
    for d in ("a", "b"):
        sim.simulate(cfg).write(str(tmp_path / d))
    for root, _, files in os.walk(tmp_path / "a"):
        for f in files:
            p = os.path.join(root, f)
            q = p.replace(str(tmp_path / "a"), str(tmp_path / "b"))
            with open(p, "rb") as fa, open(q, "rb") as fb:
                assert fa.read() == fb.read(), f


def test_dataset_round_trip(tmp_path):
    ds = sim.simulate(sim.SimConfig(topology=sim.TopologyConfig(n_nodes=3), days=1, seed=2))
    ds.write(str(tmp_path))
    back = sim.Dataset.read(str(tmp_path))
    assert sorted(back.series) == sorted(ds.series)
    for k in ds.series:
        assert back.series[k] == ds.series[k]
    assert back.ground_truth.to_dict() == ds.ground_truth.to_dict()


def _quiet_pair(days=2):
    topo, _ = sim.build_topology([(0, 1)], [40.0], [0])
    ds, _ = sim.synthesize_dataset(topo, sim.TransferModel.default(), sim.NoiseModel.off(), (START, START + days * 86400), 0)
    return ds


def test_fuse_failure_ramp():
    ds = _quiet_pair()
    ev = sim.EventSpec("fuse_failure", "link:0-1", START + 86400, 3600, 20.0)
    out = sim.inject_event(ds, ev)
    k = 96 + 1
    drop = ds.series["0-1"].spectra[k].astype(float) - out.series["0-1"].spectra[k]
    assert drop[916] == pytest.approx(20.0, abs=1e-3)
    assert drop[0] == pytest.approx(6.0, abs=1e-3)
    assert np.array_equal(out.series["0-1"].spectra[:96], ds.series["0-1"].spectra[:96])
    # the interval is half-open
    assert np.array_equal(out.series["0-1"].spectra[96 + 4], ds.series["0-1"].spectra[96 + 4])


def test_zero_duration_event_only_logged():
    ds = _quiet_pair()
    out = sim.inject_event(ds, sim.EventSpec("fuse_failure", "node:1", START, 0, 20.0))
    assert all(out.series[k] == ds.series[k] for k in ds.series)
    assert len(out.ground_truth.events) == 1


def test_overlapping_events_add_and_clamp():
    ds = _quiet_pair()
    e1 = sim.EventSpec("transient_interferer", "link:0-1", START, 3600, 10.0, (100, 200))
    e2 = sim.EventSpec("transient_interferer", "link:0-1", START, 3600, 15.0, (150, 250))
    out = sim.inject_event(sim.inject_event(ds, e1), e2)
    base = ds.series["0-1"].spectra[0].astype(float)
    got = out.series["0-1"].spectra[0]
    assert got[120] == pytest.approx(max(base[120] - 10, -10), abs=1e-3)
    assert got[175] == pytest.approx(max(base[175] - 25, -10), abs=1e-3)
    assert got.min() >= -10


def test_event_outside_range_rejected():
    with pytest.raises(sim.SimulationError):
        sim.inject_event(_quiet_pair(), sim.EventSpec("fuse_failure", "node:0", START - 900, 900, 5.0))
    with pytest.raises(sim.SimulationError):
        sim.inject_event(_quiet_pair(), sim.EventSpec("meteor", "node:0", START, 900, 5.0))


def test_noise_model_validation():
    with pytest.raises(sim.SimulationError):
        sim.NoiseModel(awgn_sigma_db=-1.0)
    n = sim.NoiseModel().sample(np.arange(START, START + 4 * 900, 900), np.random.default_rng(0))
    assert n.shape == (4, N_CHANNELS)
