import numpy as np
import pytest

from plcgrid import joints, nn, sim
from plcgrid.core import N_CHANNELS, SLOTS_PER_DAY

START = sim.epoch("2021-03-01")
SMALL = joints.JointParams(channels=(2, 2), kernel_size=3, embed_dim=4, epochs=2, batch_size=8)


def star(joint_counts, days, noise=None):
    edges = [(0, k + 1) for k in range(len(joint_counts))]
    topo, _ = sim.build_topology(edges, [80.0] * len(edges), list(joint_counts), hop_radius=1)
    ds, _ = sim.synthesize_dataset(
        topo, sim.TransferModel.default(), noise or sim.NoiseModel.off(), (START, START + days * 86400), 0, phases=False, tonemaps=False
    )
    return ds


@pytest.fixture(scope="module")
def small_split():
    return joints.build_joint_dataset(star([0, 0, 1, 1, 3, 3, 3], 2, sim.NoiseModel()))


@pytest.fixture(scope="module")
def small_model(small_split):
    train, _ = small_split
    return joints.train_joint_regressor(train, SMALL, seed=0)


def test_dataset_counts():
    train, val = joints.build_joint_dataset(star([0, 1, 3], 30))
    samples = train + val
    assert len(samples) == 3 * 30 * 2
    for sid in range(3):
        assert sum(s.section_id == sid for s in samples) == 60


def test_labels_match_ground_truth(small_split):
    train, val = small_split
    ds = star([0, 0, 1, 1, 3, 3, 3], 1)
    for s in train + val:
        assert s.joint_count == ds.ground_truth.topology.section(s.section_id).joints


def test_split_is_section_disjoint(small_split):
    train, val = small_split
    assert val
    assert not {s.section_id for s in train} & {s.section_id for s in val}
    assert {s.joint_count for s in val} == {0, 1, 3}


def test_single_class_rejected():
    with pytest.raises(joints.JointsError):
        joints.build_joint_dataset(star([2, 2], 1))


def test_round_count():
    assert joints.round_count([-0.3, 2.5, 3.5, 0.49]).tolist() == [0, 2, 4, 0]


def test_training_deterministic(small_split, small_model):
    again = joints.train_joint_regressor(small_split[0], SMALL, seed=0)
    assert nn.dumps(again.network) == nn.dumps(small_model.network)
    assert again.loss_curve == small_model.loss_curve


def test_zero_contrastive_weight_is_plain_mae(small_split):
    train, _ = small_split
    p = joints.JointParams(**{**SMALL.__dict__, "contrastive_weight": 0.0})
    model = joints.train_joint_regressor(train, p, seed=1)
    trunk, head = joints.build_joint_network(p, 1)
    net = nn.Sequential([trunk, head], seed=1)
    X, y = joints.stack_windows(train)

    def mae(out, t):
        v, g = nn.mae(out[:, 0], t)
        return v, g[:, None]

    curve = nn.train(net, X, y, mae, nn.Adam(net.params(), lr=p.lr), p.epochs, p.batch_size, 1)
    assert curve == model.loss_curve
    assert nn.dumps(net) == nn.dumps(model.network)


def test_predict_shapes_and_errors(small_split, small_model):
    _, val = small_split
    raw, rounded = joints.predict_joints(small_model, val[0].window)
    assert raw.shape == (1,) and rounded[0] == joints.round_count(raw)[0]
    with pytest.raises(nn.ShapeError):
        joints.predict_joints(small_model, np.zeros((96, 10)))


def test_zero_weight_saliency(small_split):
    trunk, head = joints.build_joint_network(SMALL, 0)
    model = joints.JointModel(trunk, head, SMALL, 0)
    for p in model.network.params():
        p.data[:] = 0
    assert np.all(joints.regression_activation_map(model, small_split[1][0].window) == 0)


def test_saliency_matches_finite_differences(small_split, small_model):
    x = small_split[1][0].window.matrix.astype(np.float64)
    before = [p.grad.copy() for p in small_model.network.params()]
    sal = joints.regression_activation_map(small_model, x)
    assert sal.shape == (SLOTS_PER_DAY, N_CHANNELS) and np.all(sal >= 0)
    assert all(np.array_equal(b, p.grad) for b, p in zip(before, small_model.network.params()))
    rng = np.random.default_rng(0)
    eps = 1e-3
    for _ in range(20):
        i, j = rng.integers(SLOTS_PER_DAY), rng.integers(N_CHANNELS)
        up, dn = x.copy(), x.copy()
        up[i, j] += eps
        dn[i, j] -= eps
        fd = (small_model.forward(up[None])[0] - small_model.forward(dn[None])[0]) / (2 * eps)
        assert abs(sal[i, j] - abs(fd)) <= 1e-3 * max(abs(fd), 1e-12)


def test_sensitivity_profile(small_split, small_model):
    _, val = small_split
    prof = joints.channel_sensitivity(small_model, val)
    assert prof.n_windows == len(val)
    assert prof.per_channel.shape == (N_CHANNELS,) and np.all(prof.per_channel >= 0)
    assert abs(prof.per_channel.sum() - 1) <= 1e-9
    assert len(prof.top_peaks()) <= 3
    assert prof.to_csv().count("\n") == N_CHANNELS + 1
    with pytest.raises(joints.JointsError, match="looser"):
        joints.channel_sensitivity(small_model, val, err_tolerance=-1.0)


def test_evaluate_and_report(small_split, small_model, tmp_path):
    _, val = small_split
    ev = joints.evaluate_joints(small_model, val)
    assert ev["n_windows"] == len(val)
    assert sum(s["n_windows"] for s in ev["sections"]) == len(val)
    assert all(s["raw_variance"] >= 0 for s in ev["sections"])
    assert '"mae"' in joints.report_json(ev)
    small_model.save(str(tmp_path / "j.plcnn"))
    back = joints.JointModel.load(str(tmp_path / "j.plcnn"))
    X, _ = joints.stack_windows(val)
    assert np.array_equal(back.forward(X), small_model.forward(X))
