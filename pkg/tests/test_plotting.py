import numpy as np

from plcgrid import plotting

PNG = b"\x89PNG\r\n\x1a\n"


def figures(d, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, 917)
    return [
        plotting.snr_heatmap(rng.uniform(-10, 40, (96, 917)), "snr", d / "a.png"),
        plotting.embedding_scatter(rng.normal(size=(30, 2)), np.repeat([-1, 0, 1], 10), [3.0, 2.0, 1.5], d / "b.png"),
        plotting.anomaly_scores({"0-1": (np.arange(5), rng.uniform(0, 3, 5), 2.0), "1-0": ([], [], 2.0)}, d / "c.png"),
        plotting.sensitivity_profile(p / p.sum(), p / p.sum(), [120, 430], d / "d.png", (120, 430, 780)),
        plotting.loss_curves({"train": [1.0, 0.5, 0.2]}, d / "e.png"),
        plotting.confidence_matrix(rng.uniform(0, 1, (4, 4)), np.eye(4, dtype=bool), [0, 2, 5, 9], d / "f" / "g.png"),
    ]


def test_every_figure_is_png(tmp_path):
    for path in figures(tmp_path):
        with open(path, "rb") as f:
            assert f.read(8) == PNG


def test_figures_are_byte_identical(tmp_path):
    a = figures(tmp_path / "a")
    b = figures(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read(), pa


def test_confidence_matrix_without_truth(tmp_path):
    path = plotting.confidence_matrix(np.zeros((2, 2)), None, [0, 1], tmp_path / "m.png")
    assert open(path, "rb").read(8) == PNG
