import json
import os

import pytest
import yaml

from plcgrid import cli, stateseq
from plcgrid.acceptance import DETERMINISM_CONFIG


def write_config(path, **extra):
    path.write_text(yaml.safe_dump({**DETERMINISM_CONFIG, "seed": 3, **extra}))
    return str(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "run.yaml")
    out = root / "out"
    codes = {"simulate": cli.main(["simulate", "--config", cfg, "--out", str(out)])}
    for stage in ("states", "anomaly", "joints", "topo", "radial"):
        codes[stage] = cli.main(["pipeline", stage, "--config", cfg, "--out", str(out)])
    return cfg, out, codes


def test_all_commands_succeed(run):
    _, _, codes = run
    assert all(c == cli.EXIT_OK for c in codes.values()), codes


def test_manifest_lists_series(run):
    _, out, _ = run
    manifest = json.loads((out / "dataset" / "manifest.json").read_text())
    csvs = sorted(p.name for p in (out / "dataset").rglob("*.csv"))
    listed = sorted(os.path.basename(s["file"]) for s in manifest["series"])
    assert listed == csvs and csvs


def test_reports(run):
    _, out, _ = run
    topo = json.loads((out / "topo" / "report.json").read_text())
    assert {"entrywise_acc", "exact_matrix_acc"} <= set(topo)
    anomaly = json.loads((out / "anomaly" / "report.json").read_text())
    assert anomaly["n_intervals"] >= 0
    for stage in ("states", "anomaly", "joints", "topo", "radial"):
        rep = json.loads((out / stage / "report.json").read_text())
        assert rep["seed"] == 3 and "wall_time_s" in rep and "params" in rep


def test_figures_written(run):
    _, out, _ = run
    pngs = list(out.rglob("*.png"))
    assert len(pngs) >= 5
    assert all(p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)
    assert list((out / "radial").glob("*.svg"))


def test_render_radial(run, tmp_path):
    cfg, out, _ = run
    target = tmp_path / "r.svg"
    assert cli.main(["render", "radial", "--config", cfg, "--out", str(out), "--connection", "0-1", "--file", str(target)]) == 0
    assert target.read_bytes().startswith(b"<")


def test_anomaly_before_states(tmp_path, run, capsys):
    cfg, out, _ = run
    fresh = tmp_path / "fresh"
    fresh.mkdir()
    (fresh / "dataset").symlink_to(out / "dataset")
    assert cli.main(["pipeline", "anomaly", "--config", cfg, "--out", str(fresh)]) == cli.EXIT_DEPENDENCY
    assert "states" in capsys.readouterr().err


def test_missing_dataset_is_dependency_error(tmp_path):
    cfg = write_config(tmp_path / "c.yaml")
    assert cli.main(["pipeline", "states", "--config", cfg, "--out", str(tmp_path / "none")]) == cli.EXIT_DEPENDENCY


def test_missing_seed_names_key(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"simulate": {"days": 1}}))
    assert cli.main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "seed" in capsys.readouterr().err


def test_seed_flag_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"simulate": {"days": 1, "topology": {"n_nodes": 3}}}))
    assert cli.main(["simulate", "--config", str(p), "--seed", "1", "--out", str(tmp_path / "o")]) == 0


def test_bad_field_path(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"seed": 0, "simulate": {"topology": {"n_nodes": "many"}}}))
    assert cli.main(["simulate", "--config", str(p)]) == cli.EXIT_CONFIG
    assert "simulate.topology.n_nodes" in capsys.readouterr().err


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path / "c.yaml", simulate={"days": 1, "topology": {"n_nodes": 3}})
    assert cli.main(["simulate", "--config", cfg, "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_acceptance_subset_passes(tmp_path):
    assert cli.main(["acceptance", "--only", "10", "--out", str(tmp_path)]) == cli.EXIT_OK
    res = json.loads((tmp_path / "acceptance.json").read_text())
    assert [r["id"] for r in res] == [10] and res[0]["passed"]


def test_planted_dtw_fault_fails_acceptance(tmp_path, monkeypatch, capsys):
    real = stateseq.dtw

    def broken(a, b, *args, **kw):
        cost, path = real(a, b, *args, **kw)
        return (cost + 1 if len(a) != len(b) else cost), path

    monkeypatch.setattr(stateseq, "dtw", broken)
    assert cli.main(["acceptance", "--only", "2", "--out", str(tmp_path)]) == cli.EXIT_ACCEPTANCE
    text = capsys.readouterr().out
    assert "[FAIL]" in text and "DTW" in text and "FAILED criteria: 2" in text
    res = json.loads((tmp_path / "acceptance.json").read_text())
    assert res[0]["cost_mismatches"] > 0 and not res[0]["passed"]
