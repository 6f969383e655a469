"""One test per acceptance criterion; each prints a pass/fail line with its measured values."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.cluster import DBSCAN
from sklearn.metrics import adjusted_rand_score

from plcgrid import acceptance as A

from conftest import record_acceptance


def check(cid):
    r = A.run_acceptance([cid], seed=0)[0]
    line = A.format_line(r)
    print(line)
    record_acceptance(r, line)
    assert "error" not in r, r["error"]
    assert r["runtime_s"] <= r["budget_s"], line
    assert r["passed"], r


def test_criterion_01_fingerprint_oracle():
    check(1)


def test_criterion_02_dtw_exactness():
    check(2)


def test_criterion_03_dbscan_oracle():
    check(3)


def test_criterion_04_cluster_recovery():
    check(4)


def test_criterion_05_anomaly_detection():
    check(5)


def test_criterion_06_gradient_integrity():
    check(6)


def test_criterion_07_joints_regression():
    check(7)


def test_criterion_08_topology_untangling():
    check(8)


def test_criterion_09_determinism():
    check(9)


def test_criterion_10_radial_rendering():
    check(10)


# the oracles themselves, checked against independent references


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.lists(st.integers(0, 4), min_size=1, max_size=40))
def test_adjusted_rand_index_matches_sklearn(a, b):
    n = min(len(a), len(b))
    assert A.adjusted_rand_index(a[:n], b[:n]) == pytest.approx(adjusted_rand_score(a[:n], b[:n]), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.floats(0.1, 2.0), st.integers(1, 6), st.integers(0, 10**6))
def test_brute_force_dbscan_matches_sklearn_on_core_points(n, eps, min_pts, seed):
    pts = np.random.default_rng(seed).uniform(0, 5, size=(n, 2))
    ours = A.brute_force_dbscan(pts, eps, min_pts)
    ref = DBSCAN(eps=eps, min_samples=min_pts).fit(pts)
    core = np.zeros(n, bool)
    core[ref.core_sample_indices_] = True
    # border points reachable from two clusters are assigned by visiting order in sklearn
    assert A.same_partition(ours[core], ref.labels_[core])
    assert np.array_equal(ours == -1, ref.labels_ == -1)


def test_brute_force_dtw_small_cases():
    table = 1.0 - np.eye(3)
    assert A.brute_force_dtw((0, 1, 2), (0, 1, 2), table) == 0
    assert A.brute_force_dtw((0,), (1, 1, 1), table) == 3
    assert A.brute_force_dtw((0, 1), (1, 0), table) == 2  # every monotone path pays both ends


def test_unknown_criterion_rejected():
    with pytest.raises(ValueError):
        A.run_acceptance([11])
