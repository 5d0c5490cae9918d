import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bdm.metrics import (MetricsError, chamfer, evaluate_pair, fscore, nearest_distances,
                         nearest_distances_brute)


def clouds(max_n=40):
    return st.integers(1, max_n).flatmap(
        lambda n: arrays(np.float64, (n, 2), elements=st.floats(-1, 1, allow_nan=False)))


def test_identical_clouds():
    A = np.random.default_rng(0).standard_normal((50, 2))
    assert chamfer(A, A) == 0.0
    assert fscore(A, A) == 1.0


def test_hand_computed_chamfer():
    # nearest squared distance is 25 in both directions
    assert chamfer(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 50000.0
    assert chamfer(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), scaled=False) == 50.0


def test_hand_computed_fscore():
    assert fscore(np.array([[0.0, 0.0]]), np.array([[0.0, 0.005]]), 0.01) == 1.0
    assert fscore(np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), 0.01) == 0.0


def test_brute_examples():
    A = np.array([[0.0, 0.0]])
    assert nearest_distances_brute(A, A).tolist() == [0.0]
    assert nearest_distances_brute(A, np.array([[3.0, 4.0]])).tolist() == [5.0]
    B = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert nearest_distances_brute(A, B).tolist() == [1.0]


def test_empty_cloud():
    with pytest.raises(MetricsError):
        chamfer(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(MetricsError):
        nearest_distances_brute(np.zeros((3, 2)), np.zeros((0, 2)))
    with pytest.raises(MetricsError):
        fscore(np.zeros((2, 2)), np.zeros((2, 3)))


def test_accelerated_matches_brute_1000_cases():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n, m = rng.integers(1, 200, size=2)
        A = rng.uniform(-0.5, 0.5, (n, 2))
        B = rng.uniform(-0.5, 0.5, (m, 2))
        if rng.random() < 0.2:
            B[: min(n, m) // 2] = A[: min(n, m) // 2]  # exact coincidences
        assert np.array_equal(nearest_distances(A, B), nearest_distances_brute(A, B))


@given(clouds(), clouds())
@settings(max_examples=80, deadline=None)
def test_chamfer_symmetric_nonnegative(A, B):
    assert chamfer(A, B) == chamfer(B, A)
    assert chamfer(A, B) >= 0


@given(clouds(), st.integers(0, 2 ** 31))
@settings(max_examples=60, deadline=None)
def test_chamfer_zero_iff_coincident(A, seed):
    rng = np.random.default_rng(seed)
    B = A[rng.permutation(len(A))]
    assert chamfer(A, B) == 0.0
    C = np.concatenate([B, [[5.0, 5.0]]])
    assert chamfer(A, C) > 0.0


@given(clouds(), clouds(), st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
@settings(max_examples=80, deadline=None)
def test_fscore_bounded_monotone(A, B, t1, t2):
    lo, hi = sorted((t1, t2))
    f_lo, f_hi = fscore(A, B, lo), fscore(A, B, hi)
    assert 0.0 <= f_lo <= 1.0 and 0.0 <= f_hi <= 1.0
    assert f_lo <= f_hi


@given(st.floats(0, 2 * math.pi), st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_rigid_invariance(theta, dx, dy, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.uniform(-0.5, 0.5, (30, 2)), rng.uniform(-0.5, 0.5, (25, 2))
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    move = lambda X: X @ R.T + [dx, dy]
    assert abs(chamfer(move(A), move(B)) - chamfer(A, B)) < 1e-9
    # F-score uses thresholded distances; avoid pairs sitting exactly on the threshold
    assert abs(fscore(move(A), move(B), 0.05) - fscore(A, B, 0.05)) <= 2 / 25


def test_report_fields():
    rng = np.random.default_rng(2)
    A, B = rng.standard_normal((10, 2)), rng.standard_normal((12, 2))
    r = evaluate_pair(A, B)
    assert r.cd_scaled >= 0 and 0 <= r.f1 <= 1
    assert (r.n_pred, r.n_gt, r.tau) == (10, 12, 0.01)
    assert "x1e3" in r.as_dict()["cd_convention"]
