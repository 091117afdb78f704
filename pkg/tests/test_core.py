import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graspdiff.core import (
    DegenerateRotation,
    Grasp,
    NormalizationStats,
    NotARotation,
    ShapeMismatch,
    denormalize_grasp,
    matrix_to_rot6d,
    normalize_grasp,
    random_rotations,
    rot6d_to_matrix,
)
from graspdiff.io import read_cloud, read_grasps, write_cloud, write_grasps

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_rot6d_identity():
    assert np.allclose(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))


def test_rot6d_swapped_axes():
    R = rot6d_to_matrix([0, 1, 0, 1, 0, 0])
    assert np.allclose(R[:, 0], [0, 1, 0])
    assert np.allclose(R[:, 1], [1, 0, 0])
    assert np.allclose(R[:, 2], [0, 0, -1])


def test_rot6d_scale_removed():
    assert np.allclose(rot6d_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3))


@pytest.mark.parametrize("r", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1e-9, 0, 0, 0, 1, 0]])
def test_rot6d_degenerate(r):
    with pytest.raises(DegenerateRotation):
        rot6d_to_matrix(r)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=finite))
def test_rot6d_is_rotation(r):
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 <= 1e-3 or np.linalg.norm(a2 - (a1 @ a2) / n1**2 * a1) <= 1e-3:
        return
    R = rot6d_to_matrix(r)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-6)
    assert abs(np.linalg.det(R) - 1) < 1e-6


def test_matrix_to_rot6d_identity():
    assert np.allclose(matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])


def test_matrix_to_rot6d_round_trip_hand_case():
    r = np.array([0, 1, 0, 1, 0, 0.0])
    assert np.allclose(matrix_to_rot6d(rot6d_to_matrix(r)), r)


def test_matrix_to_rot6d_random_round_trip():
    rng = np.random.default_rng(3)
    R = random_rotations(500, rng)
    # QR oracle gives proper rotations
    assert np.allclose(np.linalg.det(R), 1)
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.max(np.abs(back - R)) < 1e-5


def test_matrix_to_rot6d_rejects_non_rotation():
    with pytest.raises(NotARotation):
        matrix_to_rot6d(np.diag([1.0, 2.0, 1.0]))


def _random_grasps(rng, n, stats):
    p = rng.uniform(-0.2, 0.2, (n, 3))
    r = matrix_to_rot6d(random_rotations(n, rng))
    q = rng.uniform(stats.q_lo, stats.q_hi, (n, stats.k))
    return np.concatenate([p, r, q], axis=1)


def test_normalize_center_and_lower_limit():
    stats = NormalizationStats(p_center=[0.1, -0.2, 0.3], p_scale=0.5)
    g = Grasp([0.1, -0.2, 0.3], [1, 0, 0, 0, 1, 0], stats.q_lo)
    x, clamped = normalize_grasp(g, stats)
    assert np.allclose(x[:3], 0)
    assert np.allclose(x[9:], -1)
    assert not clamped


def test_normalize_round_trip_1000():
    stats = NormalizationStats(p_center=[0.01, 0.02, -0.03], p_scale=0.1)
    G = _random_grasps(np.random.default_rng(0), 1000, stats)
    X, clamped = normalize_grasp(G, stats)
    assert not clamped.any()
    assert np.max(np.abs(denormalize_grasp(X, stats) - G)) < 1e-9


def test_normalize_clamps_and_flags():
    stats = NormalizationStats()
    g = np.zeros(25)
    g[3], g[7] = 1, 1
    g[9] = 5.0
    x, clamped = normalize_grasp(g, stats)
    assert clamped
    assert x[9] == 1.0


def test_denormalize_respects_limits():
    stats = NormalizationStats()
    x = np.zeros(25)
    x[9:] = 3.0
    q = denormalize_grasp(x, stats)[9:]
    assert np.all(q <= stats.q_hi)


@pytest.mark.parametrize("kw", [{"p_scale": 0.0}, {"q_lo": np.ones(16), "q_hi": np.zeros(16)}])
def test_stats_validation(kw):
    with pytest.raises(ValueError):
        NormalizationStats(**kw)


@given(st.integers(1, 32), st.data())
def test_flatten_bijection(k, data):
    v = data.draw(arrays(np.float64, 9 + k, elements=finite))
    g = Grasp.from_vector(v)
    assert g.k == k
    assert np.array_equal(g.flatten(), v)
    assert np.array_equal(Grasp.from_vector(g.flatten()).q, g.q)


def test_from_vector_checks_length():
    with pytest.raises(ShapeMismatch):
        Grasp.from_vector(np.zeros(20), k=16)


def test_grasp_and_cloud_files(tmp_path):
    rng = np.random.default_rng(1)
    G = _random_grasps(rng, 4, NormalizationStats())
    grasps = [Grasp.from_vector(g) for g in G]
    write_grasps(tmp_path / "g.json", grasps)
    back = read_grasps(tmp_path / "g.json")
    assert all(np.array_equal(a.flatten(), b.flatten()) for a, b in zip(grasps, back))
    cloud = rng.standard_normal((50, 3))
    write_cloud(tmp_path / "c.txt", cloud)
    assert np.array_equal(read_cloud(tmp_path / "c.txt"), cloud)
    assert len((tmp_path / "c.txt").read_text().splitlines()) == 50
