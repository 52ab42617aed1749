import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epipolar_attention.epipolar import (MAGIC, EpipolarLine, EpipolarMaskVolume, epipolar_line,
                                         epipolar_mask, iter_frame_blocks, mask_volume,
                                         pack_blocks, pair_fundamental, point_line_distance)
from epipolar_attention.errors import FormatError, LineUndefined
from epipolar_attention.geometry import (CameraExtrinsics, CameraIntrinsics, CameraPose,
                                         FundamentalMatrix, fundamental_matrix)
from epipolar_attention.scenes import random_rig, shared_points, static_rig, translating_rig

RECTIFIED = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def brute_force_mask(line, H, W, threshold):
    grid = np.zeros((H, W), dtype=bool)
    for v in range(H):
        for u in range(W):
            grid[v, u] = point_line_distance(line, (u, v)) <= threshold
    if not grid.any():
        best = min(((point_line_distance(line, (u, v)), v, u)
                    for v in range(H) for u in range(W)))
        grid[best[1], best[2]] = True
    return grid


def test_rectified_line():
    line = epipolar_line(FundamentalMatrix(RECTIFIED), (3, 5))
    assert (line.a, line.b, line.c) == (0.0, -1.0, 5.0)


def test_line_scale_invariant():
    base = epipolar_line(RECTIFIED, (3, 5))
    assert epipolar_line(7 * RECTIFIED, (3, 5)) == base
    assert epipolar_line(-7 * RECTIFIED, (3, 5)) == base


@settings(max_examples=50)
@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
def test_line_is_multiple_under_scaling(c, seed):
    rng = np.random.default_rng(seed)
    f = fundamental_matrix(*random_rig(rng)).f
    p = rng.uniform(0, 32, 2)
    l1 = epipolar_line(f, p).as_array()
    l2 = epipolar_line(c * f, p).as_array()
    # both normalized to unit (a, b) and canonical sign
    assert np.allclose(l1, l2, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_line_contains_correspondences(seed):
    rng = np.random.default_rng(seed)
    pi, pj = random_rig(rng)
    F = fundamental_matrix(pi, pj)
    X = shared_points(rng, [pi, pj], 200)
    xi, _ = pi.project(X)
    xj, _ = pj.project(X)
    d = [point_line_distance(epipolar_line(F, a), b) for a, b in zip(xi, xj)]
    assert max(d) < 1e-6


def test_line_undefined_at_epipole():
    # forward motion: the epipole of frame i sits at the principal point
    K = CameraIntrinsics(10.0, 10.0, 4.0, 3.0)
    pi = CameraPose(K, CameraExtrinsics.identity(), 0)
    pj = CameraPose(K, CameraExtrinsics(np.eye(3), np.array([0.0, 0.0, -1.0])), 1)
    F = fundamental_matrix(pi, pj)
    with pytest.raises(LineUndefined):
        epipolar_line(F, (4, 3))
    with pytest.raises(LineUndefined):
        epipolar_mask(F, (4, 3), (6, 8))
    with pytest.raises(LineUndefined):
        EpipolarLine.from_coefficients(0.0, 0.0, 2.0)


def test_point_line_distance_examples():
    line = EpipolarLine.from_coefficients(0.0, -1.0, 5.0)
    assert point_line_distance(line, (0, 5)) == 0.0
    assert point_line_distance(line, (9, 7)) == 2.0


@settings(max_examples=100)
@given(st.floats(0, 2 * math.pi), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_point_line_distance_matches_projection(theta, c, qu, qv):
    line = EpipolarLine.from_coefficients(math.cos(theta), math.sin(theta), c)
    n = np.array([line.a, line.b])
    p0 = -line.c * n  # a point on the line
    d = np.array([-n[1], n[0]])
    q = np.array([qu, qv])
    closest = p0 + np.dot(q - p0, d) * d
    assert point_line_distance(line, q) == pytest.approx(np.linalg.norm(q - closest), abs=1e-9)


def test_rectified_mask_band():
    m = epipolar_mask(RECTIFIED, (3, 5), (16, 16), 1.0)
    assert m.popcount == 48
    assert np.array_equal(np.flatnonzero(m.grid.any(axis=1)), [4, 5, 6])
    assert np.array_equal(m.grid, brute_force_mask(epipolar_line(RECTIFIED, (3, 5)), 16, 16, 1.0))
    narrow = epipolar_mask(RECTIFIED, (3, 5), (16, 16), 0.49)
    assert narrow.popcount == 16
    assert narrow.grid[5].all()


def test_degenerate_mask_is_all_true():
    m = epipolar_mask(None, (3, 5), (16, 16))
    assert m.popcount == 256


def test_mask_rejects_bad_threshold():
    with pytest.raises(ValueError):
        epipolar_mask(RECTIFIED, (3, 5), (4, 4), 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_mask_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    F = fundamental_matrix(*random_rig(rng, dims=(12, 10)))
    for _ in range(10):
        q = (int(rng.integers(10)), int(rng.integers(12)))
        m = epipolar_mask(F, q, (12, 10), 1.0)
        assert np.array_equal(m.grid, brute_force_mask(epipolar_line(F, q), 12, 10, 1.0))


def test_volume_identical_poses_all_true():
    vol = mask_volume(static_rig(2, (5, 4)), (5, 4))
    assert vol.dense().all()


def test_volume_translating_rig_slices_are_sparse():
    F, H, W = 4, 16, 12
    vol = mask_volume(translating_rig(F, (H, W)), (H, W))
    dense = vol.dense().reshape(F, H, W, F, H, W)
    for i in range(F):
        for j in range(F):
            counts = dense[i, :, :, j].sum(axis=(-1, -2))
            if i == j:
                assert (counts == H * W).all()
            else:
                assert (counts < H * W).all() and (counts >= 1).all()


def test_volume_agrees_with_pointwise_masks(rng):
    F, H, W = 4, 16, 12
    poses = translating_rig(F, (H, W))
    vol = mask_volume(poses, (H, W))
    for _ in range(20):
        i, j = rng.integers(F, size=2)
        u, v = int(rng.integers(W)), int(rng.integers(H))
        Fij = pair_fundamental(poses[i], poses[j], same_frame=(i == j))
        expected = epipolar_mask(Fij, (u, v), (H, W), 1.0).grid
        assert np.array_equal(vol.slice(i, u, v, j), expected)


def test_volume_memory_budget():
    poses = translating_rig(13, (24, 17))
    vol = mask_volume(poses, (24, 17))
    L = 13 * 24 * 17
    assert vol.nbytes == math.ceil(L * L / 8)
    assert vol.nbytes < 4 * 2**20


@pytest.mark.parametrize("seed", range(4))
def test_sparsity_bound(seed):
    rng = np.random.default_rng(seed)
    H = W = 16 + 8 * seed
    poses = random_rig(rng, dims=(H, W))
    vol = mask_volume(poses, (H, W))
    dense = vol.dense().reshape(2, H * W, 2, H * W)
    counts = dense[0, :, 1].sum(axis=1)
    assert counts.max() <= 3 * max(H, W) * math.sqrt(2)
    assert counts.max() < 0.25 * H * W


@pytest.mark.parametrize("seed", range(3))
def test_ground_truth_containment(seed):
    rng = np.random.default_rng(seed)
    H, W = 32, 32
    pi, pj = random_rig(rng, dims=(H, W))
    F = fundamental_matrix(pi, pj)
    X = shared_points(rng, [pi, pj], 500)
    xi, _ = pi.project(X)
    xj, _ = pj.project(X)
    checked = 0
    for a, b in zip(np.rint(xi), np.rint(xj)):
        if not (0 <= a[0] < W and 0 <= a[1] < H and 0 <= b[0] < W and 0 <= b[1] < H):
            continue
        line = epipolar_line(F, a)
        if point_line_distance(line, b) <= 1.0:
            checked += 1
            assert epipolar_mask(F, a, (H, W)).grid[int(b[1]), int(b[0])]
    assert checked > 0


def test_symmetric_consistency(rng):
    pi, pj = random_rig(rng)
    F = fundamental_matrix(pi, pj)
    for _ in range(50):
        p = rng.uniform(0, 32, 2)
        line = epipolar_line(F, p)
        # a point exactly on the line: foot of the perpendicular from the origin
        q = -line.c * np.array([line.a, line.b])
        back = epipolar_line(F.transpose(), q)
        assert point_line_distance(back, p) < 1e-6


def test_pack_blocks_matches_packbits(rng):
    L = 13
    rows = rng.random((L, L)) < 0.5
    blocks = [rows[:3], rows[3:4], rows[4:11], rows[11:]]
    assert np.array_equal(pack_blocks(blocks, L), np.packbits(rows))


def test_volume_rows_and_dense_agree():
    poses = translating_rig(3, (5, 7))
    vol = mask_volume(poses, (5, 7))
    dense = vol.dense()
    blocks = np.concatenate([b for _, b in iter_frame_blocks(poses, (5, 7))])
    assert np.array_equal(dense, blocks)
    assert np.array_equal(vol.rows(17, 40), dense[17:40])
    assert np.array_equal(vol.row(104), dense[104])


def test_epmv1_round_trip(tmp_path, rng):
    poses = random_rig(rng, dims=(6, 5), num_frames=3)
    vol = mask_volume(poses, (6, 5), threshold=0.75)
    data = vol.to_bytes()
    assert data[:5] == MAGIC
    F, H, W = 3, 6, 5
    assert len(data) == 5 + 12 + 8 + math.ceil((F * H * W) ** 2 / 8)
    path = tmp_path / "v.epmv"
    vol.save(path)
    again = EpipolarMaskVolume.load(path)
    assert again == vol
    assert again.to_bytes() == data
    assert again.threshold == 0.75


def test_epmv1_rejects_corruption():
    vol = mask_volume(static_rig(2, (2, 2)), (2, 2))
    data = vol.to_bytes()
    with pytest.raises(FormatError):
        EpipolarMaskVolume.from_bytes(b"XXXXX" + data[5:])
    with pytest.raises(FormatError):
        EpipolarMaskVolume.from_bytes(data[:-1])


def test_line_outside_frame_keeps_nearest_pixel():
    # rectified line v = 20 lies below a 16-row grid
    m = epipolar_mask(RECTIFIED, (3, 20), (16, 16), 1.0)
    assert m.popcount == 1
    assert m.grid[15, 0]
