import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collabcam.geometry import (
    BehindCamera,
    DepthOutOfRange,
    InvalidBinning,
    ProjectionMatrix,
    SpacingMode,
    VoxelGrid,
    build_voxel_pixel_map,
    camera_rotation,
    depth_to_bin,
    depths_to_bins,
    frustum_voxel_index,
    lift,
    lift_depth,
    make_binning,
    project_point,
)
from conftest import forward_camera
from oracles import loop_voxel_map


# -- projection ---------------------------------------------------------------


def test_rotation_is_proper_and_axes_match_convention():
    R = camera_rotation(0.3, 0.2)
    assert np.allclose(R @ R.T, np.eye(3))
    assert np.isclose(np.linalg.det(R), 1.0)
    # level camera looking along +x: right is -y, down is -z
    R0 = camera_rotation(0.0)
    assert np.allclose(R0, [[0, -1, 0], [0, 0, -1], [1, 0, 0]])


def test_project_point_on_axis_and_off_axis():
    P = forward_camera(f=100, W=200, H=100)
    u, v, d = project_point(P, [10.0, 0.0, 0.0])
    assert (u, v, d) == pytest.approx((100.0, 50.0, 10.0))
    # one meter to the left of the axis at 10 m lands f/10 px left of center
    u, v, d = project_point(P, [10.0, 1.0, 0.5])
    assert u == pytest.approx(90.0)
    assert v == pytest.approx(45.0)
    assert d == pytest.approx(10.0)


def test_project_point_behind_camera():
    P = forward_camera()
    with pytest.raises(BehindCamera):
        project_point(P, [-1.0, 0.0, 0.0])
    with pytest.raises(BehindCamera):
        project_point(P, [0.0, 3.0, 0.0])


def test_projection_rejects_bad_matrices():
    with pytest.raises(ValueError):
        ProjectionMatrix(np.eye(3))
    bad = np.hstack([np.eye(3), np.zeros((3, 1))])
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ProjectionMatrix(bad)
    mirrored = np.hstack([np.diag([1.0, 1.0, -1.0]), np.zeros((3, 1))])
    with pytest.raises(ValueError):
        ProjectionMatrix(mirrored)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-math.pi, math.pi),
    st.floats(-0.5, 0.5),
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.floats(0.1, 30),
)
def test_backproject_inverts_projection(yaw, pitch, u_off, v_off, d):
    P = ProjectionMatrix.from_camera(80.0, 90.0, 40.0, 30.0, (1.0, -2.0, 3.0), yaw, pitch)
    pts = P.backproject(40.0 + u_off, 30.0 + v_off, d)
    u, v, dd = project_point(P, pts)
    assert (u, v, dd) == pytest.approx((40.0 + u_off, 30.0 + v_off, d), abs=1e-8)


# -- depth binning --------------------------------------------------------------


def test_uniform_edges():
    b = make_binning("uniform", 0, 10, 5)
    assert np.allclose(b.edges, [0, 2, 4, 6, 8, 10])


def test_linear_increasing_edges_and_widths():
    b = make_binning(SpacingMode.LINEAR_INCREASING, 0, 10, 5)
    assert np.allclose(b.edges, [0, 2 / 3, 2, 4, 20 / 3, 10], atol=1e-12)
    assert np.allclose(b.widths, [2 / 3, 4 / 3, 2, 8 / 3, 10 / 3])
    # widths form an arithmetic progression with common difference 2/3
    assert np.allclose(np.diff(b.widths), 2 / 3)


@pytest.mark.parametrize("args", [(0, 10, 0), (10, 10, 5), (10, 0, 5), (-1, 10, 5), (0, 10, 2.5)])
def test_invalid_binning(args):
    with pytest.raises(InvalidBinning):
        make_binning("uniform", *args)


def test_depth_to_bin_examples():
    b = make_binning("uniform", 0, 10, 5)
    assert depth_to_bin(3.0, b) == 1
    assert depth_to_bin(10.0, b) == 4
    assert depth_to_bin(0.0, b) == 0
    assert depth_to_bin(2.0, b) == 1  # half-open: left edge belongs to the upper bin
    with pytest.raises(DepthOutOfRange):
        depth_to_bin(11.0, b)
    with pytest.raises(DepthOutOfRange):
        depth_to_bin(-0.1, b)


@pytest.mark.parametrize("mode", ["uniform", "linear"])
def test_bin_centers_map_to_their_bin(mode):
    b = make_binning(mode, 1.0, 61.0, 30)
    assert [depth_to_bin(c, b) for c in b.centers] == list(range(30))
    assert np.array_equal(depths_to_bins(b.centers, b), np.arange(30))


def test_vectorized_bins_match_scalar(rng):
    b = make_binning("linear", 1.0, 50.0, 17)
    d = rng.uniform(0, 55, size=500)
    d[:3] = [np.inf, np.nan, 50.0]
    vec = depths_to_bins(d, b)
    for di, ki in zip(d, vec):
        if np.isfinite(di) and b.d_min <= di <= b.d_max:
            assert ki == depth_to_bin(di, b)
        else:
            assert ki == -1


# -- voxel grid and the voxel/pixel map --------------------------------------------


def test_grid_from_range_and_locate():
    g = VoxelGrid.from_range((-20, -20, 20, 20), 1.6, -0.25, 2.25, 0.5)
    assert g.shape == (25, 25, 5)
    c = g.centers()
    assert c.shape == (25, 25, 5, 3)
    flat = g.locate(c.reshape(-1, 3))
    assert np.array_equal(flat, np.arange(g.n_voxels))
    assert g.locate(np.array([100.0, 0.0, 0.0])) == -1


def test_single_voxel_map():
    W, H = 64, 48
    b = make_binning("uniform", 0, 10, 5)
    P = forward_camera(f=50, W=W, H=H)
    # bin 2 covers [4, 6); put the voxel center at depth 5 on the optical axis
    g = VoxelGrid(np.array([4.5, -0.5, -0.5]), np.ones(3), (1, 1, 1))
    m = build_voxel_pixel_map(g, P, H, W, b)
    assert m.present.sum() == 1
    assert (m.h[0, 0, 0], m.w[0, 0, 0], m.k[0, 0, 0]) == (round(H / 2), round(W / 2), 2)


def test_grid_behind_camera_is_absent():
    b = make_binning("uniform", 0.5, 10, 5)
    g = VoxelGrid(np.array([-6.0, -2.0, -1.0]), np.ones(3), (4, 4, 2))
    m = build_voxel_pixel_map(g, forward_camera(), 100, 200, b)
    assert not m.present.any()
    assert np.all(m.h == -1) and np.all(m.k == -1)


@pytest.mark.parametrize(
    "yaw,pitch,pos",
    [(0.0, 0.0, (0, 0, 0)), (0.4, 0.3, (-3, -2, 4)), (-2.5, 0.6, (10, 9, 8))],
)
def test_map_matches_per_voxel_loop(yaw, pitch, pos):
    H, W = 30, 40
    b = make_binning("linear", 1.0, 25.0, 12)
    P = ProjectionMatrix.from_camera(20.0, 20.0, 19.5, 14.5, pos, yaw, pitch)
    g = VoxelGrid(np.array([-10.0, -10.0, -1.0]), np.array([1.3, 1.1, 0.7]), (16, 18, 4))
    m = build_voxel_pixel_map(g, P, H, W, b)
    ref = loop_voxel_map(g, P, H, W, b.edges)
    assert np.array_equal(m.h, ref[..., 0])
    assert np.array_equal(m.w, ref[..., 1])
    assert np.array_equal(m.k, ref[..., 2])
    assert m.present.any()


def test_map_round_trip_property():
    H, W = 30, 40
    b = make_binning("uniform", 1.0, 25.0, 12)
    P = ProjectionMatrix.from_camera(20.0, 20.0, 19.5, 14.5, (-12, 0, 3), 0.1, 0.2)
    g = VoxelGrid(np.array([-10.0, -10.0, -1.0]), np.array([1.0, 1.0, 0.5]), (20, 20, 6))
    m = build_voxel_pixel_map(g, P, H, W, b)
    q = P.apply(g.centers())
    pres = m.present
    u = q[..., 0] / q[..., 2]
    v = q[..., 1] / q[..., 2]
    assert np.all(np.abs(u[pres] - m.w[pres]) <= 0.5)
    assert np.all(np.abs(v[pres] - m.h[pres]) <= 0.5)
    d = q[..., 2][pres]
    k = m.k[pres]
    assert np.all((b.edges[k] <= d) & (d <= b.edges[k + 1]))


def _gather_loop(field, m):
    X, Y, Z = m.grid_shape
    out = np.zeros((X, Y, Z) + field.shape[2:])
    for x in range(X):
        for y in range(Y):
            for z in range(Z):
                if m.k[x, y, z] >= 0:
                    out[x, y, z] = field[m.h[x, y, z], m.w[x, y, z]]
    return out


def test_lift_matches_gather_loop(rng):
    H, W = 12, 16
    b = make_binning("uniform", 1.0, 20.0, 8)
    P = ProjectionMatrix.from_camera(8.0, 8.0, 7.5, 5.5, (-10, 0, 2), 0.05, 0.15)
    g = VoxelGrid(np.array([-6.0, -6.0, -1.0]), np.array([1.0, 1.0, 0.5]), (12, 12, 5))
    m = build_voxel_pixel_map(g, P, H, W, b)
    field = rng.normal(size=(H, W, 3))
    assert np.abs(lift(field, m) - _gather_loop(field, m)).max() <= 1e-9
    dist = rng.random((H, W, 8))
    ref = np.zeros(m.grid_shape)
    for idx in zip(*np.nonzero(m.present)):
        ref[idx] = dist[m.h[idx], m.w[idx], m.k[idx]]
    assert np.abs(lift_depth(dist, m) - ref).max() <= 1e-9


def test_lift_tiny_examples():
    m_h = np.full((2, 2, 2), -1)
    m_w = np.full((2, 2, 2), -1)
    m_k = np.full((2, 2, 2), -1)
    m_h[0, 0, 0], m_w[0, 0, 0], m_k[0, 0, 0] = 2, 1, 0
    from collabcam.geometry import VoxelPixelMap

    m = VoxelPixelMap(m_h, m_w, m_k, (3, 3), 4)
    field = np.zeros((3, 3, 1))
    assert not lift(field, m).any()
    field[2, 1, 0] = 7.0
    out = lift(field, m)
    assert out[0, 0, 0, 0] == 7.0
    assert out.sum() == 7.0
    with pytest.raises(ValueError):
        lift(np.zeros((4, 3, 1)), m)
    with pytest.raises(ValueError):
        lift_depth(np.zeros((3, 3, 5)), m)


def test_lift_is_linear(rng):
    H, W = 10, 14
    b = make_binning("uniform", 1.0, 20.0, 8)
    P = ProjectionMatrix.from_camera(7.0, 7.0, 6.5, 4.5, (-10, 0, 2), 0.0, 0.1)
    g = VoxelGrid(np.array([-6.0, -6.0, -1.0]), np.ones(3), (10, 10, 3))
    m = build_voxel_pixel_map(g, P, H, W, b)
    F, G = rng.normal(size=(2, H, W, 2))
    assert np.allclose(lift(2.0 * F - 3.0 * G, m), 2.0 * lift(F, m) - 3.0 * lift(G, m))


def test_one_hot_depth_column_counts():
    H, W = 10, 14
    b = make_binning("uniform", 1.0, 20.0, 8)
    P = ProjectionMatrix.from_camera(7.0, 7.0, 6.5, 4.5, (-10, 0, 2), 0.0, 0.1)
    g = VoxelGrid(np.array([-6.0, -6.0, -1.0]), np.ones(3), (10, 10, 3))
    m = build_voxel_pixel_map(g, P, H, W, b)
    hot = 3
    dist = np.zeros((H, W, 8))
    dist[..., hot] = 1.0
    lifted = lift_depth(dist, m)
    # total mass that lands on each pixel's ray equals its count of hot-bin voxels
    pres = m.present
    for h in range(H):
        for w in range(W):
            on_ray = pres & (m.h == h) & (m.w == w)
            assert lifted[on_ray].sum() == np.count_nonzero(on_ray & (m.k == hot))


def test_frustum_index_points_into_containing_voxel():
    H, W = 8, 10
    b = make_binning("uniform", 1.0, 20.0, 10)
    P = ProjectionMatrix.from_camera(6.0, 6.0, 4.5, 3.5, (-10, 0, 2), 0.0, 0.2)
    g = VoxelGrid(np.array([-8.0, -8.0, -1.0]), np.ones(3), (16, 16, 4))
    idx = frustum_voxel_index(g, P, H, W, b)
    assert idx.shape == (H, W, 10)
    for h, w, k in [(0, 0, 0), (4, 5, 3), (7, 9, 9), (3, 2, 6)]:
        p = P.backproject(w, h, b.centers[k])
        assert idx[h, w, k] == g.locate(p)
