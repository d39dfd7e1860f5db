import math

import numpy as np
import pytest

from collabcam.codepth import uncertainty_map
from collabcam.geometry import VoxelGrid, build_voxel_pixel_map, depths_to_bins, make_binning
from collabcam.harness import RunConfig, run_pipeline
from collabcam.metrics import rotated_iou
from collabcam.perception import (
    DenseHeatmap,
    Detection,
    VoxelTensor,
    check_distribution,
    class_templates,
    collapse,
    decode,
    encode,
    estimate_depth,
    greedy_nms,
    nms,
    voxelize,
)
from collabcam.scene import GroundTruthBox, RenderedView
from conftest import box, level_rig, scene_of
from oracles import axis_aligned_iou, exhaustive_nms, loop_collapse


def flat_view(depth, semantic=None):
    depth = np.asarray(depth, float)
    sem = np.zeros(depth.shape, int) if semantic is None else np.asarray(semantic)
    return RenderedView(depth, sem, np.where(sem > 0, 0, -1))


# -- encoder analog ------------------------------------------------------------------------


def test_encode_noiseless_signatures():
    sem = np.zeros((4, 5), int)
    sem[1, 2] = 2
    F = encode(flat_view(np.ones((4, 5)), sem), 0.0, 0)
    assert np.array_equal(F[0, 0], [1, 0, 0, 0])
    assert np.array_equal(F[1, 2], [0, 0, 1, 0])
    with pytest.raises(ValueError):
        encode(flat_view(np.ones((1, 1)), [[5]]), 0.0, 0)


def test_encode_noise_level():
    F = encode(flat_view(np.ones((100, 100))), 0.1, 7)
    std = (F - [1, 0, 0, 0]).reshape(-1, 4).std(axis=0, ddof=1)
    assert np.all((0.095 <= std) & (std <= 0.105))


# -- depth analog ----------------------------------------------------------------------------


def test_depth_peaked_limit_hits_gt_bin():
    b = make_binning("uniform", 1, 21, 10)
    rng = np.random.default_rng(0)
    depth = rng.uniform(1, 21, size=(6, 7))
    depth[0, 0] = np.inf
    dist = estimate_depth(flat_view(depth), b, 50.0, 0.0, 0.0, 1)
    k = depths_to_bins(depth, b)
    ok = k >= 0
    assert np.array_equal(dist.argmax(-1)[ok], k[ok])


def test_sky_pixels_are_uniform():
    b = make_binning("uniform", 1, 21, 8)
    dist = estimate_depth(flat_view([[np.inf, 30.0]]), b, 4.0, 1.0, 0.5, 1)
    assert np.allclose(dist[0, 0], 1 / 8)
    assert np.allclose(dist[0, 1], 1 / 8)  # beyond d_max: no GT bin either
    assert uncertainty_map(dist)[0, 0] == pytest.approx(3.0)


def test_far_pixels_are_flatter():
    b = make_binning("uniform", 0.5, 40.5, 40)
    dist = estimate_depth(flat_view([[10.0, 20.0]]), b, 1.0, 1.0, 0.0, 1)
    U = uncertainty_map(dist)
    assert U[0, 1] > U[0, 0]


def test_depth_rows_sum_to_one():
    b = make_binning("linear", 1, 61, 30)
    rng = np.random.default_rng(1)
    depth = rng.uniform(0, 70, size=(20, 30))
    dist = estimate_depth(flat_view(depth), b, 4.0, 30.0, 0.7, 3)
    assert np.all(dist >= 0)
    assert np.allclose(dist.sum(-1), 1.0, atol=1e-6)
    with pytest.raises(ValueError):
        check_distribution(dist * 1.01)


# -- voxelize and collapse -------------------------------------------------------------------------


def _small_map():
    b = make_binning("uniform", 1.0, 21.0, 10)
    rig = level_rig(0, (-12.0, 0.0, 3.0), (0.0, 0.0, 0.0), hw=(12, 16))
    g = VoxelGrid.from_range((-8, -8, 8, 8), 1.0, -0.25, 2.25, 0.5)
    return b, rig, g, build_voxel_pixel_map(g, rig.projection(), 12, 16, b)


def test_voxelize_examples():
    b, rig, g, m = _small_map()
    feat = np.ones((12, 16, 4))
    uniform = np.full((12, 16, 10), 0.1)
    vt = voxelize(feat, uniform, m)
    assert np.allclose(vt.prob[m.present], 0.1)
    assert not vt.prob[~m.present].any() and not vt.features[~m.present].any()
    # one-hot at bin k: voxels mapped to k get 1, others on the same ray get 0
    onehot = np.zeros_like(uniform)
    onehot[..., 4] = 1.0
    vt = voxelize(feat, onehot, m)
    assert np.array_equal(vt.prob[m.present], (m.k[m.present] == 4).astype(float))


def test_collapse_examples_and_loop_oracle():
    rng = np.random.default_rng(2)
    X, Y, Z, C = 5, 4, 3, 4
    feats = rng.normal(size=(X, Y, Z, C))
    prob = rng.random((X, Y, Z))
    vt = VoxelTensor(feats, prob, np.ones((X, Y, Z), bool))
    assert np.abs(collapse(vt) - loop_collapse(prob, feats)).max() <= 1e-9
    assert not collapse(vt, np.zeros_like(prob)).any()
    single = np.zeros((1, 1, 3))
    single[0, 0, 0] = 1.0
    f = np.zeros((1, 1, 3, C))
    f[0, 0, 0] = [0.2, 0.5, -1.0, 3.0]
    assert np.allclose(collapse(VoxelTensor(f, single, single > 0)), [[[0.2, 0.5, -1.0, 3.0]]])


def test_collapse_monotone_in_depth_probability():
    rng = np.random.default_rng(3)
    feats = np.abs(rng.normal(size=(3, 3, 4, 2)))
    prob = rng.random((3, 3, 4)) * 0.5
    vt = VoxelTensor(feats, prob, np.ones((3, 3, 4), bool))
    before = collapse(vt)
    bumped = prob.copy()
    bumped[1, 2, 3] += 0.3
    after = collapse(vt, bumped)
    assert np.all(after >= before)
    assert np.all(after[1, 2] > before[1, 2])


# -- decode ------------------------------------------------------------------------------------


def _grid():
    return VoxelGrid.from_range((-8, -8, 8, 8), 1.0, -0.25, 2.25, 0.5)


def test_decode_zero_and_isolated_peak():
    g = _grid()
    T = class_templates(4)
    hm = decode(np.zeros((16, 16, 4)), T, g, (4.0, 2.0))
    assert not hm.conf.any()
    bev = np.zeros((16, 16, 4))
    bev[5, 7] = 0.9 * T[2]
    hm = decode(bev, T, g, (4.0, 2.0))
    assert hm.conf[5, 7] == pytest.approx(0.9)
    assert hm.classes[5, 7] == 2
    assert hm.values[5, 7, 1] == 0.0 and hm.values[5, 7, 2] == 0.0
    assert hm.values[5, 7, 3] == 4.0 and hm.values[5, 7, 4] == 2.0


def test_decode_conf_range_and_unit_heading():
    rng = np.random.default_rng(4)
    bev = rng.normal(0, 1, size=(16, 16, 4))
    hm = decode(bev, class_templates(4), _grid(), (4.0, 2.0))
    assert np.all((0 <= hm.conf) & (hm.conf <= 1))
    on = hm.conf > 0
    assert np.allclose(np.hypot(hm.values[..., 5], hm.values[..., 6])[on], 1.0, atol=1e-6)


def test_decode_residual_and_heading_follow_weighted_blob():
    g = _grid()
    T = class_templates(4)
    bev = np.zeros((16, 16, 4))
    # a blob elongated along the x = y diagonal, heavier toward +x
    for d, v in [(-1, 0.6), (0, 1.0), (1, 0.8)]:
        bev[8 + d, 8 + d] = v * T[1]
    hm = decode(bev, T, g, (4.0, 2.0))
    assert hm.values[8, 8, 1] > 0 and hm.values[8, 8, 2] > 0
    heading = math.atan2(hm.values[8, 8, 6], hm.values[8, 8, 5])
    assert min(abs(heading - math.pi / 4), abs(heading + 3 * math.pi / 4)) < 1e-9


def test_noiseless_small_box_peaks_in_its_cell():
    # a compact box centered in a cell whose visible face falls in the same depth bin
    cfg = RunConfig(
        n_agents=1, co_depth=False, co_fl=False, sigma_f=0.0, sigma_d=0.0,
        kappa0=20.0, kappa_slope=0.0, conf_scale=1.0, cell_xy=2.0, size_prior=(1.0, 1.0, 1.5),
    )
    rig = level_rig(0, (-20.0, 1.0, 8.0), (0.0, 0.0, 0.0))
    b = GroundTruthBox(1, 3.0, 1.0, 0.75, 1.5, 1.0, 1.0, 0.0)
    res = run_pipeline(scene_of([b], [rig]), cfg)
    conf = res.agents[0].heatmap.conf
    g = cfg.grid()
    cell = np.unravel_index(g.locate(np.array([b.x, b.y, 0.0])), g.shape)[:2]
    assert np.unravel_index(conf.argmax(), conf.shape) == cell


def test_noiseless_visible_boxes_reach_half_confidence_on_their_footprint():
    cfg = RunConfig(
        n_agents=1, co_depth=False, co_fl=False, sigma_f=0.0, sigma_d=0.0,
        kappa0=20.0, kappa_slope=0.0, conf_scale=1.0,
    )
    g = cfg.grid()
    centers = g.bev_centers()
    rig = level_rig(0, (-20.0, 0.0, 8.0), (0.0, 0.0, 0.0))
    rng = np.random.default_rng(5)
    for _ in range(15):
        b = box(float(rng.uniform(-10, 12)), float(rng.uniform(-8, 8)), yaw=float(rng.uniform(-3, 3)))
        res = run_pipeline(scene_of([b], [rig]), cfg)
        if not (res.agents[0].view.instance == 0).any():
            continue
        cs = cfg.cell_xy
        footprint = np.array(
            [[rotated_iou((c[0], c[1], cs, cs, 0.0), b) > 0 for c in row] for row in centers]
        )
        assert res.agents[0].heatmap.conf[footprint].max() >= 0.5


# -- NMS --------------------------------------------------------------------------------------


def _det(x, y, l, w, yaw, score):
    return Detection(GroundTruthBox(1, x, y, 0.75, 1.5, w, l, yaw), score)


def test_nms_examples():
    assert nms(DenseHeatmap(np.zeros((4, 4, 7)), np.ones((4, 4), int)), _grid()) == []
    a = _det(0, 0, 4, 2, 0.0, 0.9)
    b = _det(0, 0, 4, 2, 0.0, 0.8)
    assert greedy_nms([a, b], 0.5) == [a]


def _as_tuple(d):
    return (d.box.x, d.box.y, d.box.l, d.box.w, d.box.yaw)


def test_nms_matches_exhaustive_reference():
    rng = np.random.default_rng(6)
    for trial in range(200):
        n = int(rng.integers(1, 12))
        rotated = trial % 2 == 1
        dets = [
            _det(
                float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)),
                float(rng.uniform(1, 4)), float(rng.uniform(0.5, 2)),
                float(rng.uniform(-3, 3)) if rotated else 0.0,
                float(rng.integers(1, 6)) / 5,
            )
            for _ in range(n)
        ]
        thr = float(rng.choice([0.1, 0.3, 0.5]))
        ordered = sorted(dets, key=lambda d: -d.score)
        kept = greedy_nms(ordered, thr)
        iou = (lambda a, b: rotated_iou(a, b)) if rotated else axis_aligned_iou
        ref = exhaustive_nms([_as_tuple(d) for d in dets], [d.score for d in dets], thr, iou)
        assert kept == [dets[i] for i in ref]
        # antichain under IoU > thr
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert rotated_iou(a.box, b.box) <= thr


def test_nms_from_heatmap_orders_by_conf_then_cell_index():
    g = _grid()
    values = np.zeros((16, 16, 7))
    values[..., 3], values[..., 4], values[..., 5] = 1.0, 1.0, 1.0
    for (x, y), c in {(3, 3): 0.5, (10, 2): 0.5, (6, 12): 0.9}.items():
        values[x, y, 0] = c
    hm = DenseHeatmap(values, np.ones((16, 16), int))
    dets = nms(hm, g, conf_floor=0.1, iou_threshold=0.3)
    centers = g.bev_centers()
    got = [(round(d.box.x, 6), round(d.box.y, 6)) for d in dets]
    want = [tuple(np.round(centers[c], 6)) for c in [(6, 12), (3, 3), (10, 2)]]
    assert got == want
    assert [d.score for d in dets] == sorted([d.score for d in dets], reverse=True)
    with pytest.raises(ValueError):
        nms(hm, g, conf_floor=1.5)
