import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sgm_path_scalar
from omnimvs.classic import (
    DIRECTIONS,
    CostVolume,
    CoverageError,
    PinholeView,
    SgmParams,
    aggregate_path,
    block_matching,
    masked_zncc,
    multiview_cost,
    omni_zncc_cost,
    pair_rotation,
    rectify_pairs,
    sgm,
    stitch_index,
    stitch_points,
    triangulate,
    winner_take_all,
    zncc_cost,
)
from omnimvs.geometry import SweepGrid, default_rig
from omnimvs.sweeping import SphericalVolume, build_lookup
from omnimvs.synthdata import Scene, Sky, Sphere, render_fisheye
from omnimvs.synthdata.scene import Material

PHI = math.pi / 4


def volume(values, mask=None):
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape, bool) if mask is None else mask
    return SphericalVolume(values[..., None], mask)


def zncc_loop(a, b, mask, patch, min_fraction=0.5, eps=1e-8):
    """Per-cell window statistics with wrapped columns and truncated rows."""
    h, w, d = a.shape
    r = patch // 2
    z = np.zeros(a.shape)
    ok = np.zeros(a.shape, bool)
    for i in range(h):
        for j in range(w):
            for k in range(d):
                if not mask[i, j, k]:
                    continue
                xs, ys = [], []
                for di in range(-r, r + 1):
                    for dj in range(-r, r + 1):
                        ii, jj = i + di, (j + dj) % w
                        if 0 <= ii < h and mask[ii, jj, k]:
                            xs.append(a[ii, jj, k])
                            ys.append(b[ii, jj, k])
                if len(xs) < min_fraction * patch * patch:
                    continue
                x, y = np.array(xs), np.array(ys)
                vx, vy = x.var(), y.var()
                if vx <= eps or vy <= eps:
                    continue
                z[i, j, k] = ((x - x.mean()) * (y - y.mean())).mean() / math.sqrt(vx * vy)
                ok[i, j, k] = True
    return z, ok


# ---- ZNCC ----

def test_zncc_examples(rng):
    a = rng.random((9, 12, 2))
    c = zncc_cost(volume(a), volume(a), patch=5)
    np.testing.assert_allclose(c.data[c.valid], 0.0, atol=1e-9)
    c = zncc_cost(volume(a), volume(-a), patch=5)
    np.testing.assert_allclose(c.data[c.valid], 1.0, atol=1e-9)
    assert c.valid[2:-2].all()
    c = zncc_cost(volume(np.full((9, 12, 2), 0.4)), volume(a), patch=5)
    assert not c.valid.any()


def test_zncc_matches_loop_with_masks(rng):
    a, b = rng.random((7, 10, 3)), rng.random((7, 10, 3))
    mask = rng.random((7, 10, 3)) > 0.2
    z, ok = masked_zncc(a, b, mask, patch=5)
    zl, okl = zncc_loop(a, b, mask, 5)
    assert (ok == okl).all()
    np.testing.assert_allclose(z[ok], zl[ok], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-5.0, 5.0), st.integers(0, 2 ** 31))
def test_zncc_affine_invariance(gain, offset, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((6, 8, 2)), rng.random((6, 8, 2))
    base = zncc_cost(volume(a), volume(b), patch=3)
    moved = zncc_cost(volume(gain * a + offset), volume(b), patch=3)
    assert (base.valid == moved.valid).all()
    np.testing.assert_allclose(moved.data, base.data, atol=1e-6)


def test_zncc_grid_mismatch():
    with pytest.raises(ValueError):
        zncc_cost(volume(np.zeros((4, 4, 2))), volume(np.zeros((4, 4, 3))))


def test_multiview_examples():
    ones = np.ones((1, 1, 1), bool)
    a = CostVolume(np.full((1, 1, 1), 0.2), ones, np.array([0]))
    b = CostVolume(np.full((1, 1, 1), 0.4), ones, np.array([0]))
    dead = CostVolume(np.full((1, 1, 1), 0.9), ~ones, np.array([0]))
    assert multiview_cost([a, dead]).data[0, 0, 0] == 0.2
    assert multiview_cost([a, b]).data[0, 0, 0] == pytest.approx(0.3)
    assert not multiview_cost([dead]).valid.any()


# ---- winner take all ----

def test_wta_examples():
    one = CostVolume(np.random.default_rng(0).random((3, 4, 1)), np.ones((3, 4, 1), bool),
                     np.array([6]))
    idx, valid = winner_take_all(one)
    assert valid.all() and (idx == 6).all()
    tie = CostVolume(np.array([[[0.5, 0.9, 0.1, 0.7, 0.1]]]), np.ones((1, 1, 5), bool),
                     np.array([0, 2, 4, 6, 8]))
    assert winner_take_all(tie)[0][0, 0] == 4
    dead = CostVolume(np.zeros((1, 1, 2)), np.zeros((1, 1, 2), bool), np.array([0, 2]))
    idx, valid = winner_take_all(dead)
    assert not valid[0, 0] and np.isnan(idx[0, 0])


def test_wta_matches_loop(rng):
    data = np.round(rng.random((5, 6, 7)), 1)  # coarse values force ties
    valid = rng.random(data.shape) > 0.3
    idx, ok = winner_take_all(CostVolume(data, valid, np.arange(7) * 2))
    for r in range(5):
        for c in range(6):
            best, arg = math.inf, None
            for n in range(7):
                if valid[r, c, n] and data[r, c, n] < best:
                    best, arg = data[r, c, n], 2 * n
            assert (arg is None and not ok[r, c]) or idx[r, c] == arg


# ---- SGM ----

def test_sgm_params_validation():
    with pytest.raises(ValueError):
        SgmParams(p1=2.0, p2=1.0)
    with pytest.raises(ValueError):
        SgmParams(num_paths=3)


def test_sgm_hand_unrolled_three_cells():
    # one row, three cells along a horizontal path, three planes
    c = np.array([[[1.0, 0.0, 2.0], [0.0, 3.0, 1.0], [2.0, 2.0, 0.0]]])
    p1, p2 = 0.5, 1.5
    out = aggregate_path(c, (0, 1), SgmParams(p1, p2, 1, wrap_theta=False))
    l0 = [1.0, 0.0, 2.0]
    # min(l0) = 0; plane 0: min(1, 0 + 0.5, 0 + 1.5) = 0.5 ...
    l1 = [0.0 + 0.5, 3.0 + 0.0, 1.0 + 0.5]
    # min(l1) = 0.5; plane 0: min(0.5, 3 + .5, 2) - .5 = 0; plane 1: min(3, 1, 2) - .5 = .5;
    # plane 2: min(1.5, 3.5, 2) - .5 = 1
    l2 = [2.0 + 0.0, 2.0 + 0.5, 0.0 + 1.0]
    np.testing.assert_allclose(out[0], [l0, l1, l2])


def sgm_loop(c, direction, p1, p2):
    """Scalar recurrence without wraparound; paths start where the predecessor leaves the grid."""
    h, w, _ = c.shape
    dr, dc = direction
    out = np.zeros_like(c)
    rows = range(h) if dr >= 0 else range(h - 1, -1, -1)
    cols = range(w) if dc >= 0 else range(w - 1, -1, -1)
    for r in rows:
        for col in cols:
            pr, pc = r - dr, col - dc
            if 0 <= pr < h and 0 <= pc < w:
                out[r, col] = sgm_path_scalar([list(out[pr, pc]), list(c[r, col])], p1, p2)[1]
            else:
                out[r, col] = c[r, col]
    return out


@pytest.mark.parametrize("direction", DIRECTIONS)
def test_sgm_paths_match_loop(rng, direction):
    c = rng.random((5, 6, 4))
    got = aggregate_path(c, direction, SgmParams(0.1, 0.7, 8, wrap_theta=False))
    np.testing.assert_allclose(got, sgm_loop(c, direction, 0.1, 0.7), atol=1e-12)


def test_sgm_wrap_links_the_seam(rng):
    c = rng.random((3, 6, 4))
    for direction in DIRECTIONS:
        if direction[1] == 0:
            continue
        wrapped = aggregate_path(c, direction, SgmParams(0.1, 0.7, 8, wrap_theta=True))
        plain = aggregate_path(c, direction, SgmParams(0.1, 0.7, 8, wrap_theta=False))
        assert not np.allclose(wrapped, plain)
    # a diagonal path entering column 0 continues from column W-1 of the previous row
    wrapped = aggregate_path(c, (1, 1), SgmParams(0.1, 0.7, 8, wrap_theta=True))
    expected = sgm_path_scalar([list(wrapped[0, 5]), list(c[1, 0])], 0.1, 0.7)[1]
    np.testing.assert_allclose(wrapped[1, 0], expected)


def test_sgm_zero_penalties_exact(rng):
    data = rng.random((4, 6, 5))
    valid = rng.random(data.shape) > 0.2
    cost = CostVolume(data, valid, np.arange(5) * 2)
    out = sgm(cost, SgmParams(0.0, 0.0))
    assert (out.data[valid] == (8 * data)[valid]).all()
    assert (out.data[~valid] == 0).all()
    a, _ = winner_take_all(out)
    b, _ = winner_take_all(cost)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 1.0), st.floats(1.0, 20.0))
def test_sgm_lower_bound(seed, p1, p2):
    rng = np.random.default_rng(seed)
    data = rng.random((4, 5, 6))
    cost = CostVolume(data, np.ones(data.shape, bool), np.arange(6))
    out = sgm(cost, SgmParams(p1, p2))
    assert (out.data >= 8 * data.min(axis=-1, keepdims=True) - 1e-12).all()


# ---- rectify and stitch ----

def test_pair_rotation_is_rectifying():
    rig = default_rig(128)
    for i in range(4):
        j = (i + 1) % 4
        rot = pair_rotation(rig, i, j)
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0)
        base = rot @ (rig[j].center - rig[i].center)
        assert abs(base[1]) < 1e-12 and abs(base[2]) < 1e-12  # purely horizontal baseline
        bisector = rig[i].rotation[2] + rig[j].rotation[2]
        assert rot[2] @ bisector > 0


def test_pinhole_center_ray_and_identity_pose(rng):
    rig = default_rig(128)
    view = PinholeView(9, math.radians(90), rig[0].rotation, rig[0].center, 0, "left")
    np.testing.assert_allclose(view.rays()[4, 4], rig[0].rotation[2], atol=1e-12)
    # a view aligned with the fisheye: its central ray hits the principal point
    u, v, ok = rig[0].project_points(view.rays()[4, 4], at_infinity=True)
    assert ok and (u, v) == pytest.approx(rig[0].principal_point)
    u, v, front = view.project(rig[0].center + 2.0 * rig[0].rotation[2])
    assert front and (u, v) == pytest.approx((4.0, 4.0))


def test_rectified_rows_agree_on_rendered_blob():
    rig = default_rig(256)
    bright = Material(0, 1.0, low=0.95, high=0.95)
    blobs = [Sphere(np.array([2.0, 0.35, 0.25]), 0.07, bright),
             Sphere(np.array([0.3, -0.4, -2.2]), 0.07, bright)]
    for blob, pair_idx in zip(blobs, (0, 1)):
        scene = Scene((blob,), Sky(0.0, 0.0))
        images = [render_fisheye(scene, cam) for cam in rig]
        pair = rectify_pairs(rig, images, size=128)[pair_idx]
        rows = []
        for img in (pair.left_image, pair.right_image):
            wgt = img.sum(axis=1)
            assert wgt.sum() > 1.0, "blob must be visible in both views"
            rows.append((wgt * np.arange(len(wgt))).sum() / wgt.sum())
        assert abs(rows[0] - rows[1]) <= 0.5
        # the sphere centre projects to the same row in both pinhole views
        vl = pair.left.project(blob.center)[1]
        vr = pair.right.project(blob.center)[1]
        assert abs(vl - vr) < 1e-9


def test_rectify_coverage_error():
    rig = default_rig(64, fov_deg=150)
    images = [np.zeros((64, 64))] * 4
    with pytest.raises(CoverageError, match=r"pair \(0, 1\)"):
        rectify_pairs(rig, images, size=32, fov_deg=120)
    with pytest.raises(ValueError):
        rectify_pairs(rig, images[:3])


def test_block_matching_recovers_shift(rng):
    right = rng.random((30, 60))
    left = np.empty_like(right)
    left[:, 5:] = right[:, :-5]
    left[:, :5] = rng.random((30, 5))
    disp, valid = block_matching(left, right, 10, patch=7)
    inner = valid[5:-5, 15:-5]
    assert inner.all()
    # integer winner everywhere; the parabola fit only nudges it within the sample spacing
    assert (np.rint(disp[5:-5, 15:-5]) == 5).all()
    assert np.abs(disp[5:-5, 15:-5] - 5).max() < 0.1


def test_triangulation_depth_and_infinity():
    rig = default_rig(128)
    pairs = rectify_pairs(rig, [np.random.default_rng(0).random((128, 128))] * 4, size=33)
    pair = pairs[0]
    disp = np.zeros((33, 33))
    disp[16, 16] = 4.0
    valid = np.zeros((33, 33), bool)
    valid[16, 16] = valid[0, 0] = True
    pts, inf = triangulate(pair, disp, valid)
    assert inf.tolist() == [True, False]
    z_expected = pair.left.focal * pair.baseline / 4.0
    local = (pts[1] - pair.left.center) @ pair.left.rotation.T
    np.testing.assert_allclose(local, [0.0, 0.0, z_expected], atol=1e-12)
    # the point reprojects to disparity 4 in the right view
    ur = pair.right.project(pts[1])[0]
    assert ur == pytest.approx(16.0 - 4.0)


def _cell_center_point(grid, r, c, dist):
    theta = -math.pi + (c + 0.5) * 2 * math.pi / grid.width
    phi = grid.phi_min + (r + 0.5) * (grid.phi_max - grid.phi_min) / grid.height
    return dist * np.array([math.cos(phi) * math.cos(theta), math.sin(phi),
                            math.cos(phi) * math.sin(theta)])


def test_stitch_single_point_at_cell_center():
    grid = SweepGrid(8, 16, -PHI, PHI, 16, 2.0)
    p = _cell_center_point(grid, 3, 5, 1 / 2.0)
    index, ignored = stitch_index(p[None], [False], grid)
    assert index[3, 5] == pytest.approx(15.0)
    assert ignored.sum() == grid.height * grid.width - 1


def test_stitch_closest_point_wins():
    grid = SweepGrid(8, 16, -PHI, PHI, 16, 2.0)
    pts = np.stack([_cell_center_point(grid, 2, 0, 5.0), _cell_center_point(grid, 2, 0, 2.0)])
    dist, covered = stitch_points(pts, [False, False], grid)
    assert dist[2, 0] == pytest.approx(2.0) and covered.sum() == 1


def test_stitch_wraps_theta_and_handles_infinity():
    grid = SweepGrid(4, 8, -PHI, PHI, 8, 1.0)
    theta = -math.pi + 0.1 * 2 * math.pi / grid.width  # just right of the seam
    phi = grid.phi_min + 1.5 * (grid.phi_max - grid.phi_min) / grid.height
    d = np.array([math.cos(phi) * math.cos(theta), math.sin(phi), math.cos(phi) * math.sin(theta)])
    dist, covered = stitch_points(3.0 * d[None], [False], grid)
    assert covered[1, 0] and covered[1, 7]  # both sides of the seam
    index, ignored = stitch_index(d[None], [True], grid)
    assert index[1, 0] == 0.0 and not ignored[1, 0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 40))
def test_stitch_never_fills_empty_cells(seed, count):
    rng = np.random.default_rng(seed)
    grid = SweepGrid(6, 12, -PHI, PHI, 8, 1.0)
    pts = rng.standard_normal((count, 3)) * 3
    index, ignored = stitch_index(pts, np.zeros(count, bool), grid)
    dist, covered = stitch_points(pts, np.zeros(count, bool), grid)
    assert (np.isnan(index) == ignored).all() and (ignored == ~covered).all()
    # every covered cell has a point within one cell of its centre
    r, c = np.nonzero(covered)
    from omnimvs.geometry import ray_to_spherical
    th, ph = ray_to_spherical(pts)
    col = (th + math.pi) / (2 * math.pi / 12) - 0.5
    row = (ph - grid.phi_min) / ((grid.phi_max - grid.phi_min) / 6) - 0.5
    for rr, cc in zip(r, c):
        dcol = np.abs((col - cc + 6) % 12 - 6)
        assert ((row - rr) ** 2 + dcol ** 2 < 1).any()


def test_omni_zncc_on_constant_scene_is_invalid():
    rig = default_rig(64)
    grid = SweepGrid(8, 32, -PHI, PHI, 8, 1.5, stride=2)
    table = build_lookup(rig, grid)
    cost = omni_zncc_cost([np.full((64, 64), 0.5)] * 4, table, patch=3)
    assert cost.shape == (8, 32, 4) and not cost.valid.any()
