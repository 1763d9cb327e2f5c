import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import make_camera
from omnimvs.geometry import SweepGrid, default_rig
from omnimvs.synthdata import (
    Box,
    Room,
    Scene,
    SceneError,
    SceneParams,
    Sky,
    Sphere,
    camera_rays,
    generate_corpus,
    generate_scene,
    marsaglia_direction,
    marsaglia_from,
    read_frame,
    render_fisheye,
    render_frame,
    render_gt_depth,
    write_frame,
)
from omnimvs.synthdata.frame import frame_config_hash
from omnimvs.synthdata.scene import Material
from omnimvs.synthdata.texture import fractal_noise, value_noise

PHI = math.pi / 4
FLAT = Material(1, 1.0, low=0.9, high=0.9)


def octant_counts(n, seed=0):
    rng = np.random.default_rng(seed)
    dirs = np.array([marsaglia_direction(rng).direction for _ in range(n)])
    octant = (dirs[:, 0] > 0) * 4 + (dirs[:, 1] > 0) * 2 + (dirs[:, 2] > 0)
    return np.bincount(octant, minlength=8), dirs


# ---- Marsaglia placement ----

def test_marsaglia_examples():
    assert marsaglia_from(0.0, 0.0) == (0.0, 0.0, 1.0)
    for eps in (1e-2, 1e-4, 1e-6):
        v1 = 1 - eps
        expected = (2 * v1 * math.sqrt(2 * eps - eps * eps), 0.0, 1 - 2 * v1 * v1)
        assert marsaglia_from(v1, 0.0) == pytest.approx(expected, abs=1e-12)
    assert marsaglia_from(1 - 1e-9, 0.0)[2] == pytest.approx(-1.0, abs=1e-8)
    with pytest.raises(SceneError):
        marsaglia_from(0.8, 0.6)


@settings(max_examples=200)
@given(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999))
def test_marsaglia_unit_norm(v1, v2):
    if v1 * v1 + v2 * v2 >= 1:
        return
    assert abs(math.sqrt(sum(c * c for c in marsaglia_from(v1, v2))) - 1) <= 1e-12


def test_marsaglia_placement_record():
    p = marsaglia_direction(np.random.default_rng(3))
    assert p.v1 ** 2 + p.v2 ** 2 < 1
    assert p.direction == marsaglia_from(p.v1, p.v2)


def test_marsaglia_uniformity():
    n = 100_000
    counts, dirs = octant_counts(n)
    assert (np.abs(counts / n - 0.125) <= 0.01).all()
    assert chisquare(counts).pvalue > 0.01
    sigma = math.sqrt(1 / 3 / n)  # each coordinate of a uniform direction has variance 1/3
    assert (np.abs(dirs.mean(axis=0)) <= 3 * sigma).all()


# ---- scenes ----

def test_scene_determinism():
    a, b = generate_scene(11), generate_scene(11)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert json.dumps(generate_scene(12).to_dict()) != json.dumps(a.to_dict())


@pytest.mark.parametrize("seed", range(6))
def test_clearance_respected(seed):
    params = SceneParams()
    scene = generate_scene(seed, params)
    assert len(scene.objects) == params.num_objects == 16
    for obj in scene.objects:
        assert np.linalg.norm(obj.center) - obj.bounding_radius >= params.clearance - 1e-12
    # no ray from the rig origin hits an object closer than the clearance
    grid = SweepGrid(64, 128, -math.pi / 2, math.pi / 2, 2, 1.0)
    rays = grid.rays().reshape(-1, 3)
    for obj in scene.objects:
        assert (obj.intersect(np.zeros(3), rays) >= params.clearance).all()


def test_infeasible_clearance():
    with pytest.raises(SceneError):
        generate_scene(0, SceneParams(distance_range=(0.5, 3.0), clearance=0.7))
    with pytest.raises(SceneError):
        generate_scene(0, SceneParams(distance_range=(3.0, 2.0)))


def room_depth_loop(room, d):
    best = math.inf
    for axis in range(3):
        if d[axis] == 0:
            continue
        for sign in (-1, 1):
            t = (room.center[axis] + sign * room.half_extents[axis]) / d[axis]
            if t > 0:
                best = min(best, t)
    return best


def test_background_only_scenes():
    grid = SweepGrid(8, 16, -PHI, PHI, 8, 1.0)
    for seed in range(10):
        scene = generate_scene(seed, SceneParams(num_objects=0))
        depth = render_gt_depth(scene, grid)
        if isinstance(scene.background, Sky):
            assert np.isinf(depth).all()
            continue
        rays = grid.rays()
        for r in range(8):
            for c in range(16):
                assert depth[r, c] == pytest.approx(room_depth_loop(scene.background, rays[r, c]),
                                                    rel=1e-12)


def test_gt_depth_examples():
    grid = SweepGrid(1, 4, -0.01, 0.01, 8, 1.0)  # column 2 looks along +x
    room = Room(np.zeros(3), np.array([3.0, 2.0, 4.0]), FLAT)
    depth = render_gt_depth(Scene((), room), grid)
    ray = grid.rays()[0, 2]
    assert depth[0, 2] == pytest.approx(3.0 / ray[0], rel=1e-12)
    ball = Sphere(2.5 * ray, 0.75, FLAT)
    assert render_gt_depth(Scene((ball,), room), grid)[0, 2] == pytest.approx(1.75, abs=1e-12)


def _inside(obj, p):
    if isinstance(obj, Sphere):
        return np.linalg.norm(p - obj.center, axis=-1) < obj.radius
    if isinstance(obj, Box):
        return (np.abs(p - obj.center) < obj.half_extents).all(axis=-1)
    return ~(np.abs(p - obj.center) < obj.half_extents).all(axis=-1)  # room: outside is solid


def march(scene, dirs, step=1e-3, t_max=14.0):
    """First solid sample along each ray, refined by bisection."""
    solids = list(scene.objects) + ([scene.background] if isinstance(scene.background, Room)
                                    else [])
    hit = lambda p: np.any([_inside(o, p) for o in solids], axis=0)  # noqa: E731
    ts = np.arange(step, t_max, step)
    out = np.full(len(dirs), np.inf)
    for k, d in enumerate(dirs):
        inside = hit(ts[:, None] * d)
        if not inside.any():
            continue
        j = int(np.argmax(inside))
        lo, hi = (ts[j - 1] if j else 0.0), ts[j]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if hit(mid * d) else (mid, hi)
        out[k] = hi
    return out


def test_gt_depth_matches_march():
    rng = np.random.default_rng(5)
    scene = Scene((Sphere(np.array([1.5, 0.2, 1.0]), 0.6, FLAT),
                   Box(np.array([-1.0, -0.3, 2.0]), np.array([0.5, 0.4, 0.3]), FLAT)),
                  Room(np.array([0.2, 0.0, -0.3]), np.array([4.0, 2.5, 5.0]), FLAT))
    dirs = rng.standard_normal((150, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # aim half of the rays at the objects so every primitive is exercised
    for k in range(50):
        target = scene.objects[k % 2].center + rng.uniform(-0.4, 0.4, 3)
        dirs[k] = target / np.linalg.norm(target)
    t, ids = scene.intersect(np.zeros(3), dirs)
    assert set(ids.tolist()) == {0, 1, 2}
    np.testing.assert_allclose(t, march(scene, dirs), atol=1e-6, rtol=0)


# ---- rendering ----

def test_sky_render_is_gradient_inside_fov():
    cam = make_camera(focal=15.0, pp=(40.0, 40.0), size=(81, 81))
    sky = Sky(0.5, 0.25)
    img = render_fisheye(Scene((), sky), cam)
    dirs, inside = camera_rays(cam)
    np.testing.assert_allclose(img[inside], sky.radiance(dirs[inside]), atol=1e-15)
    assert (img[~inside] == 0).all() and (~inside).any()


@pytest.mark.parametrize("dist,radius", [(2.0, 0.5), (4.0, 1.0), (3.0, 1.5)])
def test_sphere_disk_angular_size(dist, radius):
    cam = make_camera(focal=60.0, pp=(100.0, 100.0), size=(201, 201))
    scene = Scene((Sphere(np.array([0.0, 0.0, dist]), radius, FLAT),), Sky(0.0, 0.0))
    img = render_fisheye(scene, cam)
    expected = 60.0 * math.asin(radius / dist)
    measured = math.sqrt(np.count_nonzero(img > 0) / math.pi)
    assert abs(measured - expected) <= 1.0
    row = np.nonzero(img[100] > 0)[0]
    assert abs((row.max() - row.min() + 1) / 2 - expected) <= 1.0


def test_render_deterministic():
    rig = default_rig(48)
    scene = generate_scene(3)
    a = [render_fisheye(scene, cam) for cam in rig]
    b = [render_fisheye(generate_scene(3), cam) for cam in rig]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_texture_range_and_determinism(rng):
    pts = rng.uniform(-5, 5, (2000, 3))
    v = value_noise(pts, 9, 0.3)
    assert (v >= 0).all() and (v <= 1).all() and v.std() > 0.05
    assert (value_noise(pts, 9, 0.3) == v).all() and not (value_noise(pts, 10, 0.3) == v).all()
    f = fractal_noise(pts, 9, 0.3, octaves=3)
    assert (f >= 0).all() and (f <= 1).all()


# ---- frames on disk ----

def test_frame_round_trip(tmp_path):
    rig = default_rig(48)
    grid = SweepGrid(8, 32, -PHI, PHI, 8, 1.5, stride=2)
    scene = generate_scene(4)
    write_frame(scene, rig, grid, tmp_path, "f0")
    data = read_frame(tmp_path / "f0")
    images, depth, index = render_frame(scene, rig, grid)
    assert all((a == b).all() and a.dtype == b.dtype for a, b in zip(data.images, images))
    assert data.depth.tobytes() == depth.tobytes() and data.index.tobytes() == index.tobytes()
    assert data.manifest["scene_seed"] == 4 and data.manifest["rig_hash"] == rig.hash()


def test_manifest_hash_tracks_config():
    rig = default_rig(48)
    grid = SweepGrid(8, 32, -PHI, PHI, 8, 1.5)
    base = frame_config_hash(rig, grid, SceneParams())
    assert frame_config_hash(default_rig(48), SweepGrid(8, 32, -PHI, PHI, 8, 1.5),
                             SceneParams()) == base
    assert frame_config_hash(rig, SweepGrid(8, 32, -PHI, PHI, 8, 1.0), SceneParams()) != base
    assert frame_config_hash(default_rig(64), grid, SceneParams()) != base
    assert frame_config_hash(rig, grid, SceneParams(num_objects=3)) != base


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_corpus_regeneration_identical(tmp_path):
    rig = default_rig(48)
    grid = SweepGrid(8, 32, -PHI, PHI, 8, 1.5, stride=2)
    a = generate_corpus(tmp_path / "a", 2, 7, rig, grid)
    b = generate_corpus(tmp_path / "b", 2, 7, rig, grid)
    assert _tree_bytes(a) == _tree_bytes(b)
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["num_frames"] == 2 and len(manifest["frames"]) == 2


def test_desk_corpus_time_budget(tmp_path):
    from omnimvs.config import RunConfig
    cfg = RunConfig()
    start = time.perf_counter()
    generate_corpus(tmp_path, 32, 0, cfg.load_rig(), cfg.sweep_grid(), cfg.scene_params())
    elapsed = time.perf_counter() - start
    print(f"32 desk frames in {elapsed:.1f} s")
    assert elapsed < 60
