"""Scene generation, analytic depth rendering and serialization."""

from __future__ import annotations

import numpy as np
import pytest

from clutterprobe.geometry import CameraModel, backproject_image, \
    default_workspace_grid, look_at_pose, make_view_set
from clutterprobe.scene import (
    DEFAULT_CATALOG,
    NO_HIT_ID,
    TABLE_ID,
    ObjectSpec,
    PlacedObject,
    SceneError,
    SceneState,
    generate_random_scene,
    height_map,
    render_depth,
    scene_from_text,
    scene_to_text,
    visibility_ratios,
)

BOUNDS = (-0.75, 0.75, -0.5, 0.5)


def _spec(class_id: int) -> ObjectSpec:
    return DEFAULT_CATALOG[class_id]


def _small_camera(position, width=48, height=36, fov_deg=70.0) -> CameraModel:
    f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    return CameraModel(f, f, (width - 1) / 2.0, (height - 1) / 2.0,
                       width, height, look_at_pose(position, (0.0, 0.0, 0.0)))


def _inside(obj: PlacedObject, pts: np.ndarray, eps: float) -> np.ndarray:
    """Point-in-solid test, inflated by ``eps`` (negative deflates)."""
    rel = pts[:, :2] - np.array([obj.x, obj.y])
    c, s = np.cos(-obj.yaw), np.sin(-obj.yaw)
    x = c * rel[:, 0] - s * rel[:, 1]
    y = s * rel[:, 0] + c * rel[:, 1]
    z = pts[:, 2]
    sx, sy, sz = obj.spec.dims
    zin = (z >= obj.z_base - eps) & (z <= obj.z_base + sz + eps)
    if obj.spec.shape == "box":
        return (np.abs(x) <= sx / 2.0 + eps) & (np.abs(y) <= sy / 2.0 + eps) & zin
    return (x * x + y * y <= (sx / 2.0 + eps) ** 2) & zin


def _ray_dirs(camera: CameraModel) -> np.ndarray:
    us = (np.arange(camera.width) - camera.cx) / camera.fx
    vs = (np.arange(camera.height) - camera.cy) / camera.fy
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu, vv, np.ones_like(uu)], axis=-1) @ camera.rotation.T


# ---------------------------------------------------------------------------
# catalog and placement
# ---------------------------------------------------------------------------


def test_catalog_has_27_distinct_desk_scale_classes():
    assert len(DEFAULT_CATALOG) == 27
    ids = [spec.class_id for spec in DEFAULT_CATALOG]
    assert ids == list(range(27))
    shapes = [spec.shape for spec in DEFAULT_CATALOG]
    assert shapes.count("box") == 14
    assert shapes.count("cylinder") == 13
    dims = {spec.dims for spec in DEFAULT_CATALOG}
    assert len(dims) == 27  # no duplicate geometry
    for spec in DEFAULT_CATALOG:
        assert all(0.01 < d < 0.15 for d in spec.dims)


def test_object_spec_validation():
    with pytest.raises(SceneError):
        ObjectSpec(0, "sphere", (0.05, 0.05, 0.05))
    with pytest.raises(SceneError):
        ObjectSpec(0, "box", (0.05, -0.01, 0.05))
    with pytest.raises(SceneError):
        ObjectSpec(0, "cylinder", (0.05, 0.06, 0.05))


def test_generation_is_seed_deterministic():
    a = generate_random_scene(10, seed=42)
    b = generate_random_scene(10, seed=42)
    c = generate_random_scene(10, seed=43)
    assert scene_to_text(a) == scene_to_text(b)
    assert scene_to_text(a) != scene_to_text(c)


def test_generation_edge_counts():
    assert len(generate_random_scene(0, seed=1)) == 0
    single = generate_random_scene(1, seed=1)
    assert len(single) == 1
    assert single.objects[0].z_base == 0.0
    with pytest.raises(SceneError):
        generate_random_scene(-1, seed=1)


def test_generation_respects_drop_region():
    for seed in range(5):
        scene = generate_random_scene(12, seed=seed, drop_extent=(0.3, 0.2))
        for obj in scene.objects:
            assert abs(obj.x) <= 0.15
            assert abs(obj.y) <= 0.10
            assert 0.0 <= obj.yaw < 2.0 * np.pi


def test_generation_support_invariant():
    # every raised object rests on another whose top matches its base and
    # whose footprint covers at least the stacking fraction of its own
    for seed in range(8):
        scene = generate_random_scene(14, seed=seed, drop_extent=(0.3, 0.3))
        for obj in scene.objects:
            if obj.z_base == 0.0:
                continue
            fp = obj.footprint()
            supported = False
            for other in scene.objects:
                if other is obj or abs(other.top - obj.z_base) > 1e-12:
                    continue
                if fp.intersection(other.footprint()).area >= 0.3 * fp.area - 1e-12:
                    supported = True
            assert supported


def test_scene_state_validation():
    spec = _spec(0)
    with pytest.raises(SceneError):
        SceneState((PlacedObject(spec, 2.0, 0.0, 0.0),), BOUNDS)
    with pytest.raises(SceneError):
        SceneState((PlacedObject(spec, 0.0, 0.0, 0.0, z_base=-0.01),), BOUNDS)
    with pytest.raises(SceneError):
        SceneState((), (0.5, -0.5, 0.0, 1.0))


def test_class_counts():
    objs = (PlacedObject(_spec(3), 0.0, 0.0, 0.0),
            PlacedObject(_spec(3), 0.2, 0.0, 0.0),
            PlacedObject(_spec(7), -0.2, 0.0, 0.0))
    assert SceneState(objs, BOUNDS).class_counts() == {3: 2, 7: 1}


# ---------------------------------------------------------------------------
# depth rendering
# ---------------------------------------------------------------------------


def test_empty_scene_overhead_render():
    cam = make_view_set(1)[0]
    view = render_depth(SceneState((), BOUNDS), cam)
    assert np.all(view.instance == TABLE_ID)
    # straight-down rays: z-depth equals the camera height everywhere
    assert np.all(view.depth == 1.5)


def test_single_box_center_depth():
    spec = _spec(0)  # 0.036 x 0.036 x 0.030 box
    scene = SceneState((PlacedObject(spec, 0.0, 0.0, 0.0),), BOUNDS)
    cam = make_view_set(1)[0]
    view = render_depth(scene, cam)
    r, c = int(round(cam.cy)), int(round(cam.cx))
    assert view.instance[r, c] == 0
    assert view.depth[r, c] == pytest.approx(1.5 - 0.030, abs=1e-12)


def test_side_view_table_and_horizon():
    # the default rig's side cameras tilt gently: every ray lands on the table
    cam = make_view_set(2)[1]
    view = render_depth(SceneState((), BOUNDS), cam)
    assert np.all(view.instance == TABLE_ID)
    assert np.all(np.isfinite(view.depth))
    # a near-horizontal camera sees past the horizon: no-hit pixels at +inf
    low = _small_camera((1.5, 0.0, 0.1))
    view2 = render_depth(SceneState((), BOUNDS), low)
    assert np.any(view2.instance == NO_HIT_ID)
    assert np.all(np.isinf(view2.depth[view2.instance == NO_HIT_ID]))
    assert np.any(view2.instance == TABLE_ID)


def _checked_scene() -> SceneState:
    return SceneState((
        PlacedObject(_spec(2), 0.05, 0.00, 0.3),          # box
        PlacedObject(_spec(16), -0.08, 0.04, 0.0),        # cylinder
        PlacedObject(_spec(5), 0.00, -0.10, 1.1),         # box
        PlacedObject(_spec(20), 0.05, 0.01, 0.0, 0.040),  # cylinder on the box
    ), BOUNDS)


@pytest.mark.parametrize("position", [(0.0, 0.0, 1.5), (0.6, 0.35, 0.5)])
def test_render_no_surface_before_reported_depth(position):
    # sampled-interior oracle: no ray sample strictly before the rendered
    # depth may fall inside any object
    scene = _checked_scene()
    cam = _small_camera(position)
    view = render_depth(scene, cam)
    dirs = _ray_dirs(cam).reshape(-1, 3)
    depth = view.depth.reshape(-1)
    finite = np.isfinite(depth)
    fracs = np.linspace(0.05, 1.0, 120)[:-1]
    for frac in fracs:
        t = frac * (depth[finite] - 1e-6)
        pts = cam.position + dirs[finite] * t[:, None]
        for obj in scene.objects:
            assert not np.any(_inside(obj, pts, -1e-6))


@pytest.mark.parametrize("position", [(0.0, 0.0, 1.5), (0.6, 0.35, 0.5)])
def test_render_hits_lie_on_claimed_surface(position):
    scene = _checked_scene()
    cam = _small_camera(position)
    view = render_depth(scene, cam)
    dirs = _ray_dirs(cam).reshape(-1, 3)
    depth = view.depth.reshape(-1)
    inst = view.instance.reshape(-1)
    for idx, obj in enumerate(scene.objects):
        sel = inst == idx
        if not np.any(sel):
            continue
        pts = cam.position + dirs[sel] * depth[sel][:, None]
        assert np.all(_inside(obj, pts, 1e-8))          # on or inside
        assert not np.any(_inside(obj, pts, -1e-8))     # not strictly inside
    sel = inst == TABLE_ID
    pts = cam.position + dirs[sel] * depth[sel][:, None]
    assert np.allclose(pts[:, 2], 0.0, atol=1e-9)


def test_generated_scene_surface_consistency():
    # full-rig overhead render of a generated pile: every foreground pixel
    # backprojects onto the boundary of the object the instance map claims
    scene = generate_random_scene(6, seed=5, drop_extent=(0.3, 0.3))
    cam = make_view_set(1)[0]
    view = render_depth(scene, cam)
    pts, pix = backproject_image(view.depth, cam)
    inst = view.instance[pix[:, 0], pix[:, 1]]
    for idx, obj in enumerate(scene.objects):
        sel = inst == idx
        if not np.any(sel):
            continue
        assert np.all(_inside(obj, pts[sel], 1e-8))
        assert not np.any(_inside(obj, pts[sel], -1e-8))


# ---------------------------------------------------------------------------
# height map and visibility
# ---------------------------------------------------------------------------


def test_height_map_empty_scene_is_flat():
    cam = make_view_set(1)[0]
    grid = default_workspace_grid()
    hm = height_map(render_depth(SceneState((), BOUNDS), cam), grid)
    assert hm.total == 0.0


def test_height_map_single_and_stacked_boxes():
    cam = make_view_set(1)[0]
    grid = default_workspace_grid()
    spec_low = _spec(7)   # 0.088 x 0.056 x 0.050
    box = PlacedObject(spec_low, 0.0, 0.0, 0.0)
    scene = SceneState((box,), BOUNDS)
    hm = height_map(render_depth(scene, cam), grid)
    assert hm.max == pytest.approx(0.050, abs=1e-9)
    # deposits are sparser than the 2 mm grid, but each one sits inside the
    # footprint (within a cell diagonal) at the exact top height
    from shapely.geometry import Point

    fp = box.footprint().buffer(0.002)
    cells = np.nonzero(hm.values)
    assert len(cells[0]) > 0
    for i, j in zip(*cells):
        assert hm.values[i, j] == pytest.approx(0.050, abs=1e-9)
        assert fp.contains(Point(grid.cell_center(i, j)))
    stacked = SceneState(
        (PlacedObject(spec_low, 0.0, 0.0, 0.0),
         PlacedObject(_spec(0), 0.0, 0.0, 0.0, z_base=0.050)), BOUNDS)
    hm2 = height_map(render_depth(stacked, cam), grid)
    assert hm2.max == pytest.approx(0.080, abs=1e-9)  # 0.050 + 0.030


def test_height_map_rejects_oblique_camera():
    cam = make_view_set(2)[1]
    view = render_depth(SceneState((), BOUNDS), cam)
    with pytest.raises(SceneError):
        height_map(view, default_workspace_grid())


def test_visibility_alone_and_buried():
    cam = make_view_set(1)[0]
    small = PlacedObject(_spec(0), 0.0, 0.0, 0.0)            # 0.036 box
    scene = SceneState((small,), BOUNDS)
    assert visibility_ratios(scene, cam)[0] == pytest.approx(1.0)
    lid = PlacedObject(_spec(5), 0.0, 0.0, 0.0, z_base=0.05)  # 0.096 box above
    covered = SceneState((small, lid), BOUNDS)
    vis = visibility_ratios(covered, cam)
    assert vis[0] == 0.0
    assert vis[1] == pytest.approx(1.0)


def test_visibility_matches_two_render_pixel_counts():
    scene = generate_random_scene(8, seed=3, drop_extent=(0.25, 0.25))
    for cam in (make_view_set(1)[0], make_view_set(3)[1]):
        full = render_depth(scene, cam)
        vis = visibility_ratios(scene, cam, full)
        for k, obj in enumerate(scene.objects):
            solo = render_depth(SceneState((obj,), scene.bounds), cam)
            alone = int(np.count_nonzero(solo.instance == 0))
            shown = int(np.count_nonzero(full.instance == k))
            expect = shown / alone if alone else 0.0
            assert vis[k] == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_scene_text_round_trip():
    scene = generate_random_scene(9, seed=21)
    text = scene_to_text(scene)
    again = scene_from_text(text)
    assert scene_to_text(again) == text
    assert again.bounds == scene.bounds
    for a, b in zip(again.objects, scene.objects):
        assert (a.spec, a.x, a.y, a.yaw, a.z_base) == \
            (b.spec, b.x, b.y, b.yaw, b.z_base)


def test_scene_from_text_rejects_malformed():
    with pytest.raises(SceneError):
        scene_from_text("objects 0\n")
    with pytest.raises(SceneError):
        scene_from_text("bounds -1 1 -1 1\nnope\n")
    good = scene_to_text(generate_random_scene(2, seed=0))
    with pytest.raises(SceneError):
        scene_from_text(good.replace("objects 2", "objects 3"))
    mangled = "\n".join(
        ln + " extra" if ln.startswith("object ") else ln
        for ln in good.splitlines())
    with pytest.raises(SceneError):
        scene_from_text(mangled)
