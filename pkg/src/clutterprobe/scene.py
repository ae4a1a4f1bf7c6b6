"""Synthetic tabletop scenes: object catalog, placement, depth rendering.

Objects are axis-extruded solids (boxes and upright cylinders) resting on the
table plane z = 0 or stacked on each other, with a free yaw about z.  Scenes
are generated by sequential random drops; depth images are produced by exact
analytic ray casting, so there is no renderer dependency and results are
reproducible to the last bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
from shapely.geometry import Point, Polygon

from .geometry import (
    CameraModel,
    GeometryError,
    WorkspaceGrid,
    TopDownGrid,
    backproject_image,
    project_point,
)

# instance-image markers
TABLE_ID = -1
NO_HIT_ID = -2

#: footprint overlap fraction (of the upper object's area) required to stack
STACK_OVERLAP = 0.3

_RAY_EPS = 1e-9


class SceneError(ValueError):
    """Raised for malformed scenes or scene arguments."""


@dataclass(frozen=True)
class ObjectSpec:
    """One catalog entry.

    ``dims`` is (size_x, size_y, size_z) for boxes and (diameter, diameter,
    height) for cylinders, in metres.  ``color`` is a display tag only.
    """

    class_id: int
    shape: str
    dims: tuple[float, float, float]
    color: str = "gray"

    def __post_init__(self) -> None:
        if self.shape not in ("box", "cylinder"):
            raise SceneError(f"unknown shape {self.shape!r}")
        if any(d <= 0 for d in self.dims):
            raise SceneError("object dimensions must be positive")
        if self.shape == "cylinder" and abs(self.dims[0] - self.dims[1]) > 1e-12:
            raise SceneError("cylinder diameter must match in x and y")

    @property
    def height(self) -> float:
        return self.dims[2]


def _make_catalog() -> tuple[ObjectSpec, ...]:
    boxes = [
        (0.036, 0.036, 0.030), (0.048, 0.048, 0.020), (0.060, 0.060, 0.040),
        (0.072, 0.072, 0.025), (0.084, 0.084, 0.035), (0.096, 0.096, 0.045),
        (0.108, 0.060, 0.030), (0.088, 0.056, 0.050), (0.076, 0.048, 0.020),
        (0.068, 0.044, 0.045), (0.100, 0.072, 0.025), (0.112, 0.084, 0.040),
        (0.056, 0.036, 0.035), (0.072, 0.056, 0.055),
    ]
    cylinders = [
        (0.036, 0.036, 0.040), (0.048, 0.048, 0.050), (0.060, 0.060, 0.030),
        (0.072, 0.072, 0.045), (0.084, 0.084, 0.025), (0.096, 0.096, 0.035),
        (0.040, 0.040, 0.025), (0.052, 0.052, 0.040), (0.064, 0.064, 0.050),
        (0.076, 0.076, 0.020), (0.088, 0.088, 0.045), (0.100, 0.100, 0.030),
        (0.108, 0.108, 0.055),
    ]
    colors = ("red", "green", "blue", "yellow", "cyan", "magenta", "orange",
              "purple", "brown")
    specs = []
    for k, dims in enumerate(boxes):
        specs.append(ObjectSpec(k, "box", dims, colors[k % len(colors)]))
    for k, dims in enumerate(cylinders):
        cid = len(boxes) + k
        specs.append(ObjectSpec(cid, "cylinder", dims, colors[cid % len(colors)]))
    return tuple(specs)


#: the default 27-class catalog of desk-scale boxes and cylinders
DEFAULT_CATALOG: tuple[ObjectSpec, ...] = _make_catalog()


@dataclass(frozen=True)
class PlacedObject:
    """An ObjectSpec placed in the world: centre (x, y), yaw, base height."""

    spec: ObjectSpec
    x: float
    y: float
    yaw: float
    z_base: float = 0.0

    @property
    def top(self) -> float:
        return self.z_base + self.spec.height

    def footprint(self) -> Polygon:
        """Top-down outline (yaw-rotated rectangle, or a 64-gon for cylinders)."""
        sx, sy, _ = self.spec.dims
        if self.spec.shape == "box":
            c, s = np.cos(self.yaw), np.sin(self.yaw)
            hx, hy = sx / 2.0, sy / 2.0
            corners = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
            pts = [(self.x + c * px - s * py, self.y + s * px + c * py)
                   for px, py in corners]
            return Polygon(pts)
        return Point(self.x, self.y).buffer(sx / 2.0, quad_segs=16)


@dataclass(frozen=True)
class SceneState:
    """An immutable arrangement of objects on the table.

    ``bounds`` is (x_min, x_max, y_min, y_max) of the workspace; object
    centres always stay inside it.
    """

    objects: tuple[PlacedObject, ...]
    bounds: tuple[float, float, float, float] = (-0.75, 0.75, -0.5, 0.5)

    def __post_init__(self) -> None:
        x0, x1, y0, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise SceneError("degenerate workspace bounds")
        for k, obj in enumerate(self.objects):
            if not (x0 <= obj.x <= x1 and y0 <= obj.y <= y1):
                raise SceneError(f"object {k} centre lies outside the workspace")
            if obj.z_base < -1e-9:
                raise SceneError(f"object {k} sits below the table")

    def __len__(self) -> int:
        return len(self.objects)

    def class_counts(self) -> dict[int, int]:
        """Ground-truth per-class instance counts."""
        counts: dict[int, int] = {}
        for obj in self.objects:
            counts[obj.spec.class_id] = counts.get(obj.spec.class_id, 0) + 1
        return counts


def _support_height(placed: list[PlacedObject], footprint: Polygon,
                    area: float, threshold: float) -> float:
    """Resting height for a new footprint: stack on the most-overlapped object
    when the overlap covers at least ``threshold`` of the new object's area,
    otherwise the table."""
    best_overlap = 0.0
    best_top = 0.0
    for other in placed:
        ov = footprint.intersection(other.footprint()).area
        if ov > best_overlap:
            best_overlap = ov
            best_top = other.top
    if best_overlap >= threshold * area:
        return best_top
    return 0.0


def generate_random_scene(
    n_objects: int,
    seed: int = 0,
    catalog: tuple[ObjectSpec, ...] = DEFAULT_CATALOG,
    bounds: tuple[float, float, float, float] = (-0.75, 0.75, -0.5, 0.5),
    drop_extent: tuple[float, float] = (0.8, 0.8),
    stack_threshold: float = STACK_OVERLAP,
) -> SceneState:
    """Drop ``n_objects`` random catalog objects into the central drop region.

    Each object draws a uniform class, position within the drop rectangle and
    yaw in [0, 2*pi).  A drop whose footprint overlaps an earlier object by at
    least ``stack_threshold`` of its own area lands on top of that object;
    otherwise it rests on the table (lightly interleaved piles are allowed,
    matching cluttered-desk conditions).
    """
    if n_objects < 0:
        raise SceneError("n_objects must be non-negative")
    rng = np.random.default_rng(seed)
    half_x, half_y = drop_extent[0] / 2.0, drop_extent[1] / 2.0
    placed: list[PlacedObject] = []
    for _ in range(n_objects):
        spec = catalog[int(rng.integers(len(catalog)))]
        x = float(rng.uniform(-half_x, half_x))
        y = float(rng.uniform(-half_y, half_y))
        yaw = float(rng.uniform(0.0, 2.0 * np.pi))
        probe = PlacedObject(spec, x, y, yaw, 0.0)
        fp = probe.footprint()
        z = _support_height(placed, fp, fp.area, stack_threshold)
        placed.append(replace(probe, z_base=z))
    return SceneState(tuple(placed), bounds)


# ---------------------------------------------------------------------------
# depth rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Rendered z-depth plus per-pixel instance indices.

    ``instance`` holds the scene index of the nearest surface, TABLE_ID for
    the table plane and NO_HIT_ID where the ray escapes (depth is +inf there).
    """

    depth: np.ndarray
    instance: np.ndarray
    camera: CameraModel

    def __post_init__(self) -> None:
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise SceneError("depth image does not match camera resolution")
        if self.instance.shape != self.depth.shape:
            raise SceneError("instance image does not match depth image")


def _ray_directions(camera: CameraModel) -> np.ndarray:
    """World-frame direction per pixel, scaled so the camera-z component is 1.

    With this scaling the ray parameter t *is* the z-depth of the hit.
    """
    us = (np.arange(camera.width) - camera.cx) / camera.fx
    vs = (np.arange(camera.height) - camera.cy) / camera.fy
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    return dirs_cam @ camera.rotation.T


def _slab_interval(o: float, d: np.ndarray, lo: float, hi: float):
    """Entry/exit parameters of rays against one axis slab [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = np.abs(d) < 1e-15
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    return tmin, tmax


def _intersect_object(obj: PlacedObject, origin: np.ndarray,
                      dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the nearest hit on one object; +inf where missed."""
    sx, sy, sz = obj.spec.dims
    o_rel = origin - np.array([obj.x, obj.y, 0.0])
    if obj.spec.shape == "box":
        c, s = np.cos(-obj.yaw), np.sin(-obj.yaw)
        ox = c * o_rel[0] - s * o_rel[1]
        oy = s * o_rel[0] + c * o_rel[1]
        dx = c * dirs[..., 0] - s * dirs[..., 1]
        dy = s * dirs[..., 0] + c * dirs[..., 1]
        tmin_x, tmax_x = _slab_interval(ox, dx, -sx / 2.0, sx / 2.0)
        tmin_y, tmax_y = _slab_interval(oy, dy, -sy / 2.0, sy / 2.0)
        tmin_z, tmax_z = _slab_interval(o_rel[2], dirs[..., 2],
                                        obj.z_base, obj.z_base + sz)
        entry = np.maximum(np.maximum(tmin_x, tmin_y), tmin_z)
        exit_ = np.minimum(np.minimum(tmax_x, tmax_y), tmax_z)
    else:
        r = sx / 2.0
        dx, dy = dirs[..., 0], dirs[..., 1]
        a = dx * dx + dy * dy
        b = 2.0 * (o_rel[0] * dx + o_rel[1] * dy)
        cc = o_rel[0] ** 2 + o_rel[1] ** 2 - r * r
        disc = b * b - 4.0 * a * cc
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t_lo = (-b - sq) / (2.0 * a)
            t_hi = (-b + sq) / (2.0 * a)
        vertical = a < 1e-18
        inside = cc < 0.0
        t_lo = np.where(vertical, np.where(inside, -np.inf, np.inf), t_lo)
        t_hi = np.where(vertical, np.where(inside, np.inf, -np.inf), t_hi)
        miss = (~vertical) & (disc < 0.0)
        t_lo = np.where(miss, np.inf, t_lo)
        t_hi = np.where(miss, -np.inf, t_hi)
        tmin_z, tmax_z = _slab_interval(o_rel[2], dirs[..., 2],
                                        obj.z_base, obj.z_base + sz)
        entry = np.maximum(t_lo, tmin_z)
        exit_ = np.minimum(t_hi, tmax_z)
    hit = (entry <= exit_) & (entry > _RAY_EPS)
    return np.where(hit, entry, np.inf)


def _object_window(obj: PlacedObject, camera: CameraModel,
                   margin: int = 3) -> tuple[int, int, int, int] | None:
    """Pixel window (r0, r1, c0, c1, half-open) covering the projected object."""
    sx, sy, sz = obj.spec.dims
    pts = []
    if obj.spec.shape == "box":
        c, s = np.cos(obj.yaw), np.sin(obj.yaw)
        for px in (-sx / 2.0, sx / 2.0):
            for py in (-sy / 2.0, sy / 2.0):
                wx = obj.x + c * px - s * py
                wy = obj.y + s * px + c * py
                for z in (obj.z_base, obj.z_base + sz):
                    pts.append((wx, wy, z))
    else:
        r = sx / 2.0
        for ang in np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False):
            for z in (obj.z_base, obj.z_base + sz):
                pts.append((obj.x + r * np.cos(ang), obj.y + r * np.sin(ang), z))
    rows, cols = [], []
    for p in pts:
        try:
            rr, cc, _ = project_point(p, camera)
        except GeometryError:
            # degenerate placement behind the camera: fall back to full frame
            return (0, camera.height, 0, camera.width)
        rows.append(rr)
        cols.append(cc)
    r0 = max(0, int(np.floor(min(rows))) - margin)
    r1 = min(camera.height, int(np.ceil(max(rows))) + margin + 1)
    c0 = max(0, int(np.floor(min(cols))) - margin)
    c1 = min(camera.width, int(np.ceil(max(cols))) + margin + 1)
    if r0 >= r1 or c0 >= c1:
        return None
    return (r0, r1, c0, c1)


def render_depth(scene: SceneState, camera: CameraModel) -> DepthImage:
    """Analytic z-depth render of the scene, nearest surface wins.

    The infinite table plane z = 0 is part of every render; rays that hit
    nothing (pointing above the horizon) get depth +inf and id NO_HIT_ID.
    """
    dirs = _ray_directions(camera)
    origin = camera.position
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = -origin[2] / dz
    table_ok = (dz < -1e-15) & (t_table > _RAY_EPS)
    depth = np.where(table_ok, t_table, np.inf)
    inst = np.where(table_ok, TABLE_ID, NO_HIT_ID).astype(np.int32)
    for idx, obj in enumerate(scene.objects):
        win = _object_window(obj, camera)
        if win is None:
            continue
        r0, r1, c0, c1 = win
        t = _intersect_object(obj, origin, dirs[r0:r1, c0:c1])
        closer = t < depth[r0:r1, c0:c1]
        depth[r0:r1, c0:c1][closer] = t[closer]
        inst[r0:r1, c0:c1][closer] = idx
    return DepthImage(depth, inst, camera)


def visibility_ratios(scene: SceneState, camera: CameraModel,
                      rendered: DepthImage | None = None) -> np.ndarray:
    """Fraction of each object's solo silhouette that survives occlusion.

    Entry k is (pixels showing object k in the full render) / (pixels object k
    would cover rendered alone); 0 when the solo silhouette is empty.
    """
    if rendered is None:
        rendered = render_depth(scene, camera)
    dirs = _ray_directions(camera)
    origin = camera.position
    n = len(scene.objects)
    ratios = np.zeros(n)
    visible = np.bincount(
        rendered.instance[rendered.instance >= 0].ravel(), minlength=n)
    for idx, obj in enumerate(scene.objects):
        win = _object_window(obj, camera)
        if win is None:
            continue
        r0, r1, c0, c1 = win
        t = _intersect_object(obj, origin, dirs[r0:r1, c0:c1])
        alone = int(np.count_nonzero(np.isfinite(t)))
        if alone > 0:
            ratios[idx] = visible[idx] / alone
    return ratios


def height_map(view: DepthImage, grid: WorkspaceGrid) -> TopDownGrid:
    """Top-down surface heights from an overhead depth image.

    Every valid pixel deposits max(0, z) of its backprojected point into its
    cell; cells keep the maximum deposit and untouched cells stay 0.  Requires
    a straight-down camera, since oblique views leave occlusion shadows.
    """
    if not view.camera.is_overhead():
        raise SceneError("height map requires an overhead (straight-down) camera")
    pts, _ = backproject_image(view.depth, view.camera)
    values = np.zeros((grid.rows, grid.cols))
    if len(pts):
        cells, inside = grid.cells_of(pts)
        z = np.maximum(pts[inside, 2], 0.0)
        np.maximum.at(values, (cells[inside, 0], cells[inside, 1]), z)
    return TopDownGrid(grid, values)


# ---------------------------------------------------------------------------
# plain-text serialization
# ---------------------------------------------------------------------------


def scene_to_text(scene: SceneState) -> str:
    """Serialise a scene losslessly (floats via repr round-trip)."""
    out = io.StringIO()
    x0, x1, y0, y1 = (float(v) for v in scene.bounds)
    out.write(f"bounds {x0!r} {x1!r} {y0!r} {y1!r}\n")
    out.write(f"objects {len(scene.objects)}\n")
    for obj in scene.objects:
        d = obj.spec.dims
        out.write(
            f"object {obj.spec.class_id} {obj.spec.shape} "
            f"{float(d[0])!r} {float(d[1])!r} {float(d[2])!r} "
            f"{obj.spec.color} {float(obj.x)!r} {float(obj.y)!r} "
            f"{float(obj.yaw)!r} {float(obj.z_base)!r}\n")
    return out.getvalue()


def scene_from_text(text: str) -> SceneState:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("bounds "):
        raise SceneError("scene text must start with a bounds line")
    bounds = tuple(float(tok) for tok in lines[0].split()[1:5])
    if not lines[1].startswith("objects "):
        raise SceneError("missing object count line")
    count = int(lines[1].split()[1])
    objects = []
    for ln in lines[2:2 + count]:
        toks = ln.split()
        if toks[0] != "object" or len(toks) != 11:
            raise SceneError(f"malformed object line: {ln!r}")
        spec = ObjectSpec(int(toks[1]), toks[2],
                          (float(toks[3]), float(toks[4]), float(toks[5])),
                          toks[6])
        objects.append(PlacedObject(spec, float(toks[7]), float(toks[8]),
                                    float(toks[9]), float(toks[10])))
    if len(objects) != count:
        raise SceneError("object count does not match object lines")
    return SceneState(tuple(objects), bounds)  # type: ignore[arg-type]
