"""Cameras, workspace grids and point-cloud primitives.

Conventions used throughout the package:

* World frame: right-handed, z up, origin at the centre of the tabletop.
  The table surface is the plane z = 0.
* Camera frame: x right, y down, z along the viewing direction.  A camera
  pose is the 4x4 rigid transform mapping camera coordinates to world
  coordinates.
* Pixels are addressed as (row, col).  The centre of pixel (r, c) sits at
  continuous image coordinates u = c, v = r, i.e. integer pixel centres.
* Depth images store z-depth (distance along the camera z axis), not ray
  length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Raised for invalid camera, grid or point-cloud arguments."""


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera with a rigid camera-to-world pose.

    Attributes:
        fx, fy: focal lengths in pixels.
        cx, cy: principal point in pixel coordinates (u, v).
        width, height: image size in pixels.
        pose: 4x4 camera-to-world transform.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")
        pose = np.asarray(self.pose, dtype=float)
        if pose.shape != (4, 4):
            raise GeometryError("pose must be a 4x4 matrix")
        rot = pose[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-8):
            raise GeometryError("pose rotation block is not orthonormal")
        if not np.allclose(pose[3], (0.0, 0.0, 0.0, 1.0), atol=1e-12):
            raise GeometryError("pose bottom row must be (0, 0, 0, 1)")
        object.__setattr__(self, "pose", pose)

    @property
    def rotation(self) -> np.ndarray:
        """3x3 camera-to-world rotation."""
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return self.pose[:3, 3]

    def is_overhead(self, tol: float = 1e-6) -> bool:
        """True when the optical axis points straight down."""
        return bool(np.allclose(self.rotation[:, 2], (0.0, 0.0, -1.0), atol=tol))


@dataclass(frozen=True)
class ViewSet:
    """An ordered collection of cameras observing the same workspace."""

    cameras: tuple[CameraModel, ...]

    def __post_init__(self) -> None:
        if len(self.cameras) == 0:
            raise GeometryError("a view set needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i: int) -> CameraModel:
        return self.cameras[i]


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose for a camera at ``position`` looking at ``target``.

    The camera z axis points from ``position`` towards ``target``; the x axis
    is chosen perpendicular to ``up`` so the image is level.  For a camera
    looking straight down the x axis falls back to world +x.
    """
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise GeometryError("camera position and target coincide")
    z = fwd / norm
    x = np.cross(z, np.asarray(up, dtype=float))
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        # straight up/down: pick a fixed level direction
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / xn
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0] = x
    pose[:3, 1] = y
    pose[:3, 2] = z
    pose[:3, 3] = position
    return pose


def make_view_set(
    n_views: int = 5,
    width: int = 360,
    height: int = 256,
    fov_deg: float = 75.0,
    overhead_height: float = 1.5,
    side_radius: float = 1.5,
    side_tilt_deg: float = 42.0,
) -> ViewSet:
    """Build the standard rig: one overhead camera plus evenly spaced side views.

    View 0 looks straight down from ``overhead_height``.  The remaining
    ``n_views - 1`` cameras sit on a circle of radius ``side_radius`` (measured
    from the workspace centre to the camera), tilted ``side_tilt_deg`` away
    from the vertical, azimuths evenly spaced starting at +x.  All cameras
    share the same intrinsics; the principal point is the image centre under
    the integer-pixel-centre convention.
    """
    if n_views < 1:
        raise GeometryError("need at least one view")
    f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    cams = [
        CameraModel(f, f, cx, cy, width, height,
                    look_at_pose((0.0, 0.0, overhead_height), (0.0, 0.0, 0.0)))
    ]
    n_side = n_views - 1
    tilt = np.radians(side_tilt_deg)
    for k in range(n_side):
        az = 2.0 * np.pi * k / n_side
        pos = (
            side_radius * np.sin(tilt) * np.cos(az),
            side_radius * np.sin(tilt) * np.sin(az),
            side_radius * np.cos(tilt),
        )
        cams.append(
            CameraModel(f, f, cx, cy, width, height,
                        look_at_pose(pos, (0.0, 0.0, 0.0)))
        )
    return ViewSet(tuple(cams))


def backproject_pixel(pixel, depth: float, camera: CameraModel) -> np.ndarray:
    """World-frame point for one pixel centre at the given z-depth.

    Args:
        pixel: (row, col) pixel index.
        depth: z-depth in metres; must be finite and > 0.
        camera: the observing camera.

    Returns:
        (3,) world point.
    """
    if not np.isfinite(depth) or depth <= 0:
        raise GeometryError(f"depth must be finite and positive, got {depth!r}")
    r, c = pixel
    x = (c - camera.cx) / camera.fx * depth
    y = (r - camera.cy) / camera.fy * depth
    p_cam = np.array([x, y, depth])
    return camera.rotation @ p_cam + camera.position


def project_point(point, camera: CameraModel) -> tuple[float, float, float]:
    """Project a world point; returns continuous (row, col, depth).

    Raises GeometryError if the point lies at or behind the camera plane.
    """
    p = np.asarray(point, dtype=float)
    p_cam = camera.rotation.T @ (p - camera.position)
    z = p_cam[2]
    if z <= 1e-12:
        raise GeometryError("point is behind the camera")
    u = camera.fx * p_cam[0] / z + camera.cx
    v = camera.fy * p_cam[1] / z + camera.cy
    return (v, u, z)


def backproject_image(depth: np.ndarray, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Backproject every valid pixel of a depth image.

    Invalid pixels (non-finite or <= 0 depth) are excluded.

    Returns:
        points: (N, 3) world points for every valid pixel, row-major order.
        pixels: (N, 2) int array of (row, col) indices matching ``points``.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (camera.height, camera.width):
        raise GeometryError(
            f"depth image shape {depth.shape} does not match camera "
            f"({camera.height}, {camera.width})")
    valid = np.isfinite(depth) & (depth > 0)
    rows, cols = np.nonzero(valid)
    d = depth[rows, cols]
    x = (cols - camera.cx) / camera.fx * d
    y = (rows - camera.cy) / camera.fy * d
    pts_cam = np.stack([x, y, d], axis=1)
    pts = pts_cam @ camera.rotation.T + camera.position
    return pts, np.stack([rows, cols], axis=1)


# ---------------------------------------------------------------------------
# top-down workspace grid
# ---------------------------------------------------------------------------

OUTSIDE = -1


@dataclass(frozen=True)
class WorkspaceGrid:
    """Regular top-down grid over the rectangular workspace.

    Row index i runs along world x, column index j along world y.  Cell (i, j)
    covers [origin_x + i*cell, origin_x + (i+1)*cell) x [origin_y + j*cell,
    origin_y + (j+1)*cell).
    """

    origin_x: float
    origin_y: float
    cell_size: float
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.cell_size <= 0:
            raise GeometryError("cell size must be positive")
        if self.rows <= 0 or self.cols <= 0:
            raise GeometryError("grid must have positive extent")

    @property
    def extent_x(self) -> float:
        return self.rows * self.cell_size

    @property
    def extent_y(self) -> float:
        return self.cols * self.cell_size

    def cell_of(self, point) -> tuple[int, int] | None:
        """Cell containing a world point (x, y), or None when outside."""
        p = np.asarray(point, dtype=float)
        i = int(np.floor((p[0] - self.origin_x) / self.cell_size))
        j = int(np.floor((p[1] - self.origin_y) / self.cell_size))
        if 0 <= i < self.rows and 0 <= j < self.cols:
            return (i, j)
        return None

    def cells_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised cell lookup.

        Returns (cells, inside): cells is (N, 2) int with OUTSIDE marking
        out-of-workspace points, inside is the boolean mask of valid rows.
        """
        pts = np.asarray(points, dtype=float)
        i = np.floor((pts[:, 0] - self.origin_x) / self.cell_size).astype(np.int64)
        j = np.floor((pts[:, 1] - self.origin_y) / self.cell_size).astype(np.int64)
        inside = (i >= 0) & (i < self.rows) & (j >= 0) & (j < self.cols)
        cells = np.stack([i, j], axis=1)
        cells[~inside] = OUTSIDE
        return cells, inside

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin_x + (i + 0.5) * self.cell_size,
            self.origin_y + (j + 0.5) * self.cell_size,
        )


def default_workspace_grid(
    extent_x: float = 1.5,
    extent_y: float = 1.0,
    cell_size: float = 0.002,
) -> WorkspaceGrid:
    """Grid centred on the origin covering the tabletop at 2 mm resolution."""
    rows = int(round(extent_x / cell_size))
    cols = int(round(extent_y / cell_size))
    return WorkspaceGrid(-extent_x / 2.0, -extent_y / 2.0, cell_size, rows, cols)


@dataclass(frozen=True)
class TopDownGrid:
    """A scalar field sampled on a WorkspaceGrid."""

    grid: WorkspaceGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.rows, self.grid.cols):
            raise GeometryError(
                f"field shape {values.shape} does not match grid "
                f"({self.grid.rows}, {self.grid.cols})")
        object.__setattr__(self, "values", values)

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def max(self) -> float:
        return float(self.values.max())


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered world-frame points, optionally tagged with their source view."""

    points: np.ndarray
    source_view: int | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError("points must be an (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("points must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Average points within each cubic voxel of edge length ``voxel``.

    Output rows are ordered by voxel index (x, then y, then z), which makes
    the reduction deterministic and independent of input ordering.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if voxel <= 0:
        raise GeometryError("voxel edge must be positive")
    keys = np.floor(pts / voxel).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys = keys[order]
    pts = pts[order]
    boundary = np.any(np.diff(keys, axis=0) != 0, axis=1)
    starts = np.concatenate(([0], np.nonzero(boundary)[0] + 1))
    sums = np.add.reduceat(pts, starts, axis=0)
    counts = np.diff(np.concatenate((starts, [len(pts)])))
    return sums / counts[:, None]


def chamfer_distance(
    a: np.ndarray,
    b: np.ndarray,
    tree_a: cKDTree | None = None,
    tree_b: cKDTree | None = None,
) -> float:
    """Symmetric mean squared nearest-neighbour distance between two clouds.

    d(A, B) = 0.5 * (mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2).
    Units are squared metres.  Pre-built KD-trees may be supplied to avoid
    rebuilding them in repeated comparisons against the same cloud.
    """
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=float)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=float)
    if pa.ndim != 2 or pa.shape[1] != 3 or pb.ndim != 2 or pb.shape[1] != 3:
        raise GeometryError("chamfer distance needs (N, 3) point arrays")
    if len(pa) == 0 or len(pb) == 0:
        raise GeometryError("chamfer distance of an empty cloud is undefined")
    if tree_b is None:
        tree_b = cKDTree(pb)
    if tree_a is None:
        tree_a = cKDTree(pa)
    d_ab, _ = tree_b.query(pa)
    d_ba, _ = tree_a.query(pb)
    return 0.5 * (float(np.mean(d_ab**2)) + float(np.mean(d_ba**2)))
