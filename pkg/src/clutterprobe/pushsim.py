"""Quasi-static push simulation.

A push is a straight gripper sweep close to the table.  Objects whose
footprint crosses the sweep rectangle are translated along the push direction
far enough to clear the gripper's final position (with a small seeded heading
jitter standing in for contact dynamics).  A relaxation pass then resolves the
resulting chain of contacts: interpenetrating objects are separated along the
push direction, objects that lose their support fall, and stacks topple.  The
model is deliberately quasi-static and deterministic per seed; it captures the
rearrangement statistics that matter for recognition without a dynamics
engine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from shapely import affinity
from shapely.geometry import Polygon

from .scene import STACK_OVERLAP, PlacedObject, SceneState

#: gripper finger width used for the sweep rectangle, metres
SWEEP_WIDTH = 0.024
#: objects whose base is at or above this height are out of the gripper's reach
SWEEP_HEIGHT = 0.05

_AREA_TOL = 1e-10
_SEP_MARGIN = 1e-4
_PUSH_MARGIN = 1e-3


class PushError(ValueError):
    """Raised for malformed push actions."""


class DegeneratePushWarning(RuntimeWarning):
    """Emitted when contact relaxation fails to converge; the last state is kept."""


@dataclass(frozen=True)
class PushAction:
    """A straight planar push.

    Attributes:
        start: (x, y) of the gripper's initial position.
        direction: unit 2-vector of travel.
        distance: travel length in metres, > 0.
        sweep_width: width of the swept rectangle.
        sweep_height: bases at or above this height are not contacted.
    """

    start: tuple[float, float]
    direction: tuple[float, float]
    distance: float
    sweep_width: float = SWEEP_WIDTH
    sweep_height: float = SWEEP_HEIGHT

    def __post_init__(self) -> None:
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise PushError("push direction must be a unit vector")
        if not np.isfinite(self.distance) or self.distance <= 0:
            raise PushError("push distance must be positive")
        if self.sweep_width <= 0:
            raise PushError("sweep width must be positive")

    @property
    def end(self) -> tuple[float, float]:
        return (self.start[0] + self.direction[0] * self.distance,
                self.start[1] + self.direction[1] * self.distance)

    def sweep_polygon(self) -> Polygon:
        """Rectangle swept by the gripper from start to end."""
        d = np.asarray(self.direction, dtype=float)
        n = np.array([-d[1], d[0]]) * (self.sweep_width / 2.0)
        s = np.asarray(self.start, dtype=float)
        e = np.asarray(self.end, dtype=float)
        return Polygon([tuple(s - n), tuple(s + n), tuple(e + n), tuple(e - n)])


def _clamp_xy(x: float, y: float, bounds) -> tuple[float, float]:
    x0, x1, y0, y1 = bounds
    return (float(min(max(x, x0), x1)), float(min(max(y, y0), y1)))


def _vertical_overlap(a: PlacedObject, b: PlacedObject) -> float:
    return min(a.top, b.top) - max(a.z_base, b.z_base)


def _separation_distance(mover: Polygon, other: Polygon, direction) -> float | None:
    """Smallest translation of ``mover`` along ``direction`` that clears ``other``.

    Returns None when no translation up to the combined diameters separates
    the shapes (cannot happen for convex footprints, kept as a guard).
    """
    dx, dy = direction
    cap = 2.0 * (_diameter(mover) + _diameter(other)) + 0.01
    hi = 0.01
    while mover_overlap(mover, other, dx * hi, dy * hi) > _AREA_TOL:
        hi *= 2.0
        if hi > cap:
            return None
    lo = 0.0
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        if mover_overlap(mover, other, dx * mid, dy * mid) > _AREA_TOL:
            lo = mid
        else:
            hi = mid
    return hi


def mover_overlap(mover: Polygon, other: Polygon, tx: float, ty: float) -> float:
    return affinity.translate(mover, tx, ty).intersection(other).area


def _diameter(poly: Polygon) -> float:
    x0, y0, x1, y1 = poly.bounds
    return float(np.hypot(x1 - x0, y1 - y0))


def _resolve_supports(objs: list[PlacedObject],
                      support_threshold: float) -> list[PlacedObject]:
    """Drop objects that lost their support; cascades until stable.

    An off-table object is supported when objects whose tops coincide with its
    base cover at least ``support_threshold`` of its footprint.  A falling
    object lands on the highest lower object that covers enough of its
    footprint, else on the table.
    """
    objs = list(objs)
    for _ in range(10 * len(objs) + 10):
        changed = False
        for i, obj in enumerate(objs):
            if obj.z_base <= 1e-9:
                continue
            fp = obj.footprint()
            area = fp.area
            held = 0.0
            for j, other in enumerate(objs):
                if j != i and abs(other.top - obj.z_base) <= 1e-6:
                    held += fp.intersection(other.footprint()).area
            if held >= support_threshold * area:
                continue
            land = 0.0
            for j, other in enumerate(objs):
                if j == i or other.top > obj.z_base - 1e-9:
                    continue
                if fp.intersection(other.footprint()).area >= support_threshold * area:
                    land = max(land, other.top)
            objs[i] = replace(obj, z_base=land)
            changed = True
        if not changed:
            return objs
    return objs


def apply_push(
    scene: SceneState,
    action: PushAction,
    seed=0,
    support_threshold: float = STACK_OVERLAP,
    jitter_deg: float = 5.0,
    max_relax_iters: int = 50,
) -> SceneState:
    """Apply one push and return the settled scene.

    Object identity, order, class and dimensions are preserved; only poses
    change.  All randomness (the per-contact heading jitter) comes from
    ``seed``, so equal inputs give bit-equal outputs.
    """
    x0, x1, y0, y1 = scene.bounds
    sx, sy = action.start
    if not (x0 <= sx <= x1 and y0 <= sy <= y1):
        raise PushError("push start lies outside the workspace")
    rng = np.random.default_rng(seed)
    d = np.asarray(action.direction, dtype=float)
    sweep = action.sweep_polygon()
    start = np.asarray(action.start, dtype=float)

    objs = list(scene.objects)
    disturbed: set[int] = set()

    # primary contacts: everything the gripper sweeps through
    for i, obj in enumerate(objs):
        if obj.z_base >= action.sweep_height:
            continue
        fp = obj.footprint()
        inter = fp.intersection(sweep)
        if inter.area <= _AREA_TOL:
            continue
        coords = np.asarray(inter.exterior.coords)
        s_min = float(np.min((coords - start) @ d))
        delta = action.distance - s_min + _PUSH_MARGIN
        if delta <= 0:
            continue
        ang = np.radians(rng.uniform(-jitter_deg, jitter_deg))
        ca, sa = np.cos(ang), np.sin(ang)
        jd = np.array([ca * d[0] - sa * d[1], sa * d[0] + ca * d[1]])
        nx, ny = _clamp_xy(obj.x + delta * jd[0], obj.y + delta * jd[1],
                           scene.bounds)
        objs[i] = replace(obj, x=nx, y=ny)
        disturbed.add(i)

    # chain relaxation: falls, then pairwise separation, until stable.
    # Only objects reachable from the sweep take part; overlaps that already
    # existed elsewhere in the scene are legitimate clutter and stay put.
    converged = False
    for _ in range(max_relax_iters):
        bases = [o.z_base for o in objs]
        objs = _resolve_supports(objs, support_threshold)
        disturbed.update(i for i, o in enumerate(objs)
                         if o.z_base != bases[i])
        footprints = [o.footprint() for o in objs]
        collisions = []
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                if i not in disturbed and j not in disturbed:
                    continue
                if _vertical_overlap(objs[i], objs[j]) <= 1e-9:
                    continue
                if footprints[i].intersection(footprints[j]).area > _AREA_TOL:
                    collisions.append((i, j))
        if not collisions:
            converged = True
            break
        for i, j in collisions:
            fi, fj = objs[i].footprint(), objs[j].footprint()
            if fi.intersection(fj).area <= _AREA_TOL:
                continue  # an earlier separation already cleared this pair
            if i in disturbed and j not in disturbed:
                m, o, fm, fo = j, i, fj, fi
            elif j in disturbed and i not in disturbed:
                m, o, fm, fo = i, j, fi, fj
            else:
                proj_i = objs[i].x * d[0] + objs[i].y * d[1]
                proj_j = objs[j].x * d[0] + objs[j].y * d[1]
                if proj_i > proj_j or (proj_i == proj_j and i > j):
                    m, o, fm, fo = i, j, fi, fj
                else:
                    m, o, fm, fo = j, i, fj, fi
            sep = _separation_distance(fm, fo, d)
            if sep is None:
                cx = objs[m].x - objs[o].x
                cy = objs[m].y - objs[o].y
                norm = np.hypot(cx, cy)
                alt = (cx / norm, cy / norm) if norm > 1e-12 else (1.0, 0.0)
                sep = _separation_distance(fm, fo, alt)
                move_dir = alt
            else:
                move_dir = (float(d[0]), float(d[1]))
            if sep is None:
                continue
            step = sep + _SEP_MARGIN
            nx, ny = _clamp_xy(objs[m].x + step * move_dir[0],
                               objs[m].y + step * move_dir[1], scene.bounds)
            if (nx, ny) == (objs[m].x, objs[m].y):
                # pinned against the boundary: shove the other one instead
                back = (-move_dir[0], -move_dir[1])
                sep2 = _separation_distance(fo, fm, back)
                if sep2 is not None:
                    ox, oy = _clamp_xy(objs[o].x + (sep2 + _SEP_MARGIN) * back[0],
                                       objs[o].y + (sep2 + _SEP_MARGIN) * back[1],
                                       scene.bounds)
                    objs[o] = replace(objs[o], x=ox, y=oy)
                    disturbed.add(o)
            else:
                objs[m] = replace(objs[m], x=nx, y=ny)
                disturbed.add(m)
    if not converged:
        warnings.warn("push relaxation did not converge; keeping last state",
                      DegeneratePushWarning)
    objs = _resolve_supports(objs, support_threshold)
    return SceneState(tuple(objs), scene.bounds)
