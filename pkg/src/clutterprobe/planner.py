"""Uncertainty-driven push selection on the top-down grid.

The planner scores every gripper-footprint placement by two maps:

* informativeness — mean uncertainty under the footprint (worth visiting);
* validity — negative of the tallest surface under the footprint (safe to
  drop the closed gripper there; lower stacks score higher).

The start cell maximises informativeness + validity_weight * validity,
restricted to a fixed-size window centred on the most uncertain part of the
workspace so the gripper starts near the action.  The push aims at the footprint position with
the highest mean uncertainty overall; pushes repeat with doubled length when
the planner keeps choosing the same spot, and the direction falls back to a
seeded random heading when start and target coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from .geometry import TopDownGrid
from .pushsim import PushAction, SWEEP_HEIGHT, SWEEP_WIDTH


class PlannerError(ValueError):
    """Raised for inconsistent planner inputs."""


@dataclass(frozen=True)
class PlannerConfig:
    """All push-selection knobs.

    Attributes:
        footprint: gripper footprint edge length, metres (square).
        window: side of the search window centred on peak uncertainty, metres.
        validity_weight: weight of validity against informativeness.
        push_distance: default push length, metres.
        min_push_distance: never push shorter than this.
        repeat_radius: two consecutive starts closer than this double the
            push length; start/target closer than this randomises direction.
        termination_threshold: exploration stops once the peak cell
            uncertainty drops below this.
        max_steps: hard cap on pushes per episode.
        sweep_width / sweep_height: geometry handed to the push simulator.
    """

    footprint: float = SWEEP_WIDTH
    window: float = 0.4
    validity_weight: float = 0.5
    push_distance: float = 0.1
    min_push_distance: float = 0.02
    repeat_radius: float = 0.05
    termination_threshold: float = 2.2
    max_steps: int = 20
    sweep_width: float = SWEEP_WIDTH
    sweep_height: float = SWEEP_HEIGHT

    def __post_init__(self) -> None:
        if self.footprint <= 0 or self.window <= 0:
            raise PlannerError("footprint and window must be positive")
        if self.push_distance <= 0 or self.min_push_distance <= 0:
            raise PlannerError("push distances must be positive")
        if self.max_steps < 0:
            raise PlannerError("max_steps must be non-negative")

    def footprint_cells(self, grid) -> tuple[int, int]:
        n = max(1, int(round(self.footprint / grid.cell_size)))
        return (min(n, grid.rows), min(n, grid.cols))

    def window_cells(self, grid) -> tuple[int, int]:
        fh, fw = self.footprint_cells(grid)
        n = int(round(self.window / grid.cell_size))
        return (max(fh, min(n, grid.rows)), max(fw, min(n, grid.cols)))


@dataclass(frozen=True)
class PlannerRegion:
    """A candidate placement: top-left cell, extent in cells, and its score."""

    i: int
    j: int
    rows: int
    cols: int
    score: float

    def center(self, grid) -> tuple[float, float]:
        """World (x, y) of the placement centre."""
        return (grid.origin_x + (self.i + self.rows / 2.0) * grid.cell_size,
                grid.origin_y + (self.j + self.cols / 2.0) * grid.cell_size)


@dataclass(frozen=True)
class PushPlan:
    """A planned push plus the evidence that produced it."""

    action: PushAction
    start_region: PlannerRegion
    target_region: PlannerRegion
    random_direction: bool
    doubled: bool


def window_mean(values: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Mean over every rows x cols window (summed-area table).

    Output[i, j] covers values[i:i+rows, j:j+cols]; shape is
    (R - rows + 1, C - cols + 1).
    """
    if rows > values.shape[0] or cols > values.shape[1]:
        raise PlannerError("window exceeds the grid")
    sat = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    sat[1:, 1:] = np.cumsum(np.cumsum(values, axis=0), axis=1)
    tot = (sat[rows:, cols:] - sat[:-rows, cols:]
           - sat[rows:, :-cols] + sat[:-rows, :-cols])
    return tot / float(rows * cols)


def window_max(values: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Max over every rows x cols window; aligned like :func:`window_mean`."""
    if rows > values.shape[0] or cols > values.shape[1]:
        raise PlannerError("window exceeds the grid")
    m = maximum_filter1d(values, size=rows, axis=0, mode="nearest")
    m = maximum_filter1d(m, size=cols, axis=1, mode="nearest")
    # maximum_filter1d centres the window; re-align so out[i] = max(v[i:i+n])
    return m[rows // 2:rows // 2 + values.shape[0] - rows + 1,
             cols // 2:cols // 2 + values.shape[1] - cols + 1]


def _argmax_2d(values: np.ndarray) -> tuple[int, int]:
    """Row-major argmax: ties resolve to the lowest (i, j)."""
    flat = int(np.argmax(values))
    return (flat // values.shape[1], flat % values.shape[1])


def informativeness_map(u: TopDownGrid, config: PlannerConfig) -> np.ndarray:
    """Mean uncertainty under each footprint placement (top-left indexed)."""
    fh, fw = config.footprint_cells(u.grid)
    return window_mean(u.values, fh, fw)


def validity_map(heights: TopDownGrid, config: PlannerConfig) -> np.ndarray:
    """Negated peak surface height under each footprint placement."""
    fh, fw = config.footprint_cells(heights.grid)
    return -window_max(heights.values, fh, fw)


def focus_window(u: TopDownGrid, config: PlannerConfig) -> PlannerRegion:
    """The window-sized region with the highest mean uncertainty."""
    wh, ww = config.window_cells(u.grid)
    avg = window_mean(u.values, wh, ww)
    i, j = _argmax_2d(avg)
    return PlannerRegion(i, j, wh, ww, float(avg[i, j]))


def select_start(
    u: TopDownGrid,
    heights: TopDownGrid,
    config: PlannerConfig,
) -> PlannerRegion:
    """Best footprint placement inside the focus window.

    Maximises informativeness + validity_weight * validity; ties go to the
    lowest (row, col) placement.
    """
    if u.grid != heights.grid:
        raise PlannerError("uncertainty and height maps live on different grids")
    fh, fw = config.footprint_cells(u.grid)
    score = (informativeness_map(u, config)
             + config.validity_weight * validity_map(heights, config))
    win = focus_window(u, config)
    i0, j0 = win.i, win.j
    i1 = i0 + win.rows - fh + 1
    j1 = j0 + win.cols - fw + 1
    sub = score[i0:i1, j0:j1]
    di, dj = _argmax_2d(sub)
    return PlannerRegion(i0 + di, j0 + dj, fh, fw, float(sub[di, dj]))


def select_target(u: TopDownGrid, config: PlannerConfig) -> PlannerRegion:
    """Footprint placement with the highest mean uncertainty on the whole grid."""
    fh, fw = config.footprint_cells(u.grid)
    avg = window_mean(u.values, fh, fw)
    i, j = _argmax_2d(avg)
    return PlannerRegion(i, j, fh, fw, float(avg[i, j]))


def ray_exit_distance(start, direction, bounds) -> float:
    """Distance from ``start`` along ``direction`` to the workspace boundary."""
    x0, x1, y0, y1 = bounds
    sx, sy = start
    dx, dy = direction
    t = np.inf
    if dx > 1e-12:
        t = min(t, (x1 - sx) / dx)
    elif dx < -1e-12:
        t = min(t, (x0 - sx) / dx)
    if dy > 1e-12:
        t = min(t, (y1 - sy) / dy)
    elif dy < -1e-12:
        t = min(t, (y0 - sy) / dy)
    return float(max(t, 0.0))


def make_push_action(
    start: tuple[float, float],
    direction: tuple[float, float],
    config: PlannerConfig,
    bounds: tuple[float, float, float, float],
    distance: float | None = None,
) -> PushAction:
    """Build a push whose endpoint stays inside the workspace.

    The travel is clipped at the boundary; when the boundary is closer than
    the minimum push length the heading flips back into the workspace.  The
    length never drops below ``min_push_distance``.
    """
    if distance is None:
        distance = config.push_distance
    exit_d = ray_exit_distance(start, direction, bounds)
    if exit_d < config.min_push_distance:
        direction = (-direction[0], -direction[1])
        exit_d = ray_exit_distance(start, direction, bounds)
    distance = max(min(distance, exit_d), config.min_push_distance)
    return PushAction(start, direction, distance,
                      sweep_width=config.sweep_width,
                      sweep_height=config.sweep_height)


def plan_push(
    u: TopDownGrid,
    heights: TopDownGrid,
    config: PlannerConfig,
    rng: np.random.Generator,
    bounds: tuple[float, float, float, float],
    previous_start: tuple[float, float] | None = None,
) -> PushPlan:
    """Select the next push from the current uncertainty and height fields.

    The push runs from the chosen start towards the most uncertain footprint;
    when the two (nearly) coincide the heading is drawn uniformly from
    ``rng``.  A start within ``repeat_radius`` of the previous one doubles the
    push length.  The endpoint is clipped to the workspace, flipping the
    heading when the boundary is closer than the minimum push length.
    """
    start_region = select_start(u, heights, config)
    target_region = select_target(u, config)
    start = start_region.center(u.grid)
    target = target_region.center(u.grid)
    dx = target[0] - start[0]
    dy = target[1] - start[1]
    gap = float(np.hypot(dx, dy))
    random_direction = gap < config.repeat_radius
    if random_direction:
        ang = rng.uniform(0.0, 2.0 * np.pi)
        direction = (float(np.cos(ang)), float(np.sin(ang)))
    else:
        direction = (dx / gap, dy / gap)
    distance = config.push_distance
    doubled = (previous_start is not None
               and np.hypot(start[0] - previous_start[0],
                            start[1] - previous_start[1])
               < config.repeat_radius)
    if doubled:
        distance *= 2.0
    action = make_push_action(start, direction, config, bounds, distance)
    return PushPlan(action, start_region, target_region, random_direction,
                    doubled)


def should_terminate(u: TopDownGrid, steps_done: int,
                     config: PlannerConfig) -> bool:
    """True once peak uncertainty is low enough or the step budget is spent."""
    if steps_done >= config.max_steps:
        return True
    return u.max < config.termination_threshold
