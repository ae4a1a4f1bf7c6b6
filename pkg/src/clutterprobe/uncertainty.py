"""Top-down recognition-uncertainty maps.

Two complementary signals are projected from image space onto the workspace
grid:

* segmentation uncertainty — for every pixel, each detection covering it
  contributes its class-score entropy plus the binary entropy of the pixel's
  foreground probability; the pixel total is deposited into the cell under
  the pixel's backprojected point (natural log, 0*ln 0 = 0);
* cross-view disagreement — the number of distinct classes that any view's
  hard masks project into a cell; background never contributes.

The combined field is the segmentation term plus a small multiple of the
disagreement count.  High cells mark spots where another push is likely to
pay off.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import TopDownGrid, WorkspaceGrid, backproject_image
from .perception import PixelLabelMap, SegmentationResult, pixel_label_map
from .scene import DepthImage

#: weight of the disagreement count in the combined map
DISAGREEMENT_WEIGHT = 0.1


class UncertaintyError(ValueError):
    """Raised for mismatched views or grids."""


@dataclass(frozen=True)
class UncertaintyConfig:
    """Weights for combining the two uncertainty signals."""

    disagreement_weight: float = DISAGREEMENT_WEIGHT

    def __post_init__(self) -> None:
        if self.disagreement_weight < 0:
            raise UncertaintyError("disagreement weight must be non-negative")


def _xlogx(p: np.ndarray) -> np.ndarray:
    """p * ln p with the 0 * ln 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def class_entropy(probs: np.ndarray) -> float:
    """Entropy of a class-score vector, nats."""
    return float(-_xlogx(probs).sum())


def binary_entropy(p) -> np.ndarray:
    """Elementwise entropy of foreground probabilities, nats."""
    p = np.asarray(p, dtype=float)
    return -(_xlogx(p) + _xlogx(1.0 - p))


def pixel_entropy(seg: SegmentationResult, pixel: tuple[int, int]) -> float:
    """Total uncertainty of one pixel: sum over detections covering it."""
    r, c = pixel
    total = 0.0
    for det in seg.detections:
        r0, c0, r1, c1 = det.box
        if r0 <= r < r1 and c0 <= c < c1:
            total += class_entropy(det.class_probs)
            total += float(binary_entropy(det.fg_probs[r - r0, c - c0]))
    return total


def entropy_image(seg: SegmentationResult) -> np.ndarray:
    """(H, W) image of per-pixel uncertainty for one view."""
    out = np.zeros((seg.height, seg.width))
    for det in seg.detections:
        r0, c0, r1, c1 = det.box
        out[r0:r1, c0:c1] += class_entropy(det.class_probs)
        out[r0:r1, c0:c1] += binary_entropy(det.fg_probs)
    return out


def entropy_map(
    segs,
    depths,
    grid: WorkspaceGrid,
) -> TopDownGrid:
    """Project per-pixel uncertainty of all views onto the workspace grid.

    Each valid-depth pixel deposits its entropy into the cell under its
    backprojected point; points outside the grid are dropped.
    """
    if len(segs) != len(depths):
        raise UncertaintyError("need one segmentation per depth view")
    values = np.zeros((grid.rows, grid.cols))
    for seg, depth in zip(segs, depths):
        ent = entropy_image(seg)
        pts, pix = backproject_image(depth.depth, depth.camera)
        if len(pts) == 0:
            continue
        cells, inside = grid.cells_of(pts)
        w = ent[pix[inside, 0], pix[inside, 1]]
        np.add.at(values, (cells[inside, 0], cells[inside, 1]), w)
    return TopDownGrid(grid, values)


def disagreement_map(
    label_maps,
    depths,
    grid: WorkspaceGrid,
) -> TopDownGrid:
    """Count the distinct predicted classes deposited into each cell.

    ``label_maps`` may be PixelLabelMap objects or SegmentationResults (which
    are converted).  A cell all views agree on scores 1; conflicting views
    push it higher; cells no foreground pixel reaches stay 0.
    """
    if len(label_maps) != len(depths):
        raise UncertaintyError("need one label map per depth view")
    keys = []
    n_cells = grid.rows * grid.cols
    max_class = 0
    per_view = []
    for lm, depth in zip(label_maps, depths):
        if isinstance(lm, SegmentationResult):
            lm = pixel_label_map(lm)
        if lm.classes.shape != (depth.camera.height, depth.camera.width):
            raise UncertaintyError("label map does not match depth resolution")
        pts, pix = backproject_image(depth.depth, depth.camera)
        if len(pts) == 0:
            continue
        cls = lm.classes[pix[:, 0], pix[:, 1]]
        cells, inside = grid.cells_of(pts)
        keep = inside & (cls >= 0)
        if not np.any(keep):
            continue
        max_class = max(max_class, int(cls[keep].max()))
        per_view.append((cells[keep], cls[keep]))
    values = np.zeros((grid.rows, grid.cols))
    if per_view:
        stride = max_class + 1
        for cells, cls in per_view:
            keys.append((cells[:, 0] * grid.cols + cells[:, 1]) * stride
                        + cls.astype(np.int64))
        uniq = np.unique(np.concatenate(keys))
        flat_cells = uniq // stride
        counts = np.bincount(flat_cells, minlength=n_cells)
        values = counts.reshape(grid.rows, grid.cols).astype(float)
    return TopDownGrid(grid, values)


def combined_map(
    seg_map: TopDownGrid,
    dis_map: TopDownGrid,
    config: UncertaintyConfig = UncertaintyConfig(),
) -> TopDownGrid:
    """Total uncertainty: segmentation term plus weighted disagreement count."""
    if seg_map.grid != dis_map.grid:
        raise UncertaintyError("maps live on different grids")
    return TopDownGrid(seg_map.grid,
                       seg_map.values
                       + config.disagreement_weight * dis_map.values)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def grid_to_png(field: TopDownGrid, path) -> None:
    """8-bit grayscale heatmap, linearly scaled to the field maximum.

    Row 0 (minimum world x) is the top image row; columns follow world y.
    """
    v = field.values
    top = v.max()
    scaled = np.zeros_like(v) if top <= 0 else v / top
    img = np.round(scaled * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(Path(path), format="PNG")


def grid_to_csv(field: TopDownGrid, path) -> None:
    """Comma-separated field values, `%.6f`, one line per grid row."""
    with open(Path(path), "w") as fh:
        for row in field.values:
            fh.write(",".join("%.6f" % x for x in row))
            fh.write("\n")
