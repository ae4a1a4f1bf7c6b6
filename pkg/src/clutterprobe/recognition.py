"""Cross-view instance recognition from segmented depth views.

Each detection in each view yields a point-cloud partition (backprojected,
voxel-thinned).  Every partition starts as its own instance hypothesis;
hypotheses of the same class whose clouds lie within a chamfer-distance
threshold are merged, the surviving hypothesis immediately adopting the union
of points, and the sweep repeats until no merge fires.  Because merged clouds
grow, chains of partitions can coalesce even when their endpoints are farther
apart than the threshold — the fixed sweep order (ascending view, then
detection index) keeps the outcome deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import backproject_image, chamfer_distance, voxel_downsample
from .perception import SegmentationResult, pixel_detection_map
from .scene import DepthImage

#: chamfer-distance merge threshold, squared metres
MERGE_THRESHOLD = 0.001
#: voxel edge for point-cloud thinning, metres
VOXEL_SIZE = 0.005


class RecognitionError(ValueError):
    """Raised for mismatched views or malformed partitions."""


@dataclass(frozen=True, eq=False)
class ViewPartition:
    """The point cloud of one detection in one view."""

    view_index: int
    partition_index: int
    points: np.ndarray
    class_id: int
    confidence: float

    def __post_init__(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise RecognitionError("partition points must be (N, 3)")
        if len(self.points) == 0:
            raise RecognitionError("a partition needs at least one point")


@dataclass(frozen=True, eq=False)
class InstanceHypothesis:
    """One believed physical object: a class and the fused cloud behind it."""

    class_id: int
    points: np.ndarray
    members: tuple[ViewPartition, ...]


@dataclass(frozen=True)
class RecognitionResult:
    """Final per-class instance counts plus the hypotheses behind them."""

    counts: dict[int, int]
    hypotheses: tuple[InstanceHypothesis, ...]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def extract_partitions(
    depth: DepthImage,
    seg: SegmentationResult,
    voxel: float = VOXEL_SIZE,
) -> list[ViewPartition]:
    """Backproject each detection's hard mask into a thinned world cloud.

    Pixels with invalid depth are skipped; detections left with no points
    produce no partition.  Partition indices follow detection indices.
    """
    cam = depth.camera
    if seg.width != cam.width or seg.height != cam.height:
        raise RecognitionError("segmentation and depth resolutions differ")
    det_map = pixel_detection_map(seg)
    pts, pix = backproject_image(depth.depth, cam)
    labels = det_map[pix[:, 0], pix[:, 1]]
    parts: list[ViewPartition] = []
    for det in seg.detections:
        cloud = pts[labels == det.det_index]
        if len(cloud) == 0:
            continue
        cloud = voxel_downsample(cloud, voxel)
        parts.append(ViewPartition(seg.view_index, det.det_index, cloud,
                                   det.predicted_class, det.confidence))
    return parts


class _Working:
    """Mutable merge bookkeeping: cloud, members and a cached KD-tree."""

    __slots__ = ("class_id", "points", "members", "_tree")

    def __init__(self, part: ViewPartition):
        self.class_id = part.class_id
        self.points = part.points
        self.members = [part]
        self._tree = None

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def absorb(self, other: "_Working") -> None:
        self.points = np.concatenate([self.points, other.points])
        self.members.extend(other.members)
        self._tree = None


def merge_partitions(
    partitions,
    threshold: float = MERGE_THRESHOLD,
) -> list[InstanceHypothesis]:
    """Fuse same-class partitions whose chamfer distance falls under ``threshold``.

    Seeds one hypothesis per partition (ordered by view, then detection
    index), then repeatedly sweeps ordered pairs, absorbing the later
    hypothesis into the earlier one whenever classes match and the chamfer
    distance between the *current* clouds is below the threshold.  Stops when
    a full sweep changes nothing.
    """
    ordered = sorted(partitions,
                     key=lambda p: (p.view_index, p.partition_index))
    work = [_Working(p) for p in ordered]
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(work):
            j = i + 1
            while j < len(work):
                a, b = work[i], work[j]
                if a.class_id == b.class_id and chamfer_distance(
                        a.points, b.points, a.tree, b.tree) < threshold:
                    a.absorb(b)
                    del work[j]
                    changed = True
                else:
                    j += 1
            i += 1
    return [InstanceHypothesis(w.class_id, w.points, tuple(w.members))
            for w in work]


def recognize(
    depths,
    segs,
    threshold: float = MERGE_THRESHOLD,
    voxel: float = VOXEL_SIZE,
) -> RecognitionResult:
    """Full recognition pass: partitions from every view, merged and counted."""
    if len(depths) != len(segs):
        raise RecognitionError("need one segmentation per depth view")
    parts: list[ViewPartition] = []
    for depth, seg in zip(depths, segs):
        parts.extend(extract_partitions(depth, seg, voxel))
    hyps = merge_partitions(parts, threshold)
    counts: dict[int, int] = {}
    for h in hyps:
        counts[h.class_id] = counts.get(h.class_id, 0) + 1
    return RecognitionResult(counts, tuple(hyps))
