"""Instance-segmentation oracle with controllable, seeded imperfections.

Stands in for a learned segmenter: detections come from ground-truth
visibility, but class scores blur towards geometrically similar classes as
occlusion grows, and mask probabilities soften near silhouette boundaries.
All noise is drawn from an explicit seed so every run is reproducible.

Noise model per visible object:

* detection fires only when the visible fraction of the object's solo
  silhouette reaches ``v_min``;
* a probability mass ``confusion_scale * (1 - visibility)`` is moved from the
  true class onto its three nearest neighbours by physical dimensions, split
  by a seeded Dirichlet draw;
* foreground probability ramps linearly across ``blur_radius_px`` pixels on
  both sides of the true silhouette edge, so thresholding at 0.5 recovers the
  exact mask;
* an optional temperature reshapes class scores as p**(1/T) (renormalised).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .geometry import CameraModel
from .scene import DEFAULT_CATALOG, DepthImage, ObjectSpec, SceneState, \
    render_depth, visibility_ratios


class PerceptionError(ValueError):
    """Raised for invalid oracle configuration or mismatched inputs."""


@dataclass(frozen=True)
class OracleNoiseConfig:
    """Knobs of the segmentation oracle.

    Attributes:
        v_min: minimum visible fraction for an object to be detected.
        confusion_scale: class-probability mass leaked at full occlusion;
            the leak is scaled by (1 - visibility).
        blur_radius_px: half-width of the soft boundary band, pixels.
        temperature: class-score temperature (scores become p**(1/T),
            renormalised).  Flattening never changes the argmax, but it
            drags confidence down for occluded objects; the default is
            calibrated so confidence crosses ``min_confidence`` near 50%
            visibility, emulating a detector losing faith under occlusion.
        min_confidence: detections whose top score falls below this are
            suppressed, mirroring a detector score threshold.
        seed_policy: "per_object" derives an independent child seed per
            (seed, object), so one object's noise never depends on what else
            is in the scene; "stream" draws from a single sequential stream.
    """

    v_min: float = 0.15
    confusion_scale: float = 0.25
    blur_radius_px: int = 2
    temperature: float = 6.75
    min_confidence: float = 0.35
    seed_policy: str = "per_object"

    def __post_init__(self) -> None:
        if not 0.0 <= self.v_min <= 1.0:
            raise PerceptionError("v_min must lie in [0, 1]")
        if not 0.0 <= self.confusion_scale < 1.0:
            raise PerceptionError("confusion_scale must lie in [0, 1)")
        if self.blur_radius_px < 0:
            raise PerceptionError("blur_radius_px must be non-negative")
        if self.temperature <= 0:
            raise PerceptionError("temperature must be positive")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise PerceptionError("min_confidence must lie in [0, 1]")
        if self.seed_policy not in ("per_object", "stream"):
            raise PerceptionError(f"unknown seed policy {self.seed_policy!r}")

    @classmethod
    def zero_noise(cls, v_min: float = 0.15) -> "OracleNoiseConfig":
        """Perfect scores and hard masks; the visibility gate stays active."""
        return cls(v_min=v_min, confusion_scale=0.0, blur_radius_px=0,
                   temperature=1.0)


@dataclass(frozen=True, eq=False)
class Detection:
    """One detected instance in one view.

    ``box`` is (r0, c0, r1, c1), half-open.  ``fg_probs`` covers exactly the
    box.  ``source_object`` is the scene index behind the detection — ground
    truth the synthetic oracle can expose for free; recognition never reads it.
    """

    view_index: int
    det_index: int
    box: tuple[int, int, int, int]
    class_probs: np.ndarray
    fg_probs: np.ndarray
    source_object: int = -1

    def __post_init__(self) -> None:
        r0, c0, r1, c1 = self.box
        if not (r0 < r1 and c0 < c1):
            raise PerceptionError("detection box must be non-empty")
        if self.fg_probs.shape != (r1 - r0, c1 - c0):
            raise PerceptionError("fg_probs shape must match the box")
        if abs(float(self.class_probs.sum()) - 1.0) > 1e-9:
            raise PerceptionError("class probabilities must sum to 1")
        if np.any(self.fg_probs < 0) or np.any(self.fg_probs > 1):
            raise PerceptionError("fg probabilities must lie in [0, 1]")

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.class_probs))

    @property
    def confidence(self) -> float:
        return float(np.max(self.class_probs))

    def binary_mask(self) -> np.ndarray:
        """Hard mask inside the box (fg probability >= 0.5)."""
        return self.fg_probs >= 0.5


@dataclass(frozen=True)
class SegmentationResult:
    """All detections of one view."""

    view_index: int
    width: int
    height: int
    detections: tuple[Detection, ...]

    def __post_init__(self) -> None:
        for det in self.detections:
            r0, c0, r1, c1 = det.box
            if r0 < 0 or c0 < 0 or r1 > self.height or c1 > self.width:
                raise PerceptionError("detection box exceeds the image")


@dataclass(frozen=True, eq=False)
class PixelLabelMap:
    """Per-pixel predicted class of one view; -1 marks background."""

    view_index: int
    classes: np.ndarray


def confusion_sets(catalog: tuple[ObjectSpec, ...] = DEFAULT_CATALOG,
                   k: int = 3) -> np.ndarray:
    """For each class, the k most similar other classes by dimensions.

    Similarity is Euclidean distance in (size_x, size_y, size_z); ties break
    towards the lower class id.  Returns an int array indexed by class id.
    """
    n = len(catalog)
    if n <= k:
        raise PerceptionError(f"catalog needs more than {k} classes")
    dims = np.zeros((n, 3))
    for spec in catalog:
        dims[spec.class_id] = spec.dims
    sets = np.zeros((n, k), dtype=np.int64)
    ids = np.arange(n)
    for c in range(n):
        dist = np.linalg.norm(dims - dims[c], axis=1)
        order = np.lexsort((ids, dist))
        sets[c] = order[order != c][:k]
    return sets


def _soft_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Linear foreground ramp over a ``radius``-pixel band around the edge."""
    if radius == 0:
        return mask.astype(float)
    d_in = distance_transform_edt(mask)
    d_out = distance_transform_edt(~mask)
    signed = d_in - d_out
    return np.clip(0.5 + signed / (2.0 * radius), 0.0, 1.0)


def segment_view(
    scene: SceneState,
    camera: CameraModel,
    noise: OracleNoiseConfig,
    seed,
    depth: DepthImage | None = None,
    catalog: tuple[ObjectSpec, ...] = DEFAULT_CATALOG,
    view_index: int = 0,
) -> SegmentationResult:
    """Run the oracle on one view.

    ``seed`` feeds numpy's default generator (ints or int sequences are both
    fine).  ``depth`` may be passed to reuse an existing render.
    """
    if depth is None:
        depth = render_depth(scene, camera)
    if depth.camera is not camera and (
            depth.camera.width != camera.width
            or depth.camera.height != camera.height):
        raise PerceptionError("depth image does not match the camera")
    base_seed = tuple(int(x) for x in np.atleast_1d(np.asarray(seed)))
    stream_rng = np.random.default_rng(base_seed)
    near = confusion_sets(catalog)
    n_classes = len(catalog)
    vis = visibility_ratios(scene, camera, depth)
    dets: list[Detection] = []
    for k, obj in enumerate(scene.objects):
        if vis[k] <= 0.0 or vis[k] < noise.v_min:
            continue
        mask = depth.instance == k
        rows = np.nonzero(mask.any(axis=1))[0]
        cols = np.nonzero(mask.any(axis=0))[0]
        if len(rows) == 0:
            continue
        pad = noise.blur_radius_px
        r0 = max(0, int(rows[0]) - pad)
        r1 = min(camera.height, int(rows[-1]) + 1 + pad)
        c0 = max(0, int(cols[0]) - pad)
        c1 = min(camera.width, int(cols[-1]) + 1 + pad)
        eps = noise.confusion_scale * (1.0 - vis[k])
        true_class = obj.spec.class_id
        probs = np.zeros(n_classes)
        probs[true_class] = 1.0 - eps
        if eps > 0.0:
            if noise.seed_policy == "per_object":
                rng = np.random.default_rng(base_seed + (k,))
            else:
                rng = stream_rng
            probs[near[true_class]] += rng.dirichlet((1.0, 1.0, 1.0)) * eps
        if noise.temperature != 1.0:
            probs = probs ** (1.0 / noise.temperature)
            probs /= probs.sum()
        if float(probs.max()) < noise.min_confidence:
            continue
        fg = _soft_mask(mask[r0:r1, c0:c1], noise.blur_radius_px)
        dets.append(Detection(view_index, len(dets), (r0, c0, r1, c1),
                              probs, fg, source_object=k))
    return SegmentationResult(view_index, camera.width, camera.height,
                              tuple(dets))


def _paint_order(seg: SegmentationResult) -> list[Detection]:
    """Detections sorted so the pixel winner paints last.

    Where hard masks overlap, the pixel belongs to the highest-confidence
    detection; confidence ties go to the lower detection index.  (The oracle
    itself emits disjoint masks, but hand-built or deserialized results may
    overlap.)
    """
    return sorted(seg.detections, key=lambda d: (d.confidence, -d.det_index))


def pixel_detection_map(seg: SegmentationResult) -> np.ndarray:
    """(H, W) int map of the detection index claiming each pixel; -1 elsewhere.

    Overlaps resolve to the highest-confidence detection (ties: lower index).
    """
    out = np.full((seg.height, seg.width), -1, dtype=np.int32)
    for det in _paint_order(seg):
        r0, c0, r1, c1 = det.box
        m = det.binary_mask()
        out[r0:r1, c0:c1][m] = det.det_index
    return out


def pixel_label_map(seg: SegmentationResult) -> PixelLabelMap:
    """Predicted class per pixel under the hard masks; -1 is background.

    Overlaps resolve to the highest-confidence detection (ties: lower index).
    """
    out = np.full((seg.height, seg.width), -1, dtype=np.int32)
    for det in _paint_order(seg):
        r0, c0, r1, c1 = det.box
        m = det.binary_mask()
        out[r0:r1, c0:c1][m] = det.predicted_class
    return PixelLabelMap(seg.view_index, out)


# ---------------------------------------------------------------------------
# plain-text serialization
# ---------------------------------------------------------------------------


def segmentation_to_text(seg: SegmentationResult) -> str:
    out = io.StringIO()
    out.write(f"segmentation {seg.view_index} {seg.width} {seg.height} "
              f"{len(seg.detections)}\n")
    for det in seg.detections:
        r0, c0, r1, c1 = det.box
        out.write(f"detection {det.det_index} {r0} {c0} {r1} {c1} "
                  f"{det.source_object}\n")
        out.write("classprobs "
                  + " ".join(repr(float(p)) for p in det.class_probs) + "\n")
        for row in det.fg_probs:
            out.write("fgrow " + " ".join(repr(float(p)) for p in row) + "\n")
    return out.getvalue()


def segmentation_from_text(text: str) -> SegmentationResult:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("segmentation "):
        raise PerceptionError("missing segmentation header")
    _, view, width, height, n_det = lines[0].split()
    pos = 1
    dets = []
    for _ in range(int(n_det)):
        toks = lines[pos].split()
        if toks[0] != "detection":
            raise PerceptionError(f"expected a detection line, got {lines[pos]!r}")
        det_index = int(toks[1])
        r0, c0, r1, c1 = (int(t) for t in toks[2:6])
        source = int(toks[6])
        probs = np.array([float(t) for t in lines[pos + 1].split()[1:]])
        rows = []
        for k in range(r1 - r0):
            row_toks = lines[pos + 2 + k].split()
            if row_toks[0] != "fgrow":
                raise PerceptionError("malformed fg row")
            rows.append([float(t) for t in row_toks[1:]])
        fg = np.array(rows)
        dets.append(Detection(int(view), det_index, (r0, c0, r1, c1),
                              probs, fg, source))
        pos += 2 + (r1 - r0)
    return SegmentationResult(int(view), int(width), int(height), tuple(dets))
