"""Segmentation oracle: noise model, gates, pixel maps, serialization."""

from __future__ import annotations

import numpy as np
import pytest

from clutterprobe.geometry import make_view_set
from clutterprobe.perception import (
    Detection,
    OracleNoiseConfig,
    PerceptionError,
    SegmentationResult,
    confusion_sets,
    pixel_detection_map,
    pixel_label_map,
    segment_view,
    segmentation_from_text,
    segmentation_to_text,
)
from clutterprobe.scene import (
    DEFAULT_CATALOG,
    PlacedObject,
    SceneState,
    generate_random_scene,
    render_depth,
    visibility_ratios,
)

BOUNDS = (-0.75, 0.75, -0.5, 0.5)
OVERHEAD = make_view_set(1)[0]


def _spec(class_id: int):
    return DEFAULT_CATALOG[class_id]


def _det(det_index, box, confidence, n_classes=4, view=0, top_class=0):
    probs = np.full(n_classes, (1.0 - confidence) / (n_classes - 1))
    probs[top_class] = confidence
    r0, c0, r1, c1 = box
    fg = np.ones((r1 - r0, c1 - c0))
    return Detection(view, det_index, box, probs, fg)


# ---------------------------------------------------------------------------
# configuration and confusion sets
# ---------------------------------------------------------------------------


def test_noise_config_validation():
    with pytest.raises(PerceptionError):
        OracleNoiseConfig(v_min=1.5)
    with pytest.raises(PerceptionError):
        OracleNoiseConfig(confusion_scale=1.0)
    with pytest.raises(PerceptionError):
        OracleNoiseConfig(blur_radius_px=-1)
    with pytest.raises(PerceptionError):
        OracleNoiseConfig(temperature=0.0)
    with pytest.raises(PerceptionError):
        OracleNoiseConfig(min_confidence=-0.1)
    with pytest.raises(PerceptionError):
        OracleNoiseConfig(seed_policy="bogus")


def test_zero_noise_keeps_visibility_gate():
    cfg = OracleNoiseConfig.zero_noise()
    assert cfg.confusion_scale == 0.0
    assert cfg.blur_radius_px == 0
    assert cfg.temperature == 1.0
    assert cfg.v_min == 0.15
    assert OracleNoiseConfig.zero_noise(v_min=0.0).v_min == 0.0


def test_confusion_sets_match_brute_force():
    near = confusion_sets()
    assert near.shape == (27, 3)
    dims = np.zeros((27, 3))
    for spec in DEFAULT_CATALOG:
        dims[spec.class_id] = spec.dims
    for c in range(27):
        ranked = sorted(
            (float(np.linalg.norm(dims[i] - dims[c])), i)
            for i in range(27) if i != c)
        assert list(near[c]) == [i for _, i in ranked[:3]]
        assert c not in near[c]


def test_confusion_sets_need_enough_classes():
    with pytest.raises(PerceptionError):
        confusion_sets(DEFAULT_CATALOG[:3], k=3)


# ---------------------------------------------------------------------------
# oracle behaviour on constructed scenes
# ---------------------------------------------------------------------------


def test_zero_noise_single_object_is_exact():
    scene = SceneState((PlacedObject(_spec(4), 0.0, 0.0, 0.7),), BOUNDS)
    depth = render_depth(scene, OVERHEAD)
    seg = segment_view(scene, OVERHEAD, OracleNoiseConfig.zero_noise(),
                       seed=[0, 1, 0], depth=depth)
    assert len(seg.detections) == 1
    det = seg.detections[0]
    assert det.source_object == 0
    assert det.predicted_class == 4
    assert det.confidence == 1.0
    assert float(det.class_probs.sum()) == 1.0
    assert np.count_nonzero(det.class_probs) == 1
    r0, c0, r1, c1 = det.box
    assert np.array_equal(det.binary_mask(),
                          depth.instance[r0:r1, c0:c1] == 0)
    # with no blur the box is the tight bounding box of the mask
    mask = depth.instance == 0
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    assert det.box == (rows[0], cols[0], rows[-1] + 1, cols[-1] + 1)


def _half_occluded_scene() -> SceneState:
    # a floating slab shadows the right half of the lower box from overhead
    target = PlacedObject(_spec(2), 0.0, 0.0, 0.0)          # 0.060 box
    occluder = PlacedObject(_spec(2), 0.03, 0.0, 0.0, 0.2)  # floats above
    return SceneState((target, occluder), BOUNDS)


def test_class_leak_follows_visibility_formula():
    scene = _half_occluded_scene()
    depth = render_depth(scene, OVERHEAD)
    vis = visibility_ratios(scene, OVERHEAD, depth)
    assert 0.4 < vis[0] < 0.55
    noise = OracleNoiseConfig(blur_radius_px=0, temperature=1.0)
    seg = segment_view(scene, OVERHEAD, noise, seed=[3, 1, 0], depth=depth)
    det = next(d for d in seg.detections if d.source_object == 0)
    eps = 0.25 * (1.0 - vis[0])
    assert det.class_probs[2] == pytest.approx(1.0 - eps, abs=1e-12)
    assert det.class_probs[2] == pytest.approx(0.875, abs=0.02)
    # the leaked mass lands only on the three nearest classes
    near = set(confusion_sets()[2])
    leaked = {c for c in range(27) if c not in near and c != 2
              and det.class_probs[c] != 0.0}
    assert leaked == set()
    assert float(det.class_probs[list(near)].sum()) == pytest.approx(
        eps, abs=1e-12)
    assert np.all(det.class_probs >= 0.0)


def test_fully_hidden_object_is_never_detected():
    target = PlacedObject(_spec(0), 0.0, 0.0, 0.0)
    lid = PlacedObject(_spec(5), 0.0, 0.0, 0.0, 0.2)  # 0.096 box covers all
    scene = SceneState((target, lid), BOUNDS)
    noise = OracleNoiseConfig.zero_noise(v_min=0.0)
    seg = segment_view(scene, OVERHEAD, noise, seed=[0, 1, 0])
    assert all(d.source_object != 0 for d in seg.detections)


def test_visibility_gate_drops_slivers():
    target = PlacedObject(_spec(2), 0.0, 0.0, 0.0)
    occluder = PlacedObject(_spec(5), 0.024, 0.0, 0.0, 0.2)
    scene = SceneState((target, occluder), BOUNDS)
    depth = render_depth(scene, OVERHEAD)
    vis = visibility_ratios(scene, OVERHEAD, depth)
    assert 0.0 < vis[0] < 0.15
    gated = segment_view(scene, OVERHEAD, OracleNoiseConfig.zero_noise(),
                         seed=[0, 1, 0], depth=depth)
    assert all(d.source_object != 0 for d in gated.detections)
    open_seg = segment_view(scene, OVERHEAD,
                            OracleNoiseConfig.zero_noise(v_min=0.0),
                            seed=[0, 1, 0], depth=depth)
    assert any(d.source_object == 0 for d in open_seg.detections)


def test_temperature_preserves_argmax_and_lowers_confidence():
    scene = generate_random_scene(10, seed=6, drop_extent=(0.25, 0.25))
    depth = render_depth(scene, OVERHEAD)
    kw = dict(blur_radius_px=0, min_confidence=0.0)
    cool = segment_view(scene, OVERHEAD,
                        OracleNoiseConfig(temperature=1.0, **kw),
                        seed=[6, 1, 0], depth=depth)
    warm = segment_view(scene, OVERHEAD,
                        OracleNoiseConfig(temperature=5.0, **kw),
                        seed=[6, 1, 0], depth=depth)
    by_source = {d.source_object: d for d in warm.detections}
    assert set(by_source) == {d.source_object for d in cool.detections}
    for det in cool.detections:
        other = by_source[det.source_object]
        assert other.predicted_class == det.predicted_class
        if det.confidence < 1.0:
            assert other.confidence < det.confidence
        else:
            assert other.confidence == 1.0


def test_flattening_can_push_borderline_detections_under_the_gate():
    # ~20% visibility: confidence stays 0.8 at temperature 1 but crosses the
    # 0.35 threshold once flattened, so the detection disappears
    target = PlacedObject(_spec(2), 0.0, 0.0, 0.0)
    occluder = PlacedObject(_spec(5), 0.03, 0.0, 0.0, 0.2)
    scene = SceneState((target, occluder), BOUNDS)
    depth = render_depth(scene, OVERHEAD)
    vis = visibility_ratios(scene, OVERHEAD, depth)
    assert 0.15 <= vis[0] < 0.25
    sharp = segment_view(scene, OVERHEAD, OracleNoiseConfig(temperature=1.0),
                         seed=[9, 1, 0], depth=depth)
    flat = segment_view(scene, OVERHEAD, OracleNoiseConfig(),
                        seed=[9, 1, 0], depth=depth)
    assert any(d.source_object == 0 for d in sharp.detections)
    assert all(d.source_object != 0 for d in flat.detections)


def test_noise_off_fidelity_with_open_gate():
    scene = generate_random_scene(10, seed=2, drop_extent=(0.25, 0.25))
    noise = OracleNoiseConfig.zero_noise(v_min=0.0)
    for cam in (OVERHEAD, make_view_set(3)[2]):
        depth = render_depth(scene, cam)
        vis = visibility_ratios(scene, cam, depth)
        seg = segment_view(scene, cam, noise, seed=[2, 1, 0], depth=depth)
        expected = [k for k in range(len(scene.objects)) if vis[k] > 0.0]
        assert [d.source_object for d in seg.detections] == expected
        assert [d.det_index for d in seg.detections] == \
            list(range(len(expected)))
        for det in seg.detections:
            k = det.source_object
            assert det.predicted_class == scene.objects[k].spec.class_id
            assert det.confidence == 1.0
            r0, c0, r1, c1 = det.box
            assert np.array_equal(det.binary_mask(),
                                  depth.instance[r0:r1, c0:c1] == k)


def test_soft_boundary_recovers_exact_mask():
    scene = generate_random_scene(6, seed=8, drop_extent=(0.3, 0.3))
    depth = render_depth(scene, OVERHEAD)
    seg = segment_view(scene, OVERHEAD, OracleNoiseConfig(min_confidence=0.0),
                       seed=[8, 1, 0], depth=depth)
    assert len(seg.detections) > 0
    for det in seg.detections:
        r0, c0, r1, c1 = det.box
        truth = depth.instance[r0:r1, c0:c1] == det.source_object
        assert np.array_equal(det.binary_mask(), truth)
        interior = det.fg_probs > 0.999
        assert interior.sum() < truth.sum()  # the edge band really is soft


def test_per_object_seeding_ignores_unrelated_objects():
    base = _half_occluded_scene()
    extra = PlacedObject(_spec(9), 0.5, 0.3, 1.0)
    bigger = SceneState(base.objects + (extra,), BOUNDS)
    noise = OracleNoiseConfig(blur_radius_px=0, temperature=1.0)
    seg_a = segment_view(base, OVERHEAD, noise, seed=[5, 1, 0])
    seg_b = segment_view(bigger, OVERHEAD, noise, seed=[5, 1, 0])
    det_a = next(d for d in seg_a.detections if d.source_object == 0)
    det_b = next(d for d in seg_b.detections if d.source_object == 0)
    assert np.array_equal(det_a.class_probs, det_b.class_probs)


def test_stream_seeding_depends_on_earlier_objects():
    # two occluded targets; in scene B the first one becomes fully visible
    # (its occluder moves away) so it stops consuming noise draws
    t0 = PlacedObject(_spec(2), -0.2, 0.0, 0.0)
    occ0 = PlacedObject(_spec(2), -0.12, 0.0, 0.0, 0.2)  # clips t0's edge
    t1 = PlacedObject(_spec(2), 0.2, 0.0, 0.0)
    occ1 = PlacedObject(_spec(2), 0.23, 0.0, 0.0, 0.2)
    far = PlacedObject(_spec(2), 0.5, -0.3, 0.0, 0.2)
    scene_a = SceneState((t0, occ0, t1, occ1), BOUNDS)
    scene_b = SceneState((t0, far, t1, occ1), BOUNDS)
    vis_a = visibility_ratios(scene_a, OVERHEAD)
    assert 0.15 <= vis_a[0] < 1.0          # t0 draws noise in scene A only
    assert vis_a[2] < 1.0

    def probs_of_t1(scene, policy):
        noise = OracleNoiseConfig(blur_radius_px=0, temperature=1.0,
                                  seed_policy=policy)
        seg = segment_view(scene, OVERHEAD, noise, seed=[5, 1, 0])
        return next(d for d in seg.detections
                    if d.source_object == 2).class_probs

    # per-object children only key on (seed, index): t1 is unaffected
    assert np.array_equal(probs_of_t1(scene_a, "per_object"),
                          probs_of_t1(scene_b, "per_object"))
    # the sequential stream shifts when object 0 stops drawing
    assert not np.array_equal(probs_of_t1(scene_a, "stream"),
                              probs_of_t1(scene_b, "stream"))


def test_argmax_never_flips_under_default_noise():
    # the leak is capped at 0.25, so the true class always keeps the argmax
    for seed in range(4):
        scene = generate_random_scene(10, seed=seed, drop_extent=(0.22, 0.22))
        for k, cam in enumerate(make_view_set(5)):
            seg = segment_view(scene, cam, OracleNoiseConfig(),
                               seed=[seed, 1, k], view_index=k)
            for det in seg.detections:
                truth = scene.objects[det.source_object].spec.class_id
                assert det.predicted_class == truth
                assert float(det.class_probs.sum()) == pytest.approx(
                    1.0, abs=1e-9)
                assert np.all(det.class_probs >= 0.0)
                assert det.confidence >= 0.35
                assert np.all(det.fg_probs >= 0.0)
                assert np.all(det.fg_probs <= 1.0)


# ---------------------------------------------------------------------------
# detection plumbing and pixel maps
# ---------------------------------------------------------------------------


def test_detection_validation():
    with pytest.raises(PerceptionError):
        _det(0, (3, 3, 3, 5), 0.9)              # empty box
    with pytest.raises(PerceptionError):
        Detection(0, 0, (0, 0, 2, 2), np.array([0.5, 0.5]), np.ones((3, 2)))
    with pytest.raises(PerceptionError):
        Detection(0, 0, (0, 0, 2, 2), np.array([0.6, 0.6]), np.ones((2, 2)))
    with pytest.raises(PerceptionError):
        Detection(0, 0, (0, 0, 2, 2), np.array([0.5, 0.5]),
                  np.full((2, 2), 1.5))
    with pytest.raises(PerceptionError):
        SegmentationResult(0, 4, 4, (_det(0, (0, 0, 5, 2), 0.9),))


def _oracle_maps(seg: SegmentationResult):
    """Per-pixel winner by exhaustive loop: highest confidence, lowest index."""
    det_map = np.full((seg.height, seg.width), -1, dtype=int)
    cls_map = np.full((seg.height, seg.width), -1, dtype=int)
    for r in range(seg.height):
        for c in range(seg.width):
            best = None
            for det in seg.detections:
                r0, c0, r1, c1 = det.box
                if not (r0 <= r < r1 and c0 <= c < c1):
                    continue
                if not det.binary_mask()[r - r0, c - c0]:
                    continue
                key = (det.confidence, -det.det_index)
                if best is None or key > best[0]:
                    best = (key, det)
            if best is not None:
                det_map[r, c] = best[1].det_index
                cls_map[r, c] = best[1].predicted_class
    return det_map, cls_map


def test_overlap_resolution_examples():
    seg = SegmentationResult(0, 8, 8, (
        _det(0, (0, 0, 5, 5), 0.9, top_class=1),
        _det(1, (2, 2, 7, 7), 0.7, top_class=2),
    ))
    det_map = pixel_detection_map(seg)
    assert det_map[3, 3] == 0          # higher confidence wins the overlap
    assert det_map[6, 6] == 1
    assert det_map[7, 7] == -1
    tie = SegmentationResult(0, 8, 8, (
        _det(0, (0, 0, 5, 5), 0.8, top_class=1),
        _det(1, (2, 2, 7, 7), 0.8, top_class=2),
    ))
    tie_map = pixel_detection_map(tie)
    assert tie_map[3, 3] == 0          # ties go to the lower index
    labels = pixel_label_map(tie)
    assert labels.classes[3, 3] == 1
    assert labels.classes[6, 6] == 2
    assert labels.classes[0, 7] == -1


def test_overlap_resolution_matches_exhaustive_oracle():
    rng = np.random.default_rng(15)
    confidences = [0.5, 0.6, 0.6, 0.8, 0.9]
    for _ in range(20):
        dets = []
        for idx in range(rng.integers(1, 5)):
            r0 = int(rng.integers(0, 8))
            c0 = int(rng.integers(0, 8))
            r1 = int(rng.integers(r0 + 1, 13))
            c1 = int(rng.integers(c0 + 1, 13))
            conf = float(rng.choice(confidences))
            dets.append(_det(idx, (r0, c0, min(r1, 12), min(c1, 12)), conf,
                             top_class=int(rng.integers(0, 4))))
        seg = SegmentationResult(0, 12, 12, tuple(dets))
        want_det, want_cls = _oracle_maps(seg)
        assert np.array_equal(pixel_detection_map(seg), want_det)
        assert np.array_equal(pixel_label_map(seg).classes, want_cls)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_segmentation_text_round_trip():
    scene = generate_random_scene(8, seed=12, drop_extent=(0.25, 0.25))
    seg = segment_view(scene, OVERHEAD, OracleNoiseConfig(), seed=[12, 1, 0])
    text = segmentation_to_text(seg)
    again = segmentation_from_text(text)
    assert segmentation_to_text(again) == text
    assert (again.view_index, again.width, again.height) == \
        (seg.view_index, seg.width, seg.height)
    for a, b in zip(again.detections, seg.detections):
        assert a.box == b.box
        assert a.source_object == b.source_object
        assert np.array_equal(a.class_probs, b.class_probs)
        assert np.array_equal(a.fg_probs, b.fg_probs)


def test_segmentation_from_text_rejects_malformed():
    with pytest.raises(PerceptionError):
        segmentation_from_text("nonsense 1 2 3\n")
    good = segmentation_to_text(
        SegmentationResult(0, 8, 8, (_det(0, (0, 0, 2, 2), 0.9),)))
    with pytest.raises(PerceptionError):
        segmentation_from_text(good.replace("detection", "detektion"))
