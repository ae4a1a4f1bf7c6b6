"""clutterprobe: count objects in tabletop clutter by looking, doubting, pushing.

A deterministic desk-scale testbed for interactive perception: synthetic
cluttered scenes are rendered from a multi-camera rig, instances are merged
across views by point-cloud consistency, recognition uncertainty is projected
onto a top-down workspace grid, and an uncertainty-driven planner chooses
pushes that untangle the clutter until the count can be trusted.
"""

from .config import BenchSettings, ConfigError, EpisodeSettings, \
    config_to_text, parse_config
from .geometry import CameraModel, GeometryError, PointCloud, TopDownGrid, \
    ViewSet, WorkspaceGrid, backproject_image, backproject_pixel, \
    chamfer_distance, default_workspace_grid, look_at_pose, make_view_set, \
    project_point, voxel_downsample
from .harness import BenchmarkReport, CountMatch, EpisodeLog, Metrics, \
    count_matches, metrics, run_benchmark, run_episode, summarize, \
    write_report
from .perception import Detection, OracleNoiseConfig, PerceptionError, \
    PixelLabelMap, SegmentationResult, pixel_label_map, segment_view
from .planner import PlannerConfig, PlannerRegion, PushPlan, focus_window, \
    informativeness_map, plan_push, select_start, select_target, \
    should_terminate, validity_map
from .pushsim import DegeneratePushWarning, PushAction, PushError, apply_push
from .recognition import InstanceHypothesis, RecognitionResult, \
    RecognitionError, ViewPartition, extract_partitions, merge_partitions, \
    recognize
from .scene import DEFAULT_CATALOG, DepthImage, ObjectSpec, PlacedObject, \
    SceneError, SceneState, generate_random_scene, height_map, render_depth, \
    scene_from_text, scene_to_text, visibility_ratios
from .uncertainty import UncertaintyConfig, combined_map, disagreement_map, \
    entropy_map, grid_to_csv, grid_to_png, pixel_entropy

__version__ = "0.1.0"
