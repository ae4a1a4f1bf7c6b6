"""Flat key=value configuration for episodes and benchmarks.

One dataclass holds every tunable of the pipeline (rig, scene generation,
oracle noise, recognition, uncertainty weights, planner, push simulation); a
second wraps benchmark-level settings.  The text format is one `key = value`
per line, `#` comments, unknown keys rejected — a full round trip through
:func:`config_to_text` / :func:`parse_config` is lossless.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .geometry import ViewSet, WorkspaceGrid, default_workspace_grid, \
    make_view_set
from .perception import OracleNoiseConfig
from .planner import PlannerConfig


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values."""


@dataclass(frozen=True)
class EpisodeSettings:
    """Every knob of a single exploration episode."""

    # camera rig
    views: int = 5
    image_width: int = 360
    image_height: int = 256
    fov_deg: float = 75.0
    overhead_height: float = 1.5
    side_radius: float = 1.5
    side_tilt_deg: float = 42.0
    # workspace
    workspace_x: float = 1.5
    workspace_y: float = 1.0
    cell_size: float = 0.002
    # scene generation
    drop_extent: float = 0.8
    stack_threshold: float = 0.3
    # segmentation oracle
    v_min: float = 0.15
    confusion_scale: float = 0.25
    blur_radius_px: int = 2
    temperature: float = 6.75
    min_confidence: float = 0.35
    # recognition
    merge_threshold: float = 0.001
    voxel_size: float = 0.005
    # uncertainty
    disagreement_weight: float = 0.1
    # planner
    footprint: float = 0.024
    window: float = 0.4
    validity_weight: float = 0.5
    push_distance: float = 0.1
    min_push_distance: float = 0.02
    repeat_radius: float = 0.05
    termination_threshold: float = 2.2
    max_steps: int = 20
    # push simulation
    sweep_width: float = 0.024
    sweep_height: float = 0.05
    jitter_deg: float = 5.0

    def view_set(self, views: int | None = None) -> ViewSet:
        return make_view_set(
            self.views if views is None else views,
            width=self.image_width, height=self.image_height,
            fov_deg=self.fov_deg, overhead_height=self.overhead_height,
            side_radius=self.side_radius, side_tilt_deg=self.side_tilt_deg)

    def grid(self) -> WorkspaceGrid:
        return default_workspace_grid(self.workspace_x, self.workspace_y,
                                      self.cell_size)

    def bounds(self) -> tuple[float, float, float, float]:
        return (-self.workspace_x / 2.0, self.workspace_x / 2.0,
                -self.workspace_y / 2.0, self.workspace_y / 2.0)

    def noise(self) -> OracleNoiseConfig:
        return OracleNoiseConfig(
            v_min=self.v_min, confusion_scale=self.confusion_scale,
            blur_radius_px=self.blur_radius_px, temperature=self.temperature,
            min_confidence=self.min_confidence)

    def planner(self) -> PlannerConfig:
        return PlannerConfig(
            footprint=self.footprint, window=self.window,
            validity_weight=self.validity_weight,
            push_distance=self.push_distance,
            min_push_distance=self.min_push_distance,
            repeat_radius=self.repeat_radius,
            termination_threshold=self.termination_threshold,
            max_steps=self.max_steps, sweep_width=self.sweep_width,
            sweep_height=self.sweep_height)

    def zero_noise(self) -> "EpisodeSettings":
        """Same settings with a perfect oracle (the visibility gate stays)."""
        return dataclasses.replace(self, confusion_scale=0.0,
                                   blur_radius_px=0, temperature=1.0)


#: benchmark policies, weakest first
POLICIES = ("none", "random", "guided_random", "smart")


@dataclass(frozen=True)
class BenchSettings:
    """A benchmark: a set of policies over seeded scenes at given densities.

    The default episode drops objects into a tight 0.22 m square so scenes
    form genuine piles; single-episode runs keep the wider 0.8 m default.
    """

    scenes: int = 50
    base_seed: int = 0
    densities: tuple[int, ...] = (10,)
    policies: tuple[str, ...] = POLICIES
    budget: int = 2
    jobs: int = 1
    episode: EpisodeSettings = EpisodeSettings(drop_extent=0.22)

    def __post_init__(self) -> None:
        if self.scenes <= 0:
            raise ConfigError("scenes must be positive")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}")
        if not self.densities or any(d <= 0 for d in self.densities):
            raise ConfigError("densities must be positive")


_EPISODE_FIELDS = {f.name: f.type for f in dataclasses.fields(EpisodeSettings)}
_BENCH_FIELDS = {f.name for f in dataclasses.fields(BenchSettings)} - {"episode"}


def _parse_scalar(key: str, raw: str, kind: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str) -> BenchSettings:
    """Parse `key = value` lines into benchmark settings.

    Episode keys and benchmark keys share one flat namespace.  Lists
    (densities, policies) are comma separated.  Unknown keys raise
    ConfigError.
    """
    bench_kw: dict = {}
    episode_kw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (t.strip() for t in stripped.split("=", 1))
        if key == "densities":
            bench_kw[key] = tuple(int(t) for t in raw.split(",") if t.strip())
        elif key == "policies":
            bench_kw[key] = tuple(t.strip() for t in raw.split(",") if t.strip())
        elif key in ("scenes", "base_seed", "budget", "jobs"):
            bench_kw[key] = _parse_scalar(key, raw, "int")
        elif key in _EPISODE_FIELDS:
            kind = "int" if key in ("views", "image_width", "image_height",
                                    "blur_radius_px", "max_steps") else "float"
            episode_kw[key] = _parse_scalar(key, raw, kind)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    base = BenchSettings(**bench_kw)
    return dataclasses.replace(
        base, episode=dataclasses.replace(base.episode, **episode_kw))


def config_to_text(bench: BenchSettings) -> str:
    """Serialise settings to the flat text form (round-trips exactly)."""
    lines = [
        f"scenes = {bench.scenes}",
        f"base_seed = {bench.base_seed}",
        "densities = " + ",".join(str(d) for d in bench.densities),
        "policies = " + ",".join(bench.policies),
        f"budget = {bench.budget}",
        f"jobs = {bench.jobs}",
    ]
    for f in dataclasses.fields(EpisodeSettings):
        lines.append(f"{f.name} = {getattr(bench.episode, f.name)!r}")
    return "\n".join(lines) + "\n"
