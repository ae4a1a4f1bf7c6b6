"""Episode loop, counting metrics, baseline policies and the benchmark runner.

An episode alternates recognition and interaction on one seeded scene:
render every view, segment, merge partitions across views, count instances,
then (policy permitting) push and repeat.  Four policies are compared:

* ``none`` — recognise once and stop (the no-interaction baseline);
* ``random`` — push from a uniformly drawn low cell in a uniform direction,
  for a fixed budget;
* ``guided_random`` — start at the most valid (lowest) footprint inside the
  uncertainty focus window, direction uniform, fixed budget;
* ``smart`` — the full uncertainty-driven planner with early termination.

Counting quality is scored per scene by micro-averaged precision/recall/F1
over per-class instance counts, then averaged across scenes.  With a single
camera there is no cross-view evidence, so the disagreement map is skipped
and only segmentation uncertainty drives the planner.

Everything is a pure function of (settings, seed): per-step generators are
derived from the episode seed with fixed stream tags, so reports are
byte-identical no matter how many workers produced them.
"""

from __future__ import annotations

import dataclasses
import io
import multiprocessing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import BenchSettings, ConfigError, EpisodeSettings, POLICIES, \
    config_to_text
from .geometry import TopDownGrid
from .perception import segment_view
from .planner import PushPlan, _argmax_2d, focus_window, make_push_action, \
    plan_push, validity_map
from .pushsim import PushAction, apply_push
from .recognition import recognize
from .scene import generate_random_scene, height_map, render_depth
from .uncertainty import UncertaintyConfig, combined_map, disagreement_map, \
    entropy_map, grid_to_png


# ---------------------------------------------------------------------------
# counting metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountMatch:
    """Per-class comparison of predicted vs ground-truth instance counts."""

    class_id: int
    predicted: int
    actual: int

    @property
    def tp(self) -> int:
        return min(self.predicted, self.actual)

    @property
    def fp(self) -> int:
        return max(0, self.predicted - self.actual)

    @property
    def fn(self) -> int:
        return max(0, self.actual - self.predicted)


def count_matches(pred: dict[int, int], gt: dict[int, int]) -> tuple[CountMatch, ...]:
    """Match counts over the union of classes, ordered by class id."""
    classes = sorted(set(pred) | set(gt))
    for counts in (pred, gt):
        if any(v < 0 for v in counts.values()):
            raise ValueError("counts must be non-negative")
    return tuple(CountMatch(c, pred.get(c, 0), gt.get(c, 0)) for c in classes)


@dataclass(frozen=True)
class Metrics:
    """Micro-averaged counting precision/recall/F1.

    ``degenerate`` flags an empty denominator (no predictions or no ground
    truth); the affected scores are defined as 0.
    """

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    degenerate: bool


def metrics(matches) -> Metrics:
    tp = sum(m.tp for m in matches)
    fp = sum(m.fp for m in matches)
    fn = sum(m.fn for m in matches)
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return Metrics(tp, fp, fn, p, r, f1, degenerate)


# ---------------------------------------------------------------------------
# episode loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """One recognition pass and the push (if any) executed right after it."""

    step: int
    counts: tuple[tuple[int, int], ...]
    metrics: Metrics
    max_uncertainty: float
    push: PushAction | None = None
    random_direction: bool = False
    doubled: bool = False


@dataclass(frozen=True)
class EpisodeLog:
    """Everything one episode produced."""

    policy: str
    n_objects: int
    seed: int
    views: int
    gt_counts: tuple[tuple[int, int], ...]
    steps: tuple[StepRecord, ...]

    @property
    def motions(self) -> int:
        return sum(1 for s in self.steps if s.push is not None)

    @property
    def final(self) -> StepRecord:
        return self.steps[-1]


def _counts_tuple(counts: dict[int, int]) -> tuple[tuple[int, int], ...]:
    return tuple(sorted(counts.items()))


def _random_push(heights: TopDownGrid, rng, config, bounds) -> PushAction:
    """Uniform start over low cells, uniform heading, default distance."""
    grid = heights.grid
    flat = np.flatnonzero(heights.values < config.sweep_height)
    if len(flat) == 0:
        flat = np.arange(grid.rows * grid.cols)
    pick = int(flat[int(rng.integers(len(flat)))])
    i, j = divmod(pick, grid.cols)
    start = grid.cell_center(i, j)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    direction = (float(np.cos(ang)), float(np.sin(ang)))
    return make_push_action(start, direction, config, bounds)


def _guided_random_push(u: TopDownGrid, heights: TopDownGrid, rng, config,
                        bounds, prev_start) -> tuple[PushAction, bool]:
    """Start at the most valid footprint inside the focus window; heading uniform.

    Start selection ignores informativeness (validity only); the distance
    rules are the planner's, so a repeat of the previous start doubles the
    travel.
    """
    fh, fw = config.footprint_cells(u.grid)
    win = focus_window(u, config)
    v = validity_map(heights, config)
    sub = v[win.i:win.i + win.rows - fh + 1, win.j:win.j + win.cols - fw + 1]
    di, dj = _argmax_2d(sub)
    start = (u.grid.origin_x + (win.i + di + fh / 2.0) * u.grid.cell_size,
             u.grid.origin_y + (win.j + dj + fw / 2.0) * u.grid.cell_size)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    direction = (float(np.cos(ang)), float(np.sin(ang)))
    doubled = (prev_start is not None
               and np.hypot(start[0] - prev_start[0],
                            start[1] - prev_start[1]) < config.repeat_radius)
    distance = 2.0 * config.push_distance if doubled else None
    return make_push_action(start, direction, config, bounds,
                            distance=distance), doubled


def run_episode(
    settings: EpisodeSettings,
    n_objects: int,
    policy: str,
    seed: int,
    budget: int | None = None,
    views: int | None = None,
    artifact_dir=None,
) -> EpisodeLog:
    """Run one full explore-and-count episode.

    ``budget`` caps the number of pushes for every policy (fixed-budget
    policies spend it exactly; ``smart`` may stop earlier on its threshold).
    ``views`` overrides the camera count for ablations.  When
    ``artifact_dir`` is given, per-step uncertainty/height heatmaps are
    written there as 8-bit PNGs.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    view_set = settings.view_set(views)
    grid = settings.grid()
    bounds = settings.bounds()
    noise = settings.noise()
    pcfg = settings.planner()
    ucfg = UncertaintyConfig(settings.disagreement_weight)
    scene = generate_random_scene(
        n_objects, seed=seed,
        bounds=bounds,
        drop_extent=(settings.drop_extent, settings.drop_extent),
        stack_threshold=settings.stack_threshold)
    gt = scene.class_counts()
    planner_rng = np.random.default_rng([seed, 3])
    random_rng = np.random.default_rng([seed, 4])
    if policy == "none":
        push_cap = 0
    else:
        push_cap = pcfg.max_steps if budget is None else min(budget,
                                                             pcfg.max_steps)
    steps: list[StepRecord] = []
    motions = 0
    prev_start: tuple[float, float] | None = None
    out = Path(artifact_dir) if artifact_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    while True:
        depths = [render_depth(scene, cam) for cam in view_set]
        segs = [segment_view(scene, cam, noise, seed=[seed, 1, k],
                             depth=depths[k], view_index=k)
                for k, cam in enumerate(view_set)]
        rec = recognize(depths, segs, settings.merge_threshold,
                        settings.voxel_size)
        u_seg = entropy_map(segs, depths, grid)
        if len(view_set) > 1:
            u_obj = disagreement_map(segs, depths, grid)
        else:
            u_obj = TopDownGrid(grid, np.zeros((grid.rows, grid.cols)))
        u = combined_map(u_seg, u_obj, ucfg)
        heights = height_map(depths[0], grid)
        m = metrics(count_matches(rec.counts, gt))
        if out is not None:
            tag = f"step{len(steps):02d}"
            grid_to_png(u_seg, out / f"{tag}_useg.png")
            grid_to_png(u_obj, out / f"{tag}_uobj.png")
            grid_to_png(u, out / f"{tag}_u.png")
            grid_to_png(heights, out / f"{tag}_height.png")
        done = motions >= push_cap
        if not done and policy == "smart":
            done = u.max < pcfg.termination_threshold
        action = None
        random_dir = False
        doubled = False
        if not done:
            if policy == "random":
                action = _random_push(heights, random_rng, pcfg, bounds)
                random_dir = True
            elif policy == "guided_random":
                action, doubled = _guided_random_push(u, heights, random_rng,
                                                   pcfg, bounds, prev_start)
                random_dir = True
                prev_start = action.start
            else:
                plan: PushPlan = plan_push(u, heights, pcfg, planner_rng,
                                           bounds, prev_start)
                action = plan.action
                random_dir = plan.random_direction
                doubled = plan.doubled
                prev_start = action.start
        steps.append(StepRecord(len(steps), _counts_tuple(rec.counts), m,
                                u.max, action, random_dir, doubled))
        if action is None:
            break
        scene = apply_push(scene, action, seed=[seed, 2, motions],
                           support_threshold=settings.stack_threshold,
                           jitter_deg=settings.jitter_deg)
        motions += 1
    return EpisodeLog(policy, n_objects, seed, len(view_set),
                      _counts_tuple(gt), tuple(steps))


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeRow:
    """One episode inside a benchmark (its place in the sweep plus its log)."""

    policy: str
    density: int
    scene: int
    seed: int
    log: EpisodeLog


@dataclass(frozen=True)
class SummaryRow:
    """Aggregate over all scenes of one (policy, density) pair."""

    policy: str
    density: int
    episodes: int
    mean_precision: float
    mean_recall: float
    mean_f1: float
    mean_motions: float


@dataclass(frozen=True)
class BenchmarkReport:
    settings: BenchSettings
    rows: tuple[EpisodeRow, ...]


def _episode_task(args) -> EpisodeLog:
    settings, n_objects, policy, seed, budget = args
    return run_episode(settings, n_objects, policy, seed, budget)


def run_benchmark(bench: BenchSettings, jobs: int | None = None) -> BenchmarkReport:
    """Run the full sweep: densities x scenes x policies, in a fixed order.

    Every policy sees the same seeded scenes (paired comparison).  ``jobs``
    overrides ``bench.jobs``; episodes are independent, and the report order
    never depends on scheduling.
    """
    jobs = bench.jobs if jobs is None else jobs
    specs = []
    for density in bench.densities:
        for scene_index in range(bench.scenes):
            for policy in bench.policies:
                specs.append((density, scene_index, policy,
                              bench.base_seed + scene_index))
    tasks = [(bench.episode, d, p, s, bench.budget) for d, _, p, s in specs]
    if jobs <= 1:
        logs = [_episode_task(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=jobs) as pool:
            logs = pool.map(_episode_task, tasks, chunksize=1)
    rows = tuple(EpisodeRow(p, d, i, s, log)
                 for (d, i, p, s), log in zip(specs, logs))
    return BenchmarkReport(bench, rows)


def summarize(report: BenchmarkReport) -> list[SummaryRow]:
    """Per-(policy, density) means, in benchmark enumeration order."""
    out = []
    for density in report.settings.densities:
        for policy in report.settings.policies:
            logs = [r.log for r in report.rows
                    if r.policy == policy and r.density == density]
            if not logs:
                continue
            out.append(SummaryRow(
                policy, density, len(logs),
                float(np.mean([lg.final.metrics.precision for lg in logs])),
                float(np.mean([lg.final.metrics.recall for lg in logs])),
                float(np.mean([lg.final.metrics.f1 for lg in logs])),
                float(np.mean([lg.motions for lg in logs])),
            ))
    return out


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------


def episodes_csv(report: BenchmarkReport) -> str:
    out = io.StringIO()
    out.write("policy,density,scene,seed,steps,motions,tp,fp,fn,"
              "precision,recall,f1,final_max_u\n")
    for r in report.rows:
        m = r.log.final.metrics
        out.write(
            f"{r.policy},{r.density},{r.scene},{r.seed},{len(r.log.steps)},"
            f"{r.log.motions},{m.tp},{m.fp},{m.fn},"
            f"{m.precision:.6f},{m.recall:.6f},{m.f1:.6f},"
            f"{r.log.final.max_uncertainty:.6f}\n")
    return out.getvalue()


def summary_csv(report: BenchmarkReport) -> str:
    out = io.StringIO()
    out.write("policy,density,episodes,mean_precision,mean_recall,mean_f1,"
              "mean_motions\n")
    for s in summarize(report):
        out.write(f"{s.policy},{s.density},{s.episodes},"
                  f"{s.mean_precision:.6f},{s.mean_recall:.6f},"
                  f"{s.mean_f1:.6f},{s.mean_motions:.6f}\n")
    return out.getvalue()


def episode_log_to_text(log: EpisodeLog) -> str:
    """Structured text form of one episode (stable across runs)."""
    out = io.StringIO()
    out.write(f"episode policy={log.policy} objects={log.n_objects} "
              f"seed={log.seed} views={log.views} motions={log.motions}\n")
    out.write("gt " + " ".join(f"{c}:{n}" for c, n in log.gt_counts) + "\n")
    for s in log.steps:
        out.write(f"step {s.step} max_u={s.max_uncertainty:.6f}\n")
        out.write("counts " + " ".join(f"{c}:{n}" for c, n in s.counts)
                  + "\n")
        m = s.metrics
        out.write(f"metrics tp={m.tp} fp={m.fp} fn={m.fn} "
                  f"p={m.precision:.6f} r={m.recall:.6f} f1={m.f1:.6f}"
                  f"{' degenerate' if m.degenerate else ''}\n")
        if s.push is not None:
            p = s.push
            out.write(
                f"push start=({p.start[0]:.6f},{p.start[1]:.6f}) "
                f"dir=({p.direction[0]:.6f},{p.direction[1]:.6f}) "
                f"dist={p.distance:.6f}"
                f"{' random-dir' if s.random_direction else ''}"
                f"{' doubled' if s.doubled else ''}\n")
    return out.getvalue()


def render_report_figures(report: BenchmarkReport, outdir) -> list[Path]:
    """Bar charts of mean F1 and mean motions per policy, one group per density."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    rows = summarize(report)
    policies = list(report.settings.policies)
    densities = list(report.settings.densities)
    paths = []
    for field, fname, label in (("mean_f1", "f1.png", "mean F1"),
                                ("mean_motions", "motions.png",
                                 "mean motions")):
        fig, ax = plt.subplots(figsize=(6.0, 3.5))
        width = 0.8 / max(1, len(densities))
        xs = np.arange(len(policies))
        for k, density in enumerate(densities):
            vals = [getattr(s, field) for s in rows
                    if s.density == density]
            ax.bar(xs + k * width, vals, width=width,
                   label=f"{density} objects")
        ax.set_xticks(xs + width * (len(densities) - 1) / 2.0)
        ax.set_xticklabels(policies)
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = outdir / fname
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


def write_report(report: BenchmarkReport, outdir, figures: bool = True) -> list[Path]:
    """Write CSVs, the config echo, concatenated episode logs and figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in (("episodes.csv", episodes_csv(report)),
                       ("summary.csv", summary_csv(report)),
                       ("config.txt", config_to_text(report.settings)),
                       ("episodes.txt", "".join(
                           episode_log_to_text(r.log) for r in report.rows))):
        path = outdir / name
        path.write_text(text)
        paths.append(path)
    if figures:
        paths.extend(render_report_figures(report, outdir))
    return paths
