"""Command-line interface.

Three subcommands:

* ``run`` — one episode (scene seed, policy, optional push budget), printing
  per-step counts and writing an episode log plus optional heatmaps;
* ``bench`` — the full benchmark sweep from a flat key=value config file,
  writing CSVs, logs and summary figures;
* ``render`` — diagnostic images for one seeded scene: per-view depth and
  instance maps, uncertainty heatmaps and a top-down vector plot.

Every knob can be overridden on the command line with ``--set key=value``
(same keys as the config file).  Exit code 0 on success, 1 on config or I/O
errors.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import BenchSettings, ConfigError, config_to_text, parse_config
from .harness import episode_log_to_text, run_benchmark, run_episode, \
    summarize, summary_csv, write_report
from .perception import segment_view
from .scene import generate_random_scene, height_map, render_depth, \
    scene_to_text
from .uncertainty import UncertaintyConfig, combined_map, disagreement_map, \
    entropy_map, grid_to_png
from .geometry import TopDownGrid


def _settings_from_args(args) -> BenchSettings:
    """Assemble settings: config file (if any) plus --set overrides."""
    text = ""
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
    overrides = getattr(args, "set", None) or []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        text += "\n" + item
    return parse_config(text)


def _cmd_run(args) -> int:
    bench = _settings_from_args(args)
    episode = bench.episode
    out = Path(args.out) if args.out else None
    heat_dir = out / "heatmaps" if (out and args.heatmaps) else None
    log = run_episode(episode, args.objects, args.policy, args.seed,
                      budget=args.budget, views=args.views,
                      artifact_dir=heat_dir)
    text = episode_log_to_text(log)
    sys.stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "episode.txt").write_text(text)
    return 0


def _cmd_bench(args) -> int:
    bench = _settings_from_args(args)
    if args.jobs is not None:
        jobs = args.jobs
    else:
        jobs = bench.jobs
    t0 = time.perf_counter()
    report = run_benchmark(bench, jobs=jobs)
    elapsed = time.perf_counter() - t0
    sys.stdout.write(summary_csv(report))
    sys.stdout.write(f"# wall time {elapsed:.1f} s, jobs={jobs}\n")
    if args.out:
        paths = write_report(report, args.out)
        for p in paths:
            sys.stdout.write(f"# wrote {p}\n")
    return 0


def _normalized_png(values: np.ndarray, path: Path) -> None:
    from PIL import Image
    finite = values[np.isfinite(values)]
    top = finite.max() if finite.size else 1.0
    lo = finite.min() if finite.size else 0.0
    span = (top - lo) if top > lo else 1.0
    img = np.zeros(values.shape, dtype=np.uint8)
    ok = np.isfinite(values)
    img[ok] = np.round((values[ok] - lo) / span * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path, format="PNG")


def _cmd_render(args) -> int:
    bench = _settings_from_args(args)
    episode = bench.episode
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_random_scene(
        args.objects, seed=args.seed, bounds=episode.bounds(),
        drop_extent=(episode.drop_extent, episode.drop_extent),
        stack_threshold=episode.stack_threshold)
    (out / "scene.txt").write_text(scene_to_text(scene))
    view_set = episode.view_set(args.views)
    grid = episode.grid()
    noise = episode.noise()
    depths = [render_depth(scene, cam) for cam in view_set]
    segs = [segment_view(scene, cam, noise, seed=[args.seed, 1, k],
                         depth=depths[k], view_index=k)
            for k, cam in enumerate(view_set)]
    for k, depth in enumerate(depths):
        _normalized_png(depth.depth, out / f"view{k}_depth.png")
        inst = depth.instance.astype(float)
        _normalized_png(inst - inst.min(), out / f"view{k}_instance.png")
    u_seg = entropy_map(segs, depths, grid)
    if len(view_set) > 1:
        u_obj = disagreement_map(segs, depths, grid)
    else:
        u_obj = TopDownGrid(grid, np.zeros((grid.rows, grid.cols)))
    u = combined_map(u_seg, u_obj,
                     UncertaintyConfig(episode.disagreement_weight))
    grid_to_png(u_seg, out / "useg.png")
    grid_to_png(u_obj, out / "uobj.png")
    grid_to_png(u, out / "u.png")
    grid_to_png(height_map(depths[0], grid), out / "height.png")
    _topdown_figure(scene, out / "topdown.png")
    sys.stdout.write(f"# wrote diagnostics for seed {args.seed} to {out}\n")
    return 0


def _topdown_figure(scene, path: Path) -> None:
    """Vector plot of footprints, labelled by class, shaded by height."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.5, 5.0))
    x0, x1, y0, y1 = scene.bounds
    ax.set_xlim(y0 - 0.05, y1 + 0.05)
    ax.set_ylim(x0 - 0.05, x1 + 0.05)
    top = max((o.top for o in scene.objects), default=1.0)
    for k, obj in enumerate(scene.objects):
        xs, ys = obj.footprint().exterior.xy
        shade = 0.25 + 0.7 * (obj.top / top if top > 0 else 0.0)
        ax.fill(ys, xs, alpha=min(shade, 1.0), color=obj.spec.color,
                edgecolor="black", linewidth=0.6)
        ax.annotate(f"{k}:{obj.spec.class_id}", (obj.y, obj.x),
                    ha="center", va="center", fontsize=7)
    ax.set_xlabel("world y (m)")
    ax.set_ylabel("world x (m)")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clutterprobe",
        description="Count objects in synthetic tabletop clutter by "
                    "uncertainty-driven pushing.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single episode")
    run.add_argument("--seed", type=int, default=0, help="scene seed")
    run.add_argument("--objects", type=int, default=10)
    run.add_argument("--policy", default="smart",
                     choices=("none", "random", "guided_random", "smart"))
    run.add_argument("--budget", type=int, default=None,
                     help="max pushes (default: policy max-step cap)")
    run.add_argument("--views", type=int, default=None,
                     help="override the camera count")
    run.add_argument("--out", default=None, help="directory for episode.txt")
    run.add_argument("--heatmaps", action="store_true",
                     help="write per-step heatmap PNGs under --out")
    run.add_argument("--config", default=None, help="config file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key")
    run.set_defaults(func=_cmd_run)

    bench = sub.add_parser("bench", help="run the benchmark sweep")
    bench.add_argument("--config", default=None, help="config file")
    bench.add_argument("--out", default=None, help="report directory")
    bench.add_argument("--jobs", type=int, default=None,
                       help="parallel workers (default: config)")
    bench.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
    bench.set_defaults(func=_cmd_bench)

    render = sub.add_parser("render", help="write diagnostic images")
    render.add_argument("--seed", type=int, default=0)
    render.add_argument("--objects", type=int, default=10)
    render.add_argument("--views", type=int, default=None)
    render.add_argument("--out", required=True)
    render.add_argument("--config", default=None, help="config file")
    render.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key")
    render.set_defaults(func=_cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
