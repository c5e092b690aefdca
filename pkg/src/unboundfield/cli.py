"""Command line: fit, render, eval, check and plot-histogram.

Exit codes: 0 success, 1 a check suite or training step failed, 2 bad
configuration or IO.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from unboundfield.checks import SUITES, run_checks
from unboundfield.core.camera import generate_ray, read_poses, write_poses
from unboundfield.core.histograms import EVAL_BACKGROUND, format_histogram
from unboundfield.scene.dataset import Dataset, make_dataset
from unboundfield.scene.io import ImageBuffer, read_scene, write_depth, write_ppm, write_scene
from unboundfield.scene.oracle import toy_scene
from unboundfield.trainer.config import PRESETS, TrainConfig
from unboundfield.trainer.pipeline import render_ray
from unboundfield.trainer.train import (
    MetricsLog,
    NonFiniteLossError,
    TrainState,
    constant_color_baseline,
    evaluate,
    fit,
    init_state,
    load_state,
    pool_from_images,
    render_image,
    save_state,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.npz"
DATASET_NAME = "dataset.npz"


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(args: argparse.Namespace) -> TrainConfig:
    config = PRESETS[args.preset]
    if args.config:
        config = TrainConfig.from_file(args.config, base=config)
    return config.with_overrides(_overrides(args.set or []))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)

    if args.resume:
        state = load_state(run / CHECKPOINT_NAME)
        config = state.config
        dataset = Dataset.load(run / DATASET_NAME)
    else:
        config = load_config(args)
        scene = read_scene(args.scene) if args.scene else toy_scene()
        write_scene(run / "scene.txt", scene)
        dataset = make_dataset(
            scene,
            args.cameras,
            args.image_size,
            np.random.default_rng(config.seed),
            near=config.near,
            far=config.far,
            quadrature_n=args.quadrature,
        )
        dataset.save(run / DATASET_NAME)
        state = init_state(config)
    (run / "config.txt").write_text(config.to_text())
    write_poses(run / "poses_train.txt", dataset.poses[dataset.train_indices])
    write_poses(run / "poses_test.txt", dataset.poses[dataset.test_indices])

    pool = pool_from_images(
        dataset.premultiplied, dataset.alpha, dataset.poses, dataset.train_indices, config
    )
    test_images = dataset.images(EVAL_BACKGROUND)

    def evaluator(s: TrainState) -> dict:
        metrics = evaluate(
            s.prop, s.nerf, s.config, dataset.poses, dataset.test_indices, test_images, s.step
        )
        return {f"test_{k}": v for k, v in metrics.items()}

    try:
        fit(
            state,
            pool,
            steps=args.steps,
            metrics=MetricsLog(run / "metrics.jsonl"),
            evaluator=evaluator,
            progress=not args.no_progress,
        )
    except NonFiniteLossError as err:
        (run / "diagnostic.json").write_text(json.dumps(err.diagnostic, indent=2, sort_keys=True))
        logger.error("%s; diagnostic written to %s", err, run / "diagnostic.json")
        save_state(run / "failed_checkpoint.npz", state)
        return 1
    save_state(run / CHECKPOINT_NAME, state)
    logger.info("checkpoint written to %s", run / CHECKPOINT_NAME)
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    state = load_state(args.checkpoint)
    poses = read_poses(args.poses)
    cameras = args.camera if args.camera else list(range(len(poses)))
    out = Path(args.out_dir)
    for i in cameras:
        rgb, depth = render_image(state.prop, state.nerf, state.config, poses, i, state.step)
        write_ppm(out / f"rgb_{i:03d}.ppm", ImageBuffer(rgb))
        write_depth(out / f"depth_{i:03d}.txt", depth)
        logger.info("rendered camera %d", i)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run = Path(args.run_dir)
    state = load_state(args.checkpoint or run / CHECKPOINT_NAME)
    dataset = Dataset.load(run / DATASET_NAME)
    images = dataset.images(EVAL_BACKGROUND)
    metrics = evaluate(
        state.prop, state.nerf, state.config, dataset.poses, dataset.test_indices, images, state.step
    )
    baseline = constant_color_baseline(
        images[dataset.train_indices], images[dataset.test_indices]
    )
    record = {"step": state.step, **metrics, **{f"baseline_{k}": v for k, v in baseline.items()}}
    print(json.dumps(record, sort_keys=True))
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(args.suite, seed=args.seed)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name}: {status} ({result.seconds:.1f}s)")
        for failure in result.failures:
            print(f"  {failure}")
    return 0 if all(r.passed for r in results) else 1


def cmd_plot_histogram(args: argparse.Namespace) -> int:
    poses = read_poses(args.poses)
    snapshots = []
    for path in args.checkpoint:
        state = load_state(path)
        ray = generate_ray(
            poses,
            tuple(args.pixel),
            args.camera,
            near=state.config.near,
            far_ratio=state.config.far_ratio,
        )
        _, _, hists = render_ray(ray, state.prop, state.nerf, state.config, step=state.step)
        snapshots.append((f"step {state.step}", hists))

    labels = [f"proposal_{k}" for k in range(len(snapshots[-1][1]) - 1)] + ["nerf"]
    if args.format == "csv":
        rows = ["snapshot,stage,bin,s0,s1,weight"]
        for caption, hists in snapshots:
            for label, h in zip(labels, hists):
                for b, w in enumerate(h.weights):
                    rows.append(f"{caption},{label},{b},{h.edges[b]!r},{h.edges[b + 1]!r},{w!r}")
        text = "\n".join(rows) + "\n"
    else:
        text = "".join(
            format_histogram(h, f"{caption.replace(' ', '_')}/{label}")
            for caption, hists in snapshots
            for label, h in zip(labels, hists)
        )
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)

    if args.animate:
        from unboundfield.ui.histograms import render_trace

        render_trace(snapshots, args.animate)
        logger.info("animation written to %s", args.animate)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unboundfield", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train on a synthetic scene")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key")
    p.add_argument("--scene", help="scene file; default is the built-in toy scene")
    p.add_argument("--cameras", type=int, default=8)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--quadrature", type=int, default=64, help="oracle pieces per segment")
    p.add_argument("--steps", type=int, help="stop after this many steps")
    p.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render RGB and depth images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--camera", type=int, action="append", help="camera index (repeatable)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="held-out PSNR and MSE of a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--checkpoint", help="defaults to the run's checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run the gradient and invariant suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot-histogram", help="dump one ray's stage histograms")
    p.add_argument("--checkpoint", required=True, action="append", help="repeatable")
    p.add_argument("--poses", required=True)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--pixel", type=int, nargs=2, required=True, metavar=("X", "Y"))
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out", help="output file; default stdout")
    p.add_argument("--animate", metavar="VIDEO", help="also render a manim animation")
    p.set_defaults(func=cmd_plot_histogram)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as err:
        logger.error("%s", err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
