"""Command-line entry points: train, sample, eval, gradcheck.

Exit codes: 0 success, 1 runtime failure (bad files, invalid values,
aborted training), 2 usage errors.  Every command is deterministic
given its --seed.
"""

import argparse
import os
import re
import sys

import numpy as np

from . import media
from . import quality
from .config import load_config
from .errors import ConfigurationError, FormatError, InvariantError
from .gradcheck import run_op_suite, run_pipeline_suite
from .train import TrainConfig, load_state, train

_IMAGE_STREAM = 0x494D47


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="vimagine",
        description="Turn one image into short, diverse videos.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run adversarial training")
    p.add_argument("--dataset", choices=["mnist", "shapes"])
    p.add_argument("--transform", choices=["affine", "conv"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iters", type=int, help="generator steps to run")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--resolution", type=int, choices=[64, 128])
    p.add_argument("--mnist-idx", help="IDX image file for real digits")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample clips from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", help="input image; defaults to a dataset draw")
    p.add_argument("--num", type=int, default=3, help="clips to sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score sampled clips against the input")
    p.add_argument("--input", required=True, help="the source image file")
    p.add_argument("--clips", required=True,
                   help="directory of clip<i>_f<j>.png frames")
    p.add_argument("--model", help="regression scorer model file")
    p.add_argument("--report", help="report path (default <clips>/report.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--suite", choices=["ops", "pipeline"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", help=argparse.SUPPRESS)  # failure-injection hook
    p.set_defaults(func=cmd_gradcheck)
    return parser


def cmd_train(args):
    overrides = {
        "dataset": args.dataset,
        "transform": args.transform,
        "total_iterations": args.iters,
        "seed": args.seed,
        "resolution": args.resolution,
        "mnist_idx": args.mnist_idx,
    }
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        missing = [flag for flag, value in
                   (("--dataset", args.dataset), ("--transform", args.transform),
                    ("--iters", args.iters), ("--seed", args.seed))
                   if value is None]
        if missing:
            print(f"usage error: {' '.join(missing)} required without --config",
                  file=sys.stderr)
            return 2
        cfg = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    state, _ = train(cfg, out_dir=args.out)
    print(f"trained {state.iteration} iterations; artifacts in {args.out}")
    return 0


def cmd_sample(args):
    state = load_state(args.checkpoint)
    spec = state.imaginer.spec
    if args.image:
        image = media.load_image(args.image)
        if image.shape[2] != spec.in_channels:
            raise ConfigurationError(
                f"model expects {spec.in_channels}-channel images, "
                f"{args.image} has {image.shape[2]}")
        if image.shape[:2] != (spec.resolution, spec.resolution):
            raise ConfigurationError(
                f"model expects {spec.resolution}x{spec.resolution} images, "
                f"{args.image} is {image.shape[0]}x{image.shape[1]}")
    else:
        dataset = state.config.make_dataset()
        rng = np.random.default_rng(
            np.random.SeedSequence([args.seed, _IMAGE_STREAM]))
        image = dataset.clip(int(rng.integers(len(dataset))))[0]
    clips = state.imaginer.sample_clips(image, m=args.num, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, clip in enumerate(clips):
        for j, frame in enumerate(clip):
            media.save_png(os.path.join(args.out, f"clip{i}_f{j}.png"), frame)
        media.save_gif(os.path.join(args.out, f"clip{i}.gif"), list(clip))
        for j in range(1, clip.shape[0]):
            diff = media.difference_image(clip[j], clip[0])
            media.save_png(os.path.join(args.out, f"clip{i}_d{j}.png"), diff)
    print(f"wrote {len(clips)} clips to {args.out}")
    return 0


_FRAME_RE = re.compile(r"^clip(\d+)_f(\d+)\.png$")


def _load_clip_dir(path):
    """Read clip<i>_f<j>.png files back to a list of [F,H,W,C] arrays."""
    found = {}
    for name in os.listdir(path):
        match = _FRAME_RE.match(name)
        if match:
            clip_i, frame_j = int(match.group(1)), int(match.group(2))
            found.setdefault(clip_i, {})[frame_j] = os.path.join(path, name)
    if not found:
        raise ConfigurationError(
            f"no clip<i>_f<j>.png frames found in {path}")
    clips = []
    for clip_i in sorted(found):
        frames = found[clip_i]
        expected = list(range(len(frames)))
        if sorted(frames) != expected:
            raise ConfigurationError(
                f"clip {clip_i} has frame indices {sorted(frames)}, "
                f"expected {expected}")
        clips.append(np.stack([media.load_image(frames[j]) for j in expected]))
    return clips


def cmd_eval(args):
    if not args.model:
        raise ConfigurationError(
            "no scorer configured: pass --model with a regression model file")
    model = quality.RegressionModel.load(args.model)
    image = media.load_image(args.input)
    clips = _load_clip_dir(args.clips)
    report = quality.evaluate(image, clips, model)
    print(report.summary())
    report_path = args.report or os.path.join(args.clips, "report.csv")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(f"wrote {report_path}")
    return 0


def cmd_gradcheck(args):
    if args.suite == "ops":
        reports = run_op_suite(seed=args.seed, perturb=args.perturb)
    else:
        reports = run_pipeline_suite(seed=args.seed, perturb=args.perturb)
    width = max(len(r.name) for r in reports)
    print(f"{'op'.ljust(width)}  {'max rel err':>12}  {'tolerance':>10}  result")
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {r.max_rel_err:>12.3e}  "
              f"{r.tolerance:>10.0e}  {status}")
    failing = [r.name for r in reports if not r.passed]
    if failing:
        print(f"failing: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigurationError, FormatError, InvariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
