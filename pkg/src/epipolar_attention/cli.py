"""Command-line entry point.

Exit codes: 0 ok, 2 parse error, 3 degenerate trajectory, 4 dimension
mismatch, 5 check failure. Reports are printed as ``key=value`` lines.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .attention import AttentionMap, load_attention
from .constraint import epipolar_loss, epipolar_loss_grad, pair_breakdown, suppression_mask
from .diagnostics import demo_train, run_gradcheck
from .epipolar import EpipolarMaskVolume, degenerate_pairs, mask_volume
from .errors import DimensionMismatch, FormatError, NonRotation, ParseError
from .objective import LAMBDA_EPIPOLAR, LAMBDA_VGG
from .trajectory_io import read_trajectory, to_latent

EXIT_OK, EXIT_PARSE, EXIT_DEGENERATE, EXIT_DIMENSION, EXIT_CHECK = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@dataclass
class CliConfig:
    threshold: float = 1.0
    percentile: float = 30.0
    lambda_vgg: float = LAMBDA_VGG
    lambda_epipolar: float = LAMBDA_EPIPOLAR
    spatial_factor: int = 8
    temporal_factor: int = 4
    seed: int = 0

    def validate(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not 0 < self.percentile < 100:
            raise ValueError("percentile must lie in (0, 100)")
        if self.lambda_vgg < 0 or self.lambda_epipolar < 0:
            raise ValueError("loss weights must be non-negative")
        if self.spatial_factor < 1 or self.temporal_factor < 1:
            raise ValueError("compression factors must be >= 1")
        return self

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data).validate()

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def parse_dims(text):
    try:
        parts = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like FxHxW, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"dims must be three positive integers FxHxW, got {text!r}")
    return parts


def _int_tuple(text):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_token_file(path):
    """Whitespace-separated token indices; '#' starts a comment."""
    tokens = []
    for lineno, line in enumerate(Path(path).read_text().split("\n"), start=1):
        line = line.split("#", 1)[0]
        for tok in line.split():
            try:
                tokens.append(int(tok))
            except ValueError:
                raise ParseError(f"bad token index {tok!r}", lineno) from None
    return np.array(sorted(set(tokens)), dtype=np.int64)


def write_token_file(path, tokens):
    Path(path).write_text("".join(f"{int(t)}\n" for t in tokens))


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    H, W = image.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + image.tobytes())


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _emit(out, **kv):
    for k, v in kv.items():
        print(f"{k}={_fmt(v)}", file=out)


def _latent_poses(args, config):
    try:
        traj = read_trajectory(args.trajectory)
    except (ParseError, NonRotation) as exc:
        raise CliError(f"error: {exc}", EXIT_PARSE) from None
    except OSError as exc:
        raise CliError(f"error: {exc}", EXIT_PARSE) from None
    try:
        return to_latent(traj, args.dims, config.spatial_factor, config.temporal_factor)
    except ValueError as exc:
        raise CliError(f"error: {exc}", EXIT_DIMENSION) from None


def cmd_mask(args, config, out):
    poses = _latent_poses(args, config)
    F, H, W = args.dims
    if F < 2:
        raise CliError("error: a mask volume needs at least two frames", EXIT_DIMENSION)
    degenerate = degenerate_pairs(poses)
    if len(degenerate) == F * (F - 1):
        raise CliError("warning: all pairs degenerate; no epipolar constraint possible",
                       EXIT_DEGENERATE)
    vol = mask_volume(poses, (H, W), config.threshold)
    vol.save(args.out)
    frac = vol.pair_popcount_fraction()
    _emit(out, dims=f"{F}x{H}x{W}", threshold=config.threshold, bytes=len(vol.to_bytes()),
          degenerate_pairs=len(degenerate))
    for i in range(F):
        for j in range(F):
            _emit(out, **{f"pair_{i}_{j}": float(frac[i, j])})
    return EXIT_OK


def cmd_loss(args, config, out):
    try:
        a = load_attention(args.attention)
        vol = EpipolarMaskVolume.load(args.mask)
        bg = read_token_file(args.background)
    except (FormatError, ParseError, OSError) as exc:
        raise CliError(f"error: {exc}", EXIT_PARSE) from None
    try:
        A = AttentionMap(a, vol.dims)
        omega = suppression_mask(A, vol, bg, config.percentile, mode=args.mode)
    except DimensionMismatch as exc:
        raise CliError(f"error: {exc}", EXIT_DIMENSION) from None
    report = epipolar_loss(A, omega)
    pairs = pair_breakdown(A, omega, vol.dims)
    _emit(out, loss=report.loss, suppressed_count=report.suppressed_count,
          active_queries=len(omega.active_queries), percentile=config.percentile)
    F = vol.dims[0]
    for i in range(F):
        for j in range(F):
            _emit(out, **{f"pair_{i}_{j}": float(pairs[i, j])})
    return EXIT_OK


def _corrupted_grad(logits, omega):
    # negative control for the gradcheck command
    return 1.01 * epipolar_loss_grad(logits, omega) + 1e-3


def cmd_gradcheck(args, config, out):
    grad_fn = _corrupted_grad if args.corrupt_gradient else None
    kwargs = {"grad_fn": grad_fn} if grad_fn else {}
    result = run_gradcheck(config.seed, args.sizes, instances=args.instances, **kwargs)
    for seed, L, err in result.errors:
        _emit(out, instance_seed=seed, tokens=L, rel_error=err)
    _emit(out, max_rel_error=result.max_rel_error, result="pass" if result.passed else "fail")
    if not result.passed:
        _emit(out, offending_seed=result.worst_seed)
        return EXIT_CHECK
    return EXIT_OK


def cmd_render(args, config, out):
    try:
        vol = EpipolarMaskVolume.load(args.mask)
    except (FormatError, OSError) as exc:
        raise CliError(f"error: {exc}", EXIT_PARSE) from None
    if len(args.query) != 3:
        raise CliError("error: --query takes i,u,v", EXIT_PARSE)
    i, u, v = args.query
    try:
        grid = vol.slice(i, u, v, args.key_frame)
    except IndexError as exc:
        raise CliError(f"error: {exc}", EXIT_DIMENSION) from None
    if args.upscale < 1:
        raise CliError("error: upscale must be >= 1", EXIT_PARSE)
    image = np.where(grid, 255, 0).astype(np.uint8)
    image = np.repeat(np.repeat(image, args.upscale, axis=0), args.upscale, axis=1)
    write_pgm(args.out, image)
    _emit(out, width=image.shape[1], height=image.shape[0], white_pixels=int(grid.sum()))
    return EXIT_OK


def cmd_demo_train(args, config, out):
    poses = _latent_poses(args, config)
    F, H, W = args.dims
    if F < 2 or len(degenerate_pairs(poses)) == F * (F - 1):
        raise CliError("error: demo needs a non-degenerate trajectory", EXIT_DEGENERATE)
    bg = None
    if args.background is not None:
        try:
            bg = read_token_file(args.background)
        except (ParseError, OSError) as exc:
            raise CliError(f"error: {exc}", EXIT_PARSE) from None
        if bg.size and bg.max() >= F * H * W:
            raise CliError("error: background token outside the scene", EXIT_DIMENSION)
    log, attn = demo_train(poses, args.dims, args.steps, args.lr, config.seed,
                           config.threshold, config.percentile, bg)
    for step, loss, mass, count in log.steps:
        _emit(out, step=step, loss=loss, out_mass=mass, suppressed=count)
    initial = log.initial_mass
    ratio = log.final_mass / initial if initial > 0 else 1.0
    _emit(out, initial_out_mass=initial, final_out_mass=log.final_mass, mass_ratio=ratio,
          final_loss=log.losses[-1], nonincreasing_fraction=log.nonincreasing_fraction(),
          final_max_attention=float(attn.max()), final_min_attention=float(attn.min()))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threshold", type=float, help="mask band half-width, latent pixels")
    common.add_argument("--percentile", type=float, help="suppression percentile per query row")

    parser = argparse.ArgumentParser(
        prog="epipolar-attention",
        description="Epipolar attention masks, suppression loss and checks.",
        epilog="exit codes: 0 ok, 2 parse, 3 degenerate, 4 dimension, 5 check failure")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", parents=[common], help="build an EPMV1 mask volume")
    p.add_argument("trajectory", type=Path)
    p.add_argument("--dims", type=parse_dims, required=True, help="latent FxHxW")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("loss", parents=[common], help="evaluate the epipolar loss")
    p.add_argument("attention", type=Path, help="ATTN1 file")
    p.add_argument("mask", type=Path, help="EPMV1 file")
    p.add_argument("background", type=Path, help="text file of background token indices")
    p.add_argument("--mode", choices=("row", "block"), default="row")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", parents=[common], help="check the analytic loss gradient")
    p.add_argument("--sizes", type=_int_tuple, default=(1, 5, 16, 33, 48),
                   help="comma-separated token counts cycled over instances")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render", parents=[common], help="render one mask slice as a P5 graymap")
    p.add_argument("mask", type=Path)
    p.add_argument("--query", type=_int_tuple, required=True, help="i,u,v")
    p.add_argument("--key-frame", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--upscale", type=int, default=1)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("demo-train", parents=[common], help="toy descent on the epipolar loss")
    p.add_argument("trajectory", type=Path)
    p.add_argument("--dims", type=parse_dims, default=(4, 12, 9))
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--background", type=Path, help="background token file (default: all tokens)")
    p.set_defaults(func=cmd_demo_train)
    return parser


def resolve_config(args):
    config = CliConfig()
    if args.config is not None:
        try:
            config = CliConfig.from_json(args.config.read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise CliError(f"error: bad config: {exc}", EXIT_PARSE) from None
    for name in ("seed", "threshold", "percentile"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    try:
        return config.validate()
    except ValueError as exc:
        raise CliError(f"error: {exc}", EXIT_PARSE) from None


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return args.func(args, config, out)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
