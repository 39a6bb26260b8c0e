"""Command line: ``splatproj transfer | selfcheck | bench``.

Exit codes: 0 success, 1 pipeline failure or failed threshold, 2 usage error.
Diagnostics go to stderr; the machine-readable ``key=value`` summary to stdout.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np
from PIL import Image

from .errors import PipelineError
from .geometry import load_obj
from .metrics import bench, similarity, write_csv
from .pipeline import METHODS, TransferConfig, prepare_source, run_transfer
from .project import Order, ProjectionParams, Traversal
from .splat import load_splat_ply
from .texture import Texture, load_texture, save_texture


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _auto_float(text: str) -> float | str:
    if text.lower() == "auto":
        return "auto"
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'auto', got {text}")
    return value


def _spacing(text: str) -> float | str:
    return "off" if text.lower() == "off" else _auto_float(text)


def _rgba(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4 or not all(0 <= p <= 255 for p in parts):
        raise argparse.ArgumentTypeError("expected R,G,B,A with values in 0..255")
    return tuple(parts)


def _int_list(text: str) -> list[int]:
    return [_positive_int(p) for p in text.split(",") if p.strip()]


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--source-mesh", help="source mesh (.obj); needs --source-texture")
    p.add_argument("--source-texture", help="source texture (.png)")
    p.add_argument("--source-splats", help="source 3DGS point cloud (.ply)")
    p.add_argument("--target-mesh", required=True, help="target mesh (.obj)")
    p.add_argument("--size", type=_positive_int, default=1024, help="output texture size (default 1024)")
    p.add_argument("--tau", type=float, default=0.0, help="alignment cosine threshold (default 0)")
    p.add_argument("--tmax", type=_auto_float, default="auto", help="ray length or 'auto' (cell diagonal)")
    p.add_argument("--supersample", type=_positive_int, default=1)
    p.add_argument("--densify-spacing", type=_spacing, default="auto",
                   help="densify spacing, 'auto' (1.5x median NN distance) or 'off'")
    p.add_argument("--fallback", type=_rgba, default=(0, 0, 0, 0), help="R,G,B,A for uncovered texels")
    p.add_argument("--traversal", choices=[t.value for t in Traversal], default=Traversal.SINGLE_CELL.value)
    p.add_argument("--order", choices=[o.value for o in Order], default=Order.DISTANCE.value)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatproj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transfer", help="bake a source texture onto a target mesh")
    _add_source_flags(t)
    t.add_argument("--out", required=True, help="output texture (.png)")
    t.add_argument("--threads", type=_positive_int, default=1)
    t.add_argument("--method", choices=METHODS, default="grid")

    s = sub.add_parser("selfcheck", help="project a textured mesh onto itself and compare")
    s.add_argument("--mesh", required=True)
    s.add_argument("--texture", required=True)
    s.add_argument("--size", type=_positive_int, default=None, help="default: texture width")
    s.add_argument("--threshold", type=float, default=0.95)
    s.add_argument("--threads", type=_positive_int, default=1)

    b = sub.add_parser("bench", help="time the pipeline per thread count and method")
    _add_source_flags(b)
    b.add_argument("--threads-list", type=_int_list, default=[1])
    b.add_argument("--methods", default="grid", help="comma list of grid,global,perface")
    b.add_argument("--reps", type=_positive_int, default=1)
    b.add_argument("--sample-rows", type=_positive_int, default=None,
                   help="time global/perface on this many rows and scale up")
    b.add_argument("--csv", default=None, help="also write stage timings as CSV")
    return parser


def _config_from_args(args, method: str) -> TransferConfig:
    if args.source_splats and (args.source_mesh or args.source_texture):
        raise _Usage("use either --source-splats or --source-mesh/--source-texture")
    if not args.source_splats and not (args.source_mesh and args.source_texture):
        raise _Usage("need --source-mesh with --source-texture, or --source-splats")
    params = ProjectionParams(tau=args.tau, t_max=args.tmax, fallback_color=args.fallback,
                              traversal=args.traversal, order=args.order)
    kwargs = {}
    if args.source_splats:
        kwargs["source_splats"] = load_splat_ply(args.source_splats)
    else:
        kwargs["source_mesh"] = load_obj(args.source_mesh)
        kwargs["source_texture"] = load_texture(args.source_texture)
    return TransferConfig(
        target_mesh=load_obj(args.target_mesh), width=args.size, height=args.size, method=method,
        params=params, supersample=args.supersample, densify=args.densify_spacing != "off",
        densify_spacing=args.densify_spacing if isinstance(args.densify_spacing, float) else None,
        **kwargs,
    )


class _Usage(Exception):
    pass


def _diag(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_transfer(args) -> int:
    config = _config_from_args(args, args.method)
    t0 = time.perf_counter()
    result = run_transfer(config, threads=args.threads)
    elapsed = time.perf_counter() - t0
    save_texture(result.texture, args.out)
    if result.params is not None and not result.params.is_auto:
        _diag(f"tmax={result.params.t_max:.6g}")
    if result.densify_spacing is not None:
        _diag(f"densify_spacing={result.densify_spacing:.6g}")
    _diag(f"coverage={result.coverage:.6f} time_ms={elapsed * 1e3:.3f}")
    stages = " ".join(f"{k}_s={v:.6f}" for k, v in result.timings.items())
    splats = len(result.cloud) if result.cloud is not None else 0
    print(f"method={config.method} threads={args.threads} width={config.width} height={config.height} "
          f"splats={splats} triangles={config.target_mesh.n_triangles} coverage={result.coverage:.6f} "
          f"{stages} total_s={elapsed:.6f} out={args.out}")
    return 0


def cmd_selfcheck(args) -> int:
    mesh = load_obj(args.mesh)
    texture = load_texture(args.texture)
    size = args.size or texture.width
    config = TransferConfig(target_mesh=mesh, source_mesh=mesh, source_texture=texture, width=size, height=size)
    t0 = time.perf_counter()
    result = run_transfer(config, threads=args.threads)
    _diag(f"coverage={result.coverage:.6f} time_ms={(time.perf_counter() - t0) * 1e3:.3f}")
    reference = texture
    if (texture.width, texture.height) != (size, size):
        reference = Texture(np.asarray(Image.fromarray(texture.pixels).resize((size, size), Image.BILINEAR)))
    report = similarity(result.texture, reference, result.pmap)
    passed = report.similarity >= args.threshold
    print(f"{report.as_line()} threshold={args.threshold} passed={int(passed)}")
    return 0 if passed else 1


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise _Usage(f"unknown method(s): {', '.join(bad)}")
    reports = []
    cloud = None
    for method in methods:
        config = _config_from_args(args, method)
        if method != "perface" and cloud is None:
            t0 = time.perf_counter()
            cloud, _ = prepare_source(config)
            _diag(f"source prepared splats={len(cloud)} time_ms={(time.perf_counter() - t0) * 1e3:.3f}")
        for threads in args.threads_list:
            rows = args.sample_rows if method != "grid" else None
            report = bench(config, threads, args.reps, sample_rows=rows, cloud=cloud)
            reports.append(report)
            print(report.as_line(), flush=True)
    if args.csv:
        write_csv(reports, args.csv)
    return 0


COMMANDS = {"transfer": cmd_transfer, "selfcheck": cmd_selfcheck, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        _diag(f"splatproj: error: {exc}")
        return 2
    except PipelineError as exc:
        _diag(f"splatproj: {exc.stage} stage failed: {type(exc).__name__}: {exc}")
        return 1
    except (OSError, ValueError) as exc:
        _diag(f"splatproj: input error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
