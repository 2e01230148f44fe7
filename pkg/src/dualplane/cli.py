"""Command line surface: synth | fit | render | eval | ablate.

Every command is deterministic given its flags and config file. Failures
exit nonzero with a one-line diagnostic on stderr. The NOVA_THREADS
environment variable caps worker parallelism for multi-view rendering.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .geometry import Camera
from .images import write_pfm, write_png


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualplane",
        description="Dual tri-plane reconstruction from two opposed views")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic figurine dataset")
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--out", required=True, help="output dataset directory")
    synth.add_argument("--resolution", type=int, default=64)
    synth.add_argument("--include-random", action="store_true",
                       help="add the 16 random perspective views to the 4 ortho views")

    fit = sub.add_parser("fit", help="fit the field to a dataset")
    fit.add_argument("data_dir", help="dataset directory from `synth`")
    fit.add_argument("--config", help="run configuration file")
    fit.add_argument("--out", required=True, help="run output directory")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--steps", type=int)
    fit.add_argument("--fusion-mode", choices=("as_written", "per_point", "concat"))
    fit.add_argument("--no-dve", action="store_true",
                     help="shared-encoder ablation (encoder mode only)")
    fit.add_argument("--no-gan", action="store_true")
    fit.add_argument("--checkpoint", help="resume from this checkpoint prefix")

    render = sub.add_parser("render", help="render a novel view from a checkpoint")
    render.add_argument("--checkpoint", required=True)
    render.add_argument("--azimuth", type=float, default=0.0)
    render.add_argument("--elevation", type=float, default=0.0)
    render.add_argument("--resolution", type=int)
    render.add_argument("--orthographic", action="store_true",
                        help="orthographic instead of the protocol perspective camera")
    render.add_argument("--out", required=True)

    evaluate = sub.add_parser("eval", help="score renders against the dataset")
    evaluate.add_argument("data_dir")
    evaluate.add_argument("--checkpoint",
                          help="fitted state; omitted: oracle self-comparison")
    evaluate.add_argument("--out", help="directory for report.tsv")

    ablate_cmd = sub.add_parser("ablate", help="fit method variants and tabulate")
    ablate_cmd.add_argument("data_dir")
    ablate_cmd.add_argument("--config")
    ablate_cmd.add_argument("--seed", type=int)
    ablate_cmd.add_argument("--steps", type=int)
    ablate_cmd.add_argument("--out", required=True)
    return parser


def _load_config(args) -> "RunConfig":
    from .trainer import RunConfig

    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "fusion_mode", None):
        overrides["fusion_mode"] = args.fusion_mode
    if getattr(args, "no_dve", False):
        overrides["shared_encoder"] = True
    if getattr(args, "no_gan", False):
        overrides["use_gan"] = False
    return replace(config, **overrides) if overrides else config


def _cmd_synth(args) -> int:
    from .scenes import build_figurine, write_dataset

    scene = build_figurine(args.seed)
    dataset = write_dataset(scene, args.seed, args.include_random, args.out,
                            resolution=args.resolution)
    print(f"wrote {len(dataset.views)} views to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    from .scenes import read_dataset
    from .trainer import fit, load_state, save_state

    dataset = read_dataset(args.data_dir)
    state = load_state(args.checkpoint) if args.checkpoint else None
    config = state.config if state is not None else _load_config(args)
    if state is not None and args.steps:
        config = replace(config, steps=args.steps)
        state.config = config
    os.makedirs(args.out, exist_ok=True)
    state = fit(dataset, config, state=state,
                log_path=os.path.join(args.out, "loss_log.txt"))
    save_state(state, os.path.join(args.out, "checkpoint"))
    print(f"fit complete at step {state.step}; checkpoint in {args.out}")
    return 0


def _cmd_render(args) -> int:
    from .trainer import load_state, render_eval_views

    state = load_state(args.checkpoint)
    resolution = args.resolution or state.config.resolution
    kind = "orthographic" if args.orthographic else "perspective"
    cam = Camera(kind, args.azimuth, args.elevation, resolution=resolution)
    out = render_eval_views(state, [cam])[0]
    images = out.images()
    os.makedirs(args.out, exist_ok=True)
    stem = f"render_az{args.azimuth:g}_el{args.elevation:g}"
    write_png(os.path.join(args.out, stem + ".png"), images["rgb"])
    write_pfm(os.path.join(args.out, stem + "_mask.pfm"), images["mask"])
    write_pfm(os.path.join(args.out, stem + "_depth.pfm"), images["depth"])
    print(f"wrote {stem}.png (+mask/depth pfm) to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import MetricReport, ViewMetrics, evaluate_views, proxy_lpips, psnr, ssim
    from .scenes import read_dataset
    from .trainer import load_state

    dataset = read_dataset(args.data_dir)
    if args.checkpoint:
        report = evaluate_views(load_state(args.checkpoint), dataset)
    else:
        # Oracle self-comparison: a determinism/identity sanity report.
        labels = ("front", "left", "back", "right")
        report = MetricReport(views=[
            ViewMetrics(label=label, psnr=psnr(v.rgb, v.rgb),
                        ssim=ssim(v.rgb, v.rgb),
                        proxy_lpips=proxy_lpips(v.rgb, v.rgb))
            for label, v in zip(labels, dataset.ortho_views())])
    table = report.format_table()
    print(table, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.tsv"), "w", encoding="ascii") as fh:
            fh.write(table)
    return 0


def _cmd_ablate(args) -> int:
    from .scenes import read_dataset
    from .trainer import ablate

    dataset = read_dataset(args.data_dir)
    result = ablate(dataset, _load_config(args), out_dir=args.out)
    print(result["table"], end="")
    return 0


_HANDLERS = {"synth": _cmd_synth, "fit": _cmd_fit, "render": _cmd_render,
             "eval": _cmd_eval, "ablate": _cmd_ablate}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
