"""Batch command-line interface.

Subcommands: init, segment, match, preview, edit, render, serve. Exit
codes: 0 success, 1 user error (bad arguments, missing files, invalid
plans), 2 internal error. Config precedence everywhere: CLI flag >
project config file > built-in default. ``--seed`` is honored wherever
randomness exists.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import IcegError
from .project import Project, ProjectConfig

ENV_PROJECT_ROOT = "ICEG_PROJECT_ROOT"


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (user error) on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="iceg",
        description="Image-conditioned color/texture editing of gaussian-splat scenes.",
        epilog="Config precedence: CLI flag > project config file > built-in default.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", parents=[], help="create a project (optionally with the built-in demo scene)")
    p.add_argument("--project", required=True, help="project directory to create")
    p.add_argument("--dataset", help="path to a dataset (transforms manifest or its directory)")
    p.add_argument("--name", help="scene name (default: directory name)")
    p.add_argument("--demo", action="store_true", help="generate the synthetic three-blob demo scene")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("segment", help="segment one view and write the mask set + label map")
    p.add_argument("--project", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--max-masks", type=int, default=None)
    p.add_argument("--out-dir", default=None, help="output directory (default: <project>/edits/segments)")

    p = sub.add_parser("match", help="match a view's regions against an edit image")
    p.add_argument("--project", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--edit-image", required=True, help="path, view:<id>, or data URI")
    p.add_argument("--max-masks", type=int, default=None)

    p = sub.add_parser("preview", help="apply a plan to one view in 2D and write a PNG")
    p.add_argument("--project", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--plan", required=True, help="plan JSON file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("edit", help="run a full edit job (2D transfer + 3D finetune)")
    p.add_argument("--project", required=True)
    p.add_argument("--style-image", help="edit image; default plan recolors every matched region")
    p.add_argument("--plan", help="plan JSON file (overrides --style-image's default style)")
    p.add_argument("--job-id", default=None)
    p.add_argument("--resume", default=None, help="resume an interrupted job by id")
    p.add_argument("--sample-rate", type=float, default=None)
    p.add_argument("--max-masks", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--texture-iters", type=int, default=None)
    p.add_argument("--color-iters", type=int, default=None)

    p = sub.add_parser("render", help="render one view from a checkpoint")
    p.add_argument("--project", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint path (absolute or project-relative)")
    p.add_argument("--view", required=True)
    p.add_argument("--out", default=None, help="output PNG (default: <project>/renders/<view>.png)")

    p = sub.add_parser("serve", help="serve the HTTP API")
    p.add_argument("--project-root", default=None, help=f"defaults to ${ENV_PROJECT_ROOT}")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def _open_project(path: str) -> Project:
    return Project.open(Path(path))


def _config_with_flags(project: Project, args, **extra) -> ProjectConfig:
    overrides = dict(extra)
    for flag, key in (
        ("sample_rate", "sample_rate"),
        ("max_masks", "max_masks"),
        ("seed", "seed"),
        ("texture_iters", "texture_iters"),
        ("color_iters", "color_iters"),
    ):
        if hasattr(args, flag) and getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    return project.config.overridden(**overrides)


def _cmd_init(args) -> int:
    root = Path(args.project)
    if args.demo:
        from .fixture import write_fixture_project

        project = write_fixture_project(root, seed=args.seed or 0)
        print(f"created demo project at {project.root} ({project.name})")
        return 0
    if not args.dataset:
        raise IcegError("init needs --dataset (or --demo)")
    from .dataset import load_dataset

    dataset = load_dataset(args.dataset)  # validate before writing anything
    project = Project.create(root, dataset_ref=str(Path(args.dataset).resolve()), name=args.name or dataset.name)
    print(f"created project at {project.root} with {len(dataset)} views")
    print("note: add a base checkpoint (checkpoints/base_0000000.ckpt) before running edits")
    return 0


def _cmd_segment(args) -> int:
    from .pipeline import make_segmenter
    from .segmentation import save_label_map_png, save_maskset, segment_and_consolidate

    project = _open_project(args.project)
    config = _config_with_flags(project, args)
    dataset = project.load_scene()
    view, _ = dataset.get(args.view)
    maskset = segment_and_consolidate(
        view.pixels, make_segmenter(config), config.max_masks, grid_side=config.grid_side, view_id=args.view
    )
    out_dir = Path(args.out_dir) if args.out_dir else project.edits_dir / "segments"
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{args.view}.json"
    png_path = out_dir / f"{args.view}_labels.png"
    save_maskset(maskset, json_path)
    save_label_map_png(maskset, png_path)
    print(json_path)
    print(png_path)
    return 0


def _cmd_match(args) -> int:
    from .features import describe_region, extract_features, match_regions
    from .pipeline import make_feature_provider, make_segmenter, resolve_image_ref
    from .segmentation import segment_and_consolidate

    project = _open_project(args.project)
    config = _config_with_flags(project, args)
    dataset = project.load_scene()
    view, _ = dataset.get(args.view)
    backend = make_segmenter(config)
    provider = make_feature_provider(config)
    edit_image = resolve_image_ref(project, args.edit_image, dataset)
    edit_maskset = segment_and_consolidate(edit_image, backend, config.max_masks, grid_side=config.grid_side)
    descriptors = [describe_region(extract_features(edit_image, provider), m) for m in edit_maskset.masks]
    maskset = segment_and_consolidate(view.pixels, backend, config.max_masks, grid_side=config.grid_side)
    featmap = extract_features(view.pixels, provider, view_id=args.view)
    assignment = match_regions(maskset, featmap, descriptors, normalization=config.match_normalization)
    print(json.dumps({"view_id": args.view, "entries": assignment.to_dict()}, indent=2, sort_keys=True))
    return 0


def _cmd_preview(args) -> int:
    from .pipeline import preview_edit, resolve_plan
    from .style2d import save_png

    project = _open_project(args.project)
    config = _config_with_flags(project, args)
    spec = json.loads(Path(args.plan).read_text())
    plan = resolve_plan(project, spec, config)
    edited = preview_edit(project, args.view, plan, config)
    save_png(edited, args.out)
    print(args.out)
    return 0


def _cmd_edit(args) -> int:
    from .pipeline import resolve_plan, run_edit_job

    project = _open_project(args.project)
    config = _config_with_flags(project, args)

    if args.resume:
        job = run_edit_job(project, job_id=args.resume)
    else:
        if args.plan:
            spec = json.loads(Path(args.plan).read_text())
            if args.style_image:
                spec["edit_image"] = args.style_image
        elif args.style_image:
            from .pipeline import correspondence_plan_spec

            spec = correspondence_plan_spec(project, args.style_image, config)
        else:
            raise IcegError("edit needs --style-image or --plan (or --resume)")
        plan = resolve_plan(project, spec, config)
        job = run_edit_job(project, plan, config=config, seed=args.seed, job_id=args.job_id)
    print(f"job {job.job_id}: {job.state}")
    if job.stages_skipped:
        print(f"skipped stages: {', '.join(job.stages_skipped)}")
    print(f"renders: {project.renders_dir / job.job_id}")
    return 0


def _cmd_render(args) -> int:
    import torch

    from .checkpoints import load_checkpoint_full
    from .rasterize import rasterize
    from .style2d import save_png

    project = _open_project(args.project)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_absolute():
        ckpt = project.root / ckpt
    gaussians, _, _, _ = load_checkpoint_full(ckpt)
    dataset = project.load_scene()
    view, camera = dataset.get(args.view)
    with torch.no_grad():
        img = rasterize(gaussians, camera, view.width, view.height, background=tuple(project.config.background)).image
    out = Path(args.out) if args.out else project.renders_dir / f"{args.view}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(img.numpy(), out)
    print(out)
    return 0


def _cmd_serve(args) -> int:
    from .server import serve

    root = args.project_root or os.environ.get(ENV_PROJECT_ROOT)
    if not root:
        raise IcegError(f"serve needs --project-root or ${ENV_PROJECT_ROOT}")
    serve(root, port=args.port, host=args.host)
    return 0


_COMMANDS = {
    "init": _cmd_init,
    "segment": _cmd_segment,
    "match": _cmd_match,
    "preview": _cmd_preview,
    "edit": _cmd_edit,
    "render": _cmd_render,
    "serve": _cmd_serve,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except IcegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as e:  # anything else is an internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
