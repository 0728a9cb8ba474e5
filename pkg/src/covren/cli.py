"""Command-line interface.

Subcommands: fit, mesh, compose, render, generate, eval, validate.
Exit codes: 0 success, 1 runtime failure (bad inputs, failed validation),
2 usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import dataset_io
from .compositor import RenderConfig, render_scene
from .errors import CovrenError, DatasetError
from .fitting import FitConfig, LatentScene, LatentVolume, TrainView, fit
from .geometry import AxisAlignedBox
from .meshing import extract_mesh, export_obj
from .metrics import psnr, ssim
from .procedural import floor_background
from .scene import Scene, load_scene, save_scene
from .synthesis import GenerationConfig, VolumeLibrary, generate
from .volumes import load_volume, save_volume

logger = logging.getLogger(__name__)


def _load_json_config(path, cls, overrides: dict):
    """Build a config dataclass from an optional JSON file plus overrides."""
    values = {}
    if path:
        with open(path) as f:
            data = json.load(f)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DatasetError(f"{path}: unknown config keys {sorted(unknown)}")
        values.update(data)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def _render_config(args) -> RenderConfig:
    return RenderConfig(samples_per_object=args.samples,
                        samples_background=args.samples_background,
                        t_far=args.t_far,
                        seed=args.seed if args.seed is not None else 0)


def _add_render_args(p: argparse.ArgumentParser):
    p.add_argument("--samples", type=int, default=64,
                   help="samples per ray per object (default 64)")
    p.add_argument("--samples-background", type=int, default=64)
    p.add_argument("--t-far", type=float, default=10.0)


def _load_library(path) -> VolumeLibrary:
    lib = VolumeLibrary()
    files = sorted(f for f in os.listdir(path) if f.endswith(".covv"))
    if not files:
        raise DatasetError(f"{path}: no .covv volumes found")
    for f in files:
        lib.add(os.path.splitext(f)[0], load_volume(os.path.join(path, f)))
    return lib


def _default_background(bounds: AxisAlignedBox, floor_z: float):
    size = bounds.size()
    lo = bounds.min_corner - np.array([size[0], size[1], 0.05 * size[2] + 0.05])
    hi = bounds.max_corner + np.array([size[0], size[1], 2.0 * size[2]])
    return floor_background(AxisAlignedBox(lo, hi), floor_z=floor_z)


def _cmd_fit(args) -> int:
    record = dataset_io.load_scene_record(args.dataset, args.scene_id)
    scene = load_scene(os.path.join(args.dataset, record.entry["scene"]))
    views = []
    for cam in record.cameras:
        # stored depth is meaningless where nothing was hit; NaN disables
        # supervision there
        depth = np.where(cam.opacity > 0.5, cam.depth, np.nan)
        views.append(TrainView(intrinsics=cam.intrinsics, pose=cam.pose,
                               rgb=cam.rgb, depth=depth,
                               modal_masks=cam.modal or None,
                               amodal_masks=cam.amodal or None))
    config = _load_json_config(args.config, FitConfig, {
        "iterations": args.iterations,
        "learning_rate": args.learning_rate,
        "rays_per_iteration": args.rays,
        "seed": args.seed,
    })
    dims = (args.dims, args.dims, args.dims)
    latents = LatentScene(
        background=LatentVolume.fresh(dims, scene.background.box, is_background=True),
        objects=[dataclasses.replace(o) for o in LatentScene.from_scene(scene).objects])
    if args.fresh_objects:
        for obj in latents.objects:
            obj.latent = LatentVolume.fresh(dims, obj.latent.box)
    logger.info("fitting %d objects for %d iterations", len(latents.objects),
                config.iterations)
    result = fit(latents, views, config)
    os.makedirs(args.out, exist_ok=True)
    paths = {}
    used = set()
    for oid, obj in zip(result.scene.object_ids, result.scene.objects):
        name = obj.name or f"obj{oid}"
        if name in used:
            # a scene may place the same library object twice
            name = f"{name}_{oid}"
        used.add(name)
        rel = f"{name}.covv"
        save_volume(os.path.join(args.out, rel), obj.volume)
        paths[oid] = rel
    save_volume(os.path.join(args.out, "background.covv"), result.scene.background)
    fitted = Scene(background=result.scene.background, objects=result.scene.objects,
                   cameras=scene.cameras)
    save_scene(os.path.join(args.out, "scene.json"), fitted, paths, "background.covv")
    header = "total,color,depth,mask,occupancy"
    np.savetxt(os.path.join(args.out, "loss.csv"), result.loss_history,
               delimiter=",", header=header, comments="")
    print(f"fit finished: final loss {result.loss_history[-1, 0]:.6f} "
          f"-> {args.out}/scene.json")
    return 0


def _cmd_mesh(args) -> int:
    volume = load_volume(args.volume)
    mesh = extract_mesh(volume, iso=args.iso)
    export_obj(args.out, mesh)
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.faces)} faces to {args.out}")
    return 0


def _cmd_compose(args) -> int:
    library = _load_library(args.library)
    config = _load_json_config(args.config, GenerationConfig, {
        "num_scenes": 1,
        "min_objects": args.objects,
        "max_objects": args.objects,
        "seed": args.seed,
    })
    composed = generate(library, config)[0]
    background = (load_volume(args.background, is_background=True)
                  if args.background else
                  _default_background(config.bin_bounds, config.floor_z))
    scene = composed.to_scene(library, background)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    bg_path = os.path.join(out_dir, "background.covv")
    save_volume(bg_path, background)
    paths = {}
    for oid, placement in zip(scene.object_ids, composed.placements):
        src = os.path.join(args.library, placement.name + ".covv")
        paths[oid] = os.path.relpath(os.path.abspath(src), out_dir)
    save_scene(args.out, scene, paths, os.path.relpath(bg_path, out_dir))
    print(f"composed {len(scene.objects)} objects "
          f"(settle converged: {composed.settle.converged}) -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    if not scene.cameras:
        raise DatasetError(f"{args.scene}: scene has no cameras")
    config = _render_config(args)
    os.makedirs(args.out, exist_ok=True)
    indices = range(len(scene.cameras)) if args.camera < 0 else [args.camera]
    for k in indices:
        intr, pose = scene.cameras[k]
        out = render_scene(scene, intr, pose, config, threads=args.threads)
        cam_dir = os.path.join(args.out, f"cam{k}")
        os.makedirs(cam_dir, exist_ok=True)
        dataset_io._write_u8_png(os.path.join(cam_dir, "rgb.png"), out.color, True)
        dataset_io.write_pfm(os.path.join(cam_dir, "depth.pfm"), out.depth)
        dataset_io._write_depth_preview(
            os.path.join(cam_dir, "depth_preview.png"), out.depth)
        dataset_io._write_u8_png(os.path.join(cam_dir, "opacity.png"),
                                 out.opacity, False)
        for oid in scene.object_ids:
            dataset_io._write_u8_png(os.path.join(cam_dir, f"modal_obj{oid}.png"),
                                     out.modal_masks[oid], False)
            dataset_io._write_u8_png(os.path.join(cam_dir, f"amodal_obj{oid}.png"),
                                     out.amodal_masks[oid], False)
        print(f"rendered camera {k} -> {cam_dir}")
    return 0


def _cmd_generate(args) -> int:
    library = _load_library(args.library)
    config = _load_json_config(args.config, GenerationConfig, {
        "num_scenes": args.scenes,
        "cameras_per_scene": args.cameras,
        "min_objects": args.min_objects,
        "max_objects": args.max_objects,
        "seed": args.seed,
    })
    background = (load_volume(args.background, is_background=True)
                  if args.background else
                  _default_background(config.bin_bounds, config.floor_z))
    render_cfg = _render_config(args)
    composed = generate(library, config)
    os.makedirs(args.out, exist_ok=True)
    for i, comp in enumerate(composed):
        scene_id = f"scene_{i:04d}"
        scene = comp.to_scene(library, background)
        # write_scene_record removes its own partial output on failure
        outputs = [render_scene(scene, intr, pose, render_cfg,
                                threads=args.threads)
                   for intr, pose in scene.cameras]
        dataset_io.write_scene_record(args.out, scene_id, scene, outputs,
                                      overwrite=args.overwrite)
        print(f"wrote {scene_id} ({len(scene.objects)} objects, "
              f"{len(scene.cameras)} cameras)")
    print(f"dataset at {args.out}: {len(composed)} scenes")
    return 0


def _iter_image_pairs(pred, ref):
    if os.path.isfile(pred):
        yield pred, ref
        return
    for dirpath, _, files in sorted(os.walk(pred)):
        for fname in sorted(files):
            if fname == "rgb.png":
                rel = os.path.relpath(os.path.join(dirpath, fname), pred)
                other = os.path.join(ref, rel)
                if not os.path.exists(other):
                    raise DatasetError(f"reference image missing: {other}")
                yield os.path.join(pred, rel), other


def _cmd_eval(args) -> int:
    scores = []
    for p_path, r_path in _iter_image_pairs(args.pred, args.ref):
        a = dataset_io._read_u8_png(p_path)
        b = dataset_io._read_u8_png(r_path)
        scores.append((p_path, psnr(a, b), ssim(a, b)))
    if not scores:
        raise DatasetError(f"{args.pred}: no rgb.png images found")
    mean_psnr = float(np.mean([s[1] for s in scores]))
    mean_ssim = float(np.mean([s[2] for s in scores]))
    if args.json:
        print(json.dumps({"psnr": mean_psnr, "ssim": mean_ssim,
                          "images": len(scores)}))
    else:
        for path, p, s in scores:
            print(f"{path}: psnr {p:.2f} dB, ssim {s:.4f}")
        print(f"mean over {len(scores)} image(s): psnr {mean_psnr:.2f} dB, "
              f"ssim {mean_ssim:.4f}")
    return 0


def _cmd_validate(args) -> int:
    findings = dataset_io.validate_dataset(args.root,
                                           check_coherence=not args.no_coherence)
    for finding in findings:
        print(finding)
    if findings:
        print(f"{len(findings)} finding(s)")
        return 1
    print("dataset is consistent")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covren",
        description="Object-composable volumetric rendering and dataset generation")
    parser.add_argument("--seed", type=int, default=None,
                        help="override random seeds")
    parser.add_argument("--threads", type=int, default=1,
                        help="render worker threads (results are identical)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit volumes to a dataset scene's views")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with FitConfig fields")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--rays", type=int, default=None)
    p.add_argument("--dims", type=int, default=32,
                   help="grid resolution for fresh latent volumes")
    p.add_argument("--fresh-objects", action="store_true",
                   help="ignore stored object fields, fit from scratch")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("mesh", help="extract an occupancy mesh from a volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iso", type=float, default=0.5)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("compose", help="settle library objects into a scene")
    p.add_argument("--library", required=True, help="directory of .covv volumes")
    p.add_argument("--out", required=True, help="output scene.json path")
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--background", help=".covv background volume")
    p.add_argument("--config", help="JSON file with GenerationConfig fields")
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("render", help="render a scene's cameras to images")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--camera", type=int, default=-1,
                   help="camera index (default: all)")
    _add_render_args(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("generate", help="generate a full multi-scene dataset")
    p.add_argument("--library", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--cameras", type=int, default=None)
    p.add_argument("--min-objects", type=int, default=None)
    p.add_argument("--max-objects", type=int, default=None)
    p.add_argument("--background")
    p.add_argument("--config", help="JSON file with GenerationConfig fields")
    p.add_argument("--overwrite", action="store_true")
    _add_render_args(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="PSNR/SSIM between images or render trees")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("validate", help="check a dataset for consistency")
    p.add_argument("root")
    p.add_argument("--no-coherence", action="store_true",
                   help="skip the depth/mask agreement pass")
    p.set_defaults(func=_cmd_validate)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CovrenError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
