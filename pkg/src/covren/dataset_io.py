"""Dataset serialization: scene records, image codecs, validation.

Layout under a dataset root:

    manifest.jsonl                  one JSON object per scene (format 1)
    volumes/<name>.covv             object and background volumes
    meshes/<name>.obj               occupancy surface meshes
    scenes/<scene_id>/scene.json    background/objects/cameras description
    scenes/<scene_id>/cam<k>/       per-camera images:
        rgb.png          8-bit color, round(255 * value)
        depth.pfm        32-bit float camera-z depth in meters (PFM, scale -1)
        depth_preview.png  16-bit grayscale, millimeters, saturates at 65.535 m
        opacity.png      8-bit accumulated opacity
        modal_obj<k>.png   8-bit visible-mask weight of object k
        amodal_obj<k>.png  8-bit occlusion-free mask weight of object k
        camera.json      intrinsics and camera-to-world pose

Color and mask PNGs quantize with round(255 v), so decoding recovers
values within 1/510. Depth PFM is bit-exact float32.
"""

from __future__ import annotations

import json
import os
import re
import shutil
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .compositor import RenderOutput
from .errors import ContractError, DatasetError, FormatError
from .geometry import (CameraIntrinsics, RigidPose, camera_from_json,
                       camera_to_json, camera_rays)
from .meshing import extract_mesh, export_obj
from .scene import Scene, load_scene, save_scene
from .volumes import ObjectVolume, load_volume, save_volume, sample_fields

MANIFEST_FORMAT = 1
_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


# ---------------------------------------------------------------------------
# image codecs


def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale PFM, 32-bit little-endian floats, rows bottom to top."""
    a = np.asarray(data, dtype="<f4")
    if a.ndim != 2:
        raise ContractError(f"PFM data must be 2-D, got shape {a.shape}")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{a.shape[1]} {a.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(a).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: not a PFM file")
    if parts[0] == b"PF":
        raise FormatError(f"{path}: color PFM not supported, expected grayscale 'Pf'")
    try:
        w, h = (int(x) for x in parts[1].split())
        scale = float(parts[2])
    except ValueError as e:
        raise FormatError(f"{path}: bad PFM header: {e}") from e
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad PFM dimensions {w}x{h}")
    dtype = "<f4" if scale < 0 else ">f4"
    if len(parts[3]) < w * h * 4:
        raise FormatError(f"{path}: truncated PFM payload")
    pixels = np.frombuffer(parts[3], dtype=dtype, count=w * h)
    return np.flipud(pixels.reshape(h, w)).astype(np.float64)


def _write_u8_png(path, values: np.ndarray, color: bool) -> None:
    arr = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB" if color else "L").save(path)


def _read_u8_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    return arr.astype(np.float64) / 255.0


def _write_depth_preview(path, depth_m: np.ndarray) -> None:
    mm = np.rint(np.clip(np.nan_to_num(depth_m, nan=0.0) * 1000.0, 0.0, 65535.0))
    Image.fromarray(mm.astype(np.uint16)).save(path)


# ---------------------------------------------------------------------------
# records


@dataclass
class CameraRecord:
    intrinsics: CameraIntrinsics
    pose: RigidPose
    rgb: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    modal: dict[int, np.ndarray] = field(default_factory=dict)
    amodal: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class SceneRecord:
    scene_id: str
    cameras: list[CameraRecord]
    objects: list[dict]   # {"id": int, "name": str, "volume": path, "mesh": path}
    scene_path: str
    entry: dict


def _check_name(name: str, what: str) -> str:
    if not _NAME_RE.match(name):
        raise DatasetError(f"{what} {name!r} is not filesystem-safe "
                           "(use letters, digits, '_', '-', '.')")
    return name


def write_scene_record(root, scene_id: str, scene: Scene,
                       outputs: list[RenderOutput], overwrite: bool = False,
                       write_meshes: bool = True) -> dict:
    """Write one scene's volumes, meshes, images, and manifest line.

    `outputs` holds one RenderOutput per scene camera, in camera order.
    Volumes and meshes are stored once per object name and reused by later
    scenes that share the name. An existing scene id is refused unless
    overwrite is set; replacing a scene rewrites its manifest line rather
    than appending a duplicate. On any failure the scene directory is
    removed again before the error propagates; the manifest is touched only
    after every file landed.
    """
    _check_name(scene_id, "scene id")
    if len(outputs) != len(scene.cameras):
        raise ContractError(
            f"{len(scene.cameras)} cameras but {len(outputs)} render outputs")
    root = os.path.abspath(root)
    scene_dir = os.path.join(root, "scenes", scene_id)
    if os.path.exists(scene_dir):
        if not overwrite:
            raise DatasetError(f"scene {scene_id!r} already exists under {root} "
                               "(pass overwrite to replace it)")
        shutil.rmtree(scene_dir)

    os.makedirs(os.path.join(root, "volumes"), exist_ok=True)
    os.makedirs(os.path.join(root, "meshes"), exist_ok=True)
    os.makedirs(scene_dir)
    try:
        names = {}
        for oid, obj in zip(scene.object_ids, scene.objects):
            names[oid] = _check_name(obj.name or f"obj{oid}", "object name")

        bg_name = f"background_{scene_id}"
        bg_path = os.path.join(root, "volumes", bg_name + ".covv")
        save_volume(bg_path, scene.background)

        volume_rel, mesh_rel = {}, {}
        for oid, obj in zip(scene.object_ids, scene.objects):
            vpath = os.path.join(root, "volumes", names[oid] + ".covv")
            if not os.path.exists(vpath):
                save_volume(vpath, obj.volume)
            volume_rel[oid] = os.path.relpath(vpath, root)
            if write_meshes:
                mpath = os.path.join(root, "meshes", names[oid] + ".obj")
                if not os.path.exists(mpath):
                    export_obj(mpath, extract_mesh(obj.volume))
                mesh_rel[oid] = os.path.relpath(mpath, root)

        scene_json = os.path.join(scene_dir, "scene.json")
        save_scene(scene_json, scene,
                   volume_paths={oid: os.path.relpath(os.path.join(root, volume_rel[oid]),
                                                      scene_dir)
                                 for oid in volume_rel},
                   background_path=os.path.relpath(bg_path, scene_dir))

        camera_dirs = []
        for k, ((intr, pose), out) in enumerate(zip(scene.cameras, outputs)):
            cam_dir = os.path.join(scene_dir, f"cam{k}")
            os.makedirs(cam_dir)
            _write_u8_png(os.path.join(cam_dir, "rgb.png"), out.color, color=True)
            write_pfm(os.path.join(cam_dir, "depth.pfm"), out.depth)
            _write_depth_preview(os.path.join(cam_dir, "depth_preview.png"), out.depth)
            _write_u8_png(os.path.join(cam_dir, "opacity.png"), out.opacity, color=False)
            for oid in scene.object_ids:
                _write_u8_png(os.path.join(cam_dir, f"modal_obj{oid}.png"),
                              out.modal_masks[oid], color=False)
                _write_u8_png(os.path.join(cam_dir, f"amodal_obj{oid}.png"),
                              out.amodal_masks[oid], color=False)
            with open(os.path.join(cam_dir, "camera.json"), "w") as f:
                json.dump(camera_to_json(intr, pose), f, indent=2)
                f.write("\n")
            camera_dirs.append(os.path.relpath(cam_dir, root))

        entry = {
            "format": MANIFEST_FORMAT,
            "scene_id": scene_id,
            "scene": os.path.relpath(scene_json, root),
            "background": os.path.relpath(bg_path, root),
            "cameras": camera_dirs,
            "objects": [{"id": oid, "name": names[oid],
                         "volume": volume_rel[oid],
                         **({"mesh": mesh_rel[oid]} if oid in mesh_rel else {})}
                        for oid in scene.object_ids],
        }
    except Exception:
        shutil.rmtree(scene_dir, ignore_errors=True)
        raise
    _append_manifest_entry(root, scene_id, entry)
    return entry


def _append_manifest_entry(root, scene_id: str, entry: dict):
    """Append the entry, dropping any earlier line with the same scene id."""
    manifest = os.path.join(root, "manifest.jsonl")
    line = json.dumps(entry) + "\n"
    existing = []
    if os.path.exists(manifest):
        with open(manifest) as f:
            existing = [ln for ln in f if ln.strip()]

    def same_id(raw):
        try:
            return json.loads(raw).get("scene_id") == scene_id
        except json.JSONDecodeError:
            # damaged lines are left for validate_dataset to report
            return False

    kept = [ln for ln in existing if not same_id(ln)]
    if len(kept) == len(existing):
        with open(manifest, "a") as f:
            f.write(line)
        return
    tmp = manifest + ".tmp"
    with open(tmp, "w") as f:
        f.writelines(kept)
        f.write(line)
    os.replace(tmp, manifest)


def read_manifest(root) -> list[dict]:
    path = os.path.join(root, "manifest.jsonl")
    if not os.path.exists(path):
        raise DatasetError(f"{root}: no manifest.jsonl")
    entries = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{ln}: invalid JSON: {e}") from e
    return entries


_MASK_FILE_RE = re.compile(r"^(modal|amodal)_obj(\d+)\.png$")


def load_scene_record(root, scene_id: str) -> SceneRecord:
    """Load one scene's manifest entry and decode all its images.

    Decoding inverts write_scene_record up to the documented quantization:
    color and masks within 1/510 of the written values, depth bit-exact
    as float32.
    """
    root = os.path.abspath(root)
    entry = next((e for e in read_manifest(root) if e.get("scene_id") == scene_id), None)
    if entry is None:
        raise DatasetError(f"{root}: no scene {scene_id!r} in manifest")
    cameras = []
    for cam_rel in entry["cameras"]:
        cam_dir = os.path.join(root, cam_rel)
        with open(os.path.join(cam_dir, "camera.json")) as f:
            intr, pose = camera_from_json(json.load(f))
        rgb = _read_u8_png(os.path.join(cam_dir, "rgb.png"))
        depth = read_pfm(os.path.join(cam_dir, "depth.pfm"))
        opacity = _read_u8_png(os.path.join(cam_dir, "opacity.png"))
        modal, amodal = {}, {}
        for fname in sorted(os.listdir(cam_dir)):
            m = _MASK_FILE_RE.match(fname)
            if m:
                target = modal if m.group(1) == "modal" else amodal
                target[int(m.group(2))] = _read_u8_png(os.path.join(cam_dir, fname))
        cameras.append(CameraRecord(intrinsics=intr, pose=pose, rgb=rgb, depth=depth,
                                    opacity=opacity, modal=modal, amodal=amodal))
    return SceneRecord(scene_id=scene_id, cameras=cameras,
                       objects=list(entry.get("objects", [])),
                       scene_path=os.path.join(root, entry["scene"]),
                       entry=entry)


# ---------------------------------------------------------------------------
# validation


def _entry_findings(root, entry, index: int) -> list[str]:
    where = f"manifest entry {index}"
    out = []
    if entry.get("format") != MANIFEST_FORMAT:
        out.append(f"{where}: format {entry.get('format')!r}, expected {MANIFEST_FORMAT}")
    sid = entry.get("scene_id")
    if not isinstance(sid, str) or not sid:
        out.append(f"{where}: missing scene_id")
        return out
    for key in ("scene", "background", "cameras", "objects"):
        if key not in entry:
            out.append(f"{where} ({sid}): missing key {key!r}")
    for rel in (entry.get("cameras") or []):
        if not os.path.isdir(os.path.join(root, rel)):
            out.append(f"{sid}: camera directory {rel} missing")
    for key in ("scene", "background"):
        rel = entry.get(key)
        if rel and not os.path.exists(os.path.join(root, rel)):
            out.append(f"{sid}: {key} file {rel} missing")
    ids = []
    for obj in (entry.get("objects") or []):
        ids.append(obj.get("id"))
        for key in ("volume", "mesh"):
            rel = obj.get(key)
            if rel and not os.path.exists(os.path.join(root, rel)):
                out.append(f"{sid}: object {obj.get('name')} {key} {rel} missing")
    if ids and sorted(ids) != list(range(1, len(ids) + 1)):
        out.append(f"{sid}: object ids {sorted(ids)} are not 1..{len(ids)}")
    return out


def _coherence_findings(root, entry, agreement_threshold: float) -> list[str]:
    """Cross-channel consistency of one scene's stored images.

    For every pixel whose stored opacity exceeds 0.5, unproject the stored
    depth along the pixel ray and sample each volume's density there; the
    densest volume should be the one the stored modal masks assign the
    pixel to (background weight = opacity - sum of modal weights).
    """
    sid = entry["scene_id"]
    out = []
    try:
        record = load_scene_record(root, sid)
    except (DatasetError, FormatError, OSError) as e:
        return [f"{sid}: unreadable record: {e}"]

    try:
        background = load_volume(os.path.join(root, entry["background"]),
                                 is_background=True)
        volumes = {obj["id"]: load_volume(os.path.join(root, obj["volume"]))
                   for obj in entry["objects"]}
    except (FormatError, OSError) as e:
        return [f"{sid}: unreadable volume: {e}"]
    try:
        scene = load_scene(record.scene_path)
    except (FormatError, OSError) as e:
        return [f"{sid}: unreadable scene.json: {e}"]
    poses = {oid: obj.pose for oid, obj in zip(scene.object_ids, scene.objects)}

    for ci, cam in enumerate(record.cameras):
        shape = (cam.intrinsics.height, cam.intrinsics.width)
        for name, img, want in (("rgb", cam.rgb, shape + (3,)),
                                ("depth", cam.depth, shape),
                                ("opacity", cam.opacity, shape)):
            if img.shape != want:
                out.append(f"{sid} cam{ci}: {name} shape {img.shape}, expected {want}")
                return out
        if set(cam.modal) != set(volumes) or set(cam.amodal) != set(volumes):
            out.append(f"{sid} cam{ci}: mask files do not cover object ids "
                       f"{sorted(volumes)}")
            return out
        if np.any(~np.isfinite(cam.depth)):
            out.append(f"{sid} cam{ci}: depth map has non-finite values")
            continue

        opaque = cam.opacity > 0.5
        if not np.any(opaque):
            continue
        origin, dirs, dir_z = camera_rays(cam.intrinsics, cam.pose)
        tau = cam.depth / dir_z
        pts = origin + tau[..., None] * dirs
        pts = pts[opaque]

        densities = [sample_fields(background, pts)[0]]
        for oid in sorted(volumes):
            local = poses[oid].inverse_transform(pts)
            densities.append(sample_fields(volumes[oid], local)[0])
        density_owner = np.argmax(np.stack(densities, axis=1), axis=1)

        modal_stack = [np.clip(cam.opacity - sum(cam.modal.values()), 0.0, 1.0)[opaque]]
        for oid in sorted(volumes):
            modal_stack.append(cam.modal[oid][opaque])
        mask_owner = np.argmax(np.stack(modal_stack, axis=1), axis=1)

        agreement = float(np.mean(density_owner == mask_owner))
        if agreement < agreement_threshold:
            out.append(f"{sid} cam{ci}: mask/depth agreement {agreement:.4f} "
                       f"below {agreement_threshold}")

        modal_sum = sum(cam.modal.values())
        if np.any(modal_sum > cam.opacity + 0.02):
            out.append(f"{sid} cam{ci}: modal mask sum exceeds opacity")
        for oid in sorted(volumes):
            if np.any(cam.modal[oid] > cam.amodal[oid] + 0.02):
                out.append(f"{sid} cam{ci}: modal exceeds amodal for object {oid}")
    return out


def validate_dataset(root, check_coherence: bool = True,
                     agreement_threshold: float = 0.99) -> list[str]:
    """Check a dataset root for structural and cross-channel consistency.

    Returns a list of human-readable findings; an empty list means the
    dataset passed. Structural problems (missing files, malformed
    manifest) are always checked; the coherence pass re-derives pixel
    ownership from depth and volumes and compares it with the stored
    masks.
    """
    root = os.path.abspath(root)
    try:
        entries = read_manifest(root)
    except DatasetError as e:
        return [str(e)]
    findings = []
    seen = set()
    for i, entry in enumerate(entries):
        findings.extend(_entry_findings(root, entry, i))
        sid = entry.get("scene_id")
        if sid in seen:
            findings.append(f"duplicate scene_id {sid!r}")
        seen.add(sid)
    if findings:
        return findings
    if check_coherence:
        for entry in entries:
            findings.extend(_coherence_findings(root, entry, agreement_threshold))
    return findings
