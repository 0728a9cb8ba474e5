"""Scenes: a background volume plus posed object volumes plus cameras.

Object ids are assigned 1..K in list order; id 0 always denotes the
background. Scene JSON references volumes by file path so a scene file
stays small and volumes can be shared between scenes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SceneFormatError
from .geometry import (CameraIntrinsics, RigidPose, camera_from_json,
                       camera_to_json, pose_from_json, pose_to_json)
from .volumes import ObjectVolume, load_volume


@dataclass
class SceneObject:
    volume: ObjectVolume
    pose: RigidPose
    name: str = ""


@dataclass
class Scene:
    background: ObjectVolume
    objects: list[SceneObject] = field(default_factory=list)
    cameras: list[tuple[CameraIntrinsics, RigidPose]] = field(default_factory=list)

    def __post_init__(self):
        if not self.background.is_background:
            raise ContractError("scene background volume must have is_background set")

    @property
    def object_ids(self) -> list[int]:
        """Ids 1..K in object list order (0 is the background)."""
        return list(range(1, len(self.objects) + 1))


def save_scene(path, scene: Scene, volume_paths: dict[int, str],
               background_path: str) -> None:
    """Write scene JSON; volumes must already exist at the given paths.

    volume_paths maps object id (1..K) to the path recorded for that
    object's volume. Paths are stored as given (use relative paths for
    relocatable datasets).
    """
    objects = []
    for oid, obj in zip(scene.object_ids, scene.objects):
        if oid not in volume_paths:
            raise ContractError(f"no volume path supplied for object id {oid}")
        objects.append({"volume": volume_paths[oid], "pose": pose_to_json(obj.pose),
                        "name": obj.name})
    doc = {
        "background": background_path,
        "objects": objects,
        "cameras": [camera_to_json(i, p) for i, p in scene.cameras],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_scene(path) -> Scene:
    """Read scene JSON and the volumes it references.

    Relative volume paths are resolved against the scene file's directory.
    Unknown keys are ignored.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: invalid JSON: {e}") from e
    for key in ("background", "objects", "cameras"):
        if key not in doc:
            raise SceneFormatError(f"{path}: missing key {key!r}")
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        background = load_volume(_resolve(doc["background"]), is_background=True)
        objects = []
        for i, entry in enumerate(doc["objects"]):
            vol = load_volume(_resolve(entry["volume"]))
            objects.append(SceneObject(volume=vol, pose=pose_from_json(entry["pose"]),
                                       name=entry.get("name", "")))
        cameras = [camera_from_json(c) for c in doc["cameras"]]
    except (KeyError, TypeError) as e:
        raise SceneFormatError(f"{path}: malformed scene entry: {e!r}") from e
    return Scene(background=background, objects=objects, cameras=cameras)
