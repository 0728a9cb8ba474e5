"""Composing fitted volumes into physically plausible piles.

Objects are dropped into a bin one at a time with random yaw and position,
then settled by a deterministic position-based solver: per step, gravity
pulls centers down, interpenetrations between world-space AABB proxies are
resolved pairwise along the axis of least overlap, the floor clamps from
below, and orientations relax toward the nearest axis-aligned rotation.
The solver is plain fixed-order arithmetic on the scene state, so a given
(config, seed) pair always reproduces the same scenes bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, PlacementError
from .geometry import (AxisAlignedBox, CameraIntrinsics, RigidPose,
                       look_at_pose, matrix_to_quat_wxyz, posed_aabb,
                       quat_wxyz_to_matrix)
from .scene import Scene, SceneObject
from .volumes import ObjectVolume

logger = logging.getLogger(__name__)


@dataclass
class LibraryEntry:
    name: str
    volume: ObjectVolume


class VolumeLibrary:
    """Named object volumes available for scene composition."""

    def __init__(self, entries: list[LibraryEntry] | None = None):
        self.entries = list(entries) if entries else []
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ContractError("library entry names must be unique")

    def add(self, name: str, volume: ObjectVolume) -> None:
        if any(e.name == name for e in self.entries):
            raise ContractError(f"library already has an entry named {name!r}")
        self.entries.append(LibraryEntry(name, volume))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> LibraryEntry:
        return self.entries[index]

    def get(self, name: str) -> LibraryEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


@dataclass(frozen=True)
class SettleParams:
    gravity: float = -9.81
    dt: float = 0.01
    max_steps: int = 500
    resolution_passes: int = 8
    rotation_rate: float = 0.2
    convergence_tol: float = 1e-4
    max_drop_per_step: float = 0.05
    polish_passes: int = 200


@dataclass
class SettleReport:
    converged: bool
    steps: int
    max_penetration: float
    all_supported: bool


@dataclass(frozen=True)
class GenerationConfig:
    num_scenes: int = 1
    min_objects: int = 3
    max_objects: int = 8
    bin_bounds: AxisAlignedBox = field(
        default_factory=lambda: AxisAlignedBox((-0.5, -0.5, 0.0), (0.5, 0.5, 0.8)))
    floor_z: float = 0.0
    cameras_per_scene: int = 2
    camera_radius: float = 1.6
    camera_elevation_deg: float = 50.0
    image_size: int = 64
    focal_px: float = 70.0
    seed: int = 0
    settle: SettleParams = field(default_factory=SettleParams)

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise DomainError("need 1 <= min_objects <= max_objects")
        if self.num_scenes < 1:
            raise DomainError("num_scenes must be >= 1")


@dataclass
class PlacedObject:
    name: str
    library_index: int
    pose: RigidPose


@dataclass
class ComposedScene:
    """One generated arrangement: placements, cameras, settle metadata."""

    placements: list[PlacedObject]
    cameras: list[tuple[CameraIntrinsics, RigidPose]]
    settle: SettleReport
    skipped: list[str]

    def to_scene(self, library: VolumeLibrary, background: ObjectVolume) -> Scene:
        objects = [SceneObject(volume=library[p.library_index].volume, pose=p.pose,
                               name=p.name) for p in self.placements]
        return Scene(background=background, objects=objects, cameras=list(self.cameras))


def _yaw_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sample_initial_pose(bin_bounds: AxisAlignedBox, object_box: AxisAlignedBox,
                        rng: np.random.Generator, stack_height: float = 0.0,
                        clearance: float = 0.02, name: str = "object") -> RigidPose:
    """Random yaw and bin position above the current stack.

    The footprint (after yaw) must fit inside the bin horizontally;
    otherwise a PlacementError names the offending object. An object
    exactly as wide as the bin gets the centered position (zero slack is
    allowed, not an error).
    """
    yaw = rng.uniform(0.0, 2.0 * np.pi)
    rot = _yaw_rotation(yaw)
    half = np.abs(rot) @ (0.5 * object_box.size())
    lo = bin_bounds.min_corner[:2] + half[:2]
    hi = bin_bounds.max_corner[:2] - half[:2]
    if np.any(hi - lo < -1e-9):
        raise PlacementError(
            f"{name}: footprint {2 * half[:2]} exceeds bin {bin_bounds.size()[:2]} at yaw {yaw:.3f}")
    hi = np.maximum(hi, lo)
    cx = rng.uniform(lo[0], hi[0])
    cy = rng.uniform(lo[1], hi[1])
    cz = max(stack_height, bin_bounds.min_corner[2]) + half[2] + clearance
    center = np.array([cx, cy, cz])
    return RigidPose(rot, center - rot @ object_box.center())


def _nearest_axis_aligned(rotation: np.ndarray) -> np.ndarray:
    """Closest signed permutation matrix with determinant +1."""
    p = np.zeros((3, 3))
    used = [False] * 3
    confidence = []
    for j in range(3):
        col = rotation[:, j]
        order = np.argsort(-np.abs(col))
        axis = next(int(a) for a in order if not used[int(a)])
        used[axis] = True
        p[axis, j] = 1.0 if col[axis] >= 0 else -1.0
        confidence.append(abs(col[axis]))
    if np.linalg.det(p) < 0:
        j = int(np.argmin(confidence))
        p[:, j] = -p[:, j]
    return p


def _slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    d = float(np.dot(q0, q1))
    if d < 0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-10:
        q = q0 + s * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(np.clip(d, -1.0, 1.0))
    return (np.sin((1 - s) * theta) * q0 + np.sin(s * theta) * q1) / np.sin(theta)


def _quat_angle(q0: np.ndarray, q1: np.ndarray) -> float:
    d = abs(float(np.dot(q0, q1)))
    return 2.0 * np.arccos(np.clip(d, -1.0, 1.0))


@dataclass
class _Body:
    local_box: AxisAlignedBox
    center: np.ndarray       # world position of the local box center
    quat: np.ndarray         # current orientation, wxyz
    target: np.ndarray       # axis-aligned orientation it relaxes toward
    vz: float = 0.0

    def half_extents(self) -> np.ndarray:
        rot = quat_wxyz_to_matrix(self.quat)
        return np.abs(rot) @ (0.5 * self.local_box.size())

    def pose(self) -> RigidPose:
        rot = quat_wxyz_to_matrix(self.quat)
        return RigidPose(rot, self.center - rot @ self.local_box.center())


def _resolve_overlaps(bodies: list[_Body], halves: list[np.ndarray],
                      floor_z: float, bounds: AxisAlignedBox | None) -> float:
    """One pass of pairwise and boundary corrections; returns max move."""
    moved = 0.0
    n = len(bodies)
    for i in range(n):
        for j in range(i + 1, n):
            gap = (halves[i] + halves[j]) - np.abs(bodies[i].center - bodies[j].center)
            if np.all(gap > 0):
                axis = int(np.argmin(gap))
                direction = bodies[i].center[axis] - bodies[j].center[axis]
                sign = 1.0 if direction >= 0 else -1.0
                push = 0.5 * gap[axis]
                bodies[i].center[axis] += sign * push
                bodies[j].center[axis] -= sign * push
                moved = max(moved, push)
                if axis == 2:
                    bodies[i].vz = 0.0
                    bodies[j].vz = 0.0
    for i, body in enumerate(bodies):
        bottom = body.center[2] - halves[i][2]
        if bottom < floor_z:
            body.center[2] += floor_z - bottom
            body.vz = 0.0
            moved = max(moved, floor_z - bottom)
        if bounds is not None:
            for axis in range(2):  # bin walls act horizontally only
                low = bounds.min_corner[axis] + halves[i][axis]
                high = bounds.max_corner[axis] - halves[i][axis]
                if low > high:
                    continue  # wider than the bin, leave it be
                clamped = np.clip(body.center[axis], low, high)
                moved = max(moved, abs(clamped - body.center[axis]))
                body.center[axis] = clamped
    return moved


def _max_penetration(bodies: list[_Body], halves: list[np.ndarray],
                     floor_z: float) -> float:
    worst = 0.0
    n = len(bodies)
    for i in range(n):
        for j in range(i + 1, n):
            gap = (halves[i] + halves[j]) - np.abs(bodies[i].center - bodies[j].center)
            if np.all(gap > 0):
                worst = max(worst, float(np.min(gap)))
    for i, body in enumerate(bodies):
        worst = max(worst, floor_z - (body.center[2] - halves[i][2]))
    return worst


def _all_supported(bodies: list[_Body], halves: list[np.ndarray], floor_z: float,
                   tol: float) -> bool:
    n = len(bodies)
    for i in range(n):
        if bodies[i].center[2] - halves[i][2] <= floor_z + tol:
            continue
        touching = False
        for j in range(n):
            if j == i:
                continue
            sep = np.abs(bodies[i].center - bodies[j].center) - (halves[i] + halves[j])
            if np.max(sep) <= tol:
                touching = True
                break
        if not touching:
            return False
    return True


def settle(local_boxes: list[AxisAlignedBox], poses: list[RigidPose],
           params: SettleParams = SettleParams(), floor_z: float = 0.0,
           bounds: AxisAlignedBox | None = None) -> tuple[list[RigidPose], SettleReport]:
    """Relax posed boxes under gravity until they rest without overlap.

    Returns the settled poses and a report. Convergence means the largest
    positional change in a step fell below params.convergence_tol with
    orientations fully aligned; if the step budget runs out, extra
    overlap-resolution passes still enforce the non-penetration bounds and
    the report says converged=False.
    """
    if len(local_boxes) != len(poses):
        raise ContractError("need one pose per box")
    bodies = []
    for box, pose in zip(local_boxes, poses):
        q = matrix_to_quat_wxyz(pose.rotation)
        target = matrix_to_quat_wxyz(_nearest_axis_aligned(pose.rotation))
        bodies.append(_Body(local_box=box, center=pose.transform(box.center()),
                            quat=q, target=target))

    steps = 0
    converged = False
    for step in range(params.max_steps):
        steps = step + 1
        before = [b.center.copy() for b in bodies]
        aligned = True
        for b in bodies:
            angle = _quat_angle(b.quat, b.target)
            if angle < 1e-3:
                b.quat = b.target.copy()
            else:
                b.quat = _slerp(b.quat, b.target, params.rotation_rate)
                aligned = False
            b.vz += params.gravity * params.dt
            drop = max(b.vz * params.dt, -params.max_drop_per_step)
            b.center[2] += drop
        halves = [b.half_extents() for b in bodies]
        for _ in range(params.resolution_passes):
            if _resolve_overlaps(bodies, halves, floor_z, bounds) < 1e-12:
                break
        biggest = max((float(np.max(np.abs(b.center - c0)))
                       for b, c0 in zip(bodies, before)), default=0.0)
        if aligned and biggest < params.convergence_tol:
            converged = True
            break

    halves = [b.half_extents() for b in bodies]
    for _ in range(params.polish_passes):
        if _max_penetration(bodies, halves, floor_z) <= 5e-4:
            break
        _resolve_overlaps(bodies, halves, floor_z, bounds)

    report = SettleReport(
        converged=converged,
        steps=steps,
        max_penetration=_max_penetration(bodies, halves, floor_z),
        all_supported=_all_supported(bodies, halves, floor_z, 2e-3),
    )
    return [b.pose() for b in bodies], report


def ring_cameras(center, radius: float, elevation_deg: float, count: int,
                 intrinsics: CameraIntrinsics, azimuth0: float = 0.0):
    """Cameras on a circle around `center`, all looking at it."""
    center = np.asarray(center, dtype=np.float64)
    cams = []
    elev = np.deg2rad(elevation_deg)
    for i in range(count):
        az = azimuth0 + 2.0 * np.pi * i / count
        eye = center + radius * np.array([np.cos(az) * np.cos(elev),
                                          np.sin(az) * np.cos(elev),
                                          np.sin(elev)])
        cams.append((intrinsics, look_at_pose(eye, center)))
    return cams


def generate(library: VolumeLibrary, config: GenerationConfig) -> list[ComposedScene]:
    """Sample, drop, and settle num_scenes object arrangements.

    Each scene draws its own random stream from the config seed, so the
    whole batch is reproducible and scenes are independent of each other.
    Objects whose footprint cannot fit the bin are skipped (logged and
    recorded in ComposedScene.skipped) rather than failing the scene.
    """
    if len(library) == 0:
        raise ContractError("volume library is empty")
    children = np.random.SeedSequence(config.seed).spawn(config.num_scenes)
    intr = CameraIntrinsics(fx=config.focal_px, fy=config.focal_px,
                            cx=config.image_size / 2.0, cy=config.image_size / 2.0,
                            width=config.image_size, height=config.image_size)
    scenes = []
    for scene_index in range(config.num_scenes):
        rng = np.random.default_rng(children[scene_index])
        count = int(rng.integers(config.min_objects, config.max_objects + 1))
        picks, boxes, poses, skipped = [], [], [], []
        stack_top = config.floor_z
        for _ in range(count):
            lib_index = int(rng.integers(0, len(library)))
            entry = library[lib_index]
            try:
                pose = sample_initial_pose(config.bin_bounds, entry.volume.box, rng,
                                           stack_height=stack_top, name=entry.name)
            except PlacementError as e:
                logger.warning("scene %d: skipping placement: %s", scene_index, e)
                skipped.append(entry.name)
                continue
            picks.append((entry.name, lib_index))
            boxes.append(entry.volume.box)
            poses.append(pose)
            stack_top = posed_aabb(entry.volume.box, pose).max_corner[2]
        settled, report = settle(boxes, poses, config.settle,
                                 floor_z=config.floor_z, bounds=config.bin_bounds)
        if not report.converged:
            logger.warning("scene %d: settle hit the step budget (max penetration %.2g)",
                           scene_index, report.max_penetration)
        center = config.bin_bounds.center().copy()
        center[2] = config.floor_z + 0.15
        cameras = ring_cameras(center, config.camera_radius,
                               config.camera_elevation_deg,
                               config.cameras_per_scene, intr,
                               azimuth0=float(rng.uniform(0.0, 2.0 * np.pi)))
        scenes.append(ComposedScene(
            placements=[PlacedObject(name, idx, pose)
                        for (name, idx), pose in zip(picks, settled)],
            cameras=cameras,
            settle=report,
            skipped=skipped,
        ))
    return scenes
