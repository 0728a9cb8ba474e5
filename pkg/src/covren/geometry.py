"""Cameras, rigid poses, rays, and axis-aligned boxes.

Conventions used everywhere in this package:

* Right-handed world coordinates, +z up for scenes.
* Camera looks down its own +z axis; image origin is the top-left pixel,
  +x right, +y down. Pixel centers sit at half-integer coordinates, so the
  ray for integer pixel (u, v) passes through (u + 0.5, v + 0.5).
* Poses are camera-to-world (or object-to-world) maps p_world = R p + t.
* Quaternions are scalar-first (w, x, y, z) and only appear at file
  boundaries; in memory rotations are 3x3 matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

_EPS_ORTHO = 1e-6


def _as_vec3(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ContractError(f"{name} must have shape (3,), got {v.shape}")
    return v


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class RigidPose:
    """Rigid transform p -> rotation @ p + translation.

    The rotation must be a proper rotation (orthonormal, det +1); this is
    checked at construction to 1e-6 so downstream code can rely on
    rotation.T being the inverse.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = _as_vec3(self.translation, "translation")
        if r.shape != (3, 3):
            raise ContractError(f"rotation must have shape (3, 3), got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=_EPS_ORTHO):
            raise DomainError("rotation matrix is not orthonormal within 1e-6")
        if np.linalg.det(r) < 0:
            raise DomainError("rotation matrix has negative determinant (reflection)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat_wxyz(quat, translation) -> "RigidPose":
        return RigidPose(quat_wxyz_to_matrix(quat), translation)

    @property
    def quat_wxyz(self) -> np.ndarray:
        return matrix_to_quat_wxyz(self.rotation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return the pose applying `other` first, then `self`."""
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -(self.rotation.T @ self.translation))

    def transform(self, points) -> np.ndarray:
        """Apply to one point (3,) or a stack (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse_transform(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.rotation

    def rotate(self, vectors) -> np.ndarray:
        """Apply only the rotation part (directions, not points)."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T


@dataclass(frozen=True)
class Ray:
    """Origin plus unit direction; points are origin + t * direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _as_vec3(self.origin, "origin")
        d = _as_vec3(self.direction, "direction")
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise DomainError("ray direction has near-zero length")
        d = d / n
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class AxisAlignedBox:
    """Axis-aligned box given by min and max corners (min < max per axis)."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = _as_vec3(self.min_corner, "min_corner")
        hi = _as_vec3(self.max_corner, "max_corner")
        if not np.all(lo < hi):
            raise DomainError(f"box min must be strictly below max per axis, got {lo} vs {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @staticmethod
    def cube(half_side: float, center=(0.0, 0.0, 0.0)) -> "AxisAlignedBox":
        c = np.asarray(center, dtype=np.float64)
        h = float(half_side)
        return AxisAlignedBox(c - h, c + h)

    def size(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.size()))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.min_corner) & (p <= self.max_corner), axis=-1)


def quat_wxyz_to_matrix(quat) -> np.ndarray:
    """Rotation matrix from a scalar-first quaternion (normalized here)."""
    q = np.asarray(quat, dtype=np.float64)
    if q.shape != (4,):
        raise ContractError(f"quaternion must have shape (4,), got {q.shape}")
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise DomainError("quaternion has near-zero norm")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat_wxyz(matrix) -> np.ndarray:
    """Scalar-first quaternion from a rotation matrix (w >= 0 convention).

    Uses the eigenvector-free branch method: picks the largest diagonal
    combination to stay numerically stable near 180 degree rotations.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ContractError(f"rotation must have shape (3, 3), got {m.shape}")
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def ray_for_pixel(intrinsics: CameraIntrinsics, pose: RigidPose, u, v) -> Ray:
    """World-space ray through the center of pixel (u, v).

    u indexes columns and v rows; both must lie in [0, width) x [0, height).
    """
    u = float(u)
    v = float(v)
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise DomainError(
            f"pixel ({u}, {v}) outside image {intrinsics.width}x{intrinsics.height}")
    d_cam = np.array([(u + 0.5 - intrinsics.cx) / intrinsics.fx,
                      (v + 0.5 - intrinsics.cy) / intrinsics.fy,
                      1.0])
    d_world = pose.rotate(d_cam / np.linalg.norm(d_cam))
    return Ray(pose.translation, d_world)


def camera_rays(intrinsics: CameraIntrinsics, pose: RigidPose):
    """Rays for every pixel of a camera.

    Returns (origin (3,), directions (H, W, 3) unit world vectors,
    dir_z_cam (H, W)): the camera-frame z component of each unit direction.
    Multiplying a distance along the ray by dir_z_cam converts it to
    camera-frame depth (z), which is what depth maps store.
    """
    w, h = intrinsics.width, intrinsics.height
    u = (np.arange(w) + 0.5 - intrinsics.cx) / intrinsics.fx
    v = (np.arange(h) + 0.5 - intrinsics.cy) / intrinsics.fy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    norm = np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_cam = d_cam / norm
    d_world = d_cam @ pose.rotation.T
    return pose.translation.copy(), d_world, d_cam[..., 2]


def project_point(intrinsics: CameraIntrinsics, pose: RigidPose, point) -> np.ndarray:
    """Continuous pixel coordinates (u, v) of a world point.

    Points at or behind the camera plane are a domain error.
    """
    cam = pose.inverse_transform(_as_vec3(point, "point"))
    if cam[2] <= 1e-12:
        raise DomainError("point is behind the camera")
    return np.array([intrinsics.fx * cam[0] / cam[2] + intrinsics.cx - 0.5,
                     intrinsics.fy * cam[1] / cam[2] + intrinsics.cy - 0.5])


def world_to_object(point, pose: RigidPose) -> np.ndarray:
    """Map world points into the local frame of an object posed by `pose`."""
    return pose.inverse_transform(point)


def object_to_world(point, pose: RigidPose) -> np.ndarray:
    return pose.transform(point)


def intersect_ray_box(ray: Ray, box: AxisAlignedBox, pose: RigidPose | None = None):
    """Entry and exit distances of a ray against a (possibly posed) box.

    Returns (t_enter, t_exit) with t_enter >= 0, or None when the box is
    missed or lies entirely behind the origin. The slab test runs in the
    box's local frame.
    """
    if pose is None:
        pose = RigidPose.identity()
    t0, t1, hit = intersect_rays_box(ray.origin[None], ray.direction[None], box, pose)
    if not hit[0]:
        return None
    return float(t0[0]), float(t1[0])


def intersect_rays_box(origins: np.ndarray, directions: np.ndarray,
                       box: AxisAlignedBox, pose: RigidPose):
    """Vectorized slab test for R rays against one posed box.

    origins/directions are (R, 3); directions need not be normalized but
    the returned distances are in units of the given direction length.
    Returns (t_enter (R,), t_exit (R,), hit (R,) bool); entries of rows
    with hit == False are unspecified. t_enter is clamped to 0 so segments
    never start behind the origin; hit requires t_enter < t_exit.
    """
    o = pose.inverse_transform(origins)
    d = np.asarray(directions, dtype=np.float64) @ pose.rotation
    lo = box.min_corner
    hi = box.max_corner

    near = np.full(o.shape[0], -np.inf)
    far = np.full(o.shape[0], np.inf)
    # Per-axis slab intersection; parallel rays pass only if inside the slab.
    for a in range(3):
        da = d[:, a]
        oa = o[:, a]
        parallel = np.abs(da) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[a] - oa) / da
            tb = (hi[a] - oa) / da
        t_lo = np.minimum(ta, tb)
        t_hi = np.maximum(ta, tb)
        inside = (oa >= lo[a]) & (oa <= hi[a])
        t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
        t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
        near = np.maximum(near, t_lo)
        far = np.minimum(far, t_hi)

    t_enter = np.maximum(near, 0.0)
    hit = (near <= far) & (far > 0.0) & (t_enter < far)
    return t_enter, far, hit


def posed_aabb(box: AxisAlignedBox, pose: RigidPose) -> AxisAlignedBox:
    """World-frame axis-aligned bounds of a box carried by a rigid pose."""
    c = pose.transform(box.center())
    half = np.abs(pose.rotation) @ (0.5 * box.size())
    return AxisAlignedBox(c - half, c + half)


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """Camera-to-world pose with +z from eye toward target and +y downward.

    `up` is the world direction that should map (approximately) to the
    image's upward direction; it must not be parallel to the view axis.
    """
    eye = _as_vec3(eye, "eye")
    target = _as_vec3(target, "target")
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise DomainError("eye and target coincide")
    z = fwd / n
    down = -_as_vec3(up, "up")
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise DomainError("view direction is parallel to the up vector")
    x = x / nx
    y = np.cross(z, x)
    return RigidPose(np.stack([x, y, z], axis=1), eye)


# key list shared by writer and reader so they cannot drift
_CAMERA_JSON_KEYS = ("fx", "fy", "cx", "cy", "width", "height", "pose")


def camera_to_json(intrinsics: CameraIntrinsics, pose: RigidPose) -> dict:
    return {
        "fx": intrinsics.fx, "fy": intrinsics.fy,
        "cx": intrinsics.cx, "cy": intrinsics.cy,
        "width": intrinsics.width, "height": intrinsics.height,
        "pose": pose_to_json(pose),
    }


def camera_from_json(data: dict) -> tuple[CameraIntrinsics, RigidPose]:
    for key in _CAMERA_JSON_KEYS:
        if key not in data:
            raise ContractError(f"camera JSON missing key {key!r}")
    intr = CameraIntrinsics(fx=float(data["fx"]), fy=float(data["fy"]),
                            cx=float(data["cx"]), cy=float(data["cy"]),
                            width=int(data["width"]), height=int(data["height"]))
    return intr, pose_from_json(data["pose"])


def pose_to_json(pose: RigidPose) -> dict:
    return {"quat_wxyz": [float(x) for x in pose.quat_wxyz],
            "t": [float(x) for x in pose.translation]}


def pose_from_json(data: dict) -> RigidPose:
    if "quat_wxyz" not in data or "t" not in data:
        raise ContractError("pose JSON must have keys 'quat_wxyz' and 't'")
    return RigidPose.from_quat_wxyz(data["quat_wxyz"], data["t"])
