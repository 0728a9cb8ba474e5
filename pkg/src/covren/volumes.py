"""Per-object voxel volumes and trilinear sampling.

An ObjectVolume stores three fields on a regular grid inside an axis-aligned
box in the object's local frame: density (1/m, nonnegative), radiance (rgb
in [0, 1]), and an occupancy logit. Grids are indexed (z, y, x), i.e. shape
(D, H, W) maps depth to the z axis, height to y, width to x. Voxel centers
sit at (index + 0.5) / count along each axis of the box, so the half-voxel
shell between the box face and the first layer of centers samples the edge
value (clamped interpolation) and everything outside the box samples to
exactly zero density and black radiance.

Arrays are float64 in memory; the .covv file format stores float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, VolumeFormatError
from .geometry import AxisAlignedBox

_MAGIC = b"COVV"
_VERSION = 1
# refuse to allocate grids past this when reading untrusted headers
_MAX_VOXELS = 1 << 30


@dataclass
class ObjectVolume:
    """Voxel grids for one object (or the scene background).

    Treat instances as immutable once built; the renderer shares them
    across threads without copying.
    """

    box: AxisAlignedBox
    density: np.ndarray
    radiance: np.ndarray
    occupancy_logit: np.ndarray
    is_background: bool = False

    def __post_init__(self):
        self.density = np.ascontiguousarray(self.density, dtype=np.float64)
        self.radiance = np.ascontiguousarray(self.radiance, dtype=np.float64)
        self.occupancy_logit = np.ascontiguousarray(self.occupancy_logit, dtype=np.float64)
        d = self.density.shape
        if len(d) != 3 or min(d) < 2:
            raise ContractError(f"density must be (D, H, W) with every dim >= 2, got {d}")
        if self.radiance.shape != d + (3,):
            raise ContractError(
                f"radiance must have shape {d + (3,)}, got {self.radiance.shape}")
        if self.occupancy_logit.shape != d:
            raise ContractError(
                f"occupancy_logit must have shape {d}, got {self.occupancy_logit.shape}")
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            raise DomainError("density must be finite and nonnegative")
        if np.any(self.radiance < 0) or np.any(self.radiance > 1):
            raise DomainError("radiance must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.density.shape  # (D, H, W)

    @staticmethod
    def zeros(dims: tuple[int, int, int], box: AxisAlignedBox,
              is_background: bool = False) -> "ObjectVolume":
        d, h, w = dims
        return ObjectVolume(box=box,
                            density=np.zeros((d, h, w)),
                            radiance=np.zeros((d, h, w, 3)),
                            occupancy_logit=np.zeros((d, h, w)),
                            is_background=is_background)

    def voxel_size(self) -> np.ndarray:
        """Edge lengths of one voxel as (x, y, z)."""
        d, h, w = self.dims
        return self.box.size() / np.array([w, h, d], dtype=np.float64)

    def voxel_centers(self) -> np.ndarray:
        """(D, H, W, 3) world-of-box coordinates of voxel centers."""
        d, h, w = self.dims
        sx, sy, sz = self.voxel_size()
        xs = self.box.min_corner[0] + (np.arange(w) + 0.5) * sx
        ys = self.box.min_corner[1] + (np.arange(h) + 0.5) * sy
        zs = self.box.min_corner[2] + (np.arange(d) + 0.5) * sz
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)


# BackgroundVolume is the same container with the flag set; kept as an alias
# because call sites read better when the role is explicit.
def BackgroundVolume(box: AxisAlignedBox, density, radiance, occupancy_logit) -> ObjectVolume:
    return ObjectVolume(box=box, density=density, radiance=radiance,
                        occupancy_logit=occupancy_logit, is_background=True)


@dataclass(frozen=True)
class VolumeSample:
    density: float
    radiance: np.ndarray  # (3,)
    inside: bool


def trilinear_stencil(volume: ObjectVolume, points: np.ndarray):
    """Interpolation stencil for a batch of local-frame points.

    Returns (indices (M, 8) int64 into the flattened (D*H*W) grid,
    weights (M, 8) float64). Weights are nonnegative, sum to 1 for points
    inside the box, and are identically zero for points outside, so any
    field sampled through the stencil vanishes outside the box. Corner c
    of the stencil offsets the base voxel by (c & 1, (c >> 1) & 1,
    (c >> 2) & 1) along (x, y, z).
    """
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ContractError(f"points must be (M, 3), got {p.shape}")
    d, h, w = volume.dims
    counts = np.array([w, h, d], dtype=np.float64)
    cell = volume.box.size() / counts
    # fractional grid coordinates of the surrounding voxel-center lattice
    g = (p - volume.box.min_corner) / cell - 0.5
    base = np.clip(np.floor(g), 0, counts - 2).astype(np.int64)
    frac = np.clip(g - base, 0.0, 1.0)  # clamp handles the half-voxel shell

    inside = np.all((p >= volume.box.min_corner) & (p <= volume.box.max_corner), axis=1)

    m = p.shape[0]
    idx = np.empty((m, 8), dtype=np.int64)
    wgt = np.empty((m, 8), dtype=np.float64)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    ix, iy, iz = base[:, 0], base[:, 1], base[:, 2]
    for c in range(8):
        dx, dy, dz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        idx[:, c] = ((iz + dz) * h + (iy + dy)) * w + (ix + dx)
        wgt[:, c] = ((fx if dx else 1.0 - fx)
                     * (fy if dy else 1.0 - fy)
                     * (fz if dz else 1.0 - fz))
    wgt[~inside] = 0.0
    return idx, wgt


def sample_fields(volume: ObjectVolume, points: np.ndarray, with_stencil: bool = False):
    """Density and radiance at a batch of local points.

    Returns (density (M,), radiance (M, 3)) plus (indices, weights) when
    with_stencil is set (the fitting code reuses the stencil for
    gradients).
    """
    idx, wgt = trilinear_stencil(volume, points)
    dens = (volume.density.reshape(-1)[idx] * wgt).sum(axis=1)
    rad = (volume.radiance.reshape(-1, 3)[idx] * wgt[..., None]).sum(axis=1)
    if with_stencil:
        return dens, rad, idx, wgt
    return dens, rad


def sample_trilinear(volume: ObjectVolume, point) -> VolumeSample:
    """Interpolated fields at one local-frame point (zero outside the box)."""
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    dens, rad = sample_fields(volume, p)
    return VolumeSample(density=float(dens[0]), radiance=rad[0],
                        inside=bool(volume.box.contains(p[0])))


def sample_trilinear_with_weights(volume: ObjectVolume, point):
    """Like sample_trilinear but also returns the 8-voxel stencil.

    Returns (VolumeSample, flat_indices (8,), weights (8,)).
    """
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    dens, rad, idx, wgt = sample_fields(volume, p, with_stencil=True)
    sample = VolumeSample(density=float(dens[0]), radiance=rad[0],
                          inside=bool(volume.box.contains(p[0])))
    return sample, idx[0], wgt[0]


def sample_occupancy(volume: ObjectVolume, points: np.ndarray) -> np.ndarray:
    """Trilinearly interpolated occupancy logit (0 outside the box)."""
    idx, wgt = trilinear_stencil(volume, np.asarray(points, dtype=np.float64))
    return (volume.occupancy_logit.reshape(-1)[idx] * wgt).sum(axis=1)


def save_volume(path, volume: ObjectVolume) -> None:
    """Write a volume as a .covv file.

    Layout (little-endian): magic "COVV", u32 version (1), u32 D, H, W,
    box min and max corners as 6 f64, then density (D*H*W f32), radiance
    (3*D*H*W f32, channel-major), occupancy logit (D*H*W f32). Grids are
    z-major, matching the in-memory (D, H, W) order.
    """
    d, h, w = volume.dims
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIIII", _MAGIC, _VERSION, d, h, w))
        f.write(struct.pack("<6d", *volume.box.min_corner, *volume.box.max_corner))
        f.write(volume.density.astype("<f4").tobytes())
        f.write(np.ascontiguousarray(np.moveaxis(volume.radiance, -1, 0)).astype("<f4").tobytes())
        f.write(volume.occupancy_logit.astype("<f4").tobytes())


def load_volume(path, is_background: bool = False) -> ObjectVolume:
    """Read a .covv file written by save_volume."""
    with open(path, "rb") as f:
        header = f.read(20)
        if len(header) < 20:
            raise VolumeFormatError(f"{path}: truncated header ({len(header)} bytes)")
        magic, version, d, h, w = struct.unpack("<4sIIII", header)
        if magic != _MAGIC:
            raise VolumeFormatError(
                f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _VERSION:
            raise VolumeFormatError(f"{path}: unsupported version {version}")
        if min(d, h, w) < 2 or d * h * w > _MAX_VOXELS:
            raise VolumeFormatError(f"{path}: implausible grid dims {(d, h, w)}")
        box_raw = f.read(48)
        if len(box_raw) < 48:
            raise VolumeFormatError(f"{path}: truncated box bounds")
        bounds = struct.unpack("<6d", box_raw)
        n = d * h * w
        raw = f.read()
        if len(raw) != 5 * n * 4:
            raise VolumeFormatError(
                f"{path}: expected {5 * n * 4} payload bytes, found {len(raw)}")
        payload = np.frombuffer(raw, dtype="<f4")
    density = payload[:n].reshape(d, h, w).astype(np.float64)
    radiance = np.moveaxis(payload[n:4 * n].reshape(3, d, h, w), 0, -1).astype(np.float64)
    occupancy = payload[4 * n:].reshape(d, h, w).astype(np.float64)
    try:
        box = AxisAlignedBox(np.array(bounds[:3]), np.array(bounds[3:]))
        return ObjectVolume(box=box, density=density,
                            radiance=np.clip(radiance, 0.0, 1.0),
                            occupancy_logit=occupancy, is_background=is_background)
    except (DomainError, ContractError) as e:
        raise VolumeFormatError(f"{path}: invalid volume content: {e}") from e
