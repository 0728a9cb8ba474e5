"""Analytic test volumes: spheres, solid boxes, slabs, empty backgrounds.

These exist so tests and demos have ground truth with known closed-form
properties (chord opacities, mesh volumes) without fitting anything.
"""

from __future__ import annotations

import numpy as np

from .geometry import AxisAlignedBox
from .volumes import ObjectVolume

_LOGIT_EMPTY = -12.0  # sigmoid(-12) ~ 6e-6, safely below any iso level


def empty_background(dims=(2, 2, 2), box: AxisAlignedBox | None = None) -> ObjectVolume:
    """A background volume that contributes nothing to any ray."""
    if box is None:
        box = AxisAlignedBox.cube(4.0)
    vol = ObjectVolume.zeros(dims, box, is_background=True)
    vol.occupancy_logit[:] = _LOGIT_EMPTY
    return vol


def uniform_box_volume(dims, box: AxisAlignedBox, density: float,
                       rgb=(0.8, 0.8, 0.8), is_background: bool = False) -> ObjectVolume:
    """Constant density and color over the whole box."""
    d, h, w = dims
    vol = ObjectVolume(
        box=box,
        density=np.full((d, h, w), float(density)),
        radiance=np.broadcast_to(np.asarray(rgb, dtype=np.float64), (d, h, w, 3)).copy(),
        occupancy_logit=np.full((d, h, w), 12.0 if density > 0 else _LOGIT_EMPTY),
        is_background=is_background,
    )
    return vol


def sphere_volume(dims, box: AxisAlignedBox, radius: float, density: float,
                  rgb=(0.8, 0.3, 0.2), center=None, color_gradient: float = 0.0,
                  occupancy_sharpness: float = 4.0) -> ObjectVolume:
    """A solid sphere of uniform density.

    Density is `density` at voxel centers strictly inside the radius and 0
    outside (trilinear interpolation smears the surface over one voxel).
    The occupancy logit is an analytic signed distance scaled so the
    sigmoid transitions from ~0.02 to ~0.98 across about one voxel,
    crossing 0.5 exactly at the radius. With color_gradient > 0 the
    radiance shades linearly along local z, which gives fits something
    spatial to reconstruct.
    """
    d, h, w = dims
    vol = ObjectVolume.zeros(dims, box)
    centers = vol.voxel_centers()
    c = np.asarray(center, dtype=np.float64) if center is not None else box.center()
    dist = np.linalg.norm(centers - c, axis=-1)
    inside = dist < radius
    vol.density[inside] = density
    voxel = float(np.max(vol.voxel_size()))
    vol.occupancy_logit[:] = occupancy_sharpness * (radius - dist) / voxel

    base = np.asarray(rgb, dtype=np.float64)
    shade = np.ones(dims)
    if color_gradient > 0:
        zrel = (centers[..., 2] - c[2]) / radius
        shade = 1.0 + color_gradient * np.clip(zrel, -1.0, 1.0)
    vol.radiance[:] = np.clip(base * shade[..., None], 0.0, 1.0)
    return vol


def box_inside_volume(dims, box: AxisAlignedBox, inner: AxisAlignedBox,
                      density: float, rgb=(0.3, 0.5, 0.8)) -> ObjectVolume:
    """A solid axis-aligned block occupying `inner` within the volume box."""
    vol = ObjectVolume.zeros(dims, box)
    centers = vol.voxel_centers()
    inside = inner.contains(centers)
    vol.density[inside] = density
    vol.radiance[inside] = np.asarray(rgb, dtype=np.float64)
    # signed axis distance to the block surface, in voxels
    voxel = float(np.max(vol.voxel_size()))
    gap = np.maximum(inner.min_corner - centers, centers - inner.max_corner)
    sdf = np.max(gap, axis=-1)
    vol.occupancy_logit[:] = 4.0 * (-sdf) / voxel
    return vol


def floor_background(box: AxisAlignedBox, floor_z: float, dims=(32, 16, 16),
                     density: float = 400.0, rgb=(0.55, 0.55, 0.6)) -> ObjectVolume:
    """Background with a dense slab below floor_z, empty air above."""
    d, h, w = dims
    vol = ObjectVolume.zeros(dims, box, is_background=True)
    centers = vol.voxel_centers()
    below = centers[..., 2] < floor_z
    vol.density[below] = density
    vol.radiance[below] = np.asarray(rgb, dtype=np.float64)
    voxel = float(np.max(vol.voxel_size()))
    vol.occupancy_logit[:] = 4.0 * (floor_z - centers[..., 2]) / voxel
    return vol
