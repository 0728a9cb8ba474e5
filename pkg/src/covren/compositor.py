"""Multi-object volumetric compositing along camera rays.

Each volume contributes point samples along the ray segment where the ray
crosses its box. Samples from all volumes are merged and sorted by distance
t (ties broken background first, then objects in id order), and standard
emission-absorption quadrature runs over the merged list: with spacing
delta_i = t_{i+1} - t_i (the last sample uses t_far - t_N),

    alpha_i = 1 - exp(-delta_i * sigma_i)
    T_i     = exp(-sum_{j<i} delta_j * sigma_j)
    weight_i = T_i * alpha_i

Color is sum_i weight_i * rgb_i, expected ray-termination distance is
sum_i weight_i * t_i, and the modal (visible) mask weight of object k is
the sum of weight_i over k's own samples. The amodal (occlusion-free) mask
weight recomputes transmittance from k's samples alone, with k-internal
spacings that also close with t_far minus k's last sample; that shared
closing convention is what makes modal <= amodal hold sample-by-sample.

Transmittance telescopes: sum_i weight_i = 1 - exp(-sum_i delta_i sigma_i),
so total opacity never exceeds 1 and the per-object weights partition it.

All public entry points are deterministic given the config and the scene.
With deterministic midpoint sampling (the default) the output is invariant
to the order objects appear in the scene list, since each volume's samples
depend only on its own ray segment and the merge sorts by t. Stratified
jitter is seeded per (config.seed, owner id); a permuted scene then draws
different jitter for each object, so stratified renders of reordered
scenes agree only in expectation, not bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError
from .geometry import (CameraIntrinsics, Ray, RigidPose, camera_rays,
                       intersect_rays_box)
from .scene import Scene
from .volumes import ObjectVolume, sample_fields

__all__ = [
    "RenderConfig", "RaySampleBatch", "PerObjectWeights", "CompositeResult",
    "RenderOutput", "sample_ts", "composite", "render_ray", "render_rays",
    "render_scene",
]


@dataclass(frozen=True)
class RenderConfig:
    """Sampling parameters shared by all rendering entry points.

    samples_per_object / samples_background: point samples per ray per
    volume (background may be 0 to disable background sampling).
    t_far: absolute far limit; sample segments and the final quadrature
    interval are clipped against it.
    stratified: jitter each sample uniformly within its bin instead of
    using bin midpoints.
    """

    samples_per_object: int = 64
    samples_background: int = 64
    t_far: float = 10.0
    stratified: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_object < 1:
            raise DomainError("samples_per_object must be >= 1")
        if self.samples_background < 0:
            raise DomainError("samples_background must be >= 0")
        if not self.t_far > 0:
            raise DomainError("t_far must be positive")


@dataclass
class RaySampleBatch:
    """Merged, sorted samples along one ray.

    t is ascending, owner maps each sample to the volume it came from
    (0 = background, 1..K = objects in scene order).
    """

    t: np.ndarray
    density: np.ndarray
    radiance: np.ndarray
    owner: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.density = np.asarray(self.density, dtype=np.float64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        self.owner = np.asarray(self.owner, dtype=np.int64)
        s = self.t.shape[0]
        if (self.t.ndim != 1 or self.density.shape != (s,)
                or self.radiance.shape != (s, 3) or self.owner.shape != (s,)):
            raise ContractError("sample batch arrays have inconsistent shapes")


@dataclass(frozen=True)
class PerObjectWeights:
    modal: float
    amodal: float
    accumulated_alpha: float


@dataclass
class CompositeResult:
    color: np.ndarray
    depth: float
    total_opacity: float
    per_object: dict[int, PerObjectWeights]
    transmittance: np.ndarray
    weights: np.ndarray


@dataclass
class RenderOutput:
    """Full-image render: color, camera-z depth, opacity, and mask maps.

    depth is the expected ray-termination distance converted to camera-z;
    it is a weighted sum (not normalized), so pixels with opacity near 0
    have depth near 0. modal_masks / amodal_masks map owner id (0 =
    background) to (H, W) weight maps.
    """

    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    modal_masks: dict[int, np.ndarray]
    amodal_masks: dict[int, np.ndarray]


def sample_ts(t_enter: float, t_exit: float, n: int,
              stratified: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """n sample distances in [t_enter, t_exit], ascending.

    Deterministic mode places samples at bin midpoints; stratified mode
    draws one uniform offset per bin. A degenerate interval collapses to
    a single midpoint sample.
    """
    if n < 1:
        raise DomainError("need at least one sample")
    if t_exit < t_enter:
        raise DomainError("t_exit must be >= t_enter")
    if t_exit - t_enter < 1e-12:
        return np.array([0.5 * (t_enter + t_exit)])
    if stratified:
        if rng is None:
            rng = np.random.default_rng(0)
        offs = rng.random(n)
    else:
        offs = 0.5
    return t_enter + (t_exit - t_enter) * (np.arange(n) + offs) / n


def _closing_deltas(ts: np.ndarray, t_far: float) -> np.ndarray:
    """Forward differences along axis 1, final interval closed at t_far."""
    delta = np.concatenate([np.diff(ts, axis=1), t_far - ts[:, -1:]], axis=1)
    return np.maximum(delta, 0.0)


def _emission_absorption(ts, sigma, t_far):
    """Transmittance/alpha/weights over sorted samples (rows are rays)."""
    delta = _closing_deltas(ts, t_far)
    dm = delta * sigma
    cum = np.cumsum(dm, axis=1)
    acc_before = np.concatenate([np.zeros((ts.shape[0], 1)), cum[:, :-1]], axis=1)
    transmittance = np.exp(-acc_before)
    alpha = -np.expm1(-dm)
    weights = transmittance * alpha
    return delta, dm, transmittance, alpha, weights


def composite(batch: RaySampleBatch, t_far: float) -> CompositeResult:
    """Emission-absorption quadrature over one merged sample list.

    This is the reference 1-D implementation of the compositing model;
    the image renderer runs a vectorized equivalent and is tested to
    match it bitwise-close.
    """
    t = batch.t
    s = t.shape[0]
    if s == 0:
        return CompositeResult(color=np.zeros(3), depth=0.0, total_opacity=0.0,
                               per_object={}, transmittance=np.ones(0),
                               weights=np.zeros(0))
    if np.any(np.diff(t) < 0):
        raise ContractError("sample distances must be nondecreasing")
    if t[0] < 0 or t[-1] > t_far + 1e-12:
        raise ContractError("sample distances must lie in [0, t_far]")
    if np.any(batch.density < 0) or not np.all(np.isfinite(batch.density)):
        raise ContractError("densities must be finite and nonnegative")
    if np.any(batch.radiance < 0) or np.any(batch.radiance > 1):
        raise ContractError("radiance values must lie in [0, 1]")

    _, dm, transmittance, _, weights = _emission_absorption(
        t[None], batch.density[None], t_far)
    dm, transmittance, weights = dm[0], transmittance[0], weights[0]

    per_object = {}
    for k in np.unique(batch.owner):
        sel = batch.owner == k
        modal = float(weights[sel].sum())
        accumulated = float(-np.expm1(-dm[sel].sum()))
        # amodal: object alone on the ray, own spacings closed at t_far
        t_own = t[sel]
        _, _, _, _, w_own = _emission_absorption(
            t_own[None], batch.density[sel][None], t_far)
        per_object[int(k)] = PerObjectWeights(
            modal=modal, amodal=float(w_own.sum()), accumulated_alpha=accumulated)

    return CompositeResult(
        color=(weights[:, None] * batch.radiance).sum(axis=0),
        depth=float((weights * t).sum()),
        total_opacity=float(weights.sum()),
        per_object=per_object,
        transmittance=transmittance,
        weights=weights,
    )


# ---------------------------------------------------------------------------
# batched path: fixed-width sample blocks per volume, merged by stable sort


@dataclass
class _VolumeBlock:
    owner: int
    volume: ObjectVolume
    pose: RigidPose
    columns: slice
    t: np.ndarray            # (R, N) ascending per row
    sigma: np.ndarray        # (R, N)
    rgb: np.ndarray          # (R, N, 3)
    hit: np.ndarray          # (R,)
    stencil_idx: np.ndarray | None = None  # (R, N, 8)
    stencil_wgt: np.ndarray | None = None  # (R, N, 8)


@dataclass
class _SceneSamples:
    t: np.ndarray            # (R, S) merged, unsorted (block order)
    sigma: np.ndarray
    rgb: np.ndarray
    owner_cols: np.ndarray   # (S,)
    blocks: list[_VolumeBlock]
    n_owners: int


@dataclass
class _CompositePack:
    order: np.ndarray        # (R, S) argsort of t
    ts: np.ndarray
    sigma: np.ndarray
    rgb: np.ndarray
    owner: np.ndarray        # (R, S)
    delta: np.ndarray
    transmittance: np.ndarray
    alpha: np.ndarray
    weights: np.ndarray
    color: np.ndarray        # (R, 3)
    depth: np.ndarray        # (R,) ray distance
    opacity: np.ndarray      # (R,)
    modal: np.ndarray        # (R, n_owners)
    amodal: np.ndarray       # (R, n_owners)
    accumulated_alpha: np.ndarray  # (R, n_owners)
    own_delta: list          # per block (R, N)
    own_transmittance: list
    own_alpha: list
    own_weights: list


def _scene_entries(scene: Scene):
    entries = [(0, scene.background, RigidPose.identity())]
    for oid, obj in zip(scene.object_ids, scene.objects):
        entries.append((oid, obj.volume, obj.pose))
    return entries


def _jitter_rng(config: RenderConfig, owner: int) -> np.random.Generator:
    # keyed by (seed, owner slot) so each volume's jitter stream is stable
    # regardless of how rays are batched or chunked
    return np.random.default_rng(np.random.SeedSequence(entropy=config.seed,
                                                        spawn_key=(owner,)))


def _gather(entries, origins: np.ndarray, dirs: np.ndarray, config: RenderConfig,
            rng: np.random.Generator | None = None,
            with_stencil: bool = False) -> _SceneSamples:
    """Sample every volume along R rays into fixed-width blocks.

    Rays that miss a volume get placeholder samples at t_far with zero
    density (and zero stencil weights), which the quadrature ignores.
    Directions must be unit length.
    """
    r = origins.shape[0]
    blocks = []
    col = 0
    n_owners = 1 + max((e[0] for e in entries), default=0)
    for owner, volume, pose in entries:
        n = config.samples_background if owner == 0 else config.samples_per_object
        if n == 0:
            continue
        t0, t1, hit = intersect_rays_box(origins, dirs, volume.box, pose)
        t0 = np.minimum(t0, config.t_far)
        t1 = np.minimum(t1, config.t_far)
        hit = hit & ((t1 - t0) > 1e-12)
        t0 = np.where(hit, t0, config.t_far)
        t1 = np.where(hit, t1, config.t_far)

        if config.stratified:
            gen = rng if rng is not None else _jitter_rng(config, owner)
            offs = gen.random((r, n))
        else:
            offs = 0.5
        ts = t0[:, None] + (t1 - t0)[:, None] * (np.arange(n) + offs) / n

        pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
        local = pose.inverse_transform(pts.reshape(-1, 3))
        if with_stencil:
            dens, rad, idx, wgt = sample_fields(volume, local, with_stencil=True)
            idx = idx.reshape(r, n, 8)
            wgt = wgt.reshape(r, n, 8)
            wgt[~hit] = 0.0
        else:
            dens, rad = sample_fields(volume, local)
            idx = wgt = None
        dens = dens.reshape(r, n)
        rad = rad.reshape(r, n, 3)
        dens[~hit] = 0.0
        rad[~hit] = 0.0

        blocks.append(_VolumeBlock(owner=owner, volume=volume, pose=pose,
                                   columns=slice(col, col + n), t=ts, sigma=dens,
                                   rgb=rad, hit=hit, stencil_idx=idx,
                                   stencil_wgt=wgt))
        col += n

    if not blocks:
        empty = np.zeros((r, 0))
        return _SceneSamples(t=empty, sigma=empty, rgb=np.zeros((r, 0, 3)),
                             owner_cols=np.zeros(0, dtype=np.int64), blocks=[],
                             n_owners=n_owners)
    t = np.concatenate([b.t for b in blocks], axis=1)
    sigma = np.concatenate([b.sigma for b in blocks], axis=1)
    rgb = np.concatenate([b.rgb for b in blocks], axis=1)
    owner_cols = np.concatenate([np.full(b.t.shape[1], b.owner, dtype=np.int64)
                                 for b in blocks])
    return _SceneSamples(t=t, sigma=sigma, rgb=rgb, owner_cols=owner_cols,
                         blocks=blocks, n_owners=n_owners)


def _composite_batch(samples: _SceneSamples, t_far: float) -> _CompositePack:
    r, s = samples.t.shape
    n_owners = samples.n_owners
    if s == 0:
        z = np.zeros((r, 0))
        return _CompositePack(order=np.zeros((r, 0), dtype=np.int64), ts=z,
                              sigma=z, rgb=np.zeros((r, 0, 3)),
                              owner=np.zeros((r, 0), dtype=np.int64), delta=z,
                              transmittance=z, alpha=z, weights=z,
                              color=np.zeros((r, 3)), depth=np.zeros(r),
                              opacity=np.zeros(r),
                              modal=np.zeros((r, n_owners)),
                              amodal=np.zeros((r, n_owners)),
                              accumulated_alpha=np.zeros((r, n_owners)),
                              own_delta=[], own_transmittance=[], own_alpha=[],
                              own_weights=[])

    # stable sort preserves block order for equal t: background, then ids
    order = np.argsort(samples.t, axis=1, kind="stable")
    ts = np.take_along_axis(samples.t, order, axis=1)
    sigma = np.take_along_axis(samples.sigma, order, axis=1)
    rgb = np.take_along_axis(samples.rgb, order[..., None], axis=1)
    owner = samples.owner_cols[order]

    delta, dm, transmittance, alpha, weights = _emission_absorption(ts, sigma, t_far)

    color = (weights[..., None] * rgb).sum(axis=1)
    depth = (weights * ts).sum(axis=1)
    opacity = weights.sum(axis=1)

    modal = np.zeros((r, n_owners))
    accumulated = np.zeros((r, n_owners))
    for k in range(n_owners):
        sel = owner == k
        modal[:, k] = np.where(sel, weights, 0.0).sum(axis=1)
        accumulated[:, k] = -np.expm1(-np.where(sel, dm, 0.0).sum(axis=1))

    amodal = np.zeros((r, n_owners))
    own_delta, own_trans, own_alpha, own_weights = [], [], [], []
    for b in samples.blocks:
        d_o, _, t_o, a_o, w_o = _emission_absorption(b.t, b.sigma, t_far)
        amodal[:, b.owner] += w_o.sum(axis=1)
        own_delta.append(d_o)
        own_trans.append(t_o)
        own_alpha.append(a_o)
        own_weights.append(w_o)

    return _CompositePack(order=order, ts=ts, sigma=sigma, rgb=rgb, owner=owner,
                          delta=delta, transmittance=transmittance, alpha=alpha,
                          weights=weights, color=color, depth=depth,
                          opacity=opacity, modal=modal, amodal=amodal,
                          accumulated_alpha=accumulated, own_delta=own_delta,
                          own_transmittance=own_trans, own_alpha=own_alpha,
                          own_weights=own_weights)


def render_ray(scene: Scene, ray: Ray, config: RenderConfig) -> CompositeResult:
    """Render one ray: gather per-volume samples, merge, sort, composite."""
    samples = _gather(_scene_entries(scene), ray.origin[None], ray.direction[None],
                      config)
    if samples.t.shape[1] == 0:
        return composite(RaySampleBatch(np.zeros(0), np.zeros(0),
                                        np.zeros((0, 3)), np.zeros(0, dtype=np.int64)),
                         config.t_far)
    order = np.argsort(samples.t[0], kind="stable")
    batch = RaySampleBatch(t=samples.t[0][order],
                           density=samples.sigma[0][order],
                           radiance=samples.rgb[0][order],
                           owner=samples.owner_cols[order])
    result = composite(batch, config.t_far)
    # rays missing a volume entirely still report zero weights for it
    for owner, _, _ in _scene_entries(scene):
        if owner not in result.per_object:
            result.per_object[owner] = PerObjectWeights(0.0, 0.0, 0.0)
    return result


def render_rays(scene: Scene, origins: np.ndarray, directions: np.ndarray,
                config: RenderConfig) -> _CompositePack:
    """Vectorized render of R arbitrary rays (unit directions required)."""
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    if origins.ndim != 2 or origins.shape[1] != 3 or origins.shape != directions.shape:
        raise ContractError("origins and directions must both be (R, 3)")
    samples = _gather(_scene_entries(scene), origins, directions, config)
    return _composite_batch(samples, config.t_far)


def render_scene(scene: Scene, intrinsics: CameraIntrinsics, pose: RigidPose,
                 config: RenderConfig, threads: int = 1,
                 chunk_pixels: int = 8192) -> RenderOutput:
    """Render a full image with per-object modal and amodal masks.

    Depth is converted from ray distance to camera-z. Results are
    identical for any thread count: the image is cut into fixed chunks
    and each chunk is rendered independently.
    """
    origin, dirs, dir_z = camera_rays(intrinsics, pose)
    h, w = dir_z.shape
    n_px = h * w
    flat_dirs = dirs.reshape(-1, 3)
    origins = np.broadcast_to(origin, (n_px, 3))

    entries = _scene_entries(scene)
    n_owners = 1 + max(e[0] for e in entries)
    color = np.zeros((n_px, 3))
    depth = np.zeros(n_px)
    opacity = np.zeros(n_px)
    modal = np.zeros((n_px, n_owners))
    amodal = np.zeros((n_px, n_owners))

    starts = range(0, n_px, chunk_pixels)

    def run_chunk(s0: int):
        s1 = min(s0 + chunk_pixels, n_px)
        samples = _gather(entries, origins[s0:s1], flat_dirs[s0:s1], config)
        pack = _composite_batch(samples, config.t_far)
        color[s0:s1] = pack.color
        depth[s0:s1] = pack.depth
        opacity[s0:s1] = pack.opacity
        modal[s0:s1] = pack.modal
        amodal[s0:s1] = pack.amodal

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for s0 in starts:
            run_chunk(s0)

    depth_z = depth.reshape(h, w) * dir_z
    return RenderOutput(
        color=color.reshape(h, w, 3),
        depth=depth_z,
        opacity=opacity.reshape(h, w),
        modal_masks={k: modal[:, k].reshape(h, w) for k in range(n_owners)},
        amodal_masks={k: amodal[:, k].reshape(h, w) for k in range(n_owners)},
    )
