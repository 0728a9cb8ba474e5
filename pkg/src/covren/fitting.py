"""Fitting voxel volumes to posed images by differentiable rendering.

Volumes are optimized in latent form: density = softplus(density_latent)
keeps density nonnegative, radiance = sigmoid(radiance_latent) keeps color
in [0, 1], and the occupancy logit is optimized directly against voxel
labels. Gradients are computed analytically (no autodiff): for the
emission-absorption weights w_i = T_i alpha_i over the merged sorted
samples, every per-ray loss term is of the form sum_i w_i a_i with a
per-sample factor a_i (color dot, distance, or mask indicator), and

    d(sum w a)/d sigma_i = delta_i * (T_{i+1} a_i - sum_{j>i} w_j a_j)

so one reverse cumulative sum per ray covers color, depth, and modal mask
losses at once. Amodal mask terms use the same identity over each object's
own samples. Sample-to-voxel chaining reuses the trilinear stencils
recorded during gathering, and activation derivatives finish the chain
(softplus' = sigmoid, sigmoid' = s(1-s)).

Sample positions depend only on ray geometry, never on the latents, so
the loss is smooth in the latents and finite differences converge to these
gradients; the test suite checks exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _expit
from scipy.special import logit as _logit

from .compositor import RenderConfig, _composite_batch, _gather, _SceneSamples
from .errors import ContractError, DomainError
from .geometry import (AxisAlignedBox, CameraIntrinsics, Ray, RigidPose,
                       camera_rays)
from .scene import Scene, SceneObject
from .volumes import ObjectVolume


def softplus(x):
    """log(1 + exp(x)) computed stably for any magnitude."""
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """x with softplus(x) = y, stable for tiny and huge y."""
    y = np.maximum(np.asarray(y, dtype=np.float64), 1e-12)
    small = np.log(np.expm1(np.minimum(y, 30.0)))
    large = y + np.log1p(-np.exp(-np.maximum(y, 1.0)))
    return np.where(y > 30.0, large, small)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @staticmethod
    def like(x: np.ndarray) -> "AdamState":
        return AdamState(m=np.zeros_like(x), v=np.zeros_like(x))


@dataclass
class LatentVolume:
    """Optimizable form of an ObjectVolume (same box and grid layout)."""

    box: AxisAlignedBox
    density_latent: np.ndarray        # (D, H, W)
    radiance_latent: np.ndarray       # (D, H, W, 3)
    occupancy_logit: np.ndarray       # (D, H, W)
    is_background: bool = False
    density_state: AdamState = None
    radiance_state: AdamState = None
    occupancy_state: AdamState = None

    def __post_init__(self):
        self.density_latent = np.ascontiguousarray(self.density_latent, dtype=np.float64)
        self.radiance_latent = np.ascontiguousarray(self.radiance_latent, dtype=np.float64)
        self.occupancy_logit = np.ascontiguousarray(self.occupancy_logit, dtype=np.float64)
        if self.density_state is None:
            self.density_state = AdamState.like(self.density_latent)
        if self.radiance_state is None:
            self.radiance_state = AdamState.like(self.radiance_latent)
        if self.occupancy_state is None:
            self.occupancy_state = AdamState.like(self.occupancy_logit)

    @property
    def dims(self):
        return self.density_latent.shape

    @staticmethod
    def fresh(dims, box, is_background: bool = False,
              density_latent_init: float = -3.0) -> "LatentVolume":
        d, h, w = dims
        return LatentVolume(box=box,
                            density_latent=np.full((d, h, w), density_latent_init),
                            radiance_latent=np.zeros((d, h, w, 3)),
                            occupancy_logit=np.zeros((d, h, w)),
                            is_background=is_background)

    @staticmethod
    def from_volume(volume: ObjectVolume) -> "LatentVolume":
        return LatentVolume(
            box=volume.box,
            density_latent=softplus_inverse(volume.density),
            radiance_latent=_logit(np.clip(volume.radiance, 1e-7, 1.0 - 1e-7)),
            occupancy_logit=volume.occupancy_logit.copy(),
            is_background=volume.is_background)

    def decode(self) -> ObjectVolume:
        return ObjectVolume(box=self.box,
                            density=softplus(self.density_latent),
                            radiance=_expit(self.radiance_latent),
                            occupancy_logit=self.occupancy_logit.copy(),
                            is_background=self.is_background)


@dataclass
class LatentObject:
    latent: LatentVolume
    pose: RigidPose
    name: str = ""


@dataclass
class LatentScene:
    background: LatentVolume
    objects: list[LatentObject] = field(default_factory=list)

    @staticmethod
    def from_scene(scene: Scene) -> "LatentScene":
        return LatentScene(
            background=LatentVolume.from_volume(scene.background),
            objects=[LatentObject(LatentVolume.from_volume(o.volume), o.pose, o.name)
                     for o in scene.objects])

    def entries(self):
        """(owner id, latent, pose) triples; background is owner 0."""
        out = [(0, self.background, RigidPose.identity())]
        for i, obj in enumerate(self.objects):
            out.append((i + 1, obj.latent, obj.pose))
        return out

    def by_owner(self) -> dict[int, LatentVolume]:
        return {owner: lat for owner, lat, _ in self.entries()}

    def decode(self) -> Scene:
        return Scene(background=self.background.decode(),
                     objects=[SceneObject(o.latent.decode(), o.pose, o.name)
                              for o in self.objects])


@dataclass
class TrainView:
    """One posed training image with optional dense supervision.

    depth is camera-z (converted internally to ray distance); NaN entries
    mean no supervision at that pixel. modal_masks / amodal_masks map
    owner ids to (H, W) weight maps with the same NaN convention.
    """

    intrinsics: CameraIntrinsics
    pose: RigidPose
    rgb: np.ndarray
    depth: np.ndarray | None = None
    modal_masks: dict[int, np.ndarray] | None = None
    amodal_masks: dict[int, np.ndarray] | None = None

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.shape != shape + (3,):
            raise ContractError(f"view rgb must have shape {shape + (3,)}, got {self.rgb.shape}")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64)
            if self.depth.shape != shape:
                raise ContractError(f"view depth must have shape {shape}")
        for masks in (self.modal_masks, self.amodal_masks):
            if masks is not None:
                for k, m in masks.items():
                    if np.asarray(m).shape != shape:
                        raise ContractError(f"mask {k} must have shape {shape}")


@dataclass(frozen=True)
class FitConfig:
    """Optimization settings.

    The optimizer defaults (learning_rate 1e-3, betas 0.9/0.999, epsilon
    1e-8) are standard Adam. Loss weights scale the color (squared error),
    depth (absolute error, only where rendered opacity exceeds
    depth_opacity_threshold), mask (cross entropy, predictions squashed
    into [mask_clamp, 1 - mask_clamp] so the loss stays smooth at the
    endpoints), and occupancy (voxel cross entropy) terms.
    """

    iterations: int = 2000
    rays_per_iteration: int = 1024
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    w_color: float = 1.0
    w_depth: float = 0.1
    w_mask: float = 0.1
    w_occupancy: float = 0.01
    depth_opacity_threshold: float = 0.1
    mask_clamp: float = 1e-6
    occupancy_density_threshold: float = 1.0
    freeze_background: bool = False
    seed: int = 0
    render: RenderConfig = field(default_factory=lambda: RenderConfig(
        samples_per_object=32, samples_background=32))

    def __post_init__(self):
        if self.iterations < 1 or self.rays_per_iteration < 1:
            raise DomainError("iterations and rays_per_iteration must be >= 1")
        if not 0 < self.mask_clamp < 0.5:
            raise DomainError("mask_clamp must lie in (0, 0.5)")


@dataclass(frozen=True)
class RayTargets:
    """Supervision for a single ray; None members are unsupervised.

    depth is a ray distance here (the single-ray API has no camera to
    define a z axis).
    """

    color: np.ndarray
    depth: float | None = None
    modal: dict[int, float] | None = None
    amodal: dict[int, float] | None = None


@dataclass
class LatentGrads:
    density_latent: np.ndarray
    radiance_latent: np.ndarray


class LossParts:
    """Scalar loss decomposition; total = sum of the named parts."""

    __slots__ = ("total", "color", "depth", "mask", "occupancy")

    def __init__(self, color=0.0, depth=0.0, mask=0.0, occupancy=0.0):
        self.color = float(color)
        self.depth = float(depth)
        self.mask = float(mask)
        self.occupancy = float(occupancy)
        self.total = self.color + self.depth + self.mask + self.occupancy

    def as_row(self):
        return [self.total, self.color, self.depth, self.mask, self.occupancy]


@dataclass
class FitResult:
    scene: Scene
    latents: LatentScene
    loss_history: np.ndarray  # (iterations, 5): total, color, depth, mask, occupancy
    diagnostics: dict


@dataclass
class _Targets:
    """Batched supervision; NaN marks unsupervised entries."""

    color: np.ndarray   # (R, 3)
    tau: np.ndarray     # (R,) ray distances
    modal: np.ndarray   # (R, n_owners)
    amodal: np.ndarray  # (R, n_owners)


def _decoded_entries(latents: LatentScene):
    return [(owner, lat.decode(), pose) for owner, lat, pose in latents.entries()]


def _refresh_fields(samples: _SceneSamples, by_owner: dict[int, LatentVolume]) -> None:
    """Recompute sigma/rgb from latents through the frozen stencils."""
    for b in samples.blocks:
        lat = by_owner[b.owner]
        dl = lat.density_latent.reshape(-1)[b.stencil_idx]
        b.sigma = (softplus(dl) * b.stencil_wgt).sum(axis=-1)
        rl = lat.radiance_latent.reshape(-1, 3)[b.stencil_idx]
        b.rgb = (_expit(rl) * b.stencil_wgt[..., None]).sum(axis=-2)
    samples.sigma = np.concatenate([b.sigma for b in samples.blocks], axis=1)
    samples.rgb = np.concatenate([b.rgb for b in samples.blocks], axis=1)


def _mask_ce(pred, target, clamp):
    """Clamped cross entropy and its gradient in the raw prediction.

    The prediction is squashed affinely into [clamp, 1 - clamp] before the
    log terms, which keeps the loss finite and smooth for predictions at
    exactly 0 or 1 (an affine squash, unlike a hard clip, has no flat
    regions to kill gradients).
    """
    p = clamp + (1.0 - 2.0 * clamp) * pred
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (1.0 - 2.0 * clamp) * (p - target) / (p * (1.0 - p))
    return loss, grad


def _loss_terms(pack, targets: _Targets, cfg: FitConfig):
    """Scalar loss parts plus the per-ray gradient seeds.

    Returns (parts, g_color (R,3), g_tau (R,), g_modal (R,K+1),
    g_amodal (R,K+1), counts dict). Every seed already includes its loss
    weight and its averaging denominator.
    """
    r = pack.color.shape[0]

    diff = pack.color - targets.color
    color_loss = cfg.w_color * float((diff ** 2).sum(axis=1).mean())
    g_color = 2.0 * cfg.w_color * diff / r

    depth_valid = np.isfinite(targets.tau) & (pack.opacity > cfg.depth_opacity_threshold)
    n_depth = max(int(depth_valid.sum()), 1)
    resid = np.where(depth_valid, pack.depth - targets.tau, 0.0)
    depth_loss = cfg.w_depth * float(np.abs(resid).sum()) / n_depth
    g_tau = cfg.w_depth * np.sign(resid) / n_depth

    def masked_ce(pred, target):
        valid = np.isfinite(target)
        n = max(int(valid.sum()), 1)
        loss, grad = _mask_ce(pred, np.where(valid, target, 0.0), cfg.mask_clamp)
        loss = float(np.where(valid, loss, 0.0).sum()) / n
        grad = np.where(valid, grad, 0.0) / n
        return loss, grad, int(valid.sum())

    modal_loss, g_modal, n_modal = masked_ce(pack.modal, targets.modal)
    amodal_loss, g_amodal, n_amodal = masked_ce(pack.amodal, targets.amodal)
    mask_loss = cfg.w_mask * (modal_loss + amodal_loss)
    g_modal = cfg.w_mask * g_modal
    g_amodal = cfg.w_mask * g_amodal

    parts = LossParts(color=color_loss, depth=depth_loss, mask=mask_loss)
    counts = {"depth_rays": int(depth_valid.sum()), "modal_terms": n_modal,
              "amodal_terms": n_amodal}
    return parts, g_color, g_tau, g_modal, g_amodal, counts


def _suffix_excl(x):
    """sum_{j>i} x_j along axis 1."""
    rev = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    return rev - x


def _eval_batch(latents: LatentScene, samples: _SceneSamples, targets: _Targets,
                cfg: FitConfig, compute_grads: bool = True,
                fields_fresh: bool = False):
    """Loss and per-volume latent gradients for pre-gathered samples.

    fields_fresh skips re-deriving sigma/rgb from the latents when the
    samples were gathered from these exact latents already (the fit loop);
    finite-difference probes perturb latents after gathering and need the
    refresh.
    """
    by_owner = latents.by_owner()
    if not fields_fresh:
        _refresh_fields(samples, by_owner)
    pack = _composite_batch(samples, cfg.render.t_far)
    parts, g_color, g_tau, g_modal, g_amodal, counts = _loss_terms(pack, targets, cfg)
    if not compute_grads:
        return parts, None, counts

    # per-sample factor of each loss term that is linear in the weights
    a = ((g_color[:, None, :] * pack.rgb).sum(axis=-1)
         + g_tau[:, None] * pack.ts
         + np.take_along_axis(g_modal, pack.owner, axis=1))
    wa = pack.weights * a
    d_sigma_sorted = pack.delta * (pack.transmittance * (1.0 - pack.alpha) * a
                                   - _suffix_excl(wa))
    d_rgb_sorted = g_color[:, None, :] * pack.weights[..., None]

    # back to pre-sort (block) column layout
    d_sigma = np.empty_like(d_sigma_sorted)
    np.put_along_axis(d_sigma, pack.order, d_sigma_sorted, axis=1)
    d_rgb = np.empty_like(d_rgb_sorted)
    np.put_along_axis(d_rgb, pack.order[..., None], d_rgb_sorted, axis=1)

    grads: dict[int, LatentGrads] = {}
    for bi, b in enumerate(samples.blocks):
        ds_block = d_sigma[:, b.columns].copy()
        # amodal mask term: object-alone transmittance over its own samples
        g_am = g_amodal[:, b.owner]
        if np.any(g_am):
            w_own = pack.own_weights[bi]
            ds_block += (g_am[:, None] * pack.own_delta[bi]
                         * (pack.own_transmittance[bi] * (1.0 - pack.own_alpha[bi])
                            - _suffix_excl(w_own)))
        dc_block = d_rgb[:, b.columns]

        lat = by_owner[b.owner]
        if b.owner not in grads:
            grads[b.owner] = LatentGrads(
                density_latent=np.zeros_like(lat.density_latent),
                radiance_latent=np.zeros_like(lat.radiance_latent))
        g = grads[b.owner]
        flat_idx = b.stencil_idx.reshape(-1)
        n_vox = lat.density_latent.size
        # chain rule: sample -> stencil voxels -> activation -> latent
        gd = g.density_latent.reshape(-1)
        contrib = (ds_block[..., None] * b.stencil_wgt).reshape(-1)
        gd += np.bincount(flat_idx,
                          contrib * _expit(lat.density_latent.reshape(-1)[flat_idx]),
                          minlength=n_vox)
        gr = g.radiance_latent.reshape(-1, 3)
        rl = lat.radiance_latent.reshape(-1, 3)[flat_idx]
        s = _expit(rl)
        contrib_rgb = ((dc_block[:, :, None, :] * b.stencil_wgt[..., None])
                       .reshape(-1, 3)) * (s * (1.0 - s))
        for c in range(3):
            gr[:, c] += np.bincount(flat_idx, contrib_rgb[:, c], minlength=n_vox)

    return parts, grads, counts


def _frozen_loss(latents: LatentScene, samples: _SceneSamples, targets: _Targets,
                 cfg: FitConfig) -> float:
    """Loss only, through frozen stencils (the finite-difference probe)."""
    parts, _, _ = _eval_batch(latents, samples, targets, cfg, compute_grads=False)
    return parts.total


def _gather_for_fit(latents: LatentScene, origins, dirs, cfg: FitConfig,
                    rng: np.random.Generator | None) -> _SceneSamples:
    return _gather(_decoded_entries(latents), origins, dirs, cfg.render,
                   rng=rng, with_stencil=True)


def _targets_for_ray(targets: RayTargets, n_owners: int) -> _Targets:
    color = np.asarray(targets.color, dtype=np.float64).reshape(1, 3)
    tau = np.array([targets.depth if targets.depth is not None else np.nan])
    modal = np.full((1, n_owners), np.nan)
    amodal = np.full((1, n_owners), np.nan)
    for dst, src in ((modal, targets.modal), (amodal, targets.amodal)):
        if src:
            for k, v in src.items():
                if not 0 <= k < n_owners:
                    raise ContractError(f"mask target references unknown object id {k}")
                dst[0, k] = v
    return _Targets(color=color, tau=tau, modal=modal, amodal=amodal)


def ray_loss_and_gradients(latents: LatentScene, ray: Ray, targets: RayTargets,
                           config: FitConfig):
    """Loss and analytic latent gradients for one supervised ray.

    Returns (loss, grads) where grads maps owner id (0 = background) to
    LatentGrads; owners whose volumes the ray never touches get zero
    gradients.
    """
    n_owners = len(latents.objects) + 1
    samples = _gather_for_fit(latents, ray.origin[None], ray.direction[None],
                              config, rng=None)
    t = _targets_for_ray(targets, n_owners)
    parts, grads, _ = _eval_batch(latents, samples, t, config)
    by_owner = latents.by_owner()
    for owner, lat in by_owner.items():
        if owner not in grads:
            grads[owner] = LatentGrads(np.zeros_like(lat.density_latent),
                                       np.zeros_like(lat.radiance_latent))
    return parts.total, grads


def occupancy_targets_from_density(density: np.ndarray, threshold: float = 1.0) -> np.ndarray:
    """Binary voxel labels: 1 where density exceeds the threshold."""
    return (np.asarray(density) > threshold).astype(np.float64)


def occupancy_loss_and_gradients(latent: LatentVolume, labels: np.ndarray):
    """Voxel cross entropy between sigmoid(occupancy_logit) and labels.

    NaN labels are unlabeled and contribute neither loss nor gradient.
    Returns (mean loss over labeled voxels, gradient in the logit).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != latent.occupancy_logit.shape:
        raise ContractError(
            f"labels shape {labels.shape} does not match grid {latent.occupancy_logit.shape}")
    valid = np.isfinite(labels)
    n = max(int(valid.sum()), 1)
    x = latent.occupancy_logit
    y = np.where(valid, labels, 0.0)
    # stable BCE on logits: y*softplus(-x) + (1-y)*softplus(x)
    loss = float(np.where(valid, y * softplus(-x) + (1.0 - y) * softplus(x), 0.0).sum()) / n
    grad = np.where(valid, (_expit(x) - y), 0.0) / n
    return loss, grad


class _Adam:
    def __init__(self, cfg: FitConfig):
        self.lr = cfg.learning_rate
        self.b1 = cfg.beta1
        self.b2 = cfg.beta2
        self.eps = cfg.epsilon
        self.t = 0

    def begin_step(self):
        self.t += 1

    def update(self, param: np.ndarray, grad: np.ndarray, state: AdamState):
        state.m *= self.b1
        state.m += (1 - self.b1) * grad
        state.v *= self.b2
        state.v += (1 - self.b2) * grad * grad
        m_hat = state.m / (1 - self.b1 ** self.t)
        v_hat = state.v / (1 - self.b2 ** self.t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _stack_views(views: list[TrainView], n_owners: int):
    """Flatten all views into global per-pixel ray and target arrays."""
    origins, dirs, colors = [], [], []
    taus = []
    modal = []
    amodal = []
    for view in views:
        origin, d, dz = camera_rays(view.intrinsics, view.pose)
        n = d.shape[0] * d.shape[1]
        origins.append(np.broadcast_to(origin, (n, 3)))
        dirs.append(d.reshape(-1, 3))
        colors.append(view.rgb.reshape(-1, 3))
        if view.depth is not None:
            # stored depth is camera-z; optimization runs on ray distance
            taus.append((view.depth / dz).reshape(-1))
        else:
            taus.append(np.full(n, np.nan))
        for dst, masks in ((modal, view.modal_masks), (amodal, view.amodal_masks)):
            block = np.full((n, n_owners), np.nan)
            if masks:
                for k, m in masks.items():
                    if not 0 <= k < n_owners:
                        raise ContractError(f"view mask references unknown object id {k}")
                    block[:, k] = np.asarray(m, dtype=np.float64).reshape(-1)
            dst.append(block)
    return (np.concatenate(origins), np.concatenate(dirs),
            _Targets(color=np.concatenate(colors), tau=np.concatenate(taus),
                     modal=np.concatenate(modal), amodal=np.concatenate(amodal)))


def fit(scene: Scene | LatentScene, views: list[TrainView], config: FitConfig,
        occupancy_labels: dict[int, np.ndarray] | None = None) -> FitResult:
    """Optimize scene volumes against posed views.

    The initial scene provides boxes, poses, and starting fields (pass a
    LatentScene to control initialization directly). Each iteration
    samples rays_per_iteration pixels uniformly across all view pixels,
    renders them, and takes one Adam step on every non-frozen latent
    volume. Occupancy logits train against occupancy_labels when given,
    otherwise against labels derived from the current density (treated as
    constants), whenever w_occupancy > 0.

    Returns the decoded fitted scene plus the per-iteration loss history
    (columns: total, color, depth, mask, occupancy).
    """
    if not views:
        raise ContractError("fit requires at least one view")
    latents = scene if isinstance(scene, LatentScene) else LatentScene.from_scene(scene)
    n_owners = len(latents.objects) + 1
    origins, dirs, targets = _stack_views(views, n_owners)
    n_px = origins.shape[0]

    rng = np.random.default_rng(config.seed)
    adam = _Adam(config)
    history = np.zeros((config.iterations, 5))
    diagnostics = {"rays_total": 0, "depth_rays": 0, "modal_terms": 0,
                   "amodal_terms": 0}

    trainable = []
    for owner, lat, _ in latents.entries():
        if owner == 0 and config.freeze_background:
            continue
        trainable.append((owner, lat))

    for it in range(config.iterations):
        sel = rng.integers(0, n_px, size=config.rays_per_iteration)
        samples = _gather_for_fit(latents, origins[sel], dirs[sel], config, rng)
        batch_targets = _Targets(color=targets.color[sel], tau=targets.tau[sel],
                                 modal=targets.modal[sel], amodal=targets.amodal[sel])
        parts, grads, counts = _eval_batch(latents, samples, batch_targets, config,
                                           fields_fresh=True)

        occ_loss = 0.0
        occ_grads = {}
        if config.w_occupancy > 0:
            for owner, lat in trainable:
                labels = None
                if occupancy_labels and owner in occupancy_labels:
                    labels = occupancy_labels[owner]
                else:
                    labels = occupancy_targets_from_density(
                        softplus(lat.density_latent), config.occupancy_density_threshold)
                loss_k, grad_k = occupancy_loss_and_gradients(lat, labels)
                occ_loss += config.w_occupancy * loss_k / len(trainable)
                occ_grads[owner] = config.w_occupancy * grad_k / len(trainable)

        adam.begin_step()
        for owner, lat in trainable:
            if owner in grads:
                adam.update(lat.density_latent, grads[owner].density_latent,
                            lat.density_state)
                adam.update(lat.radiance_latent, grads[owner].radiance_latent,
                            lat.radiance_state)
            if owner in occ_grads:
                adam.update(lat.occupancy_logit, occ_grads[owner], lat.occupancy_state)

        parts = LossParts(color=parts.color, depth=parts.depth, mask=parts.mask,
                          occupancy=occ_loss)
        history[it] = parts.as_row()
        diagnostics["rays_total"] += config.rays_per_iteration
        for k in ("depth_rays", "modal_terms", "amodal_terms"):
            diagnostics[k] += counts[k]

    return FitResult(scene=latents.decode(), latents=latents,
                     loss_history=history, diagnostics=diagnostics)
