"""Ray generation for scale-``s`` patches and volume-rendering quadrature.

Image-plane coordinates ``u`` span [-1, 1]^2 across the full field of view;
pixel ``j`` of an ``H``-pixel row sits at ``-1 + (2 j + 1) / H`` (pixel
centers).  A patch of scale ``s`` centered at ``u0`` places its pixels at
``u0 + s * g`` with ``g`` that same pixel-center grid, so a patch always has
``H x H`` rays regardless of how much of the view it covers.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import torch

from .cameras import DecomposedPose, pose_to_matrix
from .exceptions import InvalidInputError, InvalidRayError, InvalidWindowError

DEFAULT_NEAR = 0.05
DEFAULT_FAR = 2.0 * math.sqrt(3.0)
DEFAULT_SAMPLES = 96
WINDOW_TOL = 1e-12


def pixel_centers(n, dtype=torch.float64):
    return -1.0 + (2.0 * torch.arange(n, dtype=dtype) + 1.0) / n


@dataclass
class PatchRayBundle:
    """``H x H`` rays sharing one origin per patch.

    ``origins`` is ``[B, 3]``, ``directions`` ``[B, H, H, 3]`` (unit norm),
    ``scale`` ``[B]`` and ``center`` ``[B, 2]``.
    """

    origins: torch.Tensor
    directions: torch.Tensor
    scale: torch.Tensor
    center: torch.Tensor
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR
    camera_index: Optional[torch.Tensor] = None

    @property
    def resolution(self):
        return self.directions.shape[1]

    @property
    def batch_size(self):
        return self.directions.shape[0]


@dataclass
class RenderedPatch:
    colors: torch.Tensor  # [..., 3]
    depth: torch.Tensor  # [...]
    opacity: torch.Tensor  # [...]
    weights: Optional[torch.Tensor] = None  # [..., n_samples]
    transmittance: Optional[torch.Tensor] = None  # [...] residual after the last sample


def _as_batch(x, batch, dtype, width=None):
    t = torch.as_tensor(x, dtype=dtype)
    if width is None:
        return t.expand(batch) if t.dim() == 0 else t
    return t.expand(batch, width) if t.dim() == 1 else t


def check_window(scale, center, tol=WINDOW_TOL):
    scale = torch.as_tensor(scale, dtype=torch.float64)
    center = torch.as_tensor(center, dtype=torch.float64)
    if bool(((scale <= 0) | (scale > 1)).any()):
        raise InvalidWindowError(f"patch scale must lie in (0, 1], got {scale.tolist()}")
    reach = center.abs() + scale.unsqueeze(-1)
    if bool((reach > 1 + tol).any()):
        raise InvalidWindowError("patch window extends beyond the image plane (|u0| + s > 1)")


def camera_directions(fov_deg, scale, center, resolution, dtype=torch.float64):
    """Unnormalized camera-frame directions ``[B, H, H, 3]`` of patch pixels."""
    if not 0 < fov_deg < 180:
        raise InvalidInputError(f"field of view must lie in (0, 180) degrees, got {fov_deg}")
    tan_half = math.tan(math.radians(fov_deg) / 2.0)
    g = pixel_centers(resolution, dtype)
    gy, gx = torch.meshgrid(g, g, indexing="ij")
    ux = center[:, 0, None, None] + scale[:, None, None] * gx
    uy = center[:, 1, None, None] + scale[:, None, None] * gy
    ones = torch.ones_like(ux)
    return torch.stack([ux * tan_half, uy * tan_half, ones], dim=-1)


def generate_patch_rays(pose, fov_deg, scale, center, resolution, near=DEFAULT_NEAR,
                        far=DEFAULT_FAR, camera_index=None):
    """Rays of ``resolution x resolution`` patches.

    ``pose`` is a (batched) :class:`DecomposedPose` or camera-to-world
    matrices ``[B, 4, 4]``; ``scale`` is ``[B]`` and ``center`` ``[B, 2]``.
    Gradients flow from the directions/origins back into the pose.
    """
    if isinstance(pose, DecomposedPose):
        c2w = pose_to_matrix(pose)
    else:
        c2w = torch.as_tensor(pose)
    if c2w.dim() == 2:
        c2w = c2w.unsqueeze(0)
    B = c2w.shape[0]
    dtype = c2w.dtype
    scale = _as_batch(scale, B, dtype)
    center = _as_batch(center, B, dtype, width=2)
    check_window(scale.detach(), center.detach())
    if not 0 <= near < far:
        raise InvalidRayError(f"need 0 <= near < far, got near={near}, far={far}")
    d_cam = camera_directions(fov_deg, scale, center, resolution, dtype)
    d_cam = d_cam / torch.linalg.vector_norm(d_cam, dim=-1, keepdim=True)
    R = c2w[:, :3, :3]
    d_world = torch.einsum("bij,bhwj->bhwi", R, d_cam)
    return PatchRayBundle(c2w[:, :3, 3], d_world, scale, center, near, far, camera_index)


def clip_to_cube(origins, directions, near, far, bound=1.0):
    """Intersect rays with the cube ``[-bound, bound]^3``.

    Returns per-ray ``(t_near, t_far, hit)``; rays that miss keep
    ``t_far = t_near`` and ``hit = False``.
    """
    safe = torch.where(directions.abs() < 1e-12, torch.full_like(directions, 1e-12), directions)
    t0 = (-bound - origins) / safe
    t1 = (bound - origins) / safe
    t_enter = torch.minimum(t0, t1).amax(dim=-1)
    t_exit = torch.maximum(t0, t1).amin(dim=-1)
    t_near = torch.clamp(t_enter, min=near)
    t_far = torch.clamp(t_exit, max=far)
    hit = t_far > t_near
    t_far = torch.where(hit, t_far, t_near)
    return t_near, t_far, hit


def composite(rgb, sigma, t, delta, background=None):
    """Quadrature of the volume-rendering integral along the last axis.

    ``rgb`` is ``[..., K, 3]``, ``sigma``/``t``/``delta`` are ``[..., K]``.
    Opacity per step is ``1 - exp(-sigma * delta)`` and transmittance is the
    exclusive running product of ``1 - alpha``.
    """
    tau = sigma * delta
    alpha = -torch.expm1(-tau)
    cum = torch.cumsum(tau, dim=-1)
    trans = torch.exp(-torch.cat([torch.zeros_like(cum[..., :1]), cum[..., :-1]], dim=-1))
    weights = trans * alpha
    residual = torch.exp(-cum[..., -1])
    color = (weights.unsqueeze(-1) * rgb).sum(dim=-2)
    if background is not None:
        bg = torch.as_tensor(background, dtype=color.dtype)
        color = color + residual.unsqueeze(-1) * bg
    acc = weights.sum(dim=-1)
    depth_num = (weights * t).sum(dim=-1)
    depth = torch.where(acc > 1e-10, depth_num / acc.clamp(min=1e-10), t[..., -1])
    return RenderedPatch(color, depth, acc, weights, residual)


def render_ray_batch(field, origins, directions, near=DEFAULT_NEAR, far=DEFAULT_FAR,
                     n_samples=DEFAULT_SAMPLES, stratified=False, generator=None,
                     background=None, clip=True):
    """Render rays ``origins``/``directions`` of shape ``[B, R, 3]``.

    ``field`` maps points ``[B, M, 3]`` to a ``FieldSample``.  Samples are
    bin midpoints, or one uniformly jittered sample per bin when
    ``stratified``.
    """
    if n_samples < 2:
        raise InvalidInputError("need at least two samples per ray")
    near_t = torch.as_tensor(near, dtype=directions.dtype)
    far_t = torch.as_tensor(far, dtype=directions.dtype)
    if bool((near_t < 0).any()) or bool((near_t >= far_t).any()):
        raise InvalidRayError("degenerate ray bounds: need 0 <= t_near < t_far")
    B, R = directions.shape[:2]
    o = origins.unsqueeze(1).expand(B, R, 3) if origins.dim() == 2 else origins
    if clip:
        t_n, t_f, hit = clip_to_cube(o, directions, near_t, far_t)
    else:
        t_n = near_t.expand(B, R) if near_t.dim() == 0 else near_t
        t_f = far_t.expand(B, R) if far_t.dim() == 0 else far_t
        hit = torch.ones(B, R, dtype=torch.bool)
    delta = (t_f - t_n) / n_samples
    if stratified:
        u = torch.rand(B, R, n_samples, generator=generator, dtype=directions.dtype)
    else:
        u = torch.full((B, R, n_samples), 0.5, dtype=directions.dtype)
    k = torch.arange(n_samples, dtype=directions.dtype)
    t = t_n.unsqueeze(-1) + (k + u) * delta.unsqueeze(-1)
    pts = o.unsqueeze(2) + t.unsqueeze(-1) * directions.unsqueeze(2)
    sample = field(pts.reshape(B, R * n_samples, 3))
    rgb = sample.rgb.reshape(B, R, n_samples, 3)
    sigma = sample.sigma.reshape(B, R, n_samples) * hit.unsqueeze(-1).to(directions.dtype)
    return composite(rgb.to(directions.dtype), sigma.to(directions.dtype), t,
                     delta.unsqueeze(-1).expand_as(t), background)


def render_rays(field, bundle, n_samples=DEFAULT_SAMPLES, stratified=False, generator=None,
                background=None, chunk=None):
    """Render a :class:`PatchRayBundle`; colors come back as ``[B, H, H, 3]``."""
    B, H = bundle.batch_size, bundle.resolution
    dirs = bundle.directions.reshape(B, H * H, 3)
    if chunk is None or H * H <= chunk:
        out = render_ray_batch(field, bundle.origins, dirs, bundle.near, bundle.far, n_samples,
                               stratified, generator, background)
    else:
        parts = [render_ray_batch(field, bundle.origins, dirs[:, i:i + chunk], bundle.near,
                                  bundle.far, n_samples, stratified, generator, background)
                 for i in range(0, H * H, chunk)]
        out = RenderedPatch(*(torch.cat([getattr(p, name) for p in parts], dim=1)
                              for name in ("colors", "depth", "opacity", "weights", "transmittance")))
    return RenderedPatch(out.colors.reshape(B, H, H, 3), out.depth.reshape(B, H, H),
                         out.opacity.reshape(B, H, H), out.weights.reshape(B, H, H, -1),
                         out.transmittance.reshape(B, H, H))


def render_view(field, pose, fov_deg, resolution, n_samples=DEFAULT_SAMPLES, background=None,
                chunk=8192, dtype=None):
    """Full-frame render: the ``s = 1`` patch at ``resolution`` pixels."""
    if isinstance(pose, DecomposedPose) and dtype is not None:
        pose = pose.to(dtype)
    c2w = pose_to_matrix(pose) if isinstance(pose, DecomposedPose) else torch.as_tensor(pose)
    if dtype is not None:
        c2w = c2w.to(dtype)
    if c2w.dim() == 2:
        c2w = c2w.unsqueeze(0)
    B = c2w.shape[0]
    bundle = generate_patch_rays(c2w, fov_deg, torch.ones(B, dtype=c2w.dtype),
                                 torch.zeros(B, 2, dtype=c2w.dtype), resolution)
    return render_rays(field, bundle, n_samples, background=background, chunk=chunk)


def panorama_directions(height, dtype=torch.float64):
    """Unit directions ``[height, 2 * height, 3]`` of an equirectangular grid.

    Column ``j`` looks at yaw ``360 * j / W`` degrees (yaw 0 is +x, yaw 90
    is +z); row ``i`` at pitch ``90 - 180 * (i + 0.5) / height`` (up is -y).
    """
    width = 2 * height
    yaw = torch.arange(width, dtype=dtype) * (2.0 * math.pi / width)
    pitch = (0.5 - (torch.arange(height, dtype=dtype) + 0.5) / height) * math.pi
    p, y = torch.meshgrid(pitch, yaw, indexing="ij")
    return torch.stack([torch.cos(p) * torch.cos(y), -torch.sin(p), torch.cos(p) * torch.sin(y)], dim=-1)


def render_panorama(field, position, height_resolution, n_samples=DEFAULT_SAMPLES,
                    background=None, chunk=8192, dtype=torch.float32):
    """Equirectangular ``[H, 2H, 3]`` panorama seen from ``position``."""
    position = torch.as_tensor(position, dtype=dtype)
    if bool((position.abs() > 1).any()):
        warnings.warn(f"panorama position {position.tolist()} lies outside the scene cube")
    dirs = panorama_directions(height_resolution, dtype).reshape(1, -1, 3)
    colors = []
    for i in range(0, dirs.shape[1], chunk):
        part = render_ray_batch(field, position.reshape(1, 3), dirs[:, i:i + chunk],
                                n_samples=n_samples, background=background)
        colors.append(part.colors)
    return torch.cat(colors, dim=1).reshape(height_resolution, 2 * height_resolution, 3)
