"""Procedural toy room: analytic field, exact renderer and triplane bake.

The room fills the scene cube in x and z and is shorter in y.  Everything in
the cube outside the room's hollow interior is solid wall, floor (+y, since
+y points down) or ceiling; colored boxes stand inside.  Material precedence
is boxes, then floor, then ceiling, then walls.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cameras import DecomposedPose, pose_to_matrix
from .field import FieldDecoder, FieldSample, TriplaneGrid
from .rendering import DEFAULT_FAR, DEFAULT_NEAR, generate_patch_rays


@dataclass(frozen=True)
class Box:
    center: tuple
    half_size: tuple
    color: tuple


def _default_boxes():
    return (
        Box((-0.45, 0.27, 0.35), (0.15, 0.15, 0.15), (0.80, 0.22, 0.18)),
        Box((0.40, 0.32, -0.30), (0.20, 0.10, 0.12), (0.20, 0.65, 0.30)),
        Box((0.10, 0.17, 0.55), (0.08, 0.25, 0.08), (0.20, 0.30, 0.80)),
    )


@dataclass(frozen=True)
class ToySceneSpec:
    room_half_extents: tuple = (1.0, 0.5, 1.0)
    wall_thickness: float = 0.08
    wall_color: tuple = (0.85, 0.80, 0.70)
    floor_color: tuple = (0.45, 0.32, 0.20)
    ceiling_color: tuple = (0.95, 0.95, 0.92)
    boxes: tuple = field(default_factory=_default_boxes)
    density: float = 200.0

    def __post_init__(self):
        if self.density <= 0:
            raise ValueError("density must be positive")
        interior = self.interior_half_extents
        if min(interior) <= 0:
            raise ValueError("walls are thicker than the room")
        for box in self.boxes:
            for c, h, lim in zip(box.center, box.half_size, interior):
                if h <= 0 or abs(c) + h > lim + 1e-9:
                    raise ValueError(f"box {box} does not fit inside the room interior")

    @property
    def interior_half_extents(self):
        return tuple(h - self.wall_thickness for h in self.room_half_extents)

    @property
    def floor_level(self):
        return self.interior_half_extents[1]

    def to_dict(self):
        return {
            "room_half_extents": list(self.room_half_extents),
            "wall_thickness": self.wall_thickness,
            "wall_color": list(self.wall_color),
            "floor_color": list(self.floor_color),
            "ceiling_color": list(self.ceiling_color),
            "boxes": [{"center": list(b.center), "half_size": list(b.half_size),
                       "color": list(b.color)} for b in self.boxes],
            "density": self.density,
        }


def _in_box(x, center, half):
    c = torch.as_tensor(center, dtype=x.dtype)
    h = torch.as_tensor(half, dtype=x.dtype)
    return ((x - c).abs() < h).all(dim=-1)


def toy_field(spec, x):
    """Analytic ``(rgb, sigma)`` of the toy room at points ``x [..., 3]``."""
    x = torch.as_tensor(x)
    if not x.is_floating_point():
        x = x.double()
    in_cube = (x.abs() <= 1.0).all(dim=-1)
    interior = _in_box(x, (0.0, 0.0, 0.0), spec.interior_half_extents)
    room_solid = in_cube & ~interior
    y_f = spec.floor_level
    rgb = torch.empty(*x.shape[:-1], 3, dtype=x.dtype)
    rgb[:] = torch.as_tensor(spec.wall_color, dtype=x.dtype)
    rgb[room_solid & (x[..., 1] < -y_f)] = torch.as_tensor(spec.ceiling_color, dtype=x.dtype)
    rgb[room_solid & (x[..., 1] > y_f)] = torch.as_tensor(spec.floor_color, dtype=x.dtype)
    solid = room_solid.clone()
    for box in spec.boxes:
        inside = _in_box(x, box.center, box.half_size)
        rgb[inside] = torch.as_tensor(box.color, dtype=x.dtype)
        solid |= inside
    sigma = solid.to(x.dtype) * spec.density
    return FieldSample(rgb, sigma)


class ToyField:
    """Callable wrapper so the renderer can consume the analytic field."""

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, x):
        return toy_field(self.spec, x)


# ---------------------------------------------------------------------------
# exact rendering by segment integration


def ray_box_interval(origins, dirs, center, half):
    """Slab-method entry/exit distances ``(t0, t1)``; ``t0 >= t1`` means a miss."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (c - h - origins) * inv
        tb = (c + h - origins) * inv
    lo = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
    hi = np.where(np.isnan(tb), np.inf, np.maximum(ta, tb))
    return lo.max(axis=-1), hi.min(axis=-1)


def render_analytic(spec, origins, dirs, near=DEFAULT_NEAR, far=DEFAULT_FAR, background=(0.0, 0.0, 0.0)):
    """Exact volume rendering of the piecewise-constant field.

    Every box face, the interior faces, the floor/ceiling planes and the cube
    faces are breakpoints; between consecutive breakpoints the field is
    constant, so each segment composites in closed form.  Returns
    ``(colors [R, 3], depth [R], opacity [R])``.
    """
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), np.shape(dirs))
    dirs = np.asarray(dirs, dtype=np.float64)
    R = dirs.shape[0]
    shapes = [((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), ((0.0, 0.0, 0.0), spec.interior_half_extents)]
    shapes += [(b.center, b.half_size) for b in spec.boxes]
    cuts = [np.full(R, near), np.full(R, far)]
    for center, half in shapes:
        t0, t1 = ray_box_interval(origins, dirs, center, half)
        cuts += [t0, t1]
    y_f = spec.floor_level
    with np.errstate(divide="ignore", invalid="ignore"):
        for level in (y_f, -y_f):
            cuts.append((level - origins[:, 1]) / dirs[:, 1])
    t = np.stack(cuts, axis=1)
    t = np.where(np.isfinite(t), t, far)
    t = np.sort(np.clip(t, near, far), axis=1)
    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    lengths = t[:, 1:] - t[:, :-1]
    pts = origins[:, None, :] + mids[..., None] * dirs[:, None, :]
    rgb, sigma = toy_field(spec, torch.from_numpy(pts))
    rgb, sigma = rgb.numpy(), sigma.numpy()
    tau = sigma * lengths
    alpha = -np.expm1(-tau)
    cum = np.cumsum(tau, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((R, 1)), cum[:, :-1]], axis=1))
    w = trans * alpha
    color = (w[..., None] * rgb).sum(axis=1) + np.exp(-cum[:, -1])[:, None] * np.asarray(background)
    acc = w.sum(axis=1)
    # expected depth inside each segment of constant density
    with np.errstate(divide="ignore", invalid="ignore"):
        seg_depth = np.where(tau > 1e-12,
                             t[:, :-1] + 1.0 / np.where(sigma > 0, sigma, 1.0)
                             - lengths * np.exp(-tau) / np.where(alpha > 0, alpha, 1.0),
                             mids)
    depth = np.where(acc > 1e-10, (w * seg_depth).sum(axis=1) / np.maximum(acc, 1e-10), far)
    return color, depth, acc


def render_analytic_view(spec, pose, fov_deg, resolution):
    """Exact full-frame render ``[H, H, 3]`` of the toy room."""
    bundle = generate_patch_rays(pose_to_matrix(pose.to(torch.float64)), fov_deg,
                                 torch.ones(1, dtype=torch.float64),
                                 torch.zeros(1, 2, dtype=torch.float64), resolution)
    dirs = bundle.directions[0].reshape(-1, 3).numpy()
    origin = bundle.origins[0].numpy()
    color, depth, _ = render_analytic(spec, origin, dirs)
    return color.reshape(resolution, resolution, 3), depth.reshape(resolution, resolution)


# ---------------------------------------------------------------------------
# dataset generation


def sample_toy_cameras(spec, n_views, rng, sigma_xy=0.3, height=0.0, max_attempts=10_000):
    """Gaussian positions on the camera plane with uniform yaw; occupied centers are rejected."""
    poses = []
    attempts = 0
    while len(poses) < n_views:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError("could not place enough unoccupied cameras in the toy scene")
        px, pz = rng.normal(0.0, sigma_xy, size=2)
        yaw = rng.uniform(0.0, 360.0)
        position = torch.tensor([px, height, pz], dtype=torch.float64)
        if float(toy_field(spec, position.unsqueeze(0)).sigma[0]) > 0:
            continue
        poses.append(DecomposedPose.from_angles(yaw=yaw, position=position.tolist()))
    return poses


def render_toy_dataset(spec, n_views, resolution, fov_deg, rng, out_dir=None, sigma_xy=0.3,
                       height=0.0, name="toy_room"):
    """Render ``n_views`` exact images; optionally write PNGs plus ``dataset.json``.

    Returns ``(images [n, H, H, 3] float64, poses)``.
    """
    from .dataio import write_png

    poses = sample_toy_cameras(spec, n_views, rng, sigma_xy, height)
    images = np.stack([render_analytic_view(spec, pose, fov_deg, resolution)[0] for pose in poses])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images):
            write_png(out / f"view_{i:04d}.png", img)
        meta = {
            "format_version": 1,
            "scene": name,
            "fov_deg": float(fov_deg),
            "resolution": int(resolution),
            "n_views": int(n_views),
            "toy_scene": spec.to_dict(),
            "poses": [p.as_dict() for p in poses],
        }
        (out / "dataset.json").write_text(json.dumps(meta, indent=2))
    return images, poses


# ---------------------------------------------------------------------------
# exact triplane bake


def _logit(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 1e-6, 1 - 1e-6)
    return np.log(c) - np.log1p(-c)


class _Relu:
    """Builds leaky-ReLU unit pairs whose linear combination is an exact ReLU."""

    def __init__(self, slope):
        self.a = slope
        self.c_pos = 0.5 / (1 - slope) + 0.5 / (1 + slope)
        self.c_neg = 0.5 / (1 - slope) - 0.5 / (1 + slope)


def bake_toy_scene(spec, resolution=256, sharpness=1e9, dtype=torch.float64, hidden=64,
                   negative_slope=0.2, empty_logit=40.0):
    """Construct a triplane and decoder that reproduce :func:`toy_field`.

    Each shape (room interior and every box) gets one channel per axis
    holding the signed slab distance ``half - |coord - center|``, which is
    piecewise linear and therefore reproduced exactly by bilinear
    interpolation away from the slab center.  Per-axis channels live on a
    single plane each and are zero elsewhere, so summing the planes acts as
    concatenation.  The decoder clamps ``sharpness * distance`` to [0, 1]
    with pairs of leaky units, combines the three axes into an inside
    indicator, and maps indicators to density and color logits.  The baked
    field matches the analytic one except within ``1 / sharpness`` of a face;
    the default keeps that band far below float64 sample spacing.
    """
    shapes = [((0.0, 0.0, 0.0), spec.interior_half_extents)]
    shapes += [(b.center, b.half_size) for b in spec.boxes]
    n_shapes = len(shapes)
    n_channels = 3 * n_shapes + 2
    y_f = spec.floor_level
    N = resolution
    coords = np.linspace(-1.0, 1.0, N)
    planes = np.zeros((3, n_channels, N, N))
    # plane 0 = xy: columns follow x, rows follow y; plane 2 = yz: columns follow y, rows follow z
    for s, (center, half) in enumerate(shapes):
        gx = half[0] - np.abs(coords - center[0])
        gy = half[1] - np.abs(coords - center[1])
        gz = half[2] - np.abs(coords - center[2])
        planes[0, 3 * s + 0] = gx[None, :]
        planes[0, 3 * s + 1] = gy[:, None]
        planes[2, 3 * s + 2] = gz[:, None]
    planes[0, 3 * n_shapes] = (coords - y_f)[:, None]  # floor selector
    planes[0, 3 * n_shapes + 1] = (-coords - y_f)[:, None]  # ceiling selector
    grid = TriplaneGrid(torch.as_tensor(planes, dtype=dtype))

    r = _Relu(negative_slope)
    dec = FieldDecoder(n_channels, hidden, "sum", negative_slope).to(dtype)
    W1 = np.zeros((hidden, n_channels))
    b1 = np.zeros(hidden)
    W2 = np.zeros((hidden, hidden))
    b2 = np.zeros(hidden)
    unit = 0

    def clamp_units(channel, scale):
        # four layer-1 units whose combination is clamp(scale * f, 0, 1)
        nonlocal unit
        idx = list(range(unit, unit + 4))
        for k, (sign, shift) in enumerate(((1, 0), (-1, 0), (1, -1), (-1, 1))):
            W1[unit + k, channel] = sign * scale
            b1[unit + k] = shift
        unit += 4
        # clamp = relu(v) - relu(v - 1)
        return {idx[0]: r.c_pos, idx[1]: r.c_neg, idx[2]: -r.c_pos, idx[3]: -r.c_neg}

    axis_clamps = [[clamp_units(3 * s + a, sharpness) for a in range(3)] for s in range(n_shapes)]
    floor_clamp = clamp_units(3 * n_shapes, sharpness)
    ceil_clamp = clamp_units(3 * n_shapes + 1, sharpness)
    if unit > hidden:
        raise ValueError(f"toy scene needs {unit} hidden units, decoder has {hidden}")

    # layer 2: indicator_s = clamp(sum_a clamp_a - 2, 0, 1) via four units per shape
    unit2 = 0
    indicators = []
    for s in range(n_shapes):
        combo = {}
        for clamp in axis_clamps[s]:
            for j, w in clamp.items():
                combo[j] = combo.get(j, 0.0) + w
        idx = list(range(unit2, unit2 + 4))
        for k, (sign, shift) in enumerate(((1, -2), (-1, 2), (1, -3), (-1, 3))):
            for j, w in combo.items():
                W2[unit2 + k, j] = sign * w
            b2[unit2 + k] = shift
        unit2 += 4
        indicators.append({idx[0]: r.c_pos, idx[1]: r.c_neg, idx[2]: -r.c_pos, idx[3]: -r.c_neg})
    selectors = []
    for clamp in (floor_clamp, ceil_clamp):
        # selector in [0, 1] passes a leaky unit unchanged
        for j, w in clamp.items():
            W2[unit2, j] = w
        selectors.append({unit2: 1.0})
        unit2 += 1

    # density: (D + B) * solid - B with solid = 1 - interior + sum(boxes)
    big = spec.density + empty_logit
    Wd = np.zeros((1, hidden))
    for j, w in indicators[0].items():
        Wd[0, j] -= big * w
    for ind in indicators[1:]:
        for j, w in ind.items():
            Wd[0, j] += big * w

    # color logits: wall + floor/ceiling selectors + box indicators
    wall = _logit(spec.wall_color)
    terms = [(selectors[0], _logit(spec.floor_color) - wall),
             (selectors[1], _logit(spec.ceiling_color) - wall)]
    terms += [(ind, _logit(b.color) - wall) for ind, b in zip(indicators[1:], spec.boxes)]
    Wc1 = np.zeros((hidden, hidden))
    bc1 = np.zeros(hidden)
    for c in range(3):
        for k, sign in enumerate((1, -1)):
            row = 2 * c + k
            for ind, delta in terms:
                for j, w in ind.items():
                    Wc1[row, j] += sign * w * delta[c]
            bc1[row] = sign * wall[c]
    Wc2 = np.zeros((3, hidden))
    for c in range(3):
        Wc2[c, 2 * c] = 1.0 / (1 + negative_slope)
        Wc2[c, 2 * c + 1] = -1.0 / (1 + negative_slope)

    def assign(layer, W, b):
        layer.weight.data = torch.as_tensor(W, dtype=dtype)
        layer.bias.data = torch.as_tensor(b, dtype=dtype)

    # softplus(D) ~= D inside solids, softplus(-B) ~= 0 in empty space
    bd = np.array([spec.density])
    assign(dec.shared[0], W1, b1)
    assign(dec.shared[1], W2, b2)
    assign(dec.density, Wd, bd)
    assign(dec.color[0], Wc1, bc1)
    assign(dec.color[1], Wc2, np.zeros(3))
    for p in dec.parameters():
        p.requires_grad_(False)
    return grid, dec

