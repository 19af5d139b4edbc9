"""Camera poses and the optimizable non-parametric camera distribution.

Conventions: world +y is the vertical axis pointing *down* (image rows grow
along +y for an unrotated camera), cameras look along their local +z and
their local +x points right.  A pose ``T = [R p; 0 1]`` maps camera
coordinates to world coordinates with ``R = Rz @ Ry @ Rx``; each rotation is
stored as a ``(cos, sin)`` pair rather than an angle.
"""

import json
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .exceptions import ContractViolationError, DegenerateRotationError, SamplingExhaustedError

NORM_TOL = 1e-6
RENORM_TOL = 1e-12


def angle_pair(degrees, dtype=torch.float64):
    rad = torch.as_tensor(degrees, dtype=dtype) * (math.pi / 180.0)
    return torch.stack([torch.cos(rad), torch.sin(rad)], dim=-1)


def normalize_rotation(pair):
    """Scale a ``(cos, sin)`` pair (or a stack of them) to unit norm."""
    pair = torch.as_tensor(pair)
    if not pair.is_floating_point():
        pair = pair.to(torch.float64)
    norm = torch.linalg.vector_norm(pair, dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise DegenerateRotationError("cannot normalize a zero (cos, sin) pair")
    return pair / norm


def rot_z(pair):
    c, s = pair[..., 0], pair[..., 1]
    o, z = torch.ones_like(c), torch.zeros_like(c)
    return torch.stack([torch.stack([c, -s, z], -1),
                        torch.stack([s, c, z], -1),
                        torch.stack([z, z, o], -1)], -2)


def rot_y(pair):
    c, s = pair[..., 0], pair[..., 1]
    o, z = torch.ones_like(c), torch.zeros_like(c)
    return torch.stack([torch.stack([c, z, s], -1),
                        torch.stack([z, o, z], -1),
                        torch.stack([-s, z, c], -1)], -2)


def rot_x(pair):
    c, s = pair[..., 0], pair[..., 1]
    o, z = torch.ones_like(c), torch.zeros_like(c)
    return torch.stack([torch.stack([o, z, z], -1),
                        torch.stack([z, c, -s], -1),
                        torch.stack([z, s, c], -1)], -2)


@dataclass
class DecomposedPose:
    """Camera-to-world pose as three rotation pairs plus a translation.

    Every field may carry leading batch dimensions: ``rz``, ``ry``, ``rx``
    are ``[..., 2]`` and ``p`` is ``[..., 3]``.
    """

    rz: torch.Tensor
    ry: torch.Tensor
    rx: torch.Tensor
    p: torch.Tensor

    @classmethod
    def from_angles(cls, yaw=0.0, pitch=0.0, roll=0.0, position=(0.0, 0.0, 0.0), dtype=torch.float64):
        """``yaw`` rotates about y, ``pitch`` about x and ``roll`` about z (degrees)."""
        return cls(angle_pair(roll, dtype), angle_pair(yaw, dtype), angle_pair(pitch, dtype),
                   torch.as_tensor(position, dtype=dtype))

    @classmethod
    def identity(cls, position=(0.0, 0.0, 0.0), dtype=torch.float64):
        return cls.from_angles(position=position, dtype=dtype)

    @property
    def batch_shape(self):
        return self.p.shape[:-1]

    def matrix(self):
        return pose_to_matrix(self)

    def rotation(self):
        return rot_z(self.rz) @ rot_y(self.ry) @ rot_x(self.rx)

    def normalized(self):
        return DecomposedPose(normalize_rotation(self.rz), normalize_rotation(self.ry),
                              normalize_rotation(self.rx), self.p)

    def to(self, dtype):
        return DecomposedPose(self.rz.to(dtype), self.ry.to(dtype), self.rx.to(dtype), self.p.to(dtype))

    def detach(self):
        return DecomposedPose(self.rz.detach(), self.ry.detach(), self.rx.detach(), self.p.detach())

    def __getitem__(self, index):
        return DecomposedPose(self.rz[index], self.ry[index], self.rx[index], self.p[index])

    def as_dict(self):
        return {"rz": self.rz.tolist(), "ry": self.ry.tolist(), "rx": self.rx.tolist(),
                "p": self.p.tolist()}


def pose_to_matrix(pose, check=True, atol=NORM_TOL):
    """Assemble the 4x4 rigid transform ``[Rz Ry Rx | p]`` of ``pose``."""
    if check:
        for name in ("rz", "ry", "rx"):
            pair = getattr(pose, name).detach()
            dev = (torch.linalg.vector_norm(pair, dim=-1) - 1).abs()
            if bool((dev > atol).any()):
                raise ContractViolationError(
                    f"rotation pair {name} is not unit-norm (max deviation {float(dev.max()):.3g})")
    R = pose.rotation()
    p = pose.p.to(R.dtype)
    top = torch.cat([R, p.unsqueeze(-1)], dim=-1)
    bottom = torch.zeros(*top.shape[:-2], 1, 4, dtype=R.dtype)
    bottom[..., 0, 3] = 1.0
    return torch.cat([top, bottom], dim=-2)


def yaw_facing(yaw_deg, position=(0.0, 0.0, 0.0), dtype=torch.float64):
    """Pose whose optical axis points at compass yaw ``yaw_deg``.

    Compass yaw 0 is +x and 90 is +z, matching the panorama columns.
    """
    return DecomposedPose.from_angles(yaw=90.0 - yaw_deg, position=position, dtype=dtype)


class PoseSet(nn.Module):
    """A fixed-size set of optimizable camera poses.

    Only ``p_x``, ``p_z`` (``pxz``) and the yaw pair (``ry``) are parameters;
    roll, pitch and the shared height are buffers and never train.  Values
    are kept in float64 so rotation pairs stay unit-norm to ~1e-15.
    """

    def __init__(self, pxz, ry, height=0.0, rz=None, rx=None,
                 jitter_translation=0.03, jitter_rotation_deg=2.0):
        super().__init__()
        pxz = torch.as_tensor(pxz, dtype=torch.float64)
        ry = normalize_rotation(torch.as_tensor(ry, dtype=torch.float64))
        n = pxz.shape[0]
        self.pxz = nn.Parameter(pxz.clone())
        self.ry = nn.Parameter(ry.clone())
        ident = angle_pair(torch.zeros(n))
        self.register_buffer("rz", ident.clone() if rz is None else torch.as_tensor(rz, dtype=torch.float64))
        self.register_buffer("rx", ident.clone() if rx is None else torch.as_tensor(rx, dtype=torch.float64))
        self.register_buffer("height", torch.tensor(float(height), dtype=torch.float64))
        self.jitter_translation = float(jitter_translation)
        self.jitter_rotation_deg = float(jitter_rotation_deg)

    def __len__(self):
        return self.pxz.shape[0]

    def pose(self, index=None):
        """Stored (unjittered) poses; differentiable w.r.t. ``pxz`` and ``ry``."""
        if index is None:
            index = torch.arange(len(self))
        index = torch.as_tensor(index)
        pxz = self.pxz[index]
        py = self.height.expand(pxz.shape[:-1])
        p = torch.stack([pxz[..., 0], py, pxz[..., 1]], dim=-1)
        return DecomposedPose(self.rz[index], self.ry[index], self.rx[index], p)

    def jittered(self, index, rng):
        """Poses at ``index`` with Gaussian jitter on ``(p_x, p_z)`` and yaw."""
        pose = self.pose(index)
        shape = tuple(pose.batch_shape)
        dt = torch.as_tensor(rng.normal(0.0, self.jitter_translation, size=shape + (2,)))
        dyaw = torch.as_tensor(rng.normal(0.0, self.jitter_rotation_deg, size=shape))
        if self.jitter_translation > 0:
            p = pose.p + torch.stack([dt[..., 0], torch.zeros_like(dt[..., 0]), dt[..., 1]], dim=-1)
        else:
            p = pose.p
        ry = pose.ry
        if self.jitter_rotation_deg > 0:
            j = angle_pair(dyaw)
            # complex multiply keeps the pair on the unit circle
            ry = torch.stack([ry[..., 0] * j[..., 0] - ry[..., 1] * j[..., 1],
                              ry[..., 1] * j[..., 0] + ry[..., 0] * j[..., 1]], dim=-1)
        return DecomposedPose(pose.rz, ry, pose.rx, p)

    @torch.no_grad()
    def renormalize_(self):
        """Project every yaw pair back to the unit circle after an update."""
        for pair in (self.ry, self.rz, self.rx):
            norm = torch.linalg.vector_norm(pair, dim=-1, keepdim=True)
            if bool((norm == 0).any()):
                raise DegenerateRotationError("a pose rotation pair collapsed to zero")
            drift = (norm - 1).abs() > RENORM_TOL
            pair.copy_(torch.where(drift, pair / norm, pair))

    def to_json(self):
        poses = self.pose()
        return json.dumps([
            {"rz": poses.rz[i].tolist(), "ry": poses.ry[i].tolist(), "rx": poses.rx[i].tolist(),
             "p": poses.p[i].tolist()}
            for i in range(len(self))
        ])


def init_pose_set(sigma_xy, height, n, rng, jitter_translation=0.03, jitter_rotation_deg=2.0):
    """Poses on the plane ``y = height`` with Gaussian ``(p_x, p_z)`` and uniform yaw."""
    if n < 1:
        raise ValueError("pose set needs at least one camera")
    pxz = rng.normal(0.0, sigma_xy, size=(n, 2))
    yaw = rng.uniform(0.0, 360.0, size=n)
    return PoseSet(pxz, angle_pair(torch.as_tensor(yaw)), height=height,
                   jitter_translation=jitter_translation, jitter_rotation_deg=jitter_rotation_deg)


def sample_cameras(pose_set, occupancy_fn, batch_size, rng, max_attempts=100, threshold=0.5):
    """Draw ``batch_size`` jittered cameras, rejecting occupied camera centers.

    ``occupancy_fn`` maps camera centers ``[B, 3]`` to opacities ``[B]``;
    entry ``b`` is evaluated in scene ``b``.  Returns ``(pose, index)``.
    """
    n = len(pose_set)
    index = torch.as_tensor(rng.integers(0, n, size=batch_size))
    pose = pose_set.jittered(index, rng)
    for _ in range(max_attempts):
        with torch.no_grad():
            occ = occupancy_fn(pose.p.detach())
        bad = occ > threshold
        if not bool(bad.any()):
            return pose, index
        redraw = torch.as_tensor(rng.integers(0, n, size=int(bad.sum())))
        index = index.clone()
        index[bad] = redraw
        fresh = pose_set.jittered(index, rng)
        keep = (~bad).unsqueeze(-1)
        pose = DecomposedPose(*(torch.where(keep, old, new) for old, new in
                                zip((pose.rz, pose.ry, pose.rx, pose.p),
                                    (fresh.rz, fresh.ry, fresh.rx, fresh.p))))
    raise SamplingExhaustedError(
        f"no unoccupied camera found after {max_attempts} attempts (threshold {threshold})")


def sample_camera(pose_set, occupancy_fn, rng, max_attempts=100, threshold=0.5):
    """Single-camera convenience wrapper around :func:`sample_cameras`."""
    pose, index = sample_cameras(pose_set, occupancy_fn, 1, rng, max_attempts, threshold)
    return pose[0], int(index[0])


def expected_patch_scale(bounds):
    s_min, s_max = bounds
    return 0.5 * (s_min + s_max)


def trainable_pose_params(pose_set, expected_scale):
    """Pose parameters to optimize at the given expected patch scale."""
    if not 0 < expected_scale <= 1:
        raise ValueError(f"expected_scale must lie in (0, 1], got {expected_scale}")
    if expected_scale > 0.5:
        return [pose_set.pxz, pose_set.ry]
    return []

