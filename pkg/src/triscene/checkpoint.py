"""Single-file checkpoint container.

Layout (little-endian)::

    8 bytes   magic b"TRISCENE"
    uint16    format version
    uint64    payload length in bytes
    32 bytes  sha256 of the payload
    payload   torch.save of a dict with model, optimizer, pose, RNG and config state

A short read or checksum mismatch raises :class:`CheckpointCorruptError`;
an unknown version raises :class:`CheckpointVersionError`.
"""

import hashlib
import io
import struct
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, config_from_mapping
from .exceptions import CheckpointCorruptError, CheckpointVersionError, ConfigMismatchError

MAGIC = b"TRISCENE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHQ32s")


def state_payload(state, config):
    return {
        "iteration": state.iteration,
        "config": config.to_dict(),
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "poses": state.poses.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "opt_pose": state.opt_pose.state_dict(),
        "numpy_rng": state.rng.bit_generator.state,
        "torch_rng": state.torch_rng.get_state(),
    }


def save_checkpoint(state, config, path):
    buf = io.BytesIO()
    torch.save(state_payload(state, config), buf)
    payload = buf.getvalue()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(payload), hashlib.sha256(payload).digest())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)
    return path


def read_payload(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointCorruptError(f"{path}: file too short for a checkpoint header")
    magic, version, length, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) != length:
        raise CheckpointCorruptError(f"{path}: truncated payload ({len(payload)} of {length} bytes)")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    return torch.load(io.BytesIO(payload), weights_only=False)


def load_checkpoint(path, config=None):
    """Rebuild ``(state, config)`` from ``path``.

    If ``config`` is given its architecture fields must match the stored
    ones; other fields (iterations, cadences) come from ``config``.
    """
    from .training import init_state

    data = read_payload(path)
    stored = config_from_mapping(data["config"], TrainConfig())
    if config is None:
        config = stored
    else:
        diff = {k: (v, config.architecture()[k]) for k, v in stored.architecture().items()
                if config.architecture()[k] != v}
        if diff:
            detail = ", ".join(f"{k}: checkpoint {a!r} vs config {b!r}" for k, (a, b) in diff.items())
            raise ConfigMismatchError(f"{path}: incompatible configuration ({detail})")
    state = init_state(config)
    state.generator.load_state_dict(data["generator"])
    state.discriminator.load_state_dict(data["discriminator"])
    state.poses.load_state_dict(data["poses"])
    state.opt_g.load_state_dict(data["opt_g"])
    state.opt_d.load_state_dict(data["opt_d"])
    state.opt_pose.load_state_dict(data["opt_pose"])
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = data["numpy_rng"]
    state.torch_rng.set_state(data["torch_rng"])
    state.iteration = int(data["iteration"])
    return state, config
