"""Training configuration and its key-value file format.

A config file is plain ``key = value`` lines; ``#`` starts a comment and an
optional ``[train]`` header is accepted.  Keys are the field names of
:class:`TrainConfig`; anything not listed keeps its default.  Example::

    # smoke run
    iterations = 3000
    iterations_per_epoch = 30
    triplane_resolution = 64
    triplane_channels = 16
    patch_size = 32
"""

import configparser
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigurationError
from .patches import AugSchedule, ScaleSchedule

CONFIG_VERSION = 1

# fields that fix tensor shapes; a checkpoint only loads under equal values
ARCHITECTURE_KEYS = (
    "triplane_resolution", "triplane_channels", "aggregation", "patch_size", "z_dim",
    "g_channel_base", "g_channel_max", "d_channel_base", "d_channel_max", "n_cameras",
)


@dataclass
class TrainConfig:
    # optimization
    iterations: int = 400_000
    iterations_per_epoch: int = 1000
    batch_size: int = 8
    learning_rate: float = 2e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    lambda_r1: float = 0.5
    lambda_recon: float = 50.0
    seed: int = 0
    # model
    triplane_resolution: int = 256
    triplane_channels: int = 32
    aggregation: str = "sum"
    z_dim: int = 128
    g_channel_base: int = 16384
    g_channel_max: int = 256
    d_channel_base: int = 8192
    d_channel_max: int = 256
    # rendering
    patch_size: int = 64
    n_samples: int = 96
    fov_deg: float = 65.0
    # patch schedule; scale_mode "fixed" pins every patch to fixed_scale
    scale_mode: str = "progressive"
    fixed_scale: float = 1.0
    s_min_start: float = 0.6
    s_max_start: float = 0.8
    s_min_end: float = 0.25
    s_max_end: float = 0.55
    scale_ramp_epochs: int = 100
    # augmentation
    perspective_augmentation: bool = True
    max_aug_angle: float = 15.0
    aug_ramp_epochs: int = 100
    translation_augmentation: bool = False
    cutout_augmentation: bool = False
    # cameras
    n_cameras: int = 1000
    camera_sigma_xy: float = 0.3
    camera_height: float = 0.0
    jitter_translation: float = 0.03
    jitter_rotation_deg: float = 2.0
    occupancy_threshold: float = 0.5
    max_camera_attempts: int = 100
    pose_optimization: bool = True
    # bookkeeping
    checkpoint_every: int = 1000
    metric_every: int = 1000
    eval_patches: int = 200
    eval_scale_min: float = 0.25
    eval_scale_max: float = 0.8
    diversity_latents: int = 8
    diversity_resolution: int = 64

    def __post_init__(self):
        positive = ("iterations", "iterations_per_epoch", "batch_size", "learning_rate",
                    "triplane_resolution", "triplane_channels", "patch_size", "n_samples",
                    "n_cameras", "checkpoint_every", "metric_every")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigurationError(f"{key} must be positive, got {getattr(self, key)}")
        if self.lambda_r1 < 0 or self.lambda_recon < 0:
            raise ConfigurationError("regularizer weights must be non-negative")
        if self.scale_mode not in ("progressive", "fixed"):
            raise ConfigurationError(f"scale_mode must be 'progressive' or 'fixed', got {self.scale_mode!r}")
        if self.aggregation not in ("sum", "concat"):
            raise ConfigurationError(f"aggregation must be 'sum' or 'concat', got {self.aggregation!r}")
        if not 0 < self.fov_deg < 180:
            raise ConfigurationError("fov_deg must lie in (0, 180)")

    @property
    def scale_schedule(self):
        if self.scale_mode == "fixed":
            return ScaleSchedule.fixed(self.fixed_scale)
        return ScaleSchedule(self.s_min_start, self.s_max_start, self.s_min_end, self.s_max_end,
                             self.scale_ramp_epochs)

    @property
    def aug_schedule(self):
        return AugSchedule(0.0, self.max_aug_angle, self.aug_ramp_epochs)

    def epoch_of(self, iteration):
        return iteration // self.iterations_per_epoch

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def architecture(self):
        return {k: getattr(self, k) for k in ARCHITECTURE_KEYS}

    def to_text(self):
        lines = [f"# config version {CONFIG_VERSION}"]
        lines += [f"{k} = {v}" for k, v in self.to_dict().items()]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text())


def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw.replace("_", ""))
    if isinstance(default, float):
        return float(raw)
    return raw.strip("\"'")


def config_from_mapping(values, base=None):
    base = base or TrainConfig()
    defaults = base.to_dict()
    changes = {}
    for key, raw in values.items():
        if key not in defaults:
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            changes[key] = raw if not isinstance(raw, str) else _parse_value(raw, defaults[key])
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from None
    return base.replace(**changes)


def load_config(path):
    """Read a key-value config file; raises FileNotFoundError if absent."""
    path = Path(path)
    text = path.read_text()
    if not text.lstrip().startswith("["):
        text = "[train]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    values = {}
    for section in parser.sections():
        values.update(parser[section])
    return config_from_mapping(values)


def resolved_json(config):
    return json.dumps(config.to_dict(), sort_keys=True)
