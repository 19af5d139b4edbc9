"""Single-scene 3D generative radiance fields from unposed images.

A triplane generator maps a latent code to a feature volume; a shared MLP
decodes it to color and density; a patch discriminator conditioned on patch
scale compares rendered patches with crops of the input photos.
"""

from .cameras import DecomposedPose, PoseSet, init_pose_set, pose_to_matrix, sample_cameras
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .dataio import load_dataset
from .discriminator import PatchDiscriminator
from .estimator import TriplaneSceneGAN
from .evaluation import evaluate_checkpoint
from .field import FieldDecoder, TriplaneField, TriplaneGrid, query_field
from .generator import TriplaneGenerator
from .metrics import kid
from .patches import aug_angle_bound, crop_real_patch, perspective_augment, scale_bounds
from .rendering import generate_patch_rays, render_panorama, render_rays, render_view
from .toyscene import ToySceneSpec, bake_toy_scene, render_toy_dataset, toy_field
from .training import train, train_step

__all__ = [
    "DecomposedPose",
    "FieldDecoder",
    "PatchDiscriminator",
    "PoseSet",
    "ToySceneSpec",
    "TrainConfig",
    "TriplaneField",
    "TriplaneGenerator",
    "TriplaneGrid",
    "TriplaneSceneGAN",
    "aug_angle_bound",
    "bake_toy_scene",
    "crop_real_patch",
    "evaluate_checkpoint",
    "generate_patch_rays",
    "init_pose_set",
    "kid",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "perspective_augment",
    "pose_to_matrix",
    "query_field",
    "render_panorama",
    "render_rays",
    "render_toy_dataset",
    "render_view",
    "sample_cameras",
    "save_checkpoint",
    "scale_bounds",
    "toy_field",
    "train",
    "train_step",
]

__version__ = "0.1.0"
