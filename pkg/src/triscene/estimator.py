"""scikit-learn style wrapper around the training loop.

``fit(images)`` trains a scene generator on one scene's image collection;
``sample_scenes`` / ``render`` draw new scenes; ``score`` returns the negated
patch KID so that larger is better, as scikit-learn expects.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import TrainConfig
from .evaluation import latent_for_seed, reference_pose
from .rendering import render_view
from .validation import check_images, check_positive_int


class TriplaneSceneGAN(BaseEstimator):
    """Generative model of 3D variations of a single scene.

    Every constructor argument is a :class:`TrainConfig` field; anything not
    exposed here can be passed through ``config_overrides``.
    """

    def __init__(self, iterations=3000, iterations_per_epoch=1000, batch_size=8,
                 triplane_resolution=256, triplane_channels=32, patch_size=64, n_samples=96,
                 fov_deg=65.0, scale_mode="progressive", seed=0, out_dir=None,
                 config_overrides=None):
        self.iterations = iterations
        self.iterations_per_epoch = iterations_per_epoch
        self.batch_size = batch_size
        self.triplane_resolution = triplane_resolution
        self.triplane_channels = triplane_channels
        self.patch_size = patch_size
        self.n_samples = n_samples
        self.fov_deg = fov_deg
        self.scale_mode = scale_mode
        self.seed = seed
        self.out_dir = out_dir
        self.config_overrides = config_overrides

    def make_config(self):
        params = self.get_params()
        extra = params.pop("config_overrides") or {}
        params.pop("out_dir")
        return TrainConfig(**params, **extra)

    def fit(self, X, y=None):
        """Train on ``X``: float images ``[n, H, H, 3]`` in [0, 1] (or uint8)."""
        import tempfile

        from .training import train

        images = check_images(X, min_count=1)
        self.config_ = self.make_config()
        out = self.out_dir or tempfile.mkdtemp(prefix="triscene-")
        self.state_ = train(self.config_, images, out)
        self.out_dir_ = out
        self.n_features_in_ = images.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("call fit before sampling or rendering")

    @torch.no_grad()
    def sample_scenes(self, n_scenes=1, seed=0):
        """Triplane grids for ``n_scenes`` latents drawn from ``seed``."""
        self._check_fitted()
        n_scenes = check_positive_int(n_scenes, "n_scenes")
        gen = self.state_.generator
        z = torch.randn(n_scenes, gen.z_dim, generator=torch.Generator().manual_seed(seed))
        return gen.sample_scene(z)

    @torch.no_grad()
    def render(self, seed=0, pose=None, resolution=64):
        """One view ``[H, H, 3]`` of the scene for ``seed`` (default: first stored camera)."""
        self._check_fitted()
        gen = self.state_.generator
        pose = reference_pose(self.state_) if pose is None else pose
        grid = gen.sample_scene(latent_for_seed(seed, gen.z_dim))
        out = render_view(gen.field(grid), pose, self.config_.fov_deg, resolution,
                          n_samples=self.config_.n_samples)
        return out.colors[0].numpy()

    def score(self, X, y=None, n_eval=None, seed=0):
        """Negative patch KID against the images ``X``."""
        from .training import make_sampler, patch_kid

        self._check_fitted()
        images = torch.as_tensor(check_images(X, min_count=1))
        data = make_sampler(self.config_, images)
        return -patch_kid(self.state_, self.config_, data, n=n_eval, seed=seed)

    def predict(self, X=None, seed=0, resolution=64):
        """Alias for :meth:`render`; ``X`` is ignored."""
        return self.render(seed=seed, resolution=resolution)

    def num_parameters(self):
        self._check_fitted()
        return int(np.sum([p.numel() for p in self.state_.generator.parameters()]))
