"""Dataset ingestion and image/depth file formats.

A dataset is a directory of same-size square images plus an optional
``dataset.json`` sidecar ``{"fov_deg": ..., "resolution": ...}``.  Depth
maps are 16-bit grayscale PNGs with a JSON sidecar giving the world-units
value of one count.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import IngestionError

log = logging.getLogger(__name__)

DEFAULT_FOV_DEG = 65.0
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SIDECAR = "dataset.json"


@dataclass
class DatasetManifest:
    paths: list
    resolution: int
    fov_deg: float = DEFAULT_FOV_DEG
    name: str = ""
    metadata: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.paths)

    def load_images(self):
        """All images as float32 ``[n, H, W, 3]`` in [0, 1]."""
        return np.stack([read_image(p) for p in self.paths])


def read_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def to_uint8(img):
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def write_depth_png(path, depth, max_depth=None):
    """16-bit depth PNG plus ``<name>.json`` with ``depth_scale`` (world units per count)."""
    depth = np.asarray(depth, dtype=np.float64)
    max_depth = float(max_depth if max_depth is not None else max(depth.max(), 1e-6))
    scale = max_depth / 65535.0
    counts = np.clip(np.round(depth / scale), 0, 65535).astype(np.uint16)
    Image.fromarray(counts).save(path, format="PNG")
    sidecar = Path(path).with_suffix(".json")
    sidecar.write_text(json.dumps({"format_version": 1, "depth_scale": scale, "units": "world"}))
    return sidecar


def read_depth_png(path):
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    with Image.open(path) as im:
        counts = np.asarray(im, dtype=np.float64)
    return counts * meta["depth_scale"]


def load_dataset(directory):
    """Scan ``directory`` for images and build a :class:`DatasetManifest`."""
    root = Path(directory)
    if not root.is_dir():
        raise IngestionError(f"dataset directory {root} does not exist")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise IngestionError(f"no images found in {root}")
    size = None
    for p in paths:
        with Image.open(p) as im:
            wh = im.size
        if wh[0] != wh[1]:
            raise IngestionError(f"{p.name}: images must be square, got {wh[0]}x{wh[1]}")
        if size is None:
            size = wh
        elif wh != size:
            raise IngestionError(f"{p.name}: size {wh[0]}x{wh[1]} differs from {size[0]}x{size[1]}")
    meta = {}
    sidecar = root / SIDECAR
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    if "fov_deg" in meta:
        fov = float(meta["fov_deg"])
        if not 0 < fov < 180:
            raise IngestionError(f"{sidecar}: fov_deg must lie in (0, 180), got {fov}")
    else:
        warnings.warn(f"{root}: no field-of-view metadata, assuming {DEFAULT_FOV_DEG} degrees")
        fov = DEFAULT_FOV_DEG
    return DatasetManifest(paths, size[0], fov, meta.get("scene", root.name), meta)
