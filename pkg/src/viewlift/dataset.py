"""On-disk multi-view dataset: scene directories with PNG views, per-scene
camera sidecars, and a top-level manifest carrying the generation config."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraParams, camera_to_vector, vector_to_camera
from .scenes import render_scene, sample_scene_spec, scene_cameras

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


class DatasetError(RuntimeError):
    pass


@dataclass
class MultiViewSample:
    images: list[np.ndarray]
    cameras: list[CameraParams]
    seed: int


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_image(path: Path, image: np.ndarray):
    u8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path)


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def make_dataset(
    out_dir: str | Path,
    n_scenes: int,
    views: int = 8,
    image_size: int = 64,
    seed: int = 0,
    val_scenes: int | None = None,
) -> Path:
    """Render ``n_scenes`` multi-view scenes to disk; returns the root path.

    Layout: ``scene_{k:04d}/view_{i}.png`` plus ``cameras.json`` (list of
    25-vectors, view index ascending) and a root ``manifest.json``.
    """
    if n_scenes < 1 or views < 1:
        raise ValueError("n_scenes and views must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if val_scenes is None:
        val_scenes = max(1, n_scenes // 10) if n_scenes > 1 else 0
    if val_scenes >= n_scenes:
        raise ValueError("val_scenes must leave at least one training scene")
    config = {
        "n_scenes": n_scenes,
        "views": views,
        "image_size": image_size,
        "seed": seed,
        "val_scenes": val_scenes,
    }
    for k in range(n_scenes):
        scene_dir = out / f"scene_{k:04d}"
        scene_dir.mkdir(exist_ok=True)
        scene_seed = np.random.SeedSequence([seed, k]).generate_state(1)[0]
        spec = sample_scene_spec(int(scene_seed))
        cam_rng = np.random.default_rng(np.random.SeedSequence([seed, k, 1]))
        cams = scene_cameras(cam_rng, views)
        for i, cam in enumerate(cams):
            save_image(scene_dir / f"view_{i}.png", render_scene(spec, cam, image_size, image_size))
        vectors = [camera_to_vector(c).tolist() for c in cams]
        (scene_dir / "cameras.json").write_text(json.dumps(vectors, indent=1))
    manifest = dict(config)
    manifest["format_version"] = FORMAT_VERSION
    manifest["config_hash"] = _config_hash(config)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def load_manifest(root: str | Path) -> dict:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no {MANIFEST_NAME} under {root}")
    manifest = json.loads(path.read_text())
    for key in ("n_scenes", "views", "image_size", "seed", "config_hash"):
        if key not in manifest:
            raise DatasetError(f"manifest missing key {key!r}")
    return manifest


def scene_ids(root: str | Path, split: str = "all") -> list[int]:
    """Scene indices for a split; validation scenes are the trailing block."""
    manifest = load_manifest(root)
    n = manifest["n_scenes"]
    n_val = manifest.get("val_scenes", 0)
    if split == "all":
        return list(range(n))
    if split == "train":
        return list(range(n - n_val))
    if split == "val":
        return list(range(n - n_val, n))
    raise ValueError(f"unknown split {split!r}")


def load_sample(root: str | Path, index: int) -> MultiViewSample:
    root = Path(root)
    manifest = load_manifest(root)
    if not 0 <= index < manifest["n_scenes"]:
        raise DatasetError(f"scene index {index} out of range [0, {manifest['n_scenes']})")
    scene_dir = root / f"scene_{index:04d}"
    cam_path = scene_dir / "cameras.json"
    if not cam_path.exists():
        raise DatasetError(f"missing camera sidecar {cam_path}")
    try:
        vectors = json.loads(cam_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"corrupt camera sidecar {cam_path}: {e}") from e
    views = manifest["views"]
    if len(vectors) != views:
        raise DatasetError(f"{cam_path} has {len(vectors)} cameras, expected {views}")
    cameras = [vector_to_camera(np.asarray(v)) for v in vectors]
    size = manifest["image_size"]
    images = []
    for i in range(views):
        img_path = scene_dir / f"view_{i}.png"
        if not img_path.exists():
            raise DatasetError(f"missing view image {img_path}")
        img = load_image(img_path)
        if img.shape != (size, size, 3):
            raise DatasetError(f"{img_path} has shape {img.shape}, expected {(size, size, 3)}")
        images.append(img)
    return MultiViewSample(images=images, cameras=cameras, seed=manifest["seed"])
