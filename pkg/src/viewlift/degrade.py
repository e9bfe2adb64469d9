"""Synthetic degradation chain: blur, bilinear downscale, Gaussian noise,
JPEG round trip, bilinear upscale back; optionally applied twice."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np


@dataclass(frozen=True)
class DegradationSpec:
    """Concrete degradation parameters for one image.

    ``second_order`` applies the whole chain a second time with re-drawn
    (attenuated) parameters taken from the rng passed to :func:`degrade`.
    """

    blur_sigma: float
    downscale_factor: float
    noise_sigma: float
    jpeg_quality: int
    second_order: bool = False

    def __post_init__(self):
        if self.blur_sigma < 0.0:
            raise ValueError("blur_sigma must be >= 0")
        if self.downscale_factor < 1.0:
            raise ValueError("downscale_factor must be >= 1")
        if not 0.0 <= self.noise_sigma <= 1.0:
            raise ValueError("noise_sigma must be in [0, 1]")
        if not 1 <= int(self.jpeg_quality) <= 100:
            raise ValueError("jpeg_quality must be in [1, 100]")


@dataclass(frozen=True)
class DegradationRange:
    blur_sigma: tuple[float, float]
    downscale_factor: tuple[float, float]
    noise_sigma: tuple[float, float]
    jpeg_quality: tuple[int, int]
    second_order: bool


PRESETS = {
    "none": DegradationRange((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (100, 100), False),
    "level1": DegradationRange((0.5, 1.5), (1.0, 2.0), (0.0, 0.03), (60, 90), False),
    "level2": DegradationRange((1.5, 3.0), (2.0, 4.0), (0.03, 0.08), (30, 60), True),
}


def sample_degradation(preset: str | DegradationRange, rng: np.random.Generator) -> DegradationSpec:
    r = PRESETS[preset] if isinstance(preset, str) else preset
    return DegradationSpec(
        blur_sigma=float(rng.uniform(*r.blur_sigma)),
        downscale_factor=float(rng.uniform(*r.downscale_factor)),
        noise_sigma=float(rng.uniform(*r.noise_sigma)),
        jpeg_quality=int(rng.integers(r.jpeg_quality[0], r.jpeg_quality[1] + 1)),
        second_order=r.second_order,
    )


def _jpeg_roundtrip(img: np.ndarray, quality: int) -> np.ndarray:
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    bgr = cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)
    # 4:4:4 sampling: the default 4:2:0 chroma subsampling caps quality-100
    # round trips near 31 dB, far from near-lossless.
    flags = [
        int(cv2.IMWRITE_JPEG_QUALITY), int(quality),
        int(cv2.IMWRITE_JPEG_SAMPLING_FACTOR), int(cv2.IMWRITE_JPEG_SAMPLING_FACTOR_444),
    ]
    ok, buf = cv2.imencode(".jpg", bgr, flags)
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    out = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    return cv2.cvtColor(out, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def _apply_chain(img: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    out = img
    if spec.blur_sigma > 0.0:
        k = 2 * int(np.ceil(3.0 * spec.blur_sigma)) + 1
        out = cv2.GaussianBlur(out, (k, k), sigmaX=spec.blur_sigma, sigmaY=spec.blur_sigma)
    if spec.downscale_factor > 1.0:
        sh = max(1, round(h / spec.downscale_factor))
        sw = max(1, round(w / spec.downscale_factor))
        out = cv2.resize(out, (sw, sh), interpolation=cv2.INTER_LINEAR)
    if spec.noise_sigma > 0.0:
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape).astype(np.float32)
    out = _jpeg_roundtrip(out, spec.jpeg_quality)
    if out.shape[:2] != (h, w):
        out = cv2.resize(out, (w, h), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def _second_pass(spec: DegradationSpec, rng: np.random.Generator) -> DegradationSpec:
    return DegradationSpec(
        blur_sigma=spec.blur_sigma * float(rng.uniform(0.25, 0.75)),
        downscale_factor=1.0 + (spec.downscale_factor - 1.0) * float(rng.uniform(0.25, 0.75)),
        noise_sigma=spec.noise_sigma * float(rng.uniform(0.25, 0.75)),
        jpeg_quality=int(np.clip(spec.jpeg_quality + rng.integers(-10, 11), 30, 100)),
        second_order=False,
    )


def degrade(image: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """Degrade an RGB float image in [0, 1]; output keeps the input size.

    Deterministic for a fixed spec and rng state.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
        raise ValueError("image values must be in [0, 1]")
    out = _apply_chain(img, spec, rng)
    if spec.second_order:
        out = _apply_chain(out, _second_pass(spec, rng), rng)
    return out
