"""Procedural multi-view scenes: shaded ellipsoid heads with facial blobs,
rendered by analytic ray casting. Everything is a pure function of the seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraParams, generate_rays, look_at, make_intrinsic

CAMERA_RADIUS = 2.0
DEFAULT_FOCAL = 0.8
AMBIENT = 0.35


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    color: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    """Head ellipsoid plus facial feature blobs, all inside [-1, 1]^3.

    The face points along +z in the canonical frame.
    """

    seed: int
    head_radii: tuple[float, float, float]
    head_color: tuple[float, float, float]
    blobs: tuple[Blob, ...]
    background: tuple[float, float, float]
    light_dir: tuple[float, float, float]


def sample_scene_spec(seed: int) -> SceneSpec:
    rng = np.random.default_rng(np.random.SeedSequence([0x5CE11E, int(seed)]))
    hx = rng.uniform(0.50, 0.62)
    hy = rng.uniform(0.62, 0.75)
    hz = rng.uniform(0.52, 0.64)
    head_color = rng.uniform(0.45, 0.85, size=3)

    def on_head(nx, ny, nz, push=1.0):
        n = np.array([nx, ny, nz])
        n /= np.linalg.norm(n)
        return tuple(n * np.array([hx, hy, hz]) * push)

    eye_y = rng.uniform(0.15, 0.35)
    eye_x = rng.uniform(0.35, 0.55)
    eye_r = rng.uniform(0.07, 0.11)
    eye_color = rng.uniform(0.0, 0.25, size=3)
    nose_r = rng.uniform(0.06, 0.10)
    mouth_w = rng.uniform(0.16, 0.26)
    mouth_color = rng.uniform(0.0, 0.6, size=3)
    blobs = (
        Blob(on_head(-eye_x, eye_y, 1.0), (eye_r,) * 3, tuple(eye_color)),
        Blob(on_head(eye_x, eye_y, 1.0), (eye_r,) * 3, tuple(eye_color)),
        Blob(on_head(0.0, 0.0, 1.0, push=1.05), (nose_r, nose_r * 1.3, nose_r), tuple(rng.uniform(0.3, 0.9, size=3))),
        Blob(on_head(0.0, -0.45, 1.0), (mouth_w, mouth_w * 0.35, 0.06), tuple(mouth_color)),
    )
    background = tuple(rng.uniform(0.05, 0.95, size=3))
    light = rng.normal(size=3)
    light[2] = abs(light[2]) + 0.5
    light /= np.linalg.norm(light)
    return SceneSpec(
        seed=int(seed),
        head_radii=(hx, hy, hz),
        head_color=tuple(head_color),
        blobs=blobs,
        background=background,
        light_dir=tuple(light),
    )


def _intersect_ellipsoid(origins, dirs, center, radii):
    """Nearest positive ray parameter for an axis-aligned ellipsoid, or inf."""
    center = np.asarray(center)
    radii = np.asarray(radii)
    oc = (origins - center) / radii
    d = dirs / radii
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(d * oc, axis=-1)
    c = np.sum(oc * oc, axis=-1) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    t = np.where(t0 > 1e-6, t0, t1)
    return np.where(hit & (t > 1e-6), t, np.inf)


def render_scene(spec: SceneSpec, cam: CameraParams, H: int, W: int) -> np.ndarray:
    """Lambertian-shaded analytic render, float32 RGB in [0, 1]."""
    origins, dirs = generate_rays(cam, H, W)
    origins = origins.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)

    surfaces = [(np.zeros(3), np.asarray(spec.head_radii), np.asarray(spec.head_color))]
    surfaces += [(np.asarray(b.center), np.asarray(b.radii), np.asarray(b.color)) for b in spec.blobs]

    best_t = np.full(origins.shape[0], np.inf)
    best_idx = np.full(origins.shape[0], -1)
    for i, (center, radii, _) in enumerate(surfaces):
        t = _intersect_ellipsoid(origins, dirs, center, radii)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, i, best_idx)

    img = np.tile(np.asarray(spec.background), (origins.shape[0], 1))
    light = np.asarray(spec.light_dir)
    for i, (center, radii, color) in enumerate(surfaces):
        mask = best_idx == i
        if not mask.any():
            continue
        points = origins[mask] + best_t[mask, None] * dirs[mask]
        normals = (points - center) / radii**2
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        lambert = np.clip(np.sum(normals * light, axis=-1), 0.0, 1.0)
        shade = AMBIENT + (1.0 - AMBIENT) * lambert
        img[mask] = color[None, :] * shade[:, None]
    return np.clip(img, 0.0, 1.0).reshape(H, W, 3).astype(np.float32)


def camera_on_sphere(azimuth: float, elevation: float, radius: float = CAMERA_RADIUS, focal: float = DEFAULT_FOCAL) -> CameraParams:
    """Camera on the viewing sphere looking at the origin.

    Azimuth 0 faces the +z (face) side; elevation is measured up from the
    equator, in radians.
    """
    eye = np.array(
        [
            radius * np.cos(elevation) * np.sin(azimuth),
            radius * np.sin(elevation),
            radius * np.cos(elevation) * np.cos(azimuth),
        ]
    )
    return look_at(eye, np.zeros(3), intrinsic=make_intrinsic(focal))


def scene_cameras(rng: np.random.Generator, n_views: int) -> list[CameraParams]:
    """Distinct random cameras: evenly spread azimuths with jitter, random
    elevation band, fixed radius."""
    cams = []
    base = rng.uniform(0.0, 2.0 * np.pi)
    for i in range(n_views):
        azimuth = base + 2.0 * np.pi * i / n_views + rng.uniform(-0.2, 0.2)
        elevation = rng.uniform(-0.25, 0.45)
        cams.append(camera_on_sphere(azimuth, elevation))
    return cams


def orbit_cameras(n_views: int, elevation: float = 0.15) -> list[CameraParams]:
    """Evenly spaced azimuth orbit at fixed elevation, starting at the face."""
    return [camera_on_sphere(2.0 * np.pi * i / n_views, elevation) for i in range(n_views)]
