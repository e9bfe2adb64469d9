"""Cameras, rays, frustum sampling, and the volume-to-frustum warp.

Conventions used throughout the package:

* World space is right handed with +y up; the subject occupies the
  canonical cube ``[-1, 1]^3`` centred at the origin.
* Camera space follows the OpenCV convention: +x right, +y down,
  +z forward (the viewing direction).
* ``extrinsic`` is the 4x4 camera-to-world rigid transform.
* ``intrinsic`` is a 3x3 upper-triangular matrix in normalized image
  coordinates, i.e. a pixel centre maps to ``u = fx * x/z + cx`` with
  ``u`` in ``[0, 1]`` across the image width.
* The flattened form is a 25-vector: the 16 row-major extrinsic entries
  followed by the 9 row-major intrinsic entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

ROTATION_ATOL = 1e-5
VECTOR_ROTATION_ATOL = 1e-3


def _rotation_error(rot: np.ndarray) -> float:
    return float(np.abs(rot.T @ rot - np.eye(3)).max())


@dataclass(frozen=True)
class CameraParams:
    """Rigid camera-to-world transform plus normalized pinhole intrinsics."""

    extrinsic: np.ndarray
    intrinsic: np.ndarray
    _atol: float = field(default=ROTATION_ATOL, repr=False, compare=False)

    def __post_init__(self):
        ext = np.asarray(self.extrinsic, dtype=np.float64)
        intr = np.asarray(self.intrinsic, dtype=np.float64)
        if ext.shape != (4, 4):
            raise ValueError(f"extrinsic must be 4x4, got {ext.shape}")
        if intr.shape != (3, 3):
            raise ValueError(f"intrinsic must be 3x3, got {intr.shape}")
        if not np.allclose(ext[3], [0.0, 0.0, 0.0, 1.0], atol=1e-8):
            raise ValueError("extrinsic last row must be [0, 0, 0, 1]")
        rot = ext[:3, :3]
        err = _rotation_error(rot)
        if err > self._atol:
            raise ValueError(f"rotation block is not orthonormal (error {err:.2e})")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation block must have determinant +1")
        if np.abs(np.tril(intr, -1)).max() > 1e-8:
            raise ValueError("intrinsic must be upper-triangular")
        if np.any(np.diag(intr) <= 0.0):
            raise ValueError("intrinsic diagonal must be positive")
        ext.setflags(write=False)
        intr.setflags(write=False)
        object.__setattr__(self, "extrinsic", ext)
        object.__setattr__(self, "intrinsic", intr)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.extrinsic[:3, 3]

    def reorthonormalized(self) -> "CameraParams":
        """Project the rotation block onto SO(3) via SVD."""
        u, _, vt = np.linalg.svd(self.extrinsic[:3, :3])
        rot = u @ vt
        if np.linalg.det(rot) < 0.0:
            u = u.copy()
            u[:, -1] *= -1.0
            rot = u @ vt
        ext = np.array(self.extrinsic)
        ext[:3, :3] = rot
        return CameraParams(ext, np.array(self.intrinsic))


def camera_to_vector(cam: CameraParams) -> np.ndarray:
    """Flatten a camera into the 25-vector convention."""
    return np.concatenate([cam.extrinsic.reshape(-1), cam.intrinsic.reshape(-1)])


def vector_to_camera(vec: np.ndarray, atol: float = VECTOR_ROTATION_ATOL) -> CameraParams:
    """Rebuild a camera from a 25-vector.

    Rejects vectors whose rotation block is farther than ``atol`` from
    orthonormal; such vectors usually indicate a corrupt checkpoint or a raw
    network prediction that the caller should reorthonormalize first.
    """
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.shape != (25,):
        raise ValueError(f"camera vector must have 25 entries, got {vec.shape}")
    ext = vec[:16].reshape(4, 4)
    intr = vec[16:].reshape(3, 3)
    err = _rotation_error(ext[:3, :3])
    if err > atol:
        raise ValueError(f"rotation block fails orthonormality (error {err:.2e})")
    return CameraParams(ext, intr, _atol=max(atol, ROTATION_ATOL))


def make_intrinsic(fx: float, fy: float | None = None, cx: float = 0.5, cy: float = 0.5) -> np.ndarray:
    if fy is None:
        fy = fx
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def look_at(eye, target, up=(0.0, 1.0, 0.0), intrinsic: np.ndarray | None = None) -> CameraParams:
    """Camera at ``eye`` whose +z axis points at ``target`` (OpenCV frame)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right = right / n
    down = np.cross(fwd, right)
    ext = np.eye(4)
    ext[:3, 0] = right
    ext[:3, 1] = down
    ext[:3, 2] = fwd
    ext[:3, 3] = eye
    if intrinsic is None:
        intrinsic = make_intrinsic(0.8)
    return CameraParams(ext, intrinsic)


def generate_rays(cam: CameraParams, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """One world-space ray per feature cell, cast through the pixel centre.

    Returns ``(origins, directions)`` of shape ``(H, W, 3)`` each; directions
    are unit norm and origins all equal the camera position.
    """
    if H < 1 or W < 1:
        raise ValueError("H and W must be >= 1")
    v, u = np.meshgrid(
        (np.arange(H) + 0.5) / H,
        (np.arange(W) + 0.5) / W,
        indexing="ij",
    )
    uv1 = np.stack([u, v, np.ones_like(u)], axis=-1)
    dirs_cam = np.linalg.solve(cam.intrinsic, uv1.reshape(-1, 3).T).T
    dirs_world = dirs_cam @ cam.rotation.T
    dirs_world /= np.linalg.norm(dirs_world, axis=-1, keepdims=True)
    dirs_world = dirs_world.reshape(H, W, 3)
    origins = np.broadcast_to(cam.position, (H, W, 3)).copy()
    return origins, dirs_world


def project_points(cam: CameraParams, points: np.ndarray, H: int, W: int) -> np.ndarray:
    """Project world points to fractional pixel coordinates ``(row, col)``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam_pts = (pts - cam.position) @ cam.rotation
    hom = cam_pts @ cam.intrinsic.T
    uv = hom[:, :2] / hom[:, 2:3]
    rows = uv[:, 1] * H - 0.5
    cols = uv[:, 0] * W - 0.5
    out = np.stack([rows, cols], axis=-1)
    return out.reshape(np.asarray(points).shape[:-1] + (2,))


def sample_frustum_points(
    rays: tuple[np.ndarray, np.ndarray], near: float, far: float, depth_samples: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sample points at uniform depth-bin centres along each ray.

    Returns ``(points, depths)`` with ``points`` of shape
    ``(depth_samples, H, W, 3)`` and ``depths`` of shape ``(depth_samples,)``.
    """
    if not (0.0 < near < far):
        raise ValueError(f"need 0 < near < far, got near={near}, far={far}")
    if depth_samples < 1:
        raise ValueError("depth_samples must be >= 1")
    origins, dirs = rays
    depths = near + (np.arange(depth_samples) + 0.5) * (far - near) / depth_samples
    points = origins[None] + depths[:, None, None, None] * dirs[None]
    return points, depths


@dataclass
class VolumeGrid:
    """Latent feature grid over an axis-aligned world box.

    ``values`` is indexed ``(d, h, w, c)`` where ``d`` runs along world z,
    ``h`` along world y and ``w`` along world x. Voxel centres are uniformly
    spaced strictly inside ``bounds``.
    """

    values: torch.Tensor
    bounds: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError(f"values must be (D, H, W, C), got {tuple(self.values.shape)}")
        if min(self.values.shape) < 1:
            raise ValueError("all volume dims must be >= 1")
        bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)
        if np.any(bounds[0] >= bounds[1]):
            raise ValueError("bounds min must be < max per axis")
        self.bounds = bounds

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel centre, shape (D, H, W, 3)."""
        d, h, w, _ = self.values.shape
        lo, hi = self.bounds
        zs = lo[2] + (np.arange(d) + 0.5) * (hi[2] - lo[2]) / d
        ys = lo[1] + (np.arange(h) + 0.5) * (hi[1] - lo[1]) / h
        xs = lo[0] + (np.arange(w) + 0.5) * (hi[0] - lo[0]) / w
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)


def default_bounds(half_extent: float = 1.0) -> np.ndarray:
    return np.array([[-half_extent] * 3, [half_extent] * 3])


@dataclass
class FrustumGrid:
    """Per-view depth-sampled features, shape ``(D_f, H, W, C)``."""

    values: torch.Tensor
    camera: CameraParams
    depths: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError(f"values must be (D_f, H, W, C), got {tuple(self.values.shape)}")
        depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        if depths.shape[0] != self.values.shape[0]:
            raise ValueError("depths length must match the depth dimension")
        if depths.shape[0] > 1 and np.any(np.diff(depths) <= 0.0):
            raise ValueError("depths must be strictly increasing")
        self.depths = depths


def trilinear_sample(volume: VolumeGrid, points) -> torch.Tensor:
    """Trilinearly interpolate volume features at world-space points.

    Inside ``bounds`` the value is the multilinear extension of the grid:
    between the outermost voxel centre and the wall the nearest cell is
    extrapolated, so constant and per-axis-linear voxel fields are reproduced
    exactly everywhere inside the box. Points outside ``bounds`` return the
    zero feature. Differentiable with respect to ``volume.values``.
    """
    vals = volume.values
    d, h, w, c = vals.shape
    if isinstance(points, np.ndarray):
        pts = torch.from_numpy(np.ascontiguousarray(points, dtype=np.float64))
    else:
        pts = points
    pts = pts.to(vals.dtype)
    lead_shape = pts.shape[:-1]
    p = pts.reshape(-1, 3)
    if not torch.isfinite(p).all():
        raise ValueError("sample points must be finite")

    lo = torch.as_tensor(volume.bounds[0], dtype=vals.dtype)
    hi = torch.as_tensor(volume.bounds[1], dtype=vals.dtype)
    dims = torch.as_tensor([w, h, d], dtype=vals.dtype)
    inside = ((p >= lo) & (p <= hi)).all(dim=-1)

    # Continuous grid coords: voxel centre i sits at coordinate i.
    g = (p - lo) / (hi - lo) * dims - 0.5
    i0 = torch.floor(g).long()
    frac = torch.empty_like(g)
    for axis, size in enumerate((w, h, d)):
        if size == 1:
            i0[:, axis] = 0
            frac[:, axis] = 0.0
        else:
            i0[:, axis] = i0[:, axis].clamp(0, size - 2)
            frac[:, axis] = g[:, axis] - i0[:, axis].to(g.dtype)

    out = torch.zeros(p.shape[0], c, dtype=vals.dtype)
    flat = vals.reshape(-1, c)
    for corner in range(8):
        ox, oy, oz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        ix = (i0[:, 0] + ox).clamp(0, w - 1)
        iy = (i0[:, 1] + oy).clamp(0, h - 1)
        iz = (i0[:, 2] + oz).clamp(0, d - 1)
        wx = frac[:, 0] if ox else 1.0 - frac[:, 0]
        wy = frac[:, 1] if oy else 1.0 - frac[:, 1]
        wz = frac[:, 2] if oz else 1.0 - frac[:, 2]
        out = out + (wx * wy * wz)[:, None] * flat[(iz * h + iy) * w + ix]
    out = out * inside.to(vals.dtype)[:, None]
    return out.reshape(*lead_shape, c)


def warp_volume(
    volume: VolumeGrid,
    cam: CameraParams,
    H: int,
    W: int,
    near: float,
    far: float,
    depth_samples: int,
) -> FrustumGrid:
    """Resample the volume into the camera frustum lattice.

    Composition of ray generation, uniform depth sampling and trilinear
    interpolation; output shape is ``(depth_samples, H, W, C)``.
    """
    rays = generate_rays(cam, H, W)
    points, depths = sample_frustum_points(rays, near, far, depth_samples)
    values = trilinear_sample(volume, points)
    return FrustumGrid(values=values, camera=cam, depths=depths)
