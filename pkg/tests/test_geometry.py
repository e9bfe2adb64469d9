import numpy as np
import pytest
import torch

from viewlift.geometry import (
    CameraParams,
    VolumeGrid,
    camera_to_vector,
    default_bounds,
    generate_rays,
    look_at,
    make_intrinsic,
    project_points,
    sample_frustum_points,
    trilinear_sample,
    vector_to_camera,
    warp_volume,
)
from viewlift.scenes import camera_on_sphere, scene_cameras


def random_camera(rng) -> CameraParams:
    return camera_on_sphere(rng.uniform(0, 2 * np.pi), rng.uniform(-0.6, 0.6), focal=rng.uniform(0.6, 1.2))


def random_volume(rng, dims=None, channels=3, dtype=torch.float64) -> VolumeGrid:
    dims = dims or tuple(rng.integers(3, 7, size=3))
    values = torch.from_numpy(rng.standard_normal((*dims, channels))).to(dtype)
    return VolumeGrid(values=values, bounds=default_bounds(1.0))


def brute_force_trilinear(volume: VolumeGrid, point: np.ndarray) -> np.ndarray:
    """Independent per-point oracle: explicit 8-corner multilinear weights on
    the clamped nearest cell (so border cells extrapolate inside bounds) and
    a hard zero outside bounds."""
    vals = volume.values.numpy()
    d, h, w, c = vals.shape
    lo, hi = volume.bounds
    if np.any(point < lo) or np.any(point > hi):
        return np.zeros(c)
    sizes = np.array([w, h, d])
    g = (point - lo) / (hi - lo) * sizes - 0.5
    base = np.floor(g).astype(int)
    frac = np.empty(3)
    for axis in range(3):
        if sizes[axis] == 1:
            base[axis], frac[axis] = 0, 0.0
        else:
            base[axis] = min(max(base[axis], 0), sizes[axis] - 2)
            frac[axis] = g[axis] - base[axis]
    out = np.zeros(c)
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                ix = min(base[0] + dx, w - 1)
                iy = min(base[1] + dy, h - 1)
                iz = min(base[2] + dz, d - 1)
                weight = (
                    (frac[0] if dx else 1 - frac[0])
                    * (frac[1] if dy else 1 - frac[1])
                    * (frac[2] if dz else 1 - frac[2])
                )
                out += weight * vals[iz, iy, ix]
    return out


class TestCameraVector:
    def test_identity_camera_vector(self):
        cam = CameraParams(np.eye(4), np.eye(3))
        expected = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 1]
        assert camera_to_vector(cam).tolist() == expected

    def test_round_trip_100_random_cameras(self, rng):
        for _ in range(100):
            cam = random_camera(rng)
            vec = camera_to_vector(cam)
            back = vector_to_camera(vec)
            assert np.array_equal(back.extrinsic, cam.extrinsic)
            assert np.array_equal(back.intrinsic, cam.intrinsic)
            assert np.array_equal(camera_to_vector(back), vec)

    def test_zero_rotation_rejected(self):
        vec = np.zeros(25)
        vec[15] = 1.0
        vec[16:] = np.eye(3).reshape(-1)
        with pytest.raises(ValueError, match="orthonormality"):
            vector_to_camera(vec)

    def test_tolerance_band(self, rng):
        cam = random_camera(rng)
        vec = camera_to_vector(cam)
        slightly = vec.copy()
        slightly[0:3] *= 1.0001  # orthonormality error ~2e-4, inside 1e-3
        vector_to_camera(slightly)
        badly = vec.copy()
        badly[0:3] *= 1.01
        with pytest.raises(ValueError, match="orthonormality"):
            vector_to_camera(badly)

    def test_reorthonormalized_restores_validity(self, rng):
        cam = random_camera(rng)
        ext = np.array(cam.extrinsic)
        ext[:3, :3] *= 1.001
        noisy = CameraParams(ext, cam.intrinsic, _atol=1e-2)
        fixed = noisy.reorthonormalized()
        assert np.abs(fixed.rotation.T @ fixed.rotation - np.eye(3)).max() < 1e-12

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="25"):
            vector_to_camera(np.zeros(24))


class TestRays:
    def test_identity_camera_center_ray(self):
        cam = CameraParams(np.eye(4), make_intrinsic(1.0, cx=0.5, cy=0.5))
        origins, dirs = generate_rays(cam, 1, 1)
        assert np.allclose(origins[0, 0], 0.0)
        assert np.allclose(dirs[0, 0], [0.0, 0.0, 1.0])

    def test_unit_norm_directions(self, rng):
        cam = random_camera(rng)
        _, dirs = generate_rays(cam, 5, 7)
        norms = np.linalg.norm(dirs, axis=-1)
        assert np.abs(norms - 1.0).max() <= 1e-6

    def test_project_then_cast_round_trip(self, rng):
        for _ in range(5):
            cam = random_camera(rng)
            H, W = 6, 9
            origins, dirs = generate_rays(cam, H, W)
            depth = rng.uniform(0.5, 3.0)
            pix = project_points(cam, origins + depth * dirs, H, W)
            rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
            assert np.abs(pix[..., 0] - rows).max() <= 1e-4
            assert np.abs(pix[..., 1] - cols).max() <= 1e-4

    def test_origins_are_camera_position(self, rng):
        cam = random_camera(rng)
        origins, _ = generate_rays(cam, 3, 3)
        assert np.allclose(origins, cam.position)

    def test_degenerate_grid_rejected(self, rng):
        with pytest.raises(ValueError):
            generate_rays(random_camera(rng), 0, 4)


class TestFrustumSampling:
    def test_single_depth_is_midpoint(self, rng):
        rays = generate_rays(random_camera(rng), 2, 2)
        _, depths = sample_frustum_points(rays, 1.0, 3.0, 1)
        assert depths.tolist() == [2.0]

    def test_two_bin_centers(self, rng):
        rays = generate_rays(random_camera(rng), 2, 2)
        _, depths = sample_frustum_points(rays, 1.0, 3.0, 2)
        assert depths.tolist() == [1.5, 2.5]

    def test_uniform_gaps(self, rng):
        rays = generate_rays(random_camera(rng), 2, 2)
        _, depths = sample_frustum_points(rays, 0.5, 3.5, 12)
        gaps = np.diff(depths)
        assert np.allclose(gaps, (3.5 - 0.5) / 12)

    def test_points_on_rays(self, rng):
        cam = random_camera(rng)
        rays = generate_rays(cam, 3, 4)
        points, depths = sample_frustum_points(rays, 1.0, 2.0, 5)
        assert points.shape == (5, 3, 4, 3)
        expected = rays[0][None] + depths[:, None, None, None] * rays[1][None]
        assert np.allclose(points, expected)

    def test_invalid_near_far(self, rng):
        rays = generate_rays(random_camera(rng), 2, 2)
        with pytest.raises(ValueError):
            sample_frustum_points(rays, 3.0, 1.0, 4)
        with pytest.raises(ValueError):
            sample_frustum_points(rays, 0.0, 1.0, 4)


class TestTrilinear:
    def test_voxel_center_exact(self, rng):
        vol = random_volume(rng, dims=(4, 5, 3))
        centers = vol.voxel_centers()
        out = trilinear_sample(vol, centers[2, 1, 2])
        assert torch.allclose(out, vol.values[2, 1, 2], atol=1e-12)

    def test_linear_field_reproduced(self, rng):
        # The multilinear extension reproduces any per-axis-linear field
        # exactly anywhere inside bounds; the oracle is the closed form itself.
        vol = random_volume(rng, dims=(5, 4, 6), channels=2)
        centers = vol.voxel_centers()
        field = np.stack([centers[..., 0], 0.5 * centers[..., 1] + 2.0], axis=-1)
        vol.values = torch.from_numpy(field)
        pts = rng.uniform(-1.0, 1.0, size=(200, 3))
        out = trilinear_sample(vol, pts).numpy()
        assert np.abs(out[:, 0] - pts[:, 0]).max() <= 1e-6
        assert np.abs(out[:, 1] - (0.5 * pts[:, 1] + 2.0)).max() <= 1e-6

    def test_far_outside_returns_zero(self, rng):
        vol = random_volume(rng)
        out = trilinear_sample(vol, np.array([[10.0, -4.0, 2.0], [0.0, 0.0, 99.0]]))
        assert torch.equal(out, torch.zeros_like(out))

    def test_non_finite_points_rejected(self, rng):
        vol = random_volume(rng)
        with pytest.raises(ValueError):
            trilinear_sample(vol, np.array([[np.nan, 0.0, 0.0]]))

    def test_permutation_invariance(self, rng):
        vol = random_volume(rng)
        pts = rng.uniform(-1.2, 1.2, size=(40, 3))
        perm = rng.permutation(40)
        out = trilinear_sample(vol, pts).numpy()
        out_perm = trilinear_sample(vol, pts[perm]).numpy()
        assert np.array_equal(out[perm], out_perm)

    def test_empirical_continuity(self, rng):
        vol = random_volume(rng, dims=(4, 4, 4), channels=1)
        voxel = 2.0 / 4
        lipschitz = 2.0 * float(vol.values.abs().max()) * 3.0 / voxel
        delta = 1e-4
        pts = rng.uniform(-1.0 + delta, 1.0 - delta, size=(100, 3))
        moved = pts + rng.uniform(-delta, delta, size=pts.shape) / np.sqrt(3.0)
        a = trilinear_sample(vol, pts).numpy()
        b = trilinear_sample(vol, moved).numpy()
        assert np.abs(a - b).max() <= lipschitz * delta + 1e-9

    def test_gradient_flows_to_volume(self, rng):
        vol = random_volume(rng)
        vol.values.requires_grad_(True)
        out = trilinear_sample(vol, rng.uniform(-0.9, 0.9, size=(10, 3)))
        out.sum().backward()
        assert vol.values.grad is not None
        assert float(vol.values.grad.abs().sum()) > 0.0


class TestWarp:
    def test_constant_volume(self, rng):
        const = torch.tensor([3.0, -1.0], dtype=torch.float64)
        vol = VolumeGrid(values=const.expand(4, 4, 4, 2).clone(), bounds=default_bounds(1.0))
        cam = random_camera(rng)
        frustum = warp_volume(vol, cam, 6, 6, 0.5, 3.5, 8)
        rays = generate_rays(cam, 6, 6)
        points, _ = sample_frustum_points(rays, 0.5, 3.5, 8)
        inside = np.all((points >= -1.0) & (points <= 1.0), axis=-1)
        assert inside.any()
        values = frustum.values.numpy()
        assert np.allclose(values[inside], const.numpy(), atol=1e-12)
        assert np.allclose(values[~inside], 0.0)

    def test_axis_aligned_slab(self):
        # Single centre ray along +z with depth samples landing exactly on
        # voxel-centre planes: the frustum is a re-indexed grid column.
        vol = VolumeGrid(
            values=torch.arange(5 * 5 * 5 * 3, dtype=torch.float64).reshape(5, 5, 5, 3),
            bounds=default_bounds(1.0),
        )
        cam = look_at([0.0, 0.0, -2.0], [0.0, 0.0, 0.0], intrinsic=make_intrinsic(1.0))
        frustum = warp_volume(vol, cam, 1, 1, 1.0, 3.0, 5)
        assert np.allclose(frustum.depths, [1.2, 1.6, 2.0, 2.4, 2.8])
        slab = vol.values[:, 2, 2, :]
        assert torch.allclose(frustum.values[:, 0, 0, :], slab, atol=1e-10)

    def test_matches_brute_force_oracle_100_pairs(self, rng):
        for _ in range(100):
            vol = random_volume(rng, channels=int(rng.integers(1, 4)))
            cam = random_camera(rng)
            frustum = warp_volume(vol, cam, 4, 4, 0.5, 3.5, 5)
            rays = generate_rays(cam, 4, 4)
            points, _ = sample_frustum_points(rays, 0.5, 3.5, 5)
            expected = np.stack(
                [brute_force_trilinear(vol, p) for p in points.reshape(-1, 3)]
            ).reshape(frustum.values.shape)
            assert np.abs(frustum.values.numpy() - expected).max() <= 1e-5

    def test_linearity_in_volume_values(self, rng):
        dims = (4, 5, 3)
        v1 = random_volume(rng, dims=dims, channels=2)
        v2 = VolumeGrid(values=torch.from_numpy(rng.standard_normal((*dims, 2))), bounds=v1.bounds)
        a, b = 0.7, -2.3
        mix = VolumeGrid(values=a * v1.values + b * v2.values, bounds=v1.bounds)
        cam = random_camera(rng)
        w_mix = warp_volume(mix, cam, 5, 5, 0.5, 3.5, 6).values
        w1 = warp_volume(v1, cam, 5, 5, 0.5, 3.5, 6).values
        w2 = warp_volume(v2, cam, 5, 5, 0.5, 3.5, 6).values
        assert (w_mix - (a * w1 + b * w2)).abs().max() <= 1e-5

    def test_output_shape(self, rng):
        vol = random_volume(rng, dims=(4, 4, 4), channels=7)
        frustum = warp_volume(vol, random_camera(rng), 8, 8, 0.5, 3.5, 12)
        assert tuple(frustum.values.shape) == (12, 8, 8, 7)


class TestInvariants:
    def test_volume_grid_validation(self):
        with pytest.raises(ValueError):
            VolumeGrid(values=torch.zeros(3, 3, 3), bounds=default_bounds())
        with pytest.raises(ValueError):
            VolumeGrid(values=torch.zeros(3, 3, 3, 1), bounds=np.array([[1, 1, 1], [0, 0, 0]]))

    def test_frustum_depths_validation(self, rng):
        from viewlift.geometry import FrustumGrid

        cam = random_camera(rng)
        with pytest.raises(ValueError, match="increasing"):
            FrustumGrid(values=torch.zeros(3, 2, 2, 1), camera=cam, depths=np.array([1.0, 0.5, 2.0]))

    def test_camera_invariants(self):
        bad = np.eye(4)
        bad[3, 0] = 0.1
        with pytest.raises(ValueError, match="last row"):
            CameraParams(bad, np.eye(3))
        with pytest.raises(ValueError, match="upper-triangular"):
            CameraParams(np.eye(4), np.array([[1.0, 0, 0], [0.2, 1, 0], [0, 0, 1]]))
        with pytest.raises(ValueError, match="positive"):
            CameraParams(np.eye(4), np.diag([1.0, -1.0, 1.0]))
        flipped = np.eye(4)
        flipped[0, 0] = -1.0  # improper rotation, det -1
        with pytest.raises(ValueError, match="determinant"):
            CameraParams(flipped, np.eye(3))

    def test_scene_cameras_all_valid_and_distinct(self, rng):
        cams = scene_cameras(rng, 8)
        vecs = [tuple(camera_to_vector(c)) for c in cams]
        assert len(set(vecs)) == 8
