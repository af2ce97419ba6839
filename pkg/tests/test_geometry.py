"""Canonical frame transforms, rotation augmentation, and field sampling."""

from __future__ import annotations

import numpy as np
import pytest

from trajfield.errors import GridError, OutOfGridError
from trajfield.fields import GridSpec, ScalarField
from trajfield.geometry import (ScenePatch, augment_rotations, canonicalize,
                                extract_patch, sample_bilinear)
from trajfield.ingest import TrajectorySample

from conftest import gentle_sample


def _sample_with_past(past):
    past = np.asarray(past, dtype=float)
    future = np.tile(past[-1], (4, 1))
    return TrajectorySample(past=past, future=future, agent_id=1, scene_id="s",
                            start_time_index=0)


class TestCanonicalize:
    def test_heading_up_rotates_minus_90(self, grid):
        past = np.stack([np.zeros(8), np.linspace(0, 2, 8)], axis=1)  # due +y
        canon, tf = canonicalize(_sample_with_past(past), grid)
        assert tf.rotation == pytest.approx(-np.pi / 2)
        heading = canon.past[-1] - canon.past[0]
        assert heading[0] > 0
        assert heading[1] == pytest.approx(0.0, abs=1e-12)

    def test_heading_already_plus_x_is_identity_rotation(self, grid):
        past = np.stack([np.linspace(0, 2, 8), np.zeros(8)], axis=1)
        _, tf = canonicalize(_sample_with_past(past), grid)
        assert tf.rotation == pytest.approx(0.0)
        assert not tf.is_degenerate

    def test_current_lands_on_grid_center(self, grid, rng):
        for _ in range(10):
            sample = gentle_sample(rng)
            canon, _ = canonicalize(sample, grid)
            np.testing.assert_allclose(canon.past[-1], grid.center_world, atol=1e-9)

    def test_stationary_past_degenerate(self, grid):
        past = np.tile([3.0, 4.0], (8, 1))
        canon, tf = canonicalize(_sample_with_past(past), grid)
        assert tf.is_degenerate
        assert tf.rotation == 0.0
        np.testing.assert_allclose(canon.past[-1], grid.center_world, atol=1e-12)

    def test_zero_net_with_loop_uses_last_step(self, grid):
        # out and back along +x; last nonzero step points -x
        past = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 0.0], [0.0, 0.0],
                         [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        canon, tf = canonicalize(_sample_with_past(past), grid)
        assert not tf.is_degenerate
        assert tf.rotation == pytest.approx(-np.pi, abs=1e-12) or \
            tf.rotation == pytest.approx(np.pi, abs=1e-12)
        # net displacement is zero, so the invariant u(x_t) >= u(x_1) holds with equality
        assert canon.past[-1][0] - canon.past[0][0] == pytest.approx(0.0, abs=1e-9)

    def test_tiny_net_displacement_degenerate(self, grid):
        past = np.stack([np.linspace(0, 0.04, 8), np.zeros(8)], axis=1)
        _, tf = canonicalize(_sample_with_past(past), grid)
        assert tf.is_degenerate

    def test_forward_inverse_round_trip(self, grid, rng):
        for _ in range(20):
            sample = gentle_sample(rng)
            _, tf = canonicalize(sample, grid)
            pts = rng.uniform(-10, 10, size=(15, 2))
            np.testing.assert_allclose(tf.invert(tf.apply(pts)), pts, atol=1e-9)

    def test_net_displacement_nonnegative_u(self, grid, rng):
        for _ in range(50):
            sample = gentle_sample(rng, max_turn=0.8)
            canon, tf = canonicalize(sample, grid)
            if tf.is_degenerate:
                continue
            assert canon.past[-1][0] - canon.past[0][0] >= -1e-9


class TestAugmentRotations:
    def _patch(self, rng, size=16):
        grid = GridSpec(size, size, resolution=0.5)
        return ScenePatch(grid, rng.random(grid.shape).astype(np.float32))

    def test_k0_identity_copy(self, rng):
        patch = self._patch(rng)
        traj = rng.uniform(0, 7, size=(10, 2))
        pairs = augment_rotations(patch, [traj])
        assert len(pairs) == 8
        scene0, trajs0 = pairs[0]
        np.testing.assert_array_equal(scene0.image, patch.image)
        np.testing.assert_allclose(trajs0[0], traj)

    def test_k4_applied_twice_is_identity(self, rng):
        patch = self._patch(rng)
        traj = rng.uniform(1, 6, size=(10, 2))
        _, trajs4 = augment_rotations(patch, [traj])[4]
        rotated_patch = ScenePatch(patch.grid, np.zeros(patch.grid.shape, np.float32))
        _, back = augment_rotations(rotated_patch, trajs4)[4]
        np.testing.assert_allclose(back[0], traj, atol=1e-9)

    def test_center_is_fixed_point(self, rng):
        patch = self._patch(rng)
        center = patch.grid.center_world.reshape(1, 2)
        for _, trajs in augment_rotations(patch, [center]):
            np.testing.assert_allclose(trajs[0], center, atol=1e-9)

    def test_pairwise_distances_preserved(self, rng):
        patch = self._patch(rng)
        traj = rng.uniform(1, 6, size=(12, 2))
        base = np.linalg.norm(traj[:, None] - traj[None, :], axis=-1)
        for _, trajs in augment_rotations(patch, [traj]):
            dist = np.linalg.norm(trajs[0][:, None] - trajs[0][None, :], axis=-1)
            np.testing.assert_allclose(dist, base, rtol=1e-9, atol=1e-9)

    def test_raster_follows_coordinates(self, rng):
        # a bright pixel moves to where the coordinate transform sends it
        grid = GridSpec(33, 33, resolution=1.0)
        image = np.zeros(grid.shape, np.float32)
        image[16, 24] = 1.0  # world point (24, 16)
        patch = ScenePatch(grid, image)
        point = np.array([[24.0, 16.0]])
        for k in (2, 4, 6):
            scene_k, traj_k = augment_rotations(patch, [point])[k]
            v, u = np.unravel_index(np.argmax(scene_k.image), scene_k.image.shape)
            np.testing.assert_allclose([u, v], traj_k[0][0], atol=0.51)

    def test_non_square_rejected(self, rng):
        grid = GridSpec(8, 10, resolution=1.0)
        patch = ScenePatch(grid, np.zeros(grid.shape, np.float32))
        with pytest.raises(GridError):
            augment_rotations(patch, [])

    def test_rotation_resample_is_bilinear_with_zero_pad(self, rng):
        patch = self._patch(rng, size=20)
        scene2, _ = augment_rotations(patch, [])[2]  # 90 degrees, exact on the lattice
        # rotating the array by 90 degrees about its center equals np.rot90 up to
        # floating error; corners stay inside for a square patch
        np.testing.assert_allclose(scene2.image, np.rot90(patch.image, k=-1), atol=1e-5)


class TestSampleBilinear:
    def test_pixel_center_value(self, rng):
        grid = GridSpec(8, 8, origin=(2.0, 3.0), resolution=0.5)
        data = rng.random(grid.shape).astype(np.float32)
        field = ScalarField(grid, data, np.ones(grid.shape, np.float32))
        pos = grid.grid_to_world([3, 5])
        assert sample_bilinear(field, pos) == pytest.approx(float(data[5, 3]), abs=1e-7)

    def test_midpoint_average(self):
        grid = GridSpec(4, 4, resolution=1.0)
        data = np.zeros(grid.shape, np.float32)
        data[1, 2] = 1.0
        field = ScalarField(grid, data, np.ones(grid.shape, np.float32))
        assert sample_bilinear(field, [1.5, 1.0]) == pytest.approx(0.5)

    def test_affine_ramp_exact(self, rng):
        grid = GridSpec(12, 10, origin=(-1.0, 4.0), resolution=0.25)
        v, u = np.meshgrid(np.arange(10, dtype=float), np.arange(12, dtype=float),
                           indexing="ij")
        field = ScalarField(grid, (u + 2 * v).astype(np.float32),
                            np.ones(grid.shape, np.float32))
        for _ in range(50):
            uv = np.array([rng.uniform(0, 11), rng.uniform(0, 9)])
            value = sample_bilinear(field, grid.grid_to_world(uv))
            assert value == pytest.approx(uv[0] + 2 * uv[1], abs=1e-5)

    def test_out_of_hull_raises(self):
        grid = GridSpec(4, 4, resolution=1.0)
        field = ScalarField.zeros(grid)
        with pytest.raises(OutOfGridError):
            sample_bilinear(field, [3.4, 1.0])
        with pytest.raises(OutOfGridError):
            sample_bilinear(field, [-0.1, 1.0])


class TestExtractPatch:
    def test_identity_transform_recovers_scene(self, rng):
        from trajfield.geometry import CanonicalTransform

        grid = GridSpec(16, 16, resolution=1.0)
        scene = ScenePatch(grid, rng.random(grid.shape).astype(np.float32))
        tf = CanonicalTransform(rotation=0.0, translation=np.zeros(2),
                                crop_center=np.zeros(2))
        patch = extract_patch(scene, tf, grid)
        np.testing.assert_allclose(patch.image, scene.image, atol=1e-6)

    def test_outside_source_is_zero(self, rng):
        from trajfield.geometry import CanonicalTransform

        grid = GridSpec(16, 16, resolution=1.0)
        scene = ScenePatch(grid, np.ones(grid.shape, np.float32))
        # shift far away: everything samples outside the source
        tf = CanonicalTransform(rotation=0.0, translation=np.array([100.0, 0.0]),
                                crop_center=np.zeros(2))
        patch = extract_patch(scene, tf, grid)
        assert patch.image.max() == 0.0
