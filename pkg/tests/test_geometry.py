"""Camera model, pose updates, and warping."""

import numpy as np
import pytest

from nimslam.errors import BehindCameraError, InvalidDepthError, UndefinedFlowError
from nimslam.geometry import (
    CameraIntrinsics, Pose, PoseDelta, apply_delta, flow_score, induced_flow_score,
    project, so3_exp, unproject, warp_pixel, warp_points,
)

from conftest import random_pose


class TestProjectUnproject:
    def test_principal_axis(self, camera):
        np.testing.assert_allclose(project(camera, np.array([0, 0, 1.0])), [50, 50])

    def test_offset_point(self, camera):
        np.testing.assert_allclose(project(camera, np.array([1, 0, 2.0])), [100, 50])

    def test_behind_camera_raises(self, camera):
        with pytest.raises(BehindCameraError):
            project(camera, np.array([0, 0, -1.0]))

    def test_unproject_center(self, camera):
        np.testing.assert_allclose(unproject(camera, np.array([50, 50.0]), 2.0), [0, 0, 2])

    def test_unproject_offset(self, camera):
        np.testing.assert_allclose(unproject(camera, np.array([150, 50.0]), 1.0), [1, 0, 1])

    def test_unproject_invalid_depth(self, camera):
        with pytest.raises(InvalidDepthError):
            unproject(camera, np.array([50, 50.0]), -0.5)

    def test_roundtrip(self, camera):
        q = np.array([37.25, 81.5])
        p = unproject(camera, q, 3.7)
        assert p[2] == 3.7
        np.testing.assert_allclose(project(camera, p), q, atol=1e-9)

    def test_roundtrip_random(self, camera, rng):
        for _ in range(50):
            q = rng.uniform(0, 100, 2)
            d = rng.uniform(0.1, 10.0)
            np.testing.assert_allclose(project(camera, unproject(camera, q, d)), q,
                                       atol=1e-9)


class TestApplyDelta:
    def test_zero_delta_is_identity_object(self, rng):
        pose = random_pose(rng)
        out = apply_delta(pose, PoseDelta.zero())
        assert np.array_equal(out.rotation, pose.rotation)
        assert np.array_equal(out.translation, pose.translation)

    def test_quarter_turn_about_z(self):
        # Rodrigues by hand: rotating (1,0,0) by pi/2 about z gives (0,1,0).
        out = apply_delta(Pose.identity(),
                          PoseDelta(np.array([0, 0, np.pi / 2]), np.zeros(3)))
        np.testing.assert_allclose(out.rotation @ np.array([1.0, 0, 0]), [0, 1, 0],
                                   atol=1e-9)

    def test_orthonormal_after_many_compositions(self, rng):
        pose = Pose.identity()
        for _ in range(10000):
            delta = PoseDelta(rng.normal(0, 1e-3, 3), rng.normal(0, 1e-3, 3))
            pose = apply_delta(pose, delta)
        err = np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max()
        assert err < 1e-9
        assert abs(np.linalg.det(pose.rotation) - 1) < 1e-9

    def test_translation_convention(self, rng):
        # Right multiplication: t' = R dt + t.
        pose = random_pose(rng)
        dt = np.array([0.1, -0.2, 0.3])
        out = apply_delta(pose, PoseDelta(np.zeros(3), dt))
        np.testing.assert_allclose(out.translation,
                                   pose.rotation @ dt + pose.translation, atol=1e-12)


class TestWarp:
    def test_identity_warp(self, camera, rng):
        pose = random_pose(rng)
        for _ in range(20):
            q = rng.uniform(0, 100, 2)
            d = rng.uniform(0.2, 8.0)
            np.testing.assert_allclose(
                warp_pixel(q, d, pose, pose, camera, camera), q, atol=1e-9)

    def test_hand_translation_case(self, camera):
        # Target camera shifted +0.1 in x: point (0,0,2) appears at 45 px.
        pose_k = Pose.identity()
        pose_l = Pose(np.eye(3), np.array([0.1, 0, 0]))
        out = warp_pixel(np.array([50.0, 50.0]), 2.0, pose_k, pose_l, camera, camera)
        np.testing.assert_allclose(out, [45, 50], atol=1e-12)

    def test_behind_target_raises(self, camera):
        pose_k = Pose.identity()
        pose_l = Pose(np.eye(3), np.array([0.0, 0, 5.0]))
        with pytest.raises(BehindCameraError):
            warp_pixel(np.array([50.0, 50.0]), 2.0, pose_k, pose_l, camera, camera)

    def test_roundtrip_on_plane(self, camera, rng):
        # Forward warp to frame l, then back with the warped point's l-depth.
        pose_k = random_pose(rng, rot_scale=0.1, t_scale=0.2)
        pose_l = random_pose(rng, rot_scale=0.1, t_scale=0.2)
        q = rng.uniform(20, 80, (40, 2))
        # synthetic plane z_world = 3 in front of both cameras
        rays = np.concatenate([(q - 50) / 100.0, np.ones((40, 1))], axis=1)
        # depth along z of camera k so that points lie on the plane
        dir_w = rays @ pose_k.rotation.T
        depth = (3.0 - pose_k.translation[2]) / dir_w[:, 2]
        warped, z_l, front = warp_points(q, depth, pose_k, pose_l, camera, camera)
        assert front.all()
        back, z_k, front2 = warp_points(warped, z_l, pose_l, pose_k, camera, camera)
        assert front2.all()
        np.testing.assert_allclose(back, q, atol=1e-6)

    def test_gauge_invariance(self, camera, rng):
        pose_k = random_pose(rng, 0.1, 0.3)
        pose_l = random_pose(rng, 0.1, 0.3)
        g = random_pose(rng, 0.5, 2.0)
        q = rng.uniform(10, 90, (30, 2))
        d = rng.uniform(0.5, 6.0, 30)
        a, _, fa = warp_points(q, d, pose_k, pose_l, camera, camera)
        b, _, fb = warp_points(q, d, g.compose(pose_k), g.compose(pose_l), camera, camera)
        assert np.array_equal(fa, fb)
        np.testing.assert_allclose(a[fa], b[fa], atol=1e-9)


class _Frame:
    def __init__(self, pose, intrinsics):
        self.pose = pose
        self.intrinsics = intrinsics


class TestFlowScore:
    def test_zero_for_same_pose(self, camera, rng):
        f = _Frame(random_pose(rng), camera)
        pix = rng.uniform(0, 100, (50, 2))
        d = rng.uniform(0.5, 5.0, 50)
        # identical poses: identity warp up to float round-off
        assert flow_score(pix, d, f, _Frame(f.pose, camera)) < 1e-16

    def test_pure_translation_value(self, camera):
        # fx * tx / depth = 100*0.2/2 = 10 px shift -> mean square 100.
        a = _Frame(Pose.identity(), camera)
        b = _Frame(Pose(np.eye(3), np.array([0.2, 0, 0])), camera)
        pix = np.array([[30.0, 40.0], [50.0, 50.0], [70.0, 20.0]])
        d = np.full(3, 2.0)
        assert abs(flow_score(pix, d, a, b) - 100.0) < 1e-9

    def test_undefined_flow(self, camera):
        a = _Frame(Pose.identity(), camera)
        b = _Frame(Pose(np.eye(3), np.array([0, 0, 10.0])), camera)
        with pytest.raises(UndefinedFlowError):
            flow_score(np.array([[50.0, 50.0]]), np.array([2.0]), a, b)

    def test_full_map_sampling(self, camera, rng):
        a = _Frame(Pose.identity(), camera)
        b = _Frame(Pose(np.eye(3), np.array([0.2, 0, 0])), camera)
        depth_map = np.full((101, 101), 2.0)
        f = induced_flow_score(a, b, depth_map, 64, rng)
        assert abs(f - 100.0) < 1e-9


def test_so3_exp_small_angle_branch():
    w = np.array([1e-10, 0, 0])
    R = so3_exp(w)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-15
    np.testing.assert_allclose(R, np.eye(3), atol=1e-9)
