"""Cameras, rigid poses, rays, and box intersection."""
import json

import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial.transform import Rotation

from covren.errors import ContractError, DomainError
from covren.geometry import (AxisAlignedBox, CameraIntrinsics, Ray, RigidPose,
                             camera_from_json, camera_rays, camera_to_json,
                             intersect_ray_box, intersect_rays_box,
                             look_at_pose, matrix_to_quat_wxyz, object_to_world,
                             pose_from_json, pose_to_json, posed_aabb,
                             project_point, quat_wxyz_to_matrix, ray_for_pixel,
                             world_to_object)


def random_pose(rng):
    r = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    return RigidPose(r, rng.normal(0.0, 2.0, 3))


def test_quat_matrix_round_trip_against_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        rot = Rotation.random(random_state=int(rng.integers(1 << 31)))
        m = rot.as_matrix()
        q = matrix_to_quat_wxyz(m)
        # scipy uses xyzw ordering; compare up to global sign
        q_ref = rot.as_quat()
        q_ref = np.array([q_ref[3], q_ref[0], q_ref[1], q_ref[2]])
        if q_ref[0] < 0:
            q_ref = -q_ref
        npt.assert_allclose(q, q_ref, atol=1e-12)
        npt.assert_allclose(quat_wxyz_to_matrix(q), m, atol=1e-12)
        assert q[0] >= 0.0


def test_quat_identity_and_axis_cases():
    npt.assert_allclose(quat_wxyz_to_matrix([1, 0, 0, 0]), np.eye(3), atol=0)
    # 90 degrees about z maps x to y
    q = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
    m = quat_wxyz_to_matrix(q)
    npt.assert_allclose(m @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_pose_validation_rejects_non_rotations():
    with pytest.raises(DomainError):
        RigidPose(np.eye(3) * 2.0, np.zeros(3))
    flip = np.diag([1.0, 1.0, -1.0])  # det -1
    with pytest.raises(DomainError):
        RigidPose(flip, np.zeros(3))
    with pytest.raises(ContractError):
        RigidPose(np.eye(4), np.zeros(3))


def test_pose_compose_inverse_identities():
    rng = np.random.default_rng(1)
    pts = rng.normal(0.0, 1.0, (40, 3))
    for _ in range(10):
        a = random_pose(rng)
        b = random_pose(rng)
        npt.assert_allclose(a.compose(b).transform(pts),
                            a.transform(b.transform(pts)), atol=1e-12)
        npt.assert_allclose(a.inverse().transform(a.transform(pts)), pts,
                            atol=1e-12)
        npt.assert_allclose(a.inverse_transform(a.transform(pts)), pts,
                            atol=1e-12)


def test_world_object_round_trip():
    rng = np.random.default_rng(2)
    pose = random_pose(rng)
    pts = rng.normal(0.0, 1.0, (15, 3))
    local = world_to_object(pts, pose)
    npt.assert_allclose(object_to_world(local, pose), pts, atol=1e-12)


def test_ray_normalizes_direction():
    r = Ray(np.zeros(3), np.array([0.0, 0.0, 5.0]))
    npt.assert_allclose(np.linalg.norm(r.direction), 1.0)
    npt.assert_allclose(r.point_at(2.0), [0, 0, 2])
    with pytest.raises(DomainError):
        Ray(np.zeros(3), np.zeros(3))


def test_box_basics():
    box = AxisAlignedBox.cube(0.5, center=(1.0, 0.0, 0.0))
    npt.assert_allclose(box.size(), [1, 1, 1])
    npt.assert_allclose(box.center(), [1, 0, 0])
    inside = box.contains(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    npt.assert_array_equal(inside, [True, False])
    with pytest.raises(DomainError):
        AxisAlignedBox(np.zeros(3), np.zeros(3))


def test_pixel_ray_through_optical_axis():
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0,
                            width=64, height=48)
    # pixel indices are offset half a pixel from the principal point
    ray = ray_for_pixel(intr, RigidPose.identity(), 31.5, 23.5)
    npt.assert_allclose(ray.direction, [0, 0, 1], atol=1e-15)
    with pytest.raises(DomainError):
        ray_for_pixel(intr, RigidPose.identity(), 64.0, 0.0)


def test_camera_rays_match_per_pixel_rays():
    intr = CameraIntrinsics(fx=70.0, fy=65.0, cx=8.0, cy=6.0, width=16, height=12)
    pose = random_pose(np.random.default_rng(3))
    origin, dirs, dir_z = camera_rays(intr, pose)
    assert dirs.shape == (12, 16, 3)
    npt.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)
    npt.assert_allclose(origin, pose.translation)
    for (i, j) in [(0, 0), (5, 9), (11, 15)]:
        ray = ray_for_pixel(intr, pose, j, i)
        npt.assert_allclose(dirs[i, j], ray.direction, atol=1e-12)
    # dir_z converts ray distance to camera depth: z_cam = t * dir_z
    pt = origin + 2.0 * dirs[5, 9]
    local = pose.inverse_transform(pt)
    npt.assert_allclose(local[2], 2.0 * dir_z[5, 9], atol=1e-12)


def test_project_point_inverts_pixel_ray():
    intr = CameraIntrinsics(fx=80.0, fy=90.0, cx=20.0, cy=15.0, width=40, height=30)
    rng = np.random.default_rng(4)
    pose = random_pose(rng)
    for _ in range(20):
        u = rng.uniform(0, 40)
        v = rng.uniform(0, 30)
        ray = ray_for_pixel(intr, pose, u, v)
        uv = project_point(intr, pose, ray.point_at(rng.uniform(0.5, 4.0)))
        npt.assert_allclose(uv, [u, v], atol=1e-9)
    behind = pose.transform(np.array([0.0, 0.0, -1.0]))
    with pytest.raises(DomainError):
        project_point(intr, pose, behind)


def test_ray_box_intersection_cases():
    box = AxisAlignedBox.cube(0.5)
    hit = intersect_ray_box(Ray([0, 0, -2.0], [0, 0, 1.0]), box)
    npt.assert_allclose(hit, (1.5, 2.5), atol=1e-12)
    # origin inside: entry clamps to zero
    hit = intersect_ray_box(Ray([0, 0, 0], [0, 0, 1.0]), box)
    npt.assert_allclose(hit, (0.0, 0.5), atol=1e-12)
    # axis-parallel miss
    assert intersect_ray_box(Ray([0, 2.0, -2.0], [0, 0, 1.0]), box) is None
    # box entirely behind the origin
    assert intersect_ray_box(Ray([0, 0, 2.0], [0, 0, 1.0]), box) is None


def test_ray_box_vectorized_matches_sampled_membership():
    rng = np.random.default_rng(5)
    box = AxisAlignedBox(np.array([-0.4, -0.2, -0.3]), np.array([0.5, 0.3, 0.6]))
    pose = random_pose(rng)
    origins = rng.normal(0.0, 2.0, (200, 3))
    # aim near the posed box so a healthy share of rays actually hit
    aim = pose.translation + rng.normal(0.0, 0.8, (200, 3))
    dirs = aim - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t0, t1, hit = intersect_rays_box(origins, dirs, box, pose)
    ts = np.linspace(0.0, 8.0, 4001)
    for k in range(200):
        pts = origins[k] + ts[:, None] * dirs[k]
        inside = box.contains(pose.inverse_transform(pts))
        if hit[k]:
            assert t1[k] > t0[k] >= 0.0
            mids = origins[k] + (0.5 * (t0[k] + t1[k])) * dirs[k]
            assert box.contains(pose.inverse_transform(mids[None]))[0]
        else:
            # no sampled point may sit strictly inside
            interior = box.contains(pose.inverse_transform(pts))
            assert not np.any(interior & (ts > 1e-9))
    assert hit.sum() > 10  # sanity: the sweep actually exercised hits


def test_posed_aabb_bounds_all_corners():
    rng = np.random.default_rng(6)
    box = AxisAlignedBox(np.array([-0.3, -0.1, -0.2]), np.array([0.2, 0.4, 0.1]))
    for _ in range(10):
        pose = random_pose(rng)
        world = posed_aabb(box, pose)
        corners = np.array([[x, y, z]
                            for x in (box.min_corner[0], box.max_corner[0])
                            for y in (box.min_corner[1], box.max_corner[1])
                            for z in (box.min_corner[2], box.max_corner[2])])
        moved = pose.transform(corners)
        npt.assert_allclose(world.min_corner, moved.min(axis=0), atol=1e-12)
        npt.assert_allclose(world.max_corner, moved.max(axis=0), atol=1e-12)


def test_look_at_points_camera_forward_at_target():
    eye = np.array([1.0, -2.0, 1.5])
    target = np.array([0.0, 0.0, 0.5])
    pose = look_at_pose(eye, target)
    fwd = pose.rotation[:, 2]
    expect = (target - eye) / np.linalg.norm(target - eye)
    npt.assert_allclose(fwd, expect, atol=1e-12)
    npt.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)
    npt.assert_allclose(pose.translation, eye)


def test_camera_json_round_trip():
    intr = CameraIntrinsics(fx=70.0, fy=71.0, cx=31.5, cy=32.5, width=64, height=66)
    pose = random_pose(np.random.default_rng(7))
    data = json.loads(json.dumps(camera_to_json(intr, pose)))
    intr2, pose2 = camera_from_json(data)
    assert intr2 == intr
    npt.assert_allclose(pose2.rotation, pose.rotation, atol=1e-12)
    npt.assert_allclose(pose2.translation, pose.translation, atol=1e-15)


def test_pose_json_round_trip():
    pose = random_pose(np.random.default_rng(8))
    pose2 = pose_from_json(json.loads(json.dumps(pose_to_json(pose))))
    npt.assert_allclose(pose2.rotation, pose.rotation, atol=1e-12)
    npt.assert_allclose(pose2.translation, pose.translation, atol=1e-15)
