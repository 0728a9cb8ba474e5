"""Scene composition: placement, settling, cameras, batch generation."""
import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial.transform import Rotation

from covren.errors import ContractError, PlacementError
from covren.geometry import AxisAlignedBox, CameraIntrinsics, RigidPose, posed_aabb
from covren.procedural import uniform_box_volume
from covren.synthesis import (ComposedScene, GenerationConfig, SettleParams,
                              VolumeLibrary, _nearest_axis_aligned, generate,
                              ring_cameras, sample_initial_pose, settle)

INTR = CameraIntrinsics(fx=70.0, fy=70.0, cx=32.0, cy=32.0, width=64, height=64)


def small_library():
    lib = VolumeLibrary()
    lib.add("cube", uniform_box_volume((4, 4, 4), AxisAlignedBox.cube(0.06), 50.0))
    lib.add("brick", uniform_box_volume(
        (4, 4, 8), AxisAlignedBox(np.array([-0.09, -0.05, -0.04]),
                                  np.array([0.09, 0.05, 0.04])), 50.0))
    lib.add("tall", uniform_box_volume(
        (8, 4, 4), AxisAlignedBox(np.array([-0.04, -0.04, -0.1]),
                                  np.array([0.04, 0.04, 0.1])), 50.0))
    return lib


def test_library_rejects_duplicate_names():
    lib = small_library()
    with pytest.raises(ContractError):
        lib.add("cube", uniform_box_volume((4, 4, 4), AxisAlignedBox.cube(0.05), 1.0))
    assert len(lib) == 3
    assert lib.get("brick").name == "brick"


def test_nearest_axis_aligned_is_signed_permutation():
    rng = np.random.default_rng(30)
    for _ in range(60):
        r = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
        p = _nearest_axis_aligned(r)
        npt.assert_allclose(np.abs(p) @ np.ones(3), np.ones(3), atol=0)
        npt.assert_allclose(p @ p.T, np.eye(3), atol=1e-12)
        npt.assert_allclose(np.linalg.det(p), 1.0, atol=1e-12)
    # a small perturbation of identity snaps back to identity
    wiggle = Rotation.from_rotvec([0.05, -0.03, 0.04]).as_matrix()
    npt.assert_array_equal(_nearest_axis_aligned(wiggle), np.eye(3))


def test_sample_initial_pose_respects_bin_and_stack():
    rng = np.random.default_rng(31)
    bin_bounds = AxisAlignedBox((-0.5, -0.5, 0.0), (0.5, 0.5, 0.8))
    box = AxisAlignedBox.cube(0.08)
    for stack in (0.0, 0.3):
        for _ in range(50):
            pose = sample_initial_pose(bin_bounds, box, rng, stack_height=stack)
            world = posed_aabb(box, pose)
            assert np.all(world.min_corner[:2] >= bin_bounds.min_corner[:2] - 1e-9)
            assert np.all(world.max_corner[:2] <= bin_bounds.max_corner[:2] + 1e-9)
            assert world.min_corner[2] >= stack - 1e-9
    # oversized footprint cannot fit at any yaw
    with pytest.raises(PlacementError, match="slab"):
        sample_initial_pose(bin_bounds, AxisAlignedBox(
            np.array([-0.8, -0.1, -0.1]), np.array([0.8, 0.1, 0.1])), rng,
            name="slab")


def test_settle_separates_overlapping_boxes():
    boxes = [AxisAlignedBox.cube(0.1), AxisAlignedBox.cube(0.1)]
    poses = [RigidPose(np.eye(3), np.array([0.0, 0.0, 0.3])),
             RigidPose(np.eye(3), np.array([0.05, 0.02, 0.32]))]
    settled, report = settle(boxes, poses)
    assert report.max_penetration <= 1e-3
    assert report.all_supported
    for box, pose in zip(boxes, settled):
        world = posed_aabb(box, pose)
        assert world.min_corner[2] >= -1e-3
    a = posed_aabb(boxes[0], settled[0])
    b = posed_aabb(boxes[1], settled[1])
    overlap = np.minimum(a.max_corner, b.max_corner) - np.maximum(a.min_corner,
                                                                  b.min_corner)
    assert np.min(overlap) <= 1e-3  # separated on at least one axis


def test_settle_aligns_tilted_box_flat_on_floor():
    box = AxisAlignedBox(np.array([-0.1, -0.05, -0.02]), np.array([0.1, 0.05, 0.02]))
    tilt = Rotation.from_rotvec([0.2, 0.1, 0.4]).as_matrix()
    settled, report = settle([box], [RigidPose(tilt, np.array([0.0, 0.0, 0.4]))])
    assert report.converged
    r = settled[0].rotation
    # final orientation is a signed permutation: flat against the floor
    npt.assert_allclose(np.abs(r).max(axis=0), np.ones(3), atol=1e-6)
    world = posed_aabb(box, settled[0])
    npt.assert_allclose(world.min_corner[2], 0.0, atol=1e-6)


def test_settle_keeps_bodies_inside_bounds():
    bounds = AxisAlignedBox((-0.5, -0.5, 0.0), (0.5, 0.5, 0.8))
    box = AxisAlignedBox.cube(0.08)
    poses = [RigidPose(np.eye(3), np.array([0.48, -0.49, 0.3]))]
    settled, _ = settle([box], poses, bounds=bounds)
    world = posed_aabb(box, settled[0])
    assert np.all(world.min_corner[:2] >= bounds.min_corner[:2] - 1e-6)
    assert np.all(world.max_corner[:2] <= bounds.max_corner[:2] + 1e-6)


def test_ring_cameras_look_at_center():
    cams = ring_cameras((0.1, -0.2, 0.3), radius=1.5, elevation_deg=40.0,
                        count=6, intrinsics=INTR)
    assert len(cams) == 6
    center = np.array([0.1, -0.2, 0.3])
    for intr, pose in cams:
        assert intr == INTR
        npt.assert_allclose(np.linalg.norm(pose.translation - center), 1.5,
                            atol=1e-9)
        fwd = pose.rotation[:, 2]
        to_center = center - pose.translation
        npt.assert_allclose(fwd, to_center / np.linalg.norm(to_center), atol=1e-9)


def test_generate_batch_properties():
    lib = small_library()
    cfg = GenerationConfig(num_scenes=6, min_objects=3, max_objects=6, seed=42)
    scenes = generate(lib, cfg)
    assert len(scenes) == 6
    for sc in scenes:
        assert 3 <= len(sc.placements) + len(sc.skipped) <= 6
        assert len(sc.cameras) == cfg.cameras_per_scene
        assert sc.settle.max_penetration <= 1e-2
        assert sc.settle.all_supported
        for p in sc.placements:
            world = posed_aabb(lib[p.library_index].volume.box, p.pose)
            assert world.min_corner[2] >= -1e-3


def test_generate_is_reproducible_and_scenes_differ():
    lib = small_library()
    cfg = GenerationConfig(num_scenes=3, seed=7)
    a = generate(lib, cfg)
    b = generate(lib, cfg)
    for sa, sb in zip(a, b):
        assert len(sa.placements) == len(sb.placements)
        for pa, pb in zip(sa.placements, sb.placements):
            assert pa.name == pb.name
            npt.assert_array_equal(pa.pose.rotation, pb.pose.rotation)
            npt.assert_array_equal(pa.pose.translation, pb.pose.translation)
    t0 = a[0].placements[0].pose.translation
    t1 = a[1].placements[0].pose.translation
    assert np.any(t0 != t1)


def test_generate_requires_nonempty_library():
    with pytest.raises(ContractError):
        generate(VolumeLibrary(), GenerationConfig(num_scenes=1))


def test_composed_scene_builds_scene():
    lib = small_library()
    cfg = GenerationConfig(num_scenes=1, min_objects=3, max_objects=3, seed=5)
    composed = generate(lib, cfg)[0]
    from covren.procedural import floor_background
    bg = floor_background(AxisAlignedBox((-0.8, -0.8, -0.1), (0.8, 0.8, 1.0)),
                          floor_z=0.0)
    scene = composed.to_scene(lib, bg)
    assert len(scene.objects) == len(composed.placements)
    assert scene.background.is_background
    assert scene.object_ids == list(range(1, len(scene.objects) + 1))
