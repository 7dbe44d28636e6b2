import numpy as np
import pytest

from hybridplan.dualquat import DualQuaternion, dq_sclerp
from hybridplan.feasibility import (
    COLLISION,
    FJ,
    LOW_MANIP,
    NOT_FJ,
    OK,
    UNREACHABLE,
    build_map,
    classify_trajectory,
    fea,
    load_map,
    map_bytes,
    save_map,
)
from hybridplan.geometry import Box
from hybridplan.kinematics import fk, planar_rr, planar_3r

YAW_ONLY = (np.pi, (1, 1, 4))
ORI_FREE = (np.pi, (1, 1, 1))   # position-only arms cannot command yaw


def planar_pose(x, y, yaw=0.0):
    return DualQuaternion.from_pose([x, y, 0.0], (np.array([0, 0, 1.0]), yaw))


# ------------------------------------------------------------------ #
# fea
# ------------------------------------------------------------------ #
def test_fea_unreachable():
    m = planar_rr()
    res = fea(planar_pose(3.0, 0.0), m, [], rng=np.random.default_rng(0))
    assert not res.feasible and res.reason == UNREACHABLE and res.man_prime == 0.0


def test_fea_known_good_configuration():
    m = planar_3r()
    theta = np.array([0.4, 0.8, -0.5])
    pose = fk(m, theta)
    res = fea(pose, m, [], eps_m=0.1, rng=np.random.default_rng(1))
    assert res.feasible and res.reason == OK
    assert res.man_prime >= 0.1
    assert res.witness is not None and m.within_limits(res.witness)


def test_fea_collision_blocked_witnesses():
    # planar 2R reaching (1.2, 0): both elbow-up and elbow-down witnesses put
    # the elbow at x=1-ish; enclose the whole arm volume except the target
    m = planar_rr()
    target = planar_pose(1.2, 0.0)
    # both elbow witnesses have the elbow on the circle of radius 1; block both
    blocker_up = Box([-0.1, 0.05, -0.2], [1.3, 1.2, 0.2], "upper")
    blocker_dn = Box([-0.1, -1.2, -0.2], [1.3, -0.05, 0.2], "lower")
    res = fea(target, m, [blocker_up, blocker_dn], rng=np.random.default_rng(2),
              ik_budget=16)
    assert not res.feasible and res.reason == COLLISION


def test_fea_low_manipulability():
    # target at the annulus rim forces a near-singular arm
    m = planar_rr()
    res = fea(planar_pose(1.9995, 0.0), m, [], eps_m=0.5,
              rng=np.random.default_rng(3), tol_pos=1e-3)
    assert not res.feasible
    assert res.reason in (LOW_MANIP, UNREACHABLE)
    if res.reason == LOW_MANIP:
        assert res.man_prime < 0.5


def test_fea_witness_seed_priority():
    m = planar_3r()
    theta = np.array([0.3, 0.5, 0.2])
    pose = fk(m, theta)
    res = fea(pose, m, [], rng=np.random.default_rng(4), extra_seeds=[theta])
    assert res.feasible
    np.testing.assert_allclose(res.witness, theta, atol=1e-3)


# ------------------------------------------------------------------ #
# build_map
# ------------------------------------------------------------------ #
def small_map(model, obstacles=(), seed=0, voxel=0.5, box=((-2.25, -2.25, -0.25), (2.25, 2.25, 0.25))):
    return build_map(model, list(obstacles), box, voxel,
                     orientation_spec=ORI_FREE, eps_m=0.05, seed=seed, ik_budget=8)


def test_build_map_all_unreachable_beyond_reach():
    m = planar_rr()
    fmap = build_map(m, [], ((3.0, 3.0, -0.25), (4.0, 4.0, 0.25)), 0.5,
                     orientation_spec=ORI_FREE, seed=0, ik_budget=4)
    assert np.all(fmap.reasons == UNREACHABLE)


def test_build_map_empty_tessellation():
    m = planar_rr()
    with pytest.raises(ValueError, match="empty tessellation"):
        build_map(m, [], ((0, 0, 0), (0, 0, 0)), 0.5)


def test_build_map_annulus_matches_closed_form():
    # reachability (reason != UNREACHABLE) must match |L1-L2| <= r <= L1+L2
    # within one voxel of the boundary
    m = planar_rr()
    fmap = small_map(m, voxel=0.45)
    diag = fmap.voxel_size * np.sqrt(2) / 2
    for vox, ori in fmap.all_cells():
        center = fmap.voxel_center(vox)
        r = np.hypot(center[0], center[1])
        reachable = fmap.reasons[fmap.cell_index(vox, ori)] != UNREACHABLE
        if r < 2.0 - diag and r > diag:
            # strictly inside the annulus by more than half a voxel diagonal
            assert reachable, (vox, ori, r)
        elif r > 2.0 + diag:
            assert not reachable, (vox, ori, r)


def test_build_map_witnesses_reverify():
    from hybridplan.geometry import collision_index
    from hybridplan.kinematics import normalized_manipulability
    m = planar_rr()
    wall = Box([0.4, -1.6, -0.2], [0.8, 1.6, 0.2], "wall")
    fmap = small_map(m, [wall])
    checked = 0
    for vox, ori in fmap.all_cells():
        idx = fmap.cell_index(vox, ori)
        if fmap.reasons[idx] != OK:
            continue
        w = fmap.witnesses[idx].astype(float)
        assert not np.any(np.isnan(w))
        assert m.within_limits(w, tol=1e-5)
        assert collision_index(m, w, [wall]) == 0
        assert normalized_manipulability(m, w) >= fmap.metadata["eps_m"] - 1e-3
        # the witness pose lands inside the cell it vouches for
        assert fmap.locate(fk(m, w)) == (tuple(vox), tuple(ori))
        checked += 1
    assert checked > 10


def test_build_map_obstacle_monotonicity():
    m = planar_rr()
    rng = np.random.default_rng(5)
    for k in range(3):
        lo = rng.uniform(-1.5, 0.5, size=2)
        size = rng.uniform(0.3, 1.0, size=2)
        wall = Box([lo[0], lo[1], -0.2], [lo[0] + size[0], lo[1] + size[1], 0.2])
        free = small_map(m, [], seed=k, voxel=0.75)
        blocked = small_map(m, [wall], seed=k, voxel=0.75)
        assert (blocked.reasons == OK).sum() <= (free.reasons == OK).sum()


def test_build_map_seed_determinism_and_file_roundtrip(tmp_path):
    m = planar_rr()
    wall = Box([0.5, -1.0, -0.2], [0.9, 1.0, 0.2], "w")
    a = small_map(m, [wall], seed=7, voxel=0.75)
    b = small_map(m, [wall], seed=7, voxel=0.75)
    assert map_bytes(a) == map_bytes(b)

    path = tmp_path / "cells.map"
    save_map(a, path)
    loaded = load_map(path)
    assert map_bytes(loaded) == map_bytes(a)
    np.testing.assert_array_equal(loaded.reasons, a.reasons)
    assert loaded.metadata["robot_hash"] == a.metadata["robot_hash"]
    # quantized man values survive the roundtrip exactly
    np.testing.assert_allclose(loaded.man, a.man, atol=1e-12)


def test_build_map_yaw_cells_planar_3r():
    m = planar_3r()
    fmap = build_map(m, [], ((-0.1, -0.1, -0.25), (0.9, 0.9, 0.25)), 0.5,
                     orientation_spec=YAW_ONLY, eps_m=0.05, seed=1, ik_budget=8)
    assert fmap.n_orient == 4
    # the 3R controls yaw: every feasible cell's witness lands in its yaw bin
    found = 0
    for vox, ori in fmap.all_cells():
        idx = fmap.cell_index(vox, ori)
        if fmap.reasons[idx] != OK:
            continue
        w = fmap.witnesses[idx].astype(float)
        assert fmap.locate(fk(m, w)) == (tuple(vox), tuple(ori))
        found += 1
    assert found >= 4
    # yaw binning: a pose rotated by one bin width lands in the next bin
    pose_a = planar_pose(0.4, 0.4, 0.1)
    pose_b = planar_pose(0.4, 0.4, 0.1 + np.pi / 2)
    (_, ori_a) = fmap.locate(pose_a)
    (_, ori_b) = fmap.locate(pose_b)
    assert ori_b[2] == ori_a[2] + 1


def test_refinement_witness_transfer():
    # a coarse feasible cell's witness, used as an IK seed, re-verifies in the
    # fine cell that contains its pose
    m = planar_rr()
    coarse = small_map(m, voxel=0.9)
    fine_voxel = 0.45
    transfers = 0
    for vox, ori in coarse.all_cells():
        idx = coarse.cell_index(vox, ori)
        if coarse.reasons[idx] != OK:
            continue
        w = coarse.witnesses[idx].astype(float)
        pose = fk(m, w)
        res = fea(pose, m, [], eps_m=0.05, ik_budget=8,
                  rng=np.random.default_rng(0), tol_pos=fine_voxel / 2,
                  tol_rot=np.pi / 4, extra_seeds=[w])
        assert res.feasible
        transfers += 1
        if transfers >= 25:
            break
    assert transfers > 0


# ------------------------------------------------------------------ #
# classify_trajectory
# ------------------------------------------------------------------ #
def straight_line(a, b, n):
    return [dq_sclerp(a, b, u) for u in np.linspace(0, 1, n)]


def test_classify_all_feasible():
    m = planar_rr()
    fmap = small_map(m)
    traj = straight_line(planar_pose(0.3, 1.2), planar_pose(1.2, 0.3), 12)
    cls = classify_trajectory(traj, fmap)
    assert len(cls.segments) == 1
    assert cls.segments[0].label == FJ
    assert cls.segments[0].start == 0 and cls.segments[0].end == 11


def test_classify_wall_band_three_segments():
    # a block sitting on the path: the middle voxel column is infeasible,
    # the flanks stay feasible
    m = planar_rr()
    block = Box([-0.25, 0.7, -0.2], [0.25, 1.3, 0.2], "block")
    fmap = small_map(m, [block])
    traj = straight_line(planar_pose(-1.4, 0.9), planar_pose(1.4, 0.9), 15)
    cls = classify_trajectory(traj, fmap)
    labels = [s.label for s in cls.segments]
    assert labels == [FJ, NOT_FJ, FJ]
    (seg, before, after), = cls.infeasible_brackets()
    assert before is not None and after is not None
    assert before.translation()[0] < -0.25 and after.translation()[0] > 0.25


def test_classify_all_infeasible():
    m = planar_rr()
    fmap = small_map(m)
    traj = straight_line(planar_pose(3.0, 3.0), planar_pose(3.5, 3.5), 5)
    cls = classify_trajectory(traj, fmap)
    assert len(cls.segments) == 1 and cls.segments[0].label == NOT_FJ
    (seg, before, after), = cls.infeasible_brackets()
    assert before is None and after is None


def test_classify_too_short():
    m = planar_rr()
    fmap = small_map(m)
    with pytest.raises(ValueError):
        classify_trajectory([planar_pose(0, 1)], fmap)


def test_classify_idempotence():
    m = planar_rr()
    block = Box([-0.25, 0.7, -0.2], [0.25, 1.3, 0.2], "block")
    fmap = small_map(m, [block])
    traj = straight_line(planar_pose(-1.4, 0.9), planar_pose(1.4, 0.9), 15)
    cls = classify_trajectory(traj, fmap)
    for seg in cls.segments:
        if seg.end - seg.start + 1 < 2:
            continue
        sub = traj[seg.start:seg.end + 1]
        sub_cls = classify_trajectory(sub, fmap)
        assert len(sub_cls.segments) == 1
        assert sub_cls.segments[0].label == seg.label
