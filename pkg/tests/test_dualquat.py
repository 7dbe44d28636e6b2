import numpy as np
import pytest

from hybridplan.dualquat import (
    DualQuaternion,
    dq_conjugate,
    dq_from_pose,
    dq_mul,
    dq_sclerp,
    load_poses,
    quat_from_euler,
    quat_to_euler,
    save_poses,
)


# ------------------------------------------------------------------ #
# Independent 4x4 homogeneous-matrix oracle (Rodrigues, no library code)
# ------------------------------------------------------------------ #
def rodrigues(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def homogeneous(axis, angle, t):
    H = np.eye(4)
    H[:3, :3] = rodrigues(axis, angle)
    H[:3, 3] = t
    return H


def dq_to_homogeneous(d):
    pos, q = d.to_pose()
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    H = np.eye(4)
    H[:3, :3] = R
    H[:3, 3] = pos
    return H


def random_unit_dq(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    t = rng.uniform(-2, 2, size=3)
    return DualQuaternion.from_pose(t, q)


# ------------------------------------------------------------------ #
# dq_mul
# ------------------------------------------------------------------ #
def test_mul_identity():
    rng = np.random.default_rng(0)
    d = random_unit_dq(rng)
    out = dq_mul(DualQuaternion.identity(), d)
    np.testing.assert_allclose(out.as_array(), d.as_array(), atol=1e-12)


def test_mul_commuting_translations():
    a = DualQuaternion.from_translation([1.0, 0, 0])
    b = DualQuaternion.from_translation([2.0, 0, 0])
    out = dq_mul(a, b)
    np.testing.assert_allclose(out.translation(), [3.0, 0, 0], atol=1e-12)


def test_mul_rotation_then_translation_matches_matrix_oracle():
    # (rotZ 90deg) o (translate +x by 1): the translation lands on +y
    rot = dq_from_pose([0, 0, 0], (np.array([0, 0, 1.0]), np.pi / 2))
    tra = DualQuaternion.from_translation([1.0, 0, 0])
    got = dq_mul(rot, tra)
    np.testing.assert_allclose(got.translation(), [0, 1, 0], atol=1e-12)

    H = homogeneous([0, 0, 1], np.pi / 2, [0, 0, 0]) @ homogeneous([0, 0, 1], 0, [1, 0, 0])
    np.testing.assert_allclose(dq_to_homogeneous(got), H, atol=1e-12)


def test_mul_random_pairs_match_matrix_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        axis_a, axis_b = rng.normal(size=3), rng.normal(size=3)
        ang_a, ang_b = rng.uniform(-np.pi, np.pi, size=2)
        ta, tb = rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=3)
        a = dq_from_pose(ta, (axis_a, ang_a))
        b = dq_from_pose(tb, (axis_b, ang_b))
        H = homogeneous(axis_a, ang_a, ta) @ homogeneous(axis_b, ang_b, tb)
        np.testing.assert_allclose(dq_to_homogeneous(dq_mul(a, b)), H, atol=1e-9)


# ------------------------------------------------------------------ #
# dq_conjugate
# ------------------------------------------------------------------ #
def test_conjugate_identity():
    e = DualQuaternion.identity()
    np.testing.assert_allclose(dq_conjugate(e).as_array(), e.as_array(), atol=0)


def test_conjugate_pure_translation():
    d = DualQuaternion.from_translation([0.3, -0.7, 2.0])
    np.testing.assert_allclose(dq_conjugate(d).translation(), [-0.3, 0.7, -2.0], atol=1e-12)


def test_conjugate_is_inverse_over_random_samples():
    rng = np.random.default_rng(2)
    eye = DualQuaternion.identity().as_array()
    for _ in range(1000):
        d = random_unit_dq(rng)
        prod = dq_mul(dq_conjugate(d), d)
        arr = prod.as_array()
        if arr[0] < 0:
            arr = -arr
        np.testing.assert_allclose(arr, eye, atol=1e-9)


# ------------------------------------------------------------------ #
# dq_from_pose / to_pose
# ------------------------------------------------------------------ #
def test_from_pose_identity():
    d = dq_from_pose([0, 0, 0], np.array([1.0, 0, 0, 0]))
    np.testing.assert_allclose(d.as_array(), DualQuaternion.identity().as_array(), atol=0)


def test_from_pose_dual_part_hand_expansion():
    # pure translation (1,2,3): dual = 0.5 * (0,1,2,3) * (1,0,0,0)
    d = dq_from_pose([1, 2, 3], np.array([1.0, 0, 0, 0]))
    np.testing.assert_allclose(d.dual, 0.5 * np.array([0, 1, 2, 3]), atol=0)


def test_from_pose_half_turn_about_z():
    d = dq_from_pose([0, 0, 0], (np.array([0, 0, 1.0]), np.pi))
    np.testing.assert_allclose(d.real, [0, 0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(d.dual, np.zeros(4), atol=1e-15)


def test_from_pose_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(500):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        t = rng.uniform(-5, 5, size=3)
        d = dq_from_pose(t, q)
        pos, rot = d.to_pose()
        np.testing.assert_allclose(pos, t, atol=1e-9)
        if np.dot(rot, q) < 0:
            rot = -rot
        np.testing.assert_allclose(rot, q, atol=1e-9)


def test_from_pose_degenerate_rotation():
    with pytest.raises(ValueError, match="degenerate rotation"):
        dq_from_pose([0, 0, 0], np.zeros(4))


# ------------------------------------------------------------------ #
# dq_sclerp
# ------------------------------------------------------------------ #
def test_sclerp_endpoints():
    rng = np.random.default_rng(4)
    a, b = random_unit_dq(rng), random_unit_dq(rng)
    np.testing.assert_allclose(dq_sclerp(a, b, 0.0).as_array(), a.as_array(), atol=1e-12)
    got = dq_sclerp(a, b, 1.0).as_array()
    if np.dot(got[:4], b.as_array()[:4]) < 0:
        got = -got
    np.testing.assert_allclose(got, b.as_array(), atol=1e-9)


def test_sclerp_translation_midpoint():
    a = DualQuaternion.identity()
    b = DualQuaternion.from_translation([2.0, 0, 0])
    mid = dq_sclerp(a, b, 0.5)
    np.testing.assert_allclose(mid.translation(), [1.0, 0, 0], atol=1e-12)


def test_sclerp_rotation_matches_matrix_slerp():
    # rotZ 0 -> rotZ 90deg at u=0.5 must equal rotZ 45deg (matrix oracle)
    a = DualQuaternion.identity()
    b = dq_from_pose([0, 0, 0], (np.array([0, 0, 1.0]), np.pi / 2))
    mid = dq_to_homogeneous(dq_sclerp(a, b, 0.5))
    np.testing.assert_allclose(mid, homogeneous([0, 0, 1], np.pi / 4, [0, 0, 0]), atol=1e-12)


def test_sclerp_unit_and_monotone_screw_angle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b = random_unit_dq(rng), random_unit_dq(rng)
        angles = []
        for u in np.linspace(0, 1, 9):
            d = dq_sclerp(a, b, u)
            assert d.norm_drift() < 1e-8
            rel = dq_mul(dq_conjugate(a), d)
            w = abs(np.clip(rel.real[0], -1, 1))
            angles.append(2 * np.arccos(w))
        assert all(angles[i] <= angles[i + 1] + 1e-9 for i in range(len(angles) - 1))


def test_sclerp_antipodal_real_parts():
    rng = np.random.default_rng(6)
    a = random_unit_dq(rng)
    b = random_unit_dq(rng)
    b_flipped = -b
    d1 = dq_sclerp(a, b, 0.37)
    d2 = dq_sclerp(a, b_flipped, 0.37)
    np.testing.assert_allclose(dq_to_homogeneous(d1), dq_to_homogeneous(d2), atol=1e-9)


# ------------------------------------------------------------------ #
# Algebra invariants
# ------------------------------------------------------------------ #
def test_associativity_random_triples():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a, b, c = (random_unit_dq(rng) for _ in range(3))
        lhs = dq_mul(dq_mul(a, b), c).as_array()
        rhs = dq_mul(a, dq_mul(b, c)).as_array()
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


def test_unit_condition_preserved_over_1e4_pairs():
    rng = np.random.default_rng(8)
    for _ in range(10_000):
        d = dq_mul(random_unit_dq(rng), random_unit_dq(rng))
        assert d.norm_drift() < 1e-8


def test_double_cover():
    rng = np.random.default_rng(9)
    for _ in range(100):
        d = random_unit_dq(rng)
        np.testing.assert_allclose(dq_to_homogeneous(d), dq_to_homogeneous(-d), atol=1e-12)


def test_delta_invariance_under_common_left_transform():
    # conj(G A) * (G B) == conj(A) * B for any rigid G
    rng = np.random.default_rng(10)
    for _ in range(1000):
        g, a, b = (random_unit_dq(rng) for _ in range(3))
        lhs = dq_mul(dq_conjugate(dq_mul(g, a)), dq_mul(g, b)).as_array()
        rhs = dq_mul(dq_conjugate(a), b).as_array()
        if np.dot(lhs[:4], rhs[:4]) < 0:
            lhs = -lhs
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


# ------------------------------------------------------------------ #
# Euler helpers and the pose text format
# ------------------------------------------------------------------ #
def test_euler_roundtrip():
    rng = np.random.default_rng(11)
    for _ in range(300):
        angles = rng.uniform(-np.pi / 2 + 0.05, np.pi / 2 - 0.05, size=3)
        back = quat_to_euler(quat_from_euler(*angles))
        np.testing.assert_allclose(back, angles, atol=1e-10)


def test_pose_file_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    poses = [random_unit_dq(rng) for _ in range(7)]
    path = tmp_path / "poses.txt"
    save_poses(path, poses)
    loaded = load_poses(path)
    assert len(loaded) == 7
    for p, q in zip(poses, loaded):
        np.testing.assert_allclose(p.as_array(), q.as_array(), atol=0)
