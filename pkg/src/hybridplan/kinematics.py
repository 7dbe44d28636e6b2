"""Serial-manipulator model: forward kinematics, Jacobian, manipulability,
and numeric inverse kinematics under joint limits.

Kinematic chain convention: frame 0 is the base; joint i contributes
``offset_i * Rot(axis_i, theta_i)``; frame i is the pose after joint i; an
optional tool transform gives the end-effector frame (index dof + 1).
Joint axes are expressed in the frame reached by ``offset_i``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from hybridplan.dualquat import (
    DualQuaternion,
    dq_mul,
    quat_from_axis_angle,
    quat_to_rotvec,
)

IK_DAMPING = 0.05      # damped least-squares factor
IK_MAX_STEP = 1.0      # cap on a single DLS joint-space step, radians


@dataclass(frozen=True, eq=False)
class Joint:
    axis: np.ndarray                 # unit 3-vector
    offset: DualQuaternion           # fixed transform applied before the joint
    limits: tuple                    # (lo, hi) radians


@dataclass(frozen=True)
class LinkCapsule:
    frame_a: int
    frame_b: int
    radius: float


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    joints: list
    tool: DualQuaternion
    capsules: list
    home: np.ndarray                 # home configuration, radians
    task: str = "spatial"            # "spatial" or "planar"
    _home_man: float = field(default=0.0, compare=False)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def ee_dof(self) -> int:
        """Task-space dimension m: 6 spatial; planar 3 (x, y, yaw) or 2 when dof < 3."""
        if self.task == "spatial":
            return 6
        return min(3, self.dof)

    @property
    def limits_lo(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def limits_hi(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.limits_lo, self.limits_hi)

    def within_limits(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(theta >= self.limits_lo - tol) and np.all(theta <= self.limits_hi + tol))


def make_robot(name, joints, tool=None, capsules=(), home=None, task="spatial") -> RobotModel:
    """Validate and assemble a robot model."""
    jlist = []
    for axis, offset, limits in joints:
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-6:
            if n < 1e-9:
                raise ValueError("joint axis must be nonzero")
            axis = axis / n
        lo, hi = float(limits[0]), float(limits[1])
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got [{lo}, {hi}]")
        jlist.append(Joint(axis, offset, (lo, hi)))
    tool = tool if tool is not None else DualQuaternion.identity()
    home = np.zeros(len(jlist)) if home is None else np.asarray(home, dtype=float)
    if home.shape != (len(jlist),):
        raise ValueError("home configuration dimension mismatch")
    model = RobotModel(name, jlist, tool, list(capsules), home, task)
    object.__setattr__(model, "_chain", _compile_chain(model))
    if not model.within_limits(home):
        raise ValueError("home configuration violates joint limits")
    m0 = manipulability(model, home)
    # models with dof < ee_dof cannot span the task space; man is identically 0
    if m0 <= 0.0 and model.dof >= model.ee_dof:
        raise ValueError("singular home configuration")
    object.__setattr__(model, "_home_man", m0)
    if not np.all(np.isfinite(fk(model, home).as_array())):
        raise ValueError("home configuration gives non-finite pose")
    return model


# ------------------------------------------------------------------ #
# Scalar-math kinematic chain (hot path: IK, map building, rollouts)
# ------------------------------------------------------------------ #
def _compile_chain(model: RobotModel):
    """Per-joint (offset quat, offset translation, axis) as plain float tuples."""
    steps = []
    for j in model.joints:
        oq = tuple(float(v) for v in j.offset.real)
        op = tuple(float(v) for v in j.offset.translation())
        ax = tuple(float(v) for v in j.axis)
        steps.append((oq, op, ax))
    tq = tuple(float(v) for v in model.tool.real)
    tp = tuple(float(v) for v in model.tool.translation())
    return steps, tq, tp


def _qmul(aw, ax, ay, az, bw, bx, by, bz):
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


def _qrot(qw, qx, qy, qz, vx, vy, vz):
    # v' = q v q*; expanded for speed
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    return (vx + qw * tx + qy * tz - qz * ty,
            vy + qw * ty + qz * tx - qx * tz,
            vz + qw * tz + qx * ty - qy * tx)


def _chain_eval(model: RobotModel, theta):
    """World joint axes/origins plus EE (quat, position), all scalar tuples."""
    steps, tq, tp = model._chain
    qw, qx, qy, qz = 1.0, 0.0, 0.0, 0.0
    px, py, pz = 0.0, 0.0, 0.0
    axes, origins = [], []
    for (oq, op, ax), th in zip(steps, theta):
        dx, dy, dz = _qrot(qw, qx, qy, qz, op[0], op[1], op[2])
        px, py, pz = px + dx, py + dy, pz + dz
        qw, qx, qy, qz = _qmul(qw, qx, qy, qz, oq[0], oq[1], oq[2], oq[3])
        axes.append(_qrot(qw, qx, qy, qz, ax[0], ax[1], ax[2]))
        origins.append((px, py, pz))
        half = 0.5 * th
        s, c = np.sin(half), np.cos(half)
        qw, qx, qy, qz = _qmul(qw, qx, qy, qz, c, s * ax[0], s * ax[1], s * ax[2])
    dx, dy, dz = _qrot(qw, qx, qy, qz, tp[0], tp[1], tp[2])
    px, py, pz = px + dx, py + dy, pz + dz
    qw, qx, qy, qz = _qmul(qw, qx, qy, qz, tq[0], tq[1], tq[2], tq[3])
    return axes, origins, (qw, qx, qy, qz), (px, py, pz)


# ------------------------------------------------------------------ #
# Forward kinematics
# ------------------------------------------------------------------ #
def fk(model: RobotModel, theta: np.ndarray) -> DualQuaternion:
    """End-effector pose."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dof,):
        raise ValueError(f"expected {model.dof} joint angles, got {theta.shape}")
    _, _, q, p = _chain_eval(model, theta)
    return DualQuaternion.from_pose(np.array(p), np.array(q))


def fk_frames(model: RobotModel, theta: np.ndarray) -> list:
    """All frames [base, after joint 1..n, tool] as dual quaternions."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dof,):
        raise ValueError(f"expected {model.dof} joint angles, got {theta.shape}")
    frames = [DualQuaternion.identity()]
    cur = frames[0]
    for j, th in zip(model.joints, theta):
        rot = DualQuaternion(quat_from_axis_angle(j.axis, th), np.zeros(4))
        cur = dq_mul(dq_mul(cur, j.offset), rot)
        frames.append(cur)
    frames.append(dq_mul(cur, model.tool))
    return frames


def frame_points(model: RobotModel, theta) -> np.ndarray:
    """Origins of frames [base, joint 1..n, tool], shape (dof + 2, 3)."""
    _, origins, _, p = _chain_eval(model, theta)
    return np.array([(0.0, 0.0, 0.0), *origins, p])


def ee_state(model: RobotModel, theta):
    """(rotation quaternion, position) of the end effector as arrays."""
    _, _, q, p = _chain_eval(model, theta)
    return np.array(q), np.array(p)


def _jacobian_raw(model: RobotModel, axes, origins, p_ee) -> np.ndarray:
    n = model.dof
    px, py, pz = p_ee
    if model.task == "spatial":
        J = np.empty((6, n))
        for i in range(n):
            ax, ay, az = axes[i]
            ox, oy, oz = origins[i]
            rx, ry, rz = px - ox, py - oy, pz - oz
            J[0, i] = ay * rz - az * ry
            J[1, i] = az * rx - ax * rz
            J[2, i] = ax * ry - ay * rx
            J[3, i], J[4, i], J[5, i] = ax, ay, az
        return J
    m = model.ee_dof
    J = np.empty((m, n))
    for i in range(n):
        ax, ay, az = axes[i]
        ox, oy, oz = origins[i]
        rx, ry, rz = px - ox, py - oy, pz - oz
        J[0, i] = ay * rz - az * ry
        J[1, i] = az * rx - ax * rz
        if m == 3:
            J[2, i] = az
    return J


def jacobian(model: RobotModel, theta: np.ndarray) -> np.ndarray:
    """Geometric Jacobian, m x n with m = model.ee_dof.

    Spatial rows: linear velocity (x, y, z) then angular velocity (x, y, z).
    Planar rows: (x, y) and, when m = 3, the yaw rate.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dof,):
        raise ValueError(f"expected {model.dof} joint angles, got {theta.shape}")
    axes, origins, _, p = _chain_eval(model, theta)
    return _jacobian_raw(model, axes, origins, p)


def manipulability(model: RobotModel, theta: np.ndarray) -> float:
    """sqrt(det(J J^T)) = product of the singular values of J.

    Configurations whose smallest singular value falls below a relative rank
    cutoff are reported as exactly 0 (round-off would otherwise return a
    meaningless sqrt of a near-zero or negative determinant).
    """
    J = jacobian(model, theta)
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] <= 0.0 or s[-1] <= 1e-9 * s[0]:
        return 0.0
    return float(np.prod(s))


def normalized_manipulability(model: RobotModel, theta: np.ndarray) -> float:
    """Manipulability relative to the home configuration's."""
    if model._home_man <= 0.0:
        raise ValueError("singular home configuration")
    return manipulability(model, theta) / model._home_man


# ------------------------------------------------------------------ #
# Inverse kinematics: damped least squares with random restarts
# ------------------------------------------------------------------ #
def _pose_error_raw(model, q, p, tq, tp):
    """Error twist from (q, p) to target (tq, tp) plus (pos, rot) magnitudes."""
    dp = np.asarray(tp) - np.asarray(p)
    qe = _qmul(tq[0], tq[1], tq[2], tq[3], q[0], -q[1], -q[2], -q[3])
    rv = quat_to_rotvec(np.array(qe))
    if model.task == "spatial":
        e = np.concatenate([dp, rv])
        return e, float(np.linalg.norm(dp)), float(np.linalg.norm(rv))
    if model.ee_dof == 3:
        e = np.array([dp[0], dp[1], rv[2]])
        return e, float(np.hypot(dp[0], dp[1])), abs(float(rv[2]))
    return dp[:2], float(np.hypot(dp[0], dp[1])), 0.0


def pose_error(model: RobotModel, current: DualQuaternion, target: DualQuaternion):
    """Error twist from current to target plus (pos, rot) error magnitudes."""
    return _pose_error_raw(model, current.real, current.translation(),
                           target.real, target.translation())


def ik_attempt(model, target, seed, tol_pos, tol_rot, max_iters, damping=IK_DAMPING):
    """Single damped-least-squares descent from one seed. Returns theta or None."""
    theta = model.clamp(np.asarray(seed, dtype=float).copy())
    m = model.ee_dof
    lam2 = damping * damping * np.eye(m)
    tq, tp = target.real, target.translation()
    best_err = np.inf
    stall = 0
    for _ in range(max_iters):
        axes, origins, q, p = _chain_eval(model, theta)
        e, perr, rerr = _pose_error_raw(model, q, p, tq, tp)
        if perr < tol_pos and rerr < tol_rot:
            return theta
        err = perr + rerr
        if err < best_err - 1e-12:
            best_err = err
            stall = 0
        else:
            stall += 1
            if stall >= 15:
                return None  # stagnated away from the target
        J = _jacobian_raw(model, axes, origins, p)
        step = J.T @ np.linalg.solve(J @ J.T + lam2, e)
        if not np.all(np.isfinite(step)):
            return None
        norm = np.linalg.norm(step)
        if norm > IK_MAX_STEP:
            step *= IK_MAX_STEP / norm
        theta = model.clamp(theta + step)
    _, _, q, p = _chain_eval(model, theta)
    _, perr, rerr = _pose_error_raw(model, q, p, tq, tp)
    if perr < tol_pos and rerr < tol_rot:
        return theta
    return None


def ik(model, target, seed=None, tol_pos=1e-4, tol_rot=1e-4, max_iters=200,
       restarts=20, rng=None, damping=IK_DAMPING):
    """Numeric IK under joint limits.

    Tries the given seed (home configuration when None), then up to
    ``restarts`` random seeds drawn uniformly within the limits from ``rng``.
    Returns the joint vector on success, None when the budget is exhausted --
    the None IS the unreachability signal.
    """
    if tol_pos <= 0 or tol_rot <= 0:
        raise ValueError("tolerances must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    seeds = [model.home if seed is None else np.asarray(seed, dtype=float)]
    lo, hi = model.limits_lo, model.limits_hi
    for _ in range(restarts):
        seeds.append(rng.uniform(lo, hi))
    for s in seeds:
        sol = ik_attempt(model, target, s, tol_pos, tol_rot, max_iters, damping)
        if sol is not None:
            return sol
    return None


# ------------------------------------------------------------------ #
# Robot model file: structured text
# ------------------------------------------------------------------ #
def serialize_robot(model: RobotModel) -> str:
    lines = [f"name {model.name}", f"dof {model.dof}", f"task {model.task}"]
    for j in model.joints:
        axis = " ".join("%.17g" % a for a in j.axis)
        off = " ".join("%.17g" % x for x in j.offset.as_array())
        lines.append(
            f"joint axis {axis} offset {off} limits_deg "
            f"{np.degrees(j.limits[0]):.10g} {np.degrees(j.limits[1]):.10g}")
    lines.append("tool " + " ".join("%.17g" % x for x in model.tool.as_array()))
    for c in model.capsules:
        lines.append(f"capsule {c.frame_a} {c.frame_b} {c.radius:.17g}")
    lines.append("home_deg " + " ".join("%.10g" % np.degrees(h) for h in model.home))
    return "\n".join(lines) + "\n"


def save_robot(model: RobotModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_robot(model))


def parse_robot(text: str) -> RobotModel:
    name, task, tool, home = "robot", "spatial", None, None
    joints, capsules = [], []
    dof_declared = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if key == "name":
            name = tok[1]
        elif key == "dof":
            dof_declared = int(tok[1])
        elif key == "task":
            if tok[1] not in ("spatial", "planar"):
                raise ValueError(f"unknown task space '{tok[1]}'")
            task = tok[1]
        elif key == "joint":
            if tok[1] != "axis" or tok[5] != "offset" or tok[14] != "limits_deg":
                raise ValueError(f"malformed joint line: {raw!r}")
            axis = np.array([float(v) for v in tok[2:5]])
            offset = DualQuaternion.from_array(np.array([float(v) for v in tok[6:14]]))
            lims = (np.radians(float(tok[15])), np.radians(float(tok[16])))
            joints.append((axis, offset, lims))
        elif key == "tool":
            tool = DualQuaternion.from_array(np.array([float(v) for v in tok[1:9]]))
        elif key == "capsule":
            capsules.append(LinkCapsule(int(tok[1]), int(tok[2]), float(tok[3])))
        elif key == "home_deg":
            home = np.radians(np.array([float(v) for v in tok[1:]]))
        else:
            raise ValueError(f"unknown robot-file key '{key}'")
    if dof_declared is not None and dof_declared != len(joints):
        raise ValueError(f"declared dof {dof_declared} != {len(joints)} joint lines")
    for c in capsules:
        if not (0 <= c.frame_a <= len(joints) + 1 and 0 <= c.frame_b <= len(joints) + 1):
            raise ValueError("capsule frame index out of range")
        if c.radius <= 0:
            raise ValueError("capsule radius must be positive")
    return make_robot(name, joints, tool, capsules, home, task)


def load_robot(path) -> RobotModel:
    with open(path) as fh:
        return parse_robot(fh.read())


def robot_hash(model: RobotModel) -> str:
    return hashlib.sha256(serialize_robot(model).encode()).hexdigest()


# ------------------------------------------------------------------ #
# Stock test models
# ------------------------------------------------------------------ #
def planar_rr(l1=1.0, l2=1.0, radius=0.05, limits_deg=(-175.0, 175.0)) -> RobotModel:
    """Planar 2R arm in the z = 0 plane; task space (x, y)."""
    z = np.array([0.0, 0.0, 1.0])
    lim = (np.radians(limits_deg[0]), np.radians(limits_deg[1]))
    joints = [
        (z, DualQuaternion.identity(), lim),
        (z, DualQuaternion.from_translation([l1, 0, 0]), lim),
    ]
    tool = DualQuaternion.from_translation([l2, 0, 0])
    caps = [LinkCapsule(1, 2, radius), LinkCapsule(2, 3, radius)]
    return make_robot("planar_rr", joints, tool, caps, home=[0.0, np.pi / 2], task="planar")


def planar_3r(l=(0.5, 0.4, 0.3), radius=0.04, limits_deg=(-175.0, 175.0)) -> RobotModel:
    """Planar 3R arm; task space (x, y, yaw)."""
    z = np.array([0.0, 0.0, 1.0])
    lim = (np.radians(limits_deg[0]), np.radians(limits_deg[1]))
    joints = [
        (z, DualQuaternion.identity(), lim),
        (z, DualQuaternion.from_translation([l[0], 0, 0]), lim),
        (z, DualQuaternion.from_translation([l[1], 0, 0]), lim),
    ]
    tool = DualQuaternion.from_translation([l[2], 0, 0])
    caps = [LinkCapsule(1, 2, radius), LinkCapsule(2, 3, radius), LinkCapsule(3, 4, radius)]
    return make_robot("planar_3r", joints, tool, caps,
                      home=[0.0, np.pi / 3, -np.pi / 4], task="planar")
