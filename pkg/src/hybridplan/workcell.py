"""Workcell definition, kinematic trajectory execution, and success scoring.

A trial succeeds when the trajectory attains every critical configuration in
order within the position/orientation tolerances, the interpolation-checked
path is collision-free, and no payload is dropped (a drop is modeled as an
inter-waypoint joint step exceeding the smoothness bound while holding).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hybridplan.dualquat import DualQuaternion, quat_to_euler
from hybridplan.geometry import Box, Sphere, collision_index
from hybridplan.kinematics import RobotModel, ee_state, normalized_manipulability
from hybridplan.task import Task
from hybridplan.trajectory import JointTrajectory

COLLISION_RES_DEG = 2.0     # interpolation resolution for path checking
SMOOTH_BOUND_DEG = 2.0      # max joint step while holding a payload


@dataclass(eq=False)
class Workcell:
    name: str
    box_lo: np.ndarray
    box_hi: np.ndarray
    obstacles: list = field(default_factory=list)
    stations: dict = field(default_factory=dict)

    def __post_init__(self):
        self.box_lo = np.asarray(self.box_lo, dtype=float)
        self.box_hi = np.asarray(self.box_hi, dtype=float)
        if not np.all(self.box_lo < self.box_hi):
            raise ValueError("workspace box needs min < max per axis")
        for pose in self.stations.values():
            p = pose.translation()
            if np.any(p < self.box_lo) or np.any(p > self.box_hi):
                raise ValueError("station outside the workspace box")


@dataclass
class SuccessCriteria:
    pos_tol: float = 0.05                    # meters
    rot_tol: float = np.radians(5.0)         # per Euler angle

    def __post_init__(self):
        if self.pos_tol <= 0 or self.rot_tol <= 0:
            raise ValueError("tolerances must be positive")


def save_workcell(cell: Workcell, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"name {cell.name}\n")
        vals = " ".join("%.17g" % v for v in (*cell.box_lo, *cell.box_hi))
        fh.write(f"workspace {vals}\n")
        for ob in cell.obstacles:
            if isinstance(ob, Box):
                vals = " ".join("%.17g" % v for v in (*ob.lo, *ob.hi))
                fh.write(f"box {ob.id} {vals}\n")
            else:
                vals = " ".join("%.17g" % v for v in (*ob.center, ob.radius))
                fh.write(f"sphere {ob.id} {vals}\n")
        for label in sorted(cell.stations):
            vals = " ".join("%.17g" % v for v in cell.stations[label].as_array())
            fh.write(f"station {label} {vals}\n")


def load_workcell(path) -> Workcell:
    name = "cell"
    box_lo = box_hi = None
    obstacles = []
    stations = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "name":
                name = tok[1]
            elif tok[0] == "workspace":
                vals = [float(v) for v in tok[1:7]]
                box_lo, box_hi = np.array(vals[:3]), np.array(vals[3:])
            elif tok[0] == "box":
                vals = [float(v) for v in tok[2:8]]
                obstacles.append(Box(vals[:3], vals[3:], tok[1]))
            elif tok[0] == "sphere":
                vals = [float(v) for v in tok[2:6]]
                obstacles.append(Sphere(vals[:3], vals[3], tok[1]))
            elif tok[0] == "station":
                vals = np.array([float(v) for v in tok[2:10]])
                stations[tok[1]] = DualQuaternion.from_array(vals)
            else:
                raise ValueError(f"unknown workcell key '{tok[0]}'")
    if box_lo is None:
        raise ValueError("workcell file missing workspace box")
    return Workcell(name, box_lo, box_hi, obstacles, stations)


# ------------------------------------------------------------------ #
# Execution scoring
# ------------------------------------------------------------------ #
def _pose_hit(model, theta, config, criteria) -> bool:
    q, p = ee_state(model, theta)
    if np.linalg.norm(p - config.translation()) > criteria.pos_tol:
        return False
    e_cur = quat_to_euler(q)
    e_cfg = quat_to_euler(config.real)
    diff = np.abs((e_cur - e_cfg + np.pi) % (2 * np.pi) - np.pi)
    return bool(np.all(diff <= criteria.rot_tol))


def count_path_collisions(model, points, obstacles, res_deg=COLLISION_RES_DEG):
    """Collisions over waypoints plus interpolated configs at the declared
    joint-space resolution."""
    res = np.radians(res_deg)
    count = 0
    prev = None
    for theta in points:
        if prev is not None:
            gap = np.max(np.abs(theta - prev))
            for k in range(1, int(np.ceil(gap / res))):
                u = k / np.ceil(gap / res)
                count += collision_index(model, prev + u * (theta - prev), obstacles)
        count += collision_index(model, theta, obstacles)
        prev = theta
    return count


@dataclass
class ExecutionReport:
    success: bool
    config_hits: list                 # waypoint index per config, or None
    collisions: int
    r_s: float
    max_step: float
    dropped: bool
    failed_config: int | None = None


def execute(traj: JointTrajectory, model: RobotModel, cell: Workcell,
            criteria: SuccessCriteria, task: Task) -> ExecutionReport:
    """Score a joint trajectory against a task in a workcell."""
    points = traj.points
    hits = []
    start_at = 0
    failed = None
    for j, config in enumerate(task.configs):
        hit = None
        for idx in range(start_at, len(points)):
            if _pose_hit(model, points[idx], config, criteria):
                hit = idx
                break
        hits.append(hit)
        if hit is None:
            failed = j
            break
        start_at = hit
    while len(hits) < len(task.configs):
        hits.append(None)

    collisions = count_path_collisions(model, points, cell.obstacles)
    man = np.array([normalized_manipulability(model, th) for th in points])
    col = np.array([collision_index(model, th, cell.obstacles) for th in points])
    r_s = float(np.sum(man - col))

    dropped = False
    bound = np.radians(SMOOTH_BOUND_DEG)
    for j in range(len(task.configs) - 1):
        if not task.hold[j] or hits[j] is None or hits[j + 1] is None:
            continue
        seg = points[hits[j]:hits[j + 1] + 1]
        if len(seg) >= 2 and np.max(np.abs(np.diff(seg, axis=0))) > bound + 1e-12:
            dropped = True
    max_step = traj.max_step()
    success = failed is None and collisions == 0 and not dropped
    return ExecutionReport(success, hits, collisions, r_s, max_step, dropped, failed)


# ------------------------------------------------------------------ #
# Benchmarking
# ------------------------------------------------------------------ #
def wilson_interval(successes: int, trials: int, z: float = 1.96):
    """Wilson score 95% interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))


def bench(planner, tasks, trials_per_task, seed, model, cell, criteria,
          variant="variant", rows_out=None):
    """Run a planner callable over tasks x trials and summarize success.

    ``planner(task, trial_seed) -> JointTrajectory``.  Returns a summary dict
    with per-task and aggregate rates plus Wilson 95% intervals; appends raw
    per-trial rows (variant, task, trial, success, collisions, r_s) to
    rows_out when given.
    """
    per_task = {}
    total_succ = 0
    total = 0
    for ti, task in enumerate(tasks):
        succ = 0
        for trial in range(trials_per_task):
            trial_seed = int(np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(ti, trial))).integers(1 << 31))
            traj = planner(task, trial_seed)
            report = execute(traj, model, cell, criteria, task)
            succ += int(report.success)
            if rows_out is not None:
                rows_out.append({
                    "variant": variant, "task": task.id, "trial": trial,
                    "success": int(report.success),
                    "collisions": report.collisions,
                    "r_s": report.r_s,
                })
        per_task[task.id] = {
            "successes": succ,
            "trials": trials_per_task,
            "rate": succ / trials_per_task if trials_per_task else 0.0,
            "wilson": wilson_interval(succ, trials_per_task),
        }
        total_succ += succ
        total += trials_per_task
    return {
        "variant": variant,
        "per_task": per_task,
        "successes": total_succ,
        "trials": total,
        "rate": total_succ / total if total else 0.0,
        "wilson": wilson_interval(total_succ, total),
    }
