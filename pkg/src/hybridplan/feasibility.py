"""Workspace feasibility: per-configuration checks, the tessellated map, and
trajectory segment classification.

A configuration is feasible when an inverse-kinematics witness exists within
joint limits that is collision-free and keeps normalized manipulability above
a threshold.  The map discretizes the workspace into position voxels crossed
with orientation cells and stores the verdict, the manipulability value, and
the witness joint vector for every cell.  Cell semantics are existential: the
cell is feasible if any witness lands inside it, so the per-cell IK tolerance
is half the cell extent.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from hybridplan.dualquat import DualQuaternion, quat_from_euler, quat_to_euler
from hybridplan.geometry import Box, Sphere, collision_index
from hybridplan.kinematics import (
    RobotModel,
    fk,
    ik_attempt,
    normalized_manipulability,
    robot_hash,
)

OK, UNREACHABLE, COLLISION, LOW_MANIP = 0, 1, 2, 3
REASON_NAMES = {OK: "OK", UNREACHABLE: "UNREACHABLE", COLLISION: "COLLISION",
                LOW_MANIP: "LOW_MANIP"}

MAN_FIXED_SCALE = 4096.0      # man' stored as 16-bit fixed point
_MAGIC = b"HPFM"
_VERSION = 1


def obstacles_signature(obstacles) -> str:
    """Canonical hash of an obstacle list (order-sensitive)."""
    lines = []
    for ob in obstacles:
        if isinstance(ob, Box):
            vals = " ".join("%.17g" % v for v in (*ob.lo, *ob.hi))
            lines.append(f"box {ob.id} {vals}")
        elif isinstance(ob, Sphere):
            vals = " ".join("%.17g" % v for v in (*ob.center, ob.radius))
            lines.append(f"sphere {ob.id} {vals}")
        else:
            raise TypeError(f"unknown obstacle type {type(ob)!r}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


@dataclass
class FeaResult:
    feasible: bool
    man_prime: float
    reason: int
    witness: np.ndarray | None = None

    @property
    def reason_name(self) -> str:
        return REASON_NAMES[self.reason]


def fea(pose: DualQuaternion, model: RobotModel, obstacles, eps_m=0.1,
        ik_budget=20, rng=None, tol_pos=1e-3, tol_rot=1e-2, max_iters=80,
        extra_seeds=()) -> FeaResult:
    """Feasibility of one end-effector pose.

    Tries up to ``ik_budget`` IK descents (home seed, any caller-provided
    seeds, then random seeds).  Existential over witnesses: the first witness
    that is reachable, collision-free, and above the manipulability threshold
    decides feasibility; otherwise the reason reports the first criterion that
    every witness failed, checked in the order reachability, collision,
    manipulability.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    seeds = [np.asarray(s, dtype=float) for s in extra_seeds]
    seeds.append(model.home)
    lo, hi = model.limits_lo, model.limits_hi
    while len(seeds) < ik_budget:
        seeds.append(rng.uniform(lo, hi))
    reached = False
    best_free = None       # (man', witness) best collision-free witness
    best_any = None        # (man', witness) best witness of any kind
    for seed in seeds[:max(ik_budget, len(seeds))]:
        sol = ik_attempt(model, pose, seed, tol_pos, tol_rot, max_iters)
        if sol is None:
            continue
        reached = True
        mp = normalized_manipulability(model, sol)
        if best_any is None or mp > best_any[0]:
            best_any = (mp, sol)
        if collision_index(model, sol, obstacles) == 0:
            if best_free is None or mp > best_free[0]:
                best_free = (mp, sol)
            if mp >= eps_m:
                return FeaResult(True, mp, OK, sol)
    if not reached:
        return FeaResult(False, 0.0, UNREACHABLE, None)
    if best_free is None:
        return FeaResult(False, best_any[0], COLLISION, best_any[1])
    return FeaResult(False, best_free[0], LOW_MANIP, best_free[1])


# ------------------------------------------------------------------ #
# Tessellated map
# ------------------------------------------------------------------ #
@dataclass(eq=False)
class FeasibilityMap:
    box_lo: np.ndarray
    box_hi: np.ndarray
    voxel_size: float
    voxel_counts: tuple            # (nx, ny, nz)
    theta_max: float               # orientation range [-theta_max, theta_max]
    orient_counts: tuple           # cells per Euler axis (roll, pitch, yaw)
    dof: int
    reasons: np.ndarray            # uint8, flat over all cells
    man: np.ndarray                # float per cell (man', decoded)
    witnesses: np.ndarray          # (cells, dof) float32, NaN where absent
    metadata: dict = field(default_factory=dict)

    # -- indexing ------------------------------------------------------
    @property
    def n_orient(self) -> int:
        cx, cy, cz = self.orient_counts
        return cx * cy * cz

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.voxel_counts
        return nx * ny * nz * self.n_orient

    def cell_index(self, vox, ori) -> int:
        nx, ny, nz = self.voxel_counts
        cx, cy, cz = self.orient_counts
        v = (vox[0] * ny + vox[1]) * nz + vox[2]
        o = (ori[0] * cy + ori[1]) * cz + ori[2]
        return v * self.n_orient + o

    def voxel_center(self, vox) -> np.ndarray:
        return self.box_lo + (np.asarray(vox) + 0.5) * self.voxel_size

    def orient_center(self, ori) -> np.ndarray:
        widths = 2.0 * self.theta_max / np.asarray(self.orient_counts)
        return -self.theta_max + (np.asarray(ori) + 0.5) * widths

    def cell_pose(self, vox, ori) -> DualQuaternion:
        angles = self.orient_center(ori)
        return DualQuaternion.from_pose(self.voxel_center(vox),
                                        quat_from_euler(*angles))

    def locate(self, pose: DualQuaternion):
        """Cell (vox, ori) containing the pose, or None when outside."""
        p = pose.translation()
        rel = (p - self.box_lo) / self.voxel_size
        vox = np.floor(rel).astype(int)
        for a in range(3):
            if vox[a] == self.voxel_counts[a] and abs(rel[a] - vox[a]) < 1e-9:
                vox[a] -= 1  # on the upper face
            if not 0 <= vox[a] < self.voxel_counts[a]:
                return None
        angles = quat_to_euler(pose.real)
        ori = []
        for a in range(3):
            n = self.orient_counts[a]
            ang = angles[a]
            if abs(self.theta_max - np.pi) < 1e-12 and a == 2:
                ang = (ang + np.pi) % (2 * np.pi) - np.pi  # wrap yaw
            if ang < -self.theta_max - 1e-9 or ang > self.theta_max + 1e-9:
                return None
            width = 2.0 * self.theta_max / n
            k = int(np.floor((ang + self.theta_max) / width))
            ori.append(min(max(k, 0), n - 1))
        return tuple(vox), tuple(ori)

    def lookup(self, pose: DualQuaternion) -> FeaResult:
        """Map verdict for the cell containing the pose."""
        cell = self.locate(pose)
        if cell is None:
            return FeaResult(False, 0.0, UNREACHABLE, None)
        idx = self.cell_index(*cell)
        w = self.witnesses[idx]
        witness = None if np.any(np.isnan(w)) else w.astype(float)
        reason = int(self.reasons[idx])
        return FeaResult(reason == OK, float(self.man[idx]), reason, witness)

    def all_cells(self):
        nx, ny, nz = self.voxel_counts
        cx, cy, cz = self.orient_counts
        for ix in range(nx):
            for iy in range(ny):
                for iz in range(nz):
                    for ir in range(cx):
                        for ip in range(cy):
                            for iw in range(cz):
                                yield (ix, iy, iz), (ir, ip, iw)

    def feasible_fraction(self) -> float:
        return float(np.mean(self.reasons == OK))


def _evaluate_cells(args):
    (model, obstacles, map_header, indices, seed, eps_m, ik_budget,
     seeds_by_cell, spawn_salt) = args
    out = []
    half_pos = 0.5 * map_header.voxel_size
    half_rot = float(np.min(map_header.theta_max / np.asarray(map_header.orient_counts)))
    cells = list(map_header.all_cells())
    for i in indices:
        vox, ori = cells[i]
        pose = map_header.cell_pose(vox, ori)
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(i, spawn_salt)))
        extra = () if seeds_by_cell is None else seeds_by_cell.get(i, ())
        res = fea(pose, model, obstacles, eps_m=eps_m, ik_budget=ik_budget,
                  rng=rng, tol_pos=half_pos, tol_rot=half_rot, extra_seeds=extra)
        out.append((i, res.reason, res.man_prime,
                    None if res.witness is None else np.asarray(res.witness)))
    return out


def _neighbor_indices(fmap: FeasibilityMap, vox, ori):
    """Adjacent cells: +-1 per position axis and +-1 yaw bin (wrapping)."""
    out = []
    nx, ny, nz = fmap.voxel_counts
    for a, n in ((0, nx), (1, ny), (2, nz)):
        for d in (-1, 1):
            v = list(vox)
            v[a] += d
            if 0 <= v[a] < n:
                out.append(fmap.cell_index(tuple(v), ori))
    cz = fmap.orient_counts[2]
    if cz > 1:
        for d in (-1, 1):
            o = list(ori)
            o[2] = (o[2] + d) % cz
            out.append(fmap.cell_index(vox, tuple(o)))
    return out


def build_map(model: RobotModel, obstacles, workspace_box, voxel_size,
              orientation_spec=(np.pi, (1, 1, 8)), eps_m=0.1, seed=0,
              ik_budget=12, workers=None) -> FeasibilityMap:
    """Evaluate every (voxel, orientation-cell) with a per-cell RNG stream.

    Two passes: the first evaluates cells independently; the second retries
    infeasible cells seeding IK with the witnesses of adjacent first-pass
    cells (witness transfer), which rescues pockets that pure random restarts
    rarely reach.  Both passes depend only on (seed, cell index) and the
    first-pass output, so the result is identical for any worker count.
    """
    lo = np.asarray(workspace_box[0], dtype=float)
    hi = np.asarray(workspace_box[1], dtype=float)
    if not np.all(hi > lo) or voxel_size <= 0:
        raise ValueError("empty tessellation")
    counts = tuple(max(1, int(np.ceil((hi[a] - lo[a]) / voxel_size - 1e-9)))
                   for a in range(3))
    theta_max, orient_counts = orientation_spec
    orient_counts = tuple(int(c) for c in orient_counts)
    if min(orient_counts) < 1:
        raise ValueError("empty tessellation")
    n_orient = int(np.prod(orient_counts))
    n_cells = int(np.prod(counts)) * n_orient
    if n_cells == 0:
        raise ValueError("empty tessellation")

    fmap = FeasibilityMap(
        box_lo=lo, box_hi=hi, voxel_size=float(voxel_size),
        voxel_counts=counts, theta_max=float(theta_max),
        orient_counts=orient_counts, dof=model.dof,
        reasons=np.full(n_cells, UNREACHABLE, dtype=np.uint8),
        man=np.zeros(n_cells), witnesses=np.full((n_cells, model.dof), np.nan,
                                                 dtype=np.float32),
        metadata={
            "robot_hash": robot_hash(model),
            "obstacle_hash": obstacles_signature(obstacles),
            "ik_budget": int(ik_budget),
            "eps_m": float(eps_m),
            "seed": int(seed),
        },
    )

    if workers is None:
        workers = int(os.environ.get("HYBRIDPLAN_THREADS", "1"))

    def run_pass(indices, seeds_by_cell, spawn_salt):
        if workers > 1 and len(indices) > workers:
            from multiprocessing import Pool
            chunks = [indices[k::workers] for k in range(workers)]
            args = [(model, obstacles, fmap, c, seed, eps_m, ik_budget,
                     seeds_by_cell, spawn_salt) for c in chunks]
            with Pool(workers) as pool:
                results = pool.map(_evaluate_cells, args)
            return [r for chunk in results for r in chunk]
        return _evaluate_cells((model, obstacles, fmap, indices, seed, eps_m,
                                ik_budget, seeds_by_cell, spawn_salt))

    def store(flat):
        for i, reason, man_prime, witness in flat:
            fmap.reasons[i] = reason
            fmap.man[i] = _man_roundtrip(man_prime)
            if witness is not None:
                fmap.witnesses[i] = witness

    store(run_pass(list(range(n_cells)), None, 0))

    # witness transfer: retry infeasible cells seeded from feasible neighbors,
    # repeated so rescued cells propagate into deeper pockets
    cells = list(fmap.all_cells())
    for round_no in range(1, 4):
        retry, seeds_by_cell = [], {}
        for i, (vox, ori) in enumerate(cells):
            if fmap.reasons[i] == OK:
                continue
            neigh = [fmap.witnesses[j].astype(float)
                     for j in _neighbor_indices(fmap, vox, ori)
                     if fmap.reasons[j] == OK and not np.any(np.isnan(fmap.witnesses[j]))]
            if neigh:
                retry.append(i)
                seeds_by_cell[i] = neigh
        if not retry:
            break
        upgraded = 0
        for i, reason, man_prime, witness in run_pass(retry, seeds_by_cell, round_no):
            if reason == OK:
                fmap.reasons[i] = reason
                fmap.man[i] = _man_roundtrip(man_prime)
                fmap.witnesses[i] = witness
                upgraded += 1
        if upgraded == 0:
            break
    return fmap


def _man_roundtrip(v: float) -> float:
    """Quantize man' like the 16-bit file encoding so RAM == disk."""
    fixed = min(max(round(v * MAN_FIXED_SCALE), 0), 65535)
    return fixed / MAN_FIXED_SCALE


# ------------------------------------------------------------------ #
# Binary map format
# ------------------------------------------------------------------ #
def _write_map(fh, fmap: FeasibilityMap) -> None:
    md = fmap.metadata
    header = struct.pack(
        "<4sI6dd3IdI3IIIdQ",
        _MAGIC, _VERSION,
        *fmap.box_lo, *fmap.box_hi,
        fmap.voxel_size, *fmap.voxel_counts,
        fmap.theta_max, 0,
        *fmap.orient_counts,
        fmap.dof, md["ik_budget"], md["eps_m"], md["seed"],
    )
    man_fixed = np.clip(np.round(fmap.man * MAN_FIXED_SCALE), 0, 65535).astype("<u2")
    fh.write(header)
    fh.write(md["robot_hash"].encode())
    fh.write(md["obstacle_hash"].encode())
    fh.write(fmap.reasons.astype(np.uint8).tobytes())
    fh.write(man_fixed.tobytes())
    fh.write(fmap.witnesses.astype("<f4").tobytes())


def save_map(fmap: FeasibilityMap, path) -> None:
    with open(path, "wb") as fh:
        _write_map(fh, fmap)


def load_map(path) -> FeasibilityMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_fmt = "<4sI6dd3IdI3IIIdQ"
    head_size = struct.calcsize(head_fmt)
    vals = struct.unpack(head_fmt, raw[:head_size])
    if vals[0] != _MAGIC or vals[1] != _VERSION:
        raise ValueError("not a feasibility map file")
    box_lo = np.array(vals[2:5])
    box_hi = np.array(vals[5:8])
    voxel_size = vals[8]
    counts = tuple(vals[9:12])
    theta_max = vals[12]
    orient_counts = tuple(vals[14:17])
    dof, ik_budget, eps_m, seed = vals[17], vals[18], vals[19], vals[20]
    off = head_size
    robot_h = raw[off:off + 64].decode(); off += 64
    obst_h = raw[off:off + 64].decode(); off += 64
    n_orient = int(np.prod(orient_counts))
    n_cells = int(np.prod(counts)) * n_orient
    reasons = np.frombuffer(raw, dtype=np.uint8, count=n_cells, offset=off).copy()
    off += n_cells
    man = np.frombuffer(raw, dtype="<u2", count=n_cells, offset=off).astype(float) / MAN_FIXED_SCALE
    off += 2 * n_cells
    wit = np.frombuffer(raw, dtype="<f4", count=n_cells * dof, offset=off).reshape(n_cells, dof).copy()
    return FeasibilityMap(box_lo, box_hi, voxel_size, counts, theta_max,
                          orient_counts, dof, reasons, man, wit,
                          {"robot_hash": robot_h, "obstacle_hash": obst_h,
                           "ik_budget": ik_budget, "eps_m": eps_m, "seed": seed})


def map_bytes(fmap: FeasibilityMap) -> bytes:
    import io
    buf = io.BytesIO()
    _write_map(buf, fmap)
    return buf.getvalue()


# ------------------------------------------------------------------ #
# Trajectory classification
# ------------------------------------------------------------------ #
FJ, NOT_FJ = "FJ", "notFJ"


@dataclass
class Segment:
    start: int          # inclusive pose index
    end: int            # inclusive pose index
    label: str


@dataclass
class SegmentClassification:
    segments: list
    poses: list                       # the classified trajectory
    feasible_mask: np.ndarray

    def infeasible_brackets(self):
        """(segment, start pose or None, goal pose or None) per notFJ segment.

        The brackets are the nearest feasible poses before/after the segment;
        they are the start/goal handed to the joint-space bridge planner.
        """
        out = []
        for seg in self.segments:
            if seg.label != NOT_FJ:
                continue
            before = self.poses[seg.start - 1] if seg.start > 0 else None
            after = self.poses[seg.end + 1] if seg.end + 1 < len(self.poses) else None
            out.append((seg, before, after))
        return out


def classify_trajectory(poses, fmap: FeasibilityMap) -> SegmentClassification:
    """Split a task-space trajectory into maximal FJ / notFJ runs."""
    if len(poses) < 2:
        raise ValueError("trajectory must have at least 2 poses")
    mask = np.array([fmap.lookup(p).feasible for p in poses])
    segments = []
    start = 0
    for i in range(1, len(poses)):
        if mask[i] != mask[start]:
            segments.append(Segment(start, i - 1, FJ if mask[start] else NOT_FJ))
            start = i
    segments.append(Segment(start, len(poses) - 1, FJ if mask[start] else NOT_FJ))
    return SegmentClassification(segments, list(poses), mask)
