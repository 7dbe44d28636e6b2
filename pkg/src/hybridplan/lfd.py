"""Local motion planning from demonstrations.

A demonstrated skill is a time-ordered pose sequence; its feature sequence
holds, for every pose, the relative transform from that pose to the final
pose.  Features are invariant under a common rigid transform of the whole
demonstration, which is what makes a skill retargetable: the endpoints are
aligned exactly and the residual displacement mismatch is distributed over
the intermediate poses along the screw connecting them.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hybridplan.dualquat import (
    DualQuaternion,
    dq_conjugate,
    dq_mul,
    dq_sclerp,
    load_poses,
)

BETA_RESAMPLE = 32        # fixed resampling length for feature comparison
DELTA_BETA = 0.5          # default per-term feature tolerance, chordal units


def chordal_distance(a: DualQuaternion, b: DualQuaternion) -> float:
    """8-vector distance with sign-aligned real parts (double cover)."""
    va, vb = a.as_array(), b.as_array()
    if np.dot(va[:4], vb[:4]) < 0.0:
        vb = -vb
    return float(np.linalg.norm(va - vb))


def extract_features(poses) -> list:
    """Relative transform of every pose to the final pose.

    Output k-th entry = conj(poses[k]) * poses[-1]; length is len(poses) - 1.
    """
    if len(poses) < 2:
        raise ValueError("need at least 2 poses to extract features")
    last = poses[-1]
    return [dq_mul(dq_conjugate(p), last) for p in poses[:-1]]


# ------------------------------------------------------------------ #
# Sequence resampling over normalized arc length
# ------------------------------------------------------------------ #
def arc_params(poses) -> np.ndarray | None:
    """Normalized cumulative arc length per pose; None when degenerate."""
    gaps = [chordal_distance(poses[i], poses[i + 1]) for i in range(len(poses) - 1)]
    total = float(np.sum(gaps))
    if total < 1e-12:
        return None
    cum = np.concatenate([[0.0], np.cumsum(gaps)]) / total
    cum[-1] = 1.0
    return cum


def sample_sequence(poses, params, u) -> DualQuaternion:
    """Pose at normalized arc parameter u via piecewise screw interpolation."""
    if len(poses) == 1:
        return poses[0]
    u = float(np.clip(u, 0.0, 1.0))
    k = int(np.searchsorted(params, u, side="right") - 1)
    k = min(max(k, 0), len(poses) - 2)
    span = params[k + 1] - params[k]
    if span < 1e-15:
        return poses[k]
    local = (u - params[k]) / span
    if local <= 0.0:
        return poses[k]
    if local >= 1.0:
        return poses[k + 1]
    return dq_sclerp(poses[k], poses[k + 1], local)


def resample(poses, n_out) -> list:
    params = arc_params(poses)
    if params is None:
        return [poses[0]] * n_out
    us = np.linspace(0.0, 1.0, n_out)
    return [sample_sequence(poses, params, u) for u in us]


# ------------------------------------------------------------------ #
# Demonstrations and the skill library
# ------------------------------------------------------------------ #
@dataclass(eq=False)
class Demonstration:
    id: str
    poses: list
    tags: tuple = ()
    _features: list = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError("demonstration needs at least 2 poses")

    @property
    def features(self) -> list:
        if self._features is None:
            self._features = extract_features(self.poses)
        return self._features

    def is_constant(self) -> bool:
        return arc_params(self.poses) is None


@dataclass
class SkillLibrary:
    skills: dict = field(default_factory=dict)

    def add(self, demo: Demonstration) -> None:
        if demo.id in self.skills:
            raise ValueError(f"duplicate skill id '{demo.id}'")
        self.skills[demo.id] = demo

    def __getitem__(self, skill_id: str) -> Demonstration:
        return self.skills[skill_id]

    def __len__(self) -> int:
        return len(self.skills)

    def ids(self) -> list:
        return sorted(self.skills)


def save_demonstration(demo: Demonstration, path) -> None:
    with open(path, "w") as fh:
        head = f"id {demo.id}"
        if demo.tags:
            head += " tags " + ",".join(demo.tags)
        fh.write(head + "\n")
        for p in demo.poses:
            fh.write(" ".join("%.17g" % x for x in p.as_array()) + "\n")


def load_demonstration(path) -> Demonstration:
    with open(path) as fh:
        header = fh.readline().strip()
    m = re.match(r"id\s+(\S+)(?:\s+tags\s+(\S+))?$", header)
    if not m:
        raise ValueError(f"malformed demonstration header: {header!r}")
    demo_id = m.group(1)
    tags = tuple(m.group(2).split(",")) if m.group(2) else ()
    poses = []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = np.array([float(t) for t in line.split()])
            poses.append(DualQuaternion.from_array(vals))
    return Demonstration(demo_id, poses, tags)


def load_library(directory) -> SkillLibrary:
    lib = SkillLibrary()
    for path in sorted(Path(directory).glob("*.demo")):
        lib.add(load_demonstration(path))
    if not lib.skills:
        raise ValueError(f"no .demo files found in {directory}")
    return lib


# ------------------------------------------------------------------ #
# Retargeting
# ------------------------------------------------------------------ #
def retarget(skill: Demonstration, start: DualQuaternion, goal: DualQuaternion,
             n_out: int) -> list:
    """Map a skill onto new start/goal poses.

    The start frames are aligned exactly by a left transform; the residual
    between the mapped final pose and the goal is applied as a right
    correction, ramped along normalized arc length so the endpoints land
    exactly while intermediate poses keep the demonstrated motion profile.
    """
    if n_out < 2:
        raise ValueError("n_out must be at least 2")
    task_displacement = chordal_distance(start, goal)
    if skill.is_constant():
        if task_displacement > 1e-9:
            raise ValueError("skill/task displacement mismatch: constant-pose "
                             "skill cannot span distinct start and goal")
        return [start] * n_out

    params = arc_params(skill.poses)
    if n_out == len(skill.poses):
        us = params            # keep the original sampling; self-retarget is exact
    else:
        us = np.linspace(0.0, 1.0, n_out)
    base = [sample_sequence(skill.poses, params, u) for u in us]

    g = dq_mul(start, dq_conjugate(base[0]))
    aligned = [dq_mul(g, b) for b in base]
    residual = dq_mul(dq_conjugate(aligned[-1]), goal)
    identity = DualQuaternion.identity()
    out = []
    for b, u in zip(aligned, us):
        corr = dq_sclerp(identity, residual, float(u))
        out.append(dq_mul(b, corr))
    return out


# ------------------------------------------------------------------ #
# Feature distance
# ------------------------------------------------------------------ #
def feature_distance_terms(a, b, n_resample=BETA_RESAMPLE) -> np.ndarray:
    """Per-index chordal distances after arc-length resampling to a fixed length."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("feature sequences must be nonempty")
    ra = resample(list(a), n_resample)
    rb = resample(list(b), n_resample)
    return np.array([chordal_distance(x, y) for x, y in zip(ra, rb)])


def feature_distance(a, b, n_resample=BETA_RESAMPLE) -> float:
    """Aggregate feature distance: sum of the per-index terms."""
    return float(np.sum(feature_distance_terms(a, b, n_resample)))
