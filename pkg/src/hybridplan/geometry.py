"""Analytic collision checking and ray casting against box/sphere obstacles.

Links are capsules (segment + radius) placed between kinematic frame origins.
All checks are discrete per-configuration; trajectory-level safety comes from
checking interpolated waypoints at fine joint-space resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hybridplan.dualquat import quat_to_matrix
from hybridplan.kinematics import RobotModel, ee_state, frame_points

RAY_COUNT = 25


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    id: str = "box"

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if not np.all(self.lo < self.hi):
            raise ValueError("box needs min < max per axis")

    def inflated(self, eps: float) -> "Box":
        return Box(self.lo - eps, self.hi + eps, self.id)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    id: str = "sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def inflated(self, eps: float) -> "Sphere":
        return Sphere(self.center, self.radius + eps, self.id)


# ------------------------------------------------------------------ #
# Distance primitives
# ------------------------------------------------------------------ #
def point_box_distance(p, lo, hi) -> float:
    d = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    return float(np.linalg.norm(d))


def segment_point_distance(p, q, c) -> float:
    v = q - p
    vv = float(v @ v)
    t = 0.0 if vv < 1e-18 else float(np.clip((c - p) @ v / vv, 0.0, 1.0))
    return float(np.linalg.norm(p + t * v - c))


def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between segments [p1,q1] and [p2,q2] (Ericson)."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = float(d1 @ d1), float(d2 @ d2), float(d2 @ r)
    if a < 1e-18 and e < 1e-18:
        return float(np.linalg.norm(r))
    if a < 1e-18:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = float(d1 @ r)
        if e < 1e-18:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(d1 @ d2)
            den = a * e - b * b
            s = np.clip((b * f - c * e) / den, 0.0, 1.0) if den > 1e-18 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p1 + s * d1 - (p2 + t * d2)))


def segment_box_distance(p, q, lo, hi) -> float:
    """Exact segment-to-AABB distance.

    The squared distance along the segment is piecewise quadratic with
    breakpoints where a coordinate crosses a slab bound; each piece is
    minimized in closed form.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(q, dtype=float) - p
    knots = [0.0, 1.0]
    for a in range(3):
        if abs(v[a]) > 1e-15:
            for bound in (lo[a], hi[a]):
                t = (bound - p[a]) / v[a]
                if 0.0 < t < 1.0:
                    knots.append(float(t))
    knots = sorted(set(knots))
    best = np.inf
    for ta, tb in zip(knots[:-1], knots[1:]):
        tm = 0.5 * (ta + tb)
        # active axes are fixed within the piece; build the quadratic
        A = B = C = 0.0
        for a in range(3):
            x = p[a] + tm * v[a]
            if x < lo[a]:
                # term (lo - p - t v)^2
                A += v[a] * v[a]
                B += -2.0 * (lo[a] - p[a]) * v[a]
                C += (lo[a] - p[a]) ** 2
            elif x > hi[a]:
                A += v[a] * v[a]
                B += 2.0 * (p[a] - hi[a]) * v[a]
                C += (p[a] - hi[a]) ** 2
        cands = [ta, tb]
        if A > 1e-18:
            cands.append(float(np.clip(-B / (2.0 * A), ta, tb)))
        for t in cands:
            val = A * t * t + B * t + C
            if val < best:
                best = val
    return float(np.sqrt(max(best, 0.0)))


def capsule_obstacle_distance(p, q, radius, obstacle) -> float:
    """Surface-to-surface distance (negative inside overlap)."""
    if isinstance(obstacle, Box):
        return segment_box_distance(p, q, obstacle.lo, obstacle.hi) - radius
    return segment_point_distance(p, q, obstacle.center) - radius - obstacle.radius


# ------------------------------------------------------------------ #
# Collision index
# ------------------------------------------------------------------ #
def link_capsules(model: RobotModel, theta):
    """World-space capsule endpoints [(p, q, radius, frames), ...]."""
    pts = frame_points(model, theta)
    return [(pts[c.frame_a], pts[c.frame_b], c.radius, (c.frame_a, c.frame_b))
            for c in model.capsules]


def collision_index(model: RobotModel, theta, obstacles) -> int:
    """1 iff any link capsule overlaps an obstacle or a non-adjacent link."""
    caps = link_capsules(model, theta)
    for p, q, r, _ in caps:
        for ob in obstacles:
            if capsule_obstacle_distance(p, q, r, ob) <= 0.0:
                return 1
    for i in range(len(caps)):
        pi, qi, ri, fi = caps[i]
        for j in range(i + 1, len(caps)):
            pj, qj, rj, fj = caps[j]
            if set(fi) & set(fj):
                continue  # adjacent links share a joint and permanently touch
            if segment_segment_distance(pi, qi, pj, qj) <= ri + rj:
                return 1
    return 0


# ------------------------------------------------------------------ #
# Ray casting
# ------------------------------------------------------------------ #
def raycast_many(origin, dirs, obstacles, max_range) -> np.ndarray:
    """First surface crossing along each ray, clamped to max_range.

    dirs has shape (k, 3) with unit rows; returns (k,) distances.
    """
    origin = np.asarray(origin, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    dist = np.full(len(dirs), float(max_range))
    for ob in obstacles:
        if isinstance(ob, Box):
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (ob.lo - origin) / dirs
                t2 = (ob.hi - origin) / dirs
            lohit = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
            hihit = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
            # rays parallel to a slab: inside -> no constraint, outside -> miss
            par = np.abs(dirs) < 1e-15
            inside = (origin >= ob.lo) & (origin <= ob.hi)
            lohit = np.where(par, np.where(inside, -np.inf, np.inf), lohit)
            hihit = np.where(par, np.where(inside, np.inf, -np.inf), hihit)
            tmin = lohit.max(axis=1)
            tmax = hihit.min(axis=1)
            hit = tmax >= np.maximum(tmin, 0.0)
            t = np.where(tmin >= 0.0, tmin, tmax)  # origin inside: exit point
            dist = np.where(hit & (t >= 0.0), np.minimum(dist, t), dist)
        else:
            oc = origin - ob.center
            b = dirs @ oc
            c = float(oc @ oc) - ob.radius ** 2
            disc = b * b - c
            ok = disc >= 0.0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t_near, t_far = -b - sq, -b + sq
            t = np.where(t_near >= 0.0, t_near, t_far)
            dist = np.where(ok & (t >= 0.0), np.minimum(dist, t), dist)
    return np.clip(dist, 0.0, float(max_range))


def raycast(origin, direction, obstacles, max_range) -> float:
    """Distance to the nearest obstacle surface along one ray."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit-norm")
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    return float(raycast_many(origin, direction[None, :], obstacles, max_range)[0])


def _bundle_directions() -> np.ndarray:
    """25 unit directions in the end-effector frame.

    1 ray along the approach axis (+x), 8 on a 30 degree cone, 16 on a
    60 degree cone, evenly spaced in azimuth measured from +y.
    """
    dirs = [np.array([1.0, 0.0, 0.0])]
    for count, half_angle in ((8, np.radians(30.0)), (16, np.radians(60.0))):
        for k in range(count):
            az = 2.0 * np.pi * k / count
            dirs.append(np.array([
                np.cos(half_angle),
                np.sin(half_angle) * np.cos(az),
                np.sin(half_angle) * np.sin(az),
            ]))
    return np.array(dirs)


_BUNDLE = _bundle_directions()


def ray_bundle(model: RobotModel, theta, obstacles, max_range=2.0) -> np.ndarray:
    """25 ray distances from the end effector, pattern rigidly frame-attached."""
    q, p = ee_state(model, theta)
    R = quat_to_matrix(q)
    return raycast_many(p, _BUNDLE @ R.T, obstacles, max_range)
