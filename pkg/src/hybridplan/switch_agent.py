"""Learned switching between the demonstration-derived joint trajectory and
the joint-space bridge trajectories.

Around every feasible/infeasible boundary the agent walks the decision
window and chooses, waypoint by waypoint, whether to keep executing the
current source or hand over; the first flip fixes the handover index.
Handover inserts a capped joint-space blend.  The training reward is the
per-point feasibility sum (normalized manipulability minus collision) of the
executed window, which is exactly the trajectory-level reward restricted to
the points the decision can influence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hybridplan.feasibility import NOT_FJ, classify_trajectory
from hybridplan.geometry import collision_index
from hybridplan.kinematics import (
    RobotModel,
    ik_attempt,
    normalized_manipulability,
)
from hybridplan.rl_core import (
    CategoricalPolicy,
    PpoConfig,
    RolloutBatch,
    ValueNet,
    ppo_update,
)
from hybridplan.trajectory import SOURCE_DRL, SOURCE_LFD, JointTrajectory

ACT_KEEP, ACT_SWITCH = 0, 1


@dataclass
class SwitchConfig:
    window: int = 5                  # K: decision points within +-K of a boundary
    blend_points: int = 10           # max inserted handover points
    blend_step_deg: float = 2.0      # per-step cap inside a blend
    smooth_bound_deg: float = 2.0    # global smoothness bound for traj_final
    hidden: tuple = (64, 64)

    def obs_dim(self, dof: int) -> int:
        span = 2 * self.window + 1
        return 2 * span * (dof + 2) + 2


def switch_ppo_config() -> PpoConfig:
    """Discrete-PPO training defaults for the switching agent."""
    return PpoConfig(learning_rate=1e-3, discount=0.96, minibatch_size=32,
                     num_steps=200, entropy_coef=0.0, vf_coef=0.5,
                     max_grad_norm=0.5)


def switch_reward(traj: JointTrajectory) -> float:
    """Sum over trajectory points of man' - COL."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return float(np.sum(traj.man - traj.col.astype(float)))


# ------------------------------------------------------------------ #
# Candidate construction
# ------------------------------------------------------------------ #
def lfd_joint_candidates(poses, model: RobotModel, obstacles, seed=0):
    """Chained IK of the task-space plan; unreachable poses hold the previous
    joints (annotated by their own collision/manipulability).

    The previous waypoint seeds the first attempt (continuity); a colliding
    witness triggers a few restarts looking for a collision-free one.
    """
    rng = np.random.default_rng(seed)
    thetas = np.zeros((len(poses), model.dof))
    man = np.zeros(len(poses))
    col = np.zeros(len(poses), dtype=np.uint8)
    prev = model.home
    lo, hi = model.limits_lo, model.limits_hi
    for i, pose in enumerate(poses):
        theta = None
        fallback = None
        seed_theta = prev
        for k in range(6):
            sol = ik_attempt(model, pose, seed_theta, 1e-3, 1e-2, 150)
            if sol is not None:
                if collision_index(model, sol, obstacles) == 0:
                    theta = sol
                    break
                if fallback is None:
                    fallback = sol
            seed_theta = rng.uniform(lo, hi)
        if theta is None:
            theta = fallback if fallback is not None else prev
        thetas[i] = theta
        man[i] = normalized_manipulability(model, theta)
        col[i] = collision_index(model, theta, obstacles)
        prev = theta
    return JointTrajectory(thetas, np.full(len(poses), SOURCE_LFD, np.uint8),
                           man, col)


def blend(theta_a, theta_b, model, obstacles, cfg: SwitchConfig) -> JointTrajectory:
    """Joint-space handover ramp between two waypoints (exclusive endpoints)."""
    gap = float(np.max(np.abs(theta_b - theta_a)))
    steps = int(np.ceil(gap / np.radians(cfg.blend_step_deg)))
    steps = min(max(steps - 1, 0), cfg.blend_points)
    if steps == 0:
        return JointTrajectory(np.zeros((0, len(theta_a))),
                               np.zeros(0, np.uint8), np.zeros(0), np.zeros(0, np.uint8))
    pts = np.array([theta_a + (k / (steps + 1)) * (theta_b - theta_a)
                    for k in range(1, steps + 1)])
    man = np.array([normalized_manipulability(model, th) for th in pts])
    col = np.array([collision_index(model, th, obstacles) for th in pts], np.uint8)
    return JointTrajectory(pts, np.full(steps, SOURCE_DRL, np.uint8), man, col)


def _resample_rows(arr: np.ndarray, k: int) -> np.ndarray:
    if len(arr) == 1:
        return np.repeat(arr, k, axis=0)
    pos = np.linspace(0, len(arr) - 1, k)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(arr) - 1)
    u = (pos - lo)[:, None] if arr.ndim == 2 else (pos - lo)
    return arr[lo] * (1 - u) + arr[hi] * u


@dataclass
class Boundary:
    kind: str                 # "entry" (LFD -> DRL) or "exit" (DRL -> LFD)
    index: int                # boundary waypoint index in the task-space plan
    lo: int                   # decision window, inclusive
    hi: int


@dataclass
class BandPlan:
    """One infeasible band: its bridge and the two decision windows."""
    seg_start: int
    seg_end: int
    bridge: JointTrajectory
    entry: Boundary
    exit: Boundary


def find_bands(classification, lfd_cands: JointTrajectory, cfg: SwitchConfig,
               bridge_fn) -> list:
    """Build a BandPlan per interior infeasible segment.

    ``bridge_fn(start_pose, goal_pose, start_theta) -> JointTrajectory``.
    Head/tail infeasible segments have no bracket on one side and stay on the
    demonstration-derived candidates.
    """
    bands = []
    n = len(classification.poses)
    for seg, before, after in classification.infeasible_brackets():
        if before is None or after is None:
            continue
        i, j = seg.start, seg.end
        bridge = bridge_fn(before, after, lfd_cands.points[i - 1])
        entry = Boundary("entry", i - 1,
                         max(0, i - 1 - cfg.window), min(i - 1 + cfg.window, j))
        exit_ = Boundary("exit", j + 1,
                         max(i, j + 1 - cfg.window), min(j + 1 + cfg.window, n - 1))
        bands.append(BandPlan(i, j, bridge, entry, exit_))
    return bands


def boundary_observation(band: BandPlan, boundary: Boundary, j: int,
                         lfd_cands: JointTrajectory, cfg: SwitchConfig) -> np.ndarray:
    """Flattened window of both sources' joints plus annotations plus the
    normalized boundary distance and kind flag."""
    span = 2 * cfg.window + 1
    n = len(lfd_cands)
    idx = np.clip(np.arange(j - cfg.window, j + cfg.window + 1), 0, n - 1)
    lfd_block = np.concatenate([
        lfd_cands.points[idx].ravel(),
        lfd_cands.man[idx],
        lfd_cands.col[idx].astype(float),
    ])
    bridge = band.bridge
    pts = _resample_rows(bridge.points, span)
    man = _resample_rows(bridge.man, span)
    col = _resample_rows(bridge.col.astype(float), span)
    drl_block = np.concatenate([pts.ravel(), man, col])
    extra = np.array([(j - boundary.index) / max(cfg.window, 1),
                      1.0 if boundary.kind == "entry" else -1.0])
    return np.concatenate([lfd_block, drl_block, extra])


# ------------------------------------------------------------------ #
# Assembly
# ------------------------------------------------------------------ #
def assemble(lfd_cands: JointTrajectory, bands: list, switches: list,
             model, obstacles, cfg: SwitchConfig) -> JointTrajectory:
    """Build the executed combined trajectory for given per-band handover
    indices [(switch_in, switch_out), ...]."""
    parts = []
    cursor = 0

    def lfd_slice(a, b):
        return JointTrajectory(lfd_cands.points[a:b], lfd_cands.source[a:b],
                               lfd_cands.man[a:b], lfd_cands.col[a:b])

    for band, (s_in, s_out) in zip(bands, switches):
        parts.append(lfd_slice(cursor, s_in + 1))
        last = lfd_cands.points[s_in]
        parts.append(blend(last, band.bridge.points[0], model, obstacles, cfg))
        parts.append(band.bridge)
        parts.append(blend(band.bridge.points[-1], lfd_cands.points[s_out],
                           model, obstacles, cfg))
        cursor = s_out
    parts.append(lfd_slice(cursor, len(lfd_cands)))
    out = parts[0]
    for p in parts[1:]:
        if len(p):
            out = out.concat(p)
    out.success = all(b.bridge.success for b in bands)
    return out


def densify(traj: JointTrajectory, model, obstacles, bound_deg) -> JointTrajectory:
    """Insert linear joint interpolation so no step exceeds the bound."""
    bound = np.radians(bound_deg)
    pts, src, man, col = [], [], [], []
    for k, theta in enumerate(traj.points):
        if k > 0:
            prev = traj.points[k - 1]
            gap = float(np.max(np.abs(theta - prev)))
            extra = int(np.ceil(gap / bound)) - 1
            for e in range(1, extra + 1):
                mid = prev + (e / (extra + 1)) * (theta - prev)
                pts.append(mid)
                src.append(traj.source[k])
                man.append(normalized_manipulability(model, mid))
                col.append(collision_index(model, mid, obstacles))
        pts.append(theta)
        src.append(traj.source[k])
        man.append(traj.man[k])
        col.append(traj.col[k])
    return JointTrajectory(np.array(pts), np.array(src, np.uint8),
                           np.array(man), np.array(col, np.uint8),
                           traj.success, dict(traj.meta))


def window_reward(traj_slice: JointTrajectory) -> float:
    return switch_reward(traj_slice)


def _walk_band(band, lfd_cands, cfg, choose):
    """Run the sequential first-flip decisions for one band.

    ``choose(obs, boundary, j) -> action``; returns (switch_in, switch_out,
    decision list [(obs, action)])."""
    decisions = []
    s_in = band.entry.hi
    for j in range(band.entry.lo, band.entry.hi + 1):
        obs = None if choose is None else boundary_observation(
            band, band.entry, j, lfd_cands, cfg)
        act = ACT_SWITCH if choose is None else choose(obs, band.entry, j)
        if choose is not None:
            decisions.append((obs, act))
        if act == ACT_SWITCH:
            s_in = j
            break
    s_out = band.exit.hi
    for j in range(band.exit.lo, band.exit.hi + 1):
        obs = None if choose is None else boundary_observation(
            band, band.exit, j, lfd_cands, cfg)
        act = ACT_SWITCH if choose is None else choose(obs, band.exit, j)
        if choose is not None:
            decisions.append((obs, act))
        if act == ACT_SWITCH:
            s_out = j
            break
    return s_in, s_out, decisions


def heuristic_switches(bands) -> list:
    """Switch exactly at the classified boundaries."""
    return [(b.entry.index, b.exit.index) for b in bands]


def policy_switches(policy, bands, lfd_cands, cfg, rng=None) -> list:
    """Greedy (or sampled, when rng given) handover indices from the policy."""
    out = []
    for band in bands:
        def choose(obs, boundary, j):
            if rng is None:
                return policy.mean_action(obs)
            return policy.act(obs, rng)[0]
        s_in, s_out, _ = _walk_band(band, lfd_cands, cfg, choose)
        out.append((s_in, s_out))
    return out


def executed_window_reward(lfd_cands, band, s_in, s_out, model, obstacles,
                           cfg) -> float:
    """Eq.-9 style reward restricted to the points the decisions control."""
    w_lo, w_hi = band.entry.lo, band.exit.hi
    prefix = JointTrajectory(lfd_cands.points[w_lo:s_in + 1],
                             man=lfd_cands.man[w_lo:s_in + 1],
                             col=lfd_cands.col[w_lo:s_in + 1])
    b_in = blend(lfd_cands.points[s_in], band.bridge.points[0], model, obstacles, cfg)
    b_out = blend(band.bridge.points[-1], lfd_cands.points[s_out], model, obstacles, cfg)
    suffix = JointTrajectory(lfd_cands.points[s_out:w_hi + 1],
                             man=lfd_cands.man[s_out:w_hi + 1],
                             col=lfd_cands.col[s_out:w_hi + 1])
    total = switch_reward(prefix) + switch_reward(suffix)
    for b in (b_in, b_out):
        if len(b):
            total += switch_reward(b)
    return total


# ------------------------------------------------------------------ #
# Training
# ------------------------------------------------------------------ #
def brute_force_switches(band, lfd_cands, model, obstacles, cfg) -> tuple:
    """Exhaustive best (switch_in, switch_out) for one band."""
    best = None
    for s_in in range(band.entry.lo, band.entry.hi + 1):
        for s_out in range(band.exit.lo, band.exit.hi + 1):
            r = executed_window_reward(lfd_cands, band, s_in, s_out,
                                       model, obstacles, cfg)
            if best is None or r > best[0]:
                best = (r, s_in, s_out)
    return best[1], best[2]


def train_switch(scenarios, model, obstacles, cfg=None, ppo_cfg=None, seed=0,
                 batches=30, progress=None):
    """Train the discrete switching policy.

    ``scenarios`` is a list of (lfd_cands, bands) pairs prepared from
    training tasks (both upstream planners already trained).  Returns
    (policy, value_net, curve).
    """
    if not scenarios:
        raise ValueError("no switching scenarios: train the upstream planners first")
    cfg = cfg or SwitchConfig()
    ppo_cfg = ppo_cfg or switch_ppo_config()
    rng = np.random.default_rng(seed)
    dof = scenarios[0][0].points.shape[1]
    policy = CategoricalPolicy(cfg.obs_dim(dof), 2, cfg.hidden, rng)
    value_net = ValueNet(cfg.obs_dim(dof), cfg.hidden, rng)
    span = 2 * cfg.window + 1
    curve = []
    for b in range(batches):
        T = ppo_cfg.num_steps
        obs_buf = np.zeros((T, cfg.obs_dim(dof)))
        act_buf = np.zeros(T)
        logp_buf = np.zeros(T)
        rew_buf = np.zeros(T)
        done_buf = np.zeros(T)
        t = 0
        while t < T:
            lfd_cands, bands = scenarios[int(rng.integers(len(scenarios)))]
            if not bands:
                continue
            band = bands[int(rng.integers(len(bands)))]
            decisions = []

            def choose(obs, boundary, j):
                a, logp = policy.act(obs, rng)
                decisions.append((obs, a, logp))
                return a

            s_in, s_out, _ = _walk_band(band, lfd_cands, cfg, choose)
            r = executed_window_reward(lfd_cands, band, s_in, s_out,
                                       model, obstacles, cfg) / span
            for k, (obs, a, logp) in enumerate(decisions):
                if t >= T:
                    break
                obs_buf[t] = obs
                act_buf[t] = a
                logp_buf[t] = logp
                rew_buf[t] = r if k == len(decisions) - 1 else 0.0
                done_buf[t] = 1.0 if k == len(decisions) - 1 else 0.0
                t += 1
        batch = RolloutBatch(obs_buf, act_buf, logp_buf, rew_buf, done_buf,
                             obs_buf[-1])
        stats = ppo_update(policy, value_net, batch, ppo_cfg, rng)
        stats["epoch"] = b
        curve.append(stats)
        if progress:
            progress(stats)
    return policy, value_net, curve
