"""Global task planner: two-level reinforcement learning over task segments
and library skills.

The task controller values contiguous segments of the remaining critical
configurations; the motion controller values which demonstrated skill realizes
the chosen segment.  The motion controller's reward compares the skill's
feature sequence with the segment's; any per-term distance beyond the
tolerance yields a sentinel treated as minus infinity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hybridplan.dualquat import (
    DualQuaternion,
    quat_from_axis_angle,
    quat_mul,
)
from hybridplan.lfd import (
    DELTA_BETA,
    Demonstration,
    SkillLibrary,
    arc_params,
    extract_features,
    feature_distance_terms,
    retarget,
    sample_sequence,
)
from hybridplan.task import Task

SENTINEL = -1e9          # stored stand-in for the minus-infinity reward
CURVE_FLOOR = -100.0     # training-curve display clamp for sentinel episodes


# ------------------------------------------------------------------ #
# Rewards
# ------------------------------------------------------------------ #
def intrinsic_reward(skill: Demonstration, segment_poses, delta_beta=DELTA_BETA) -> float:
    """Negated feature-distance sum, or the sentinel when any term exceeds
    the tolerance."""
    if len(segment_poses) < 2:
        raise ValueError("segment needs at least 2 poses")
    terms = feature_distance_terms(skill.features, extract_features(segment_poses))
    if np.any(terms > delta_beta):
        return SENTINEL
    return float(-np.sum(terms))


def extrinsic_reward(history) -> float:
    """Running sum of intrinsic rewards; any sentinel absorbs the total."""
    total = 0.0
    for r in history:
        if r <= SENTINEL:
            return SENTINEL
        total += r
    return total


# ------------------------------------------------------------------ #
# Q tables
# ------------------------------------------------------------------ #
@dataclass
class QTables:
    task_q: dict = field(default_factory=dict)    # (state, seg) -> value
    motion_q: dict = field(default_factory=dict)  # (state, seg, skill) -> value
    training_curve: list = field(default_factory=list, repr=False)

    def best_segment(self, state, candidates):
        vals = [self.task_q.get((state, seg), 0.0) for seg in candidates]
        return candidates[int(np.argmax(vals))]

    def best_skill(self, state, seg, skill_ids):
        vals = [self.motion_q.get((state, seg, sk), 0.0) for sk in skill_ids]
        best = int(np.argmax(vals))
        if vals[best] <= SENTINEL:
            raise ValueError(f"no admissible skill for segment {seg}")
        return skill_ids[best]


def serialize_tables(tables: QTables) -> str:
    lines = []
    for (state, seg), v in sorted(tables.task_q.items()):
        lines.append(f"Q {state[0]} {state[1]} {seg[0]} {seg[1]} {v:.17g}")
    for (state, seg, skill), v in sorted(tables.motion_q.items()):
        lines.append(f"q {state[0]} {state[1]} {seg[0]} {seg[1]} {skill} {v:.17g}")
    return "\n".join(lines) + "\n"


def save_tables(tables: QTables, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_tables(tables))


def load_tables(path) -> QTables:
    tables = QTables()
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "Q":
                state = (int(tok[1]), int(tok[2]))
                tables.task_q[(state, (int(tok[3]), int(tok[4])))] = float(tok[5])
            elif tok[0] == "q":
                state = (int(tok[1]), int(tok[2]))
                key = (state, (int(tok[3]), int(tok[4])), tok[5])
                tables.motion_q[key] = float(tok[6])
    return tables


# ------------------------------------------------------------------ #
# Training
# ------------------------------------------------------------------ #
@dataclass
class HrlConfig:
    episodes: int = 400
    alpha: float = 0.2               # tabular learning rate
    gamma: float = 1.0               # tabular mode: undiscounted segment sum
    eps_start: float = 0.95
    eps_end: float = 0.05
    eps_decay: float = 2000.0
    delta_beta: float = DELTA_BETA
    jitter_pos: tuple = (0.02, 0.02, 0.0)   # per-axis task jitter, meters
    jitter_rot: float = np.radians(5.0)     # yaw jitter, radians
    mode: str = "tabular"            # "tabular" or "mlp"
    # value-approximation (DQN) mode settings
    dqn_batch: int = 256
    dqn_gamma: float = 0.92
    dqn_tau: float = 0.005
    dqn_lr: float = 1e-4
    dqn_hidden: tuple = (64, 64)

    def epsilon(self, episode: int) -> float:
        return self.eps_end + (self.eps_start - self.eps_end) * np.exp(-episode / self.eps_decay)


def _jitter_pose(pose: DualQuaternion, cfg: HrlConfig, rng) -> DualQuaternion:
    amp = np.asarray(cfg.jitter_pos)
    dp = rng.uniform(-amp, amp)
    ang = rng.uniform(-cfg.jitter_rot, cfg.jitter_rot)
    spin = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), ang)
    pos, rot = pose.to_pose()
    return DualQuaternion.from_pose(pos + dp, quat_mul(spin, rot))


def _state_key(tk_index: int, pose: DualQuaternion, fmap) -> tuple:
    if fmap is None:
        return (tk_index, -1)
    cell = fmap.locate(pose)
    if cell is None:
        return (tk_index, -2)
    return (tk_index, fmap.cell_index(*cell))


def candidate_segments(tk_index: int, n_configs: int) -> list:
    return [(tk_index, k) for k in range(tk_index + 1, n_configs)]


def train_hrl(tasks, library: SkillLibrary, episodes=None, config=None,
              seed=0, fmap=None):
    """Epsilon-greedy two-level Q-learning over a task set.

    The task controller values segment choices with a bootstrapped update on
    the intrinsic reward; the motion controller is a per-segment bandit over
    skills.  Deterministic for a given seed.  ``config.mode`` selects tabular
    learning (exact at desk scale) or the small-MLP value-approximation mode
    behind the same greedy interface.
    """
    if not tasks:
        raise ValueError("empty task set")
    if len(library) == 0:
        raise ValueError("empty skill library")
    cfg = config or HrlConfig()
    if episodes is not None:
        cfg.episodes = episodes
    if cfg.episodes < 1:
        raise ValueError("episodes must be >= 1")
    if cfg.mode == "mlp":
        return _train_hrl_mlp(tasks, library, cfg, seed, fmap)
    rng = np.random.default_rng(seed)
    tables = QTables()
    skill_ids = library.ids()

    for ep in range(cfg.episodes):
        task = tasks[int(rng.integers(len(tasks)))]
        configs = [_jitter_pose(p, cfg, rng) for p in task.configs]
        eps = cfg.epsilon(ep)
        idx = 0
        history = []
        while idx < len(configs) - 1:
            state = _state_key(idx, task.configs[idx], fmap)
            cands = candidate_segments(idx, len(configs))
            if rng.random() < eps:
                seg = cands[int(rng.integers(len(cands)))]
            else:
                seg = tables.best_segment(state, cands)
            if rng.random() < eps:
                skill_id = skill_ids[int(rng.integers(len(skill_ids)))]
            else:
                vals = [tables.motion_q.get((state, seg, sk), 0.0) for sk in skill_ids]
                skill_id = skill_ids[int(np.argmax(vals))]

            segment_poses = configs[seg[0]:seg[1] + 1]
            r = intrinsic_reward(library[skill_id], segment_poses, cfg.delta_beta)
            history.append(r)

            mk = (state, seg, skill_id)
            q_old = tables.motion_q.get(mk, 0.0)
            tables.motion_q[mk] = q_old + cfg.alpha * (r - q_old)

            next_idx = seg[1]
            if next_idx < len(configs) - 1:
                next_state = _state_key(next_idx, task.configs[next_idx], fmap)
                next_cands = candidate_segments(next_idx, len(configs))
                bootstrap = max(tables.task_q.get((next_state, s), 0.0)
                                for s in next_cands)
            else:
                bootstrap = 0.0
            # the task controller values the segment by the best skill the
            # motion controller knows, not by the sampled (possibly
            # exploratory) skill -- a single sentinel draw must not poison it
            r_best = max(tables.motion_q.get((state, seg, sk), 0.0)
                         for sk in skill_ids)
            tk = (state, seg)
            q_old = tables.task_q.get(tk, 0.0)
            target = r_best + cfg.gamma * bootstrap
            tables.task_q[tk] = q_old + cfg.alpha * (target - q_old)
            idx = next_idx
        total = extrinsic_reward(history)
        tables.training_curve.append(max(total, CURVE_FLOOR))
    return tables


# ------------------------------------------------------------------ #
# Value-approximation (DQN-style) mode
# ------------------------------------------------------------------ #
MAX_CONFIGS = 8          # one-hot encoding bound for the MLP mode
MLP_REWARD_FLOOR = -20.0  # sentinel clamp for network regression targets
MLP_SENTINEL_CUTOFF = -10.0


class NeuralTables:
    """Greedy interface of QTables backed by small value networks."""

    def __init__(self, skill_ids, hidden, rng):
        from hybridplan.rl_core import Mlp
        self.skill_ids = list(skill_ids)
        seg_dim = 2 * MAX_CONFIGS
        self.task_net = Mlp([seg_dim, *hidden, 1], rng)
        self.motion_net = Mlp([seg_dim + len(skill_ids), *hidden, 1], rng)
        self.task_target = self.task_net.copy()
        self.training_curve = []

    @staticmethod
    def _seg_feat(seg):
        f = np.zeros(2 * MAX_CONFIGS)
        f[seg[0]] = 1.0
        f[MAX_CONFIGS + seg[1]] = 1.0
        return f

    def _motion_feat(self, seg, skill_id):
        f = np.zeros(2 * MAX_CONFIGS + len(self.skill_ids))
        f[:2 * MAX_CONFIGS] = self._seg_feat(seg)
        f[2 * MAX_CONFIGS + self.skill_ids.index(skill_id)] = 1.0
        return f

    def task_value(self, seg, target=False) -> float:
        net = self.task_target if target else self.task_net
        return float(net.forward(self._seg_feat(seg))[0, 0])

    def motion_value(self, seg, skill_id) -> float:
        return float(self.motion_net.forward(self._motion_feat(seg, skill_id))[0, 0])

    def best_segment(self, state, candidates):
        vals = [self.task_value(seg) for seg in candidates]
        return candidates[int(np.argmax(vals))]

    def best_skill(self, state, seg, skill_ids):
        vals = [self.motion_value(seg, sk) for sk in skill_ids]
        best = int(np.argmax(vals))
        if vals[best] <= MLP_SENTINEL_CUTOFF:
            raise ValueError(f"no admissible skill for segment {seg}")
        return skill_ids[best]


def _train_hrl_mlp(tasks, library, cfg: HrlConfig, seed, fmap):
    from hybridplan.rl_core import Adam, clip_gradients

    if any(len(t.configs) > MAX_CONFIGS for t in tasks):
        raise ValueError(f"mlp mode supports at most {MAX_CONFIGS} configurations")
    rng = np.random.default_rng(seed)
    skill_ids = library.ids()
    nets = NeuralTables(skill_ids, cfg.dqn_hidden, rng)
    task_opt = Adam(nets.task_net.parameters(), cfg.dqn_lr)
    motion_opt = Adam(nets.motion_net.parameters(), cfg.dqn_lr)
    buffer = []

    def sgd_step(net, opt, feats, targets):
        pred = net.forward(feats)
        d = (2.0 / len(feats)) * (pred - targets[:, None])
        dW, db = net.backward(d)
        grads = dW + db
        clip_gradients(grads, 1.0)
        opt.step(net.parameters(), grads)

    for ep in range(cfg.episodes):
        task = tasks[int(rng.integers(len(tasks)))]
        configs = [_jitter_pose(p, cfg, rng) for p in task.configs]
        eps = cfg.epsilon(ep)
        idx = 0
        history = []
        while idx < len(configs) - 1:
            cands = candidate_segments(idx, len(configs))
            if rng.random() < eps:
                seg = cands[int(rng.integers(len(cands)))]
            else:
                seg = nets.best_segment(None, cands)
            if rng.random() < eps:
                skill_id = skill_ids[int(rng.integers(len(skill_ids)))]
            else:
                vals = [nets.motion_value(seg, sk) for sk in skill_ids]
                skill_id = skill_ids[int(np.argmax(vals))]
            r = intrinsic_reward(library[skill_id], configs[seg[0]:seg[1] + 1],
                                 cfg.delta_beta)
            history.append(r)
            done = seg[1] >= len(configs) - 1
            buffer.append((seg, skill_id, max(r, MLP_REWARD_FLOOR), done,
                           len(configs), seg[1]))
            if len(buffer) > 10_000:
                buffer.pop(0)
            if len(buffer) >= cfg.dqn_batch:
                picks = rng.integers(len(buffer), size=cfg.dqn_batch)
                seg_feats, task_targets = [], []
                mot_feats, mot_targets = [], []
                for k in picks:
                    b_seg, b_skill, b_r, b_done, b_n, b_next = buffer[k]
                    seg_feats.append(nets._seg_feat(b_seg))
                    if b_done:
                        boot = 0.0
                    else:
                        boot = max(nets.task_value(s, target=True)
                                   for s in candidate_segments(b_next, b_n))
                    # task values consume the motion head's best skill value
                    r_best = max(nets.motion_value(b_seg, sk) for sk in skill_ids)
                    task_targets.append(r_best + cfg.dqn_gamma * boot)
                    mot_feats.append(nets._motion_feat(b_seg, b_skill))
                    mot_targets.append(b_r)
                sgd_step(nets.task_net, task_opt,
                         np.array(seg_feats), np.array(task_targets))
                sgd_step(nets.motion_net, motion_opt,
                         np.array(mot_feats), np.array(mot_targets))
                # soft target update
                for tp, p in zip(nets.task_target.parameters(),
                                 nets.task_net.parameters()):
                    tp *= 1.0 - cfg.dqn_tau
                    tp += cfg.dqn_tau * p
            idx = seg[1]
        nets.training_curve.append(max(extrinsic_reward(history), CURVE_FLOOR))
    return nets


# ------------------------------------------------------------------ #
# Planning
# ------------------------------------------------------------------ #
def _slice_skill(skill: Demonstration, u_lo: float, u_hi: float, n: int) -> Demonstration:
    params = arc_params(skill.poses)
    if params is None:
        return skill
    us = np.linspace(u_lo, u_hi, max(n, 2))
    return Demonstration(skill.id, [sample_sequence(skill.poses, params, u) for u in us])


def retarget_through(skill: Demonstration, waypoints, points_per_gap: int) -> list:
    """Retarget a skill across several critical configurations.

    The skill is split by arc length into one slice per waypoint gap and each
    slice is retargeted endpoint-exactly, so the result passes through every
    waypoint exactly while keeping the demonstrated profile.
    """
    n_gaps = len(waypoints) - 1
    out = []
    for g in range(n_gaps):
        piece = _slice_skill(skill, g / n_gaps, (g + 1) / n_gaps,
                             max(3, len(skill.poses) // n_gaps))
        traj = retarget(piece, waypoints[g], waypoints[g + 1], points_per_gap)
        if g > 0:
            traj = traj[1:]          # drop the duplicated junction pose
        out.extend(traj)
    return out


def plan_lfd(task: Task, library: SkillLibrary, tables: QTables, fmap=None,
             points_per_gap: int = 25) -> dict:
    """Greedy segment and skill selection; returns the task-space plan.

    Output dict: poses (the trajectory), segments [(seg, skill_id)], and the
    per-segment pose index ranges.
    """
    skill_ids = library.ids()
    idx = 0
    poses = []
    chosen = []
    ranges = []
    while idx < len(task.configs) - 1:
        state = _state_key(idx, task.configs[idx], fmap)
        cands = candidate_segments(idx, len(task.configs))
        seg = tables.best_segment(state, cands)
        skill_id = tables.best_skill(state, seg, skill_ids)
        waypoints = task.configs[seg[0]:seg[1] + 1]
        traj = retarget_through(library[skill_id], waypoints, points_per_gap)
        start_at = len(poses)
        if poses:
            traj = traj[1:]          # junction pose already present
            start_at -= 1
        poses.extend(traj)
        chosen.append((seg, skill_id))
        ranges.append((start_at, len(poses) - 1))
        idx = seg[1]
    return {"poses": poses, "segments": chosen, "ranges": ranges}


def exhaustive_plan(task: Task, library: SkillLibrary, delta_beta=DELTA_BETA):
    """Brute-force optimal total intrinsic reward over all contiguous
    segmentations and skill assignments (test oracle for small instances)."""
    n = len(task.configs)
    skill_ids = library.ids()
    best = {n - 1: (0.0, [])}

    def solve(i):
        if i in best:
            return best[i]
        options = []
        for k in range(i + 1, n):
            seg_poses = task.configs[i:k + 1]
            tail_r, tail_plan = solve(k)
            for sk in skill_ids:
                r = intrinsic_reward(library[sk], seg_poses, delta_beta)
                if r <= SENTINEL or tail_r <= SENTINEL:
                    total = SENTINEL
                else:
                    total = r + tail_r
                options.append((total, [((i, k), sk)] + tail_plan))
        best[i] = max(options, key=lambda t: t[0])
        return best[i]

    return solve(0)
