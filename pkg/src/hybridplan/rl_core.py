"""Minimal policy-optimization engine: a feed-forward network with exact
backpropagation, Gaussian and categorical policy heads, generalized advantage
estimation, and the clipped-surrogate policy update.

Everything is plain numpy with explicit RNGs; identical seeds give bit
identical parameter trajectories.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


# ------------------------------------------------------------------ #
# Feed-forward network: tanh hidden layers, linear output
# ------------------------------------------------------------------ #
class Mlp:
    def __init__(self, sizes, rng=None, out_scale=1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = 1.0 / np.sqrt(d_in)
            if i == len(sizes) - 2:
                scale *= out_scale
            self.weights.append(rng.normal(0.0, scale, size=(d_out, d_in)))
            self.biases.append(np.zeros(d_out))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass; caches activations for backward."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input dim {self.sizes[0]}, got {x.shape[1]}")
        acts = [x]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W.T + b
            acts.append(np.tanh(z) if i < len(self.weights) - 1 else z)
        self._cache = acts
        return acts[-1]

    def backward(self, d_out: np.ndarray):
        """Gradients for the cached forward pass; d_out is dLoss/dOutput."""
        if self._cache is None:
            raise RuntimeError("forward pass must be cached before backward")
        acts = self._cache
        dW = [None] * len(self.weights)
        db = [None] * len(self.biases)
        delta = np.atleast_2d(d_out)
        for i in range(len(self.weights) - 1, -1, -1):
            dW[i] = delta.T @ acts[i]
            db[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (1.0 - acts[i] ** 2)
        return dW, db

    def parameters(self):
        return self.weights + self.biases

    def set_parameters(self, params):
        k = len(self.weights)
        self.weights = [p.copy() for p in params[:k]]
        self.biases = [p.copy() for p in params[k:]]

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        clone._cache = None
        return clone


def clip_gradients(grads, max_norm: float) -> float:
    """Scale gradients in place so the global norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ------------------------------------------------------------------ #
# Policy heads
# ------------------------------------------------------------------ #
class GaussianPolicy:
    """Diagonal Gaussian over continuous actions; state-independent log std."""

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), rng=None, log_std=-0.5):
        self.net = Mlp([obs_dim] + list(hidden) + [act_dim], rng, out_scale=0.01)
        self.log_std = np.full(act_dim, float(log_std))
        self.act_dim = act_dim

    def act(self, obs, rng):
        mean = self.net.forward(obs)[0]
        std = np.exp(self.log_std)
        action = mean + std * rng.standard_normal(self.act_dim)
        return action, self.log_prob_given(mean, action)

    def mean_action(self, obs):
        return self.net.forward(obs)[0]

    def log_prob_given(self, mean, action):
        z = (action - mean) / np.exp(self.log_std)
        return float(-0.5 * np.sum(z * z) - np.sum(self.log_std)
                     - 0.5 * self.act_dim * np.log(2 * np.pi))

    def evaluate(self, obs_batch, act_batch):
        """Batch log-probs and entropy; caches for backward_logp."""
        mean = self.net.forward(obs_batch)
        std = np.exp(self.log_std)
        z = (act_batch - mean) / std
        logp = -0.5 * np.sum(z * z, axis=1) - np.sum(self.log_std) \
            - 0.5 * self.act_dim * np.log(2 * np.pi)
        entropy = float(np.sum(self.log_std) + 0.5 * self.act_dim * (1 + np.log(2 * np.pi)))
        self._eval_cache = (mean, act_batch, std)
        return logp, np.full(len(logp), entropy)

    def backward_logp(self, d_logp, d_entropy=None):
        """Parameter gradients of sum(d_logp * logp) + sum(d_entropy * entropy)."""
        mean, act, std = self._eval_cache
        diff = (act - mean) / (std * std)
        d_mean = d_logp[:, None] * diff              # dlogp/dmean = (a - mean)/std^2
        dW, db = self.net.backward(d_mean)
        z2 = ((act - mean) / std) ** 2
        d_log_std = np.sum(d_logp[:, None] * (z2 - 1.0), axis=0)
        if d_entropy is not None:
            # entropy = sum(log_std) + const, so dEntropy/dlog_std = 1 per dim
            d_log_std += float(np.sum(d_entropy))
        return dW + db + [d_log_std]

    def parameters(self):
        return self.net.parameters() + [self.log_std]

    def set_parameters(self, params):
        self.net.set_parameters(params[:-1])
        self.log_std = params[-1].copy()


class CategoricalPolicy:
    """Softmax over discrete actions."""

    def __init__(self, obs_dim, n_actions, hidden=(64, 64), rng=None):
        self.net = Mlp([obs_dim] + list(hidden) + [n_actions], rng, out_scale=0.01)
        self.n_actions = n_actions

    def distribution(self, obs):
        logits = self.net.forward(obs)[0]
        logits = logits - logits.max()
        p = np.exp(logits)
        return p / p.sum()

    def act(self, obs, rng):
        p = self.distribution(obs)
        a = int(rng.choice(self.n_actions, p=p))
        return a, float(np.log(p[a]))

    def mean_action(self, obs):
        return int(np.argmax(self.distribution(obs)))

    def evaluate(self, obs_batch, act_batch):
        logits = self.net.forward(obs_batch)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        logp_all = shifted - logz
        p = np.exp(logp_all)
        idx = np.arange(len(act_batch))
        logp = logp_all[idx, act_batch.astype(int)]
        entropy = -np.sum(p * logp_all, axis=1)
        self._eval_cache = (p, act_batch.astype(int), entropy)
        return logp, entropy

    def backward_logp(self, d_logp, d_entropy=None):
        """Parameter gradients of sum(d_logp * logp) + sum(d_entropy * entropy)."""
        p, acts, entropy = self._eval_cache
        onehot = np.zeros_like(p)
        onehot[np.arange(len(acts)), acts] = 1.0
        d_logits = d_logp[:, None] * (onehot - p)
        if d_entropy is not None:
            dH = -p * (np.log(np.clip(p, 1e-12, None)) + entropy[:, None])
            d_logits += d_entropy[:, None] * dH
        dW, db = self.net.backward(d_logits)
        return dW + db

    def parameters(self):
        return self.net.parameters()

    def set_parameters(self, params):
        self.net.set_parameters(params)


class ValueNet:
    def __init__(self, obs_dim, hidden=(64, 64), rng=None):
        self.net = Mlp([obs_dim] + list(hidden) + [1], rng, out_scale=1.0)

    def value(self, obs) -> float:
        return float(self.net.forward(obs)[0, 0])

    def values(self, obs_batch) -> np.ndarray:
        return self.net.forward(obs_batch)[:, 0]

    def backward_mse(self, values, targets, coef):
        d = (2.0 * coef / len(values)) * (values - targets)
        dW, db = self.net.backward(d[:, None])
        return dW + db

    def parameters(self):
        return self.net.parameters()

    def set_parameters(self, params):
        self.net.set_parameters(params)


# ------------------------------------------------------------------ #
# PPO
# ------------------------------------------------------------------ #
@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    discount: float = 0.99
    minibatch_size: int = 64
    num_steps: int = 2048
    entropy_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    epochs_per_batch: int = 10
    # rewards are multiplied by this inside the update (value targets and
    # advantages only); keeps long-horizon value regression well conditioned.
    # Reported stats stay in unscaled units.
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.minibatch_size > self.num_steps:
            raise ValueError("minibatch_size must not exceed num_steps")


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """Advantages and discounted-return targets over one rollout batch."""
    T = len(rewards)
    adv = np.zeros(T)
    next_adv = 0.0
    next_value = last_value
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        next_adv = delta + gamma * lam * nonterminal * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_obs: np.ndarray


def ppo_update(policy, value_net, batch: RolloutBatch, cfg: PpoConfig, rng):
    """One batched clipped-surrogate update (epochs x minibatches).

    Returns stats {mean_reward, clip_frac, approx_kl, value_loss, aborted}.
    A non-finite loss aborts the update and restores the previous parameters.
    """
    values = value_net.values(batch.obs)
    last_value = value_net.value(batch.last_obs)
    adv, returns = compute_gae(cfg.reward_scale * batch.rewards, values,
                               batch.dones, last_value,
                               cfg.discount, cfg.gae_lambda)
    std = adv.std()
    norm_adv = (adv - adv.mean()) / std if std > 1e-8 else np.zeros_like(adv)

    pol_snapshot = [p.copy() for p in policy.parameters()]
    val_snapshot = [p.copy() for p in value_net.parameters()]
    pol_opt = getattr(policy, "_adam", None)
    if pol_opt is None or pol_opt.lr != cfg.learning_rate:
        pol_opt = Adam(policy.parameters(), cfg.learning_rate)
        policy._adam = pol_opt
    val_opt = getattr(value_net, "_adam", None)
    if val_opt is None or val_opt.lr != cfg.learning_rate:
        val_opt = Adam(value_net.parameters(), cfg.learning_rate)
        value_net._adam = val_opt

    T = len(batch.rewards)
    clip_hits = 0
    clip_total = 0
    kl_sum = 0.0
    vloss_last = 0.0
    for _ in range(cfg.epochs_per_batch):
        order = rng.permutation(T)
        for k in range(0, T, cfg.minibatch_size):
            idx = order[k:k + cfg.minibatch_size]
            obs_mb = batch.obs[idx]
            act_mb = batch.actions[idx]
            adv_mb = norm_adv[idx]
            ret_mb = returns[idx]
            old_mb = batch.log_probs[idx]

            logp, entropy = policy.evaluate(obs_mb, act_mb)
            ratio = np.exp(logp - old_mb)
            unclipped = ratio * adv_mb
            clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv_mb
            surrogate = np.minimum(unclipped, clipped)
            # gradient flows through the ratio only where the unclipped branch
            # is the active minimum
            active = unclipped <= clipped
            d_logp_loss = -np.where(active, ratio * adv_mb, 0.0) / len(idx)
            d_ent_loss = np.full(len(idx), -cfg.entropy_coef / len(idx))

            vals = value_net.values(obs_mb)
            v_loss = float(np.mean((vals - ret_mb) ** 2))
            loss = -float(np.mean(surrogate)) + cfg.vf_coef * v_loss \
                - cfg.entropy_coef * float(np.mean(entropy))
            if not np.isfinite(loss):
                policy.set_parameters(pol_snapshot)
                value_net.set_parameters(val_snapshot)
                return {"mean_reward": float(np.mean(batch.rewards)),
                        "clip_frac": 0.0, "approx_kl": 0.0,
                        "value_loss": v_loss, "aborted": True}

            pol_grads = policy.backward_logp(d_logp_loss, d_ent_loss)
            clip_gradients(pol_grads, cfg.max_grad_norm)
            pol_opt.step(policy.parameters(), pol_grads)

            val_grads = value_net.backward_mse(vals, ret_mb, cfg.vf_coef)
            clip_gradients(val_grads, cfg.max_grad_norm)
            val_opt.step(value_net.parameters(), val_grads)

            clip_hits += int(np.sum(np.abs(ratio - 1.0) > cfg.clip_eps))
            clip_total += len(idx)
            kl_sum += float(np.sum(old_mb - logp))
            vloss_last = v_loss
    return {
        "mean_reward": float(np.mean(batch.rewards)),
        "clip_frac": clip_hits / max(clip_total, 1),
        "approx_kl": kl_sum / max(clip_total, 1),
        "value_loss": vloss_last,
        "aborted": False,
    }


# ------------------------------------------------------------------ #
# Checkpoints: versioned binary of layer sizes + parameters
# ------------------------------------------------------------------ #
_CKPT_MAGIC = b"HPCK"
_CKPT_VERSION = 1
_KIND_GAUSSIAN, _KIND_CATEGORICAL = 1, 2


def _pack_arrays(arrays) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def _unpack_arrays(raw, off):
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
        arrays.append(arr)
    return arrays, off


def save_checkpoint(path, policy, value_net, meta: dict) -> None:
    kind = _KIND_GAUSSIAN if isinstance(policy, GaussianPolicy) else _KIND_CATEGORICAL
    meta_text = "\n".join(f"{k}={meta[k]}" for k in sorted(meta)).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, kind))
        fh.write(struct.pack("<I", len(meta_text)))
        fh.write(meta_text)
        sizes = np.array(policy.net.sizes, dtype="<u4")
        fh.write(struct.pack("<I", len(sizes)))
        fh.write(sizes.tobytes())
        fh.write(_pack_arrays(policy.parameters()))
        vsizes = np.array(value_net.net.sizes, dtype="<u4")
        fh.write(struct.pack("<I", len(vsizes)))
        fh.write(vsizes.tobytes())
        fh.write(_pack_arrays(value_net.parameters()))


def load_checkpoint(path):
    """Returns (policy, value_net, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, kind = struct.unpack_from("<II", raw, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = {}
    if meta_len:
        for line in raw[off:off + meta_len].decode().splitlines():
            k, v = line.split("=", 1)
            meta[k] = v
    off += meta_len
    (ns,) = struct.unpack_from("<I", raw, off)
    off += 4
    sizes = np.frombuffer(raw, dtype="<u4", count=ns, offset=off).tolist()
    off += 4 * ns
    params, off = _unpack_arrays(raw, off)
    hidden = tuple(sizes[1:-1])
    if kind == _KIND_GAUSSIAN:
        policy = GaussianPolicy(sizes[0], sizes[-1], hidden)
    else:
        policy = CategoricalPolicy(sizes[0], sizes[-1], hidden)
    policy.set_parameters(params)
    (nvs,) = struct.unpack_from("<I", raw, off)
    off += 4
    vsizes = np.frombuffer(raw, dtype="<u4", count=nvs, offset=off).tolist()
    off += 4 * nvs
    vparams, off = _unpack_arrays(raw, off)
    value_net = ValueNet(vsizes[0], tuple(vsizes[1:-1]))
    value_net.set_parameters(vparams)
    return policy, value_net, meta
