"""Gaussian-policy PPO with GAE, and the combined adversarial-prior training loop."""
import json
import math
import os
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import amp as amp_mod
from .approx import Adam, Mlp, RunningNormalizer, clip_grad_norm, load_checkpoint, save_checkpoint
from .dynamics import FEATURE_DIM
from .envtask import ACTION_DIM, EnvConfig, VecEnv
from .errors import CheckpointMismatch, DimensionMismatch

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 5e-5
    clip: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 5.0
    kl_threshold: float = 0.008
    minibatch: int = 1024
    actors: int = 64
    epochs: int = 4
    horizon: int = 256
    max_grad_norm: float = 1.0
    init_log_std: float = -1.0
    min_log_std: float = -4.0
    hidden: tuple = (256, 128)
    joint_action_scale: float = 0.5
    normalize_advantages: bool = True
    normalize_value: bool = True

    def validate(self):
        if not (0 <= self.gamma < 1 and 0 <= self.lam < 1):
            raise ValueError("gamma and lambda must be in [0, 1)")
        if self.clip <= 0 or self.lr <= 0:
            raise ValueError("clip and lr must be positive")
        if self.minibatch > self.actors * self.horizon:
            raise ValueError("minibatch must not exceed actors * horizon")
        if min(self.minibatch, self.actors, self.epochs, self.horizon) < 1:
            raise ValueError("minibatch, actors, epochs and horizon must be >= 1")
        return self


@dataclass
class AmpConfig:
    w_gp: float = 10.0
    batch: int = 256
    updates_per_iter: int = 2
    buffer_capacity: int = 100_000
    lr: float = 5e-5
    hidden: tuple = (128, 128)


class ActionSample(NamedTuple):
    action: np.ndarray      # physical, clamped to the bounds
    log_prob: np.ndarray    # of the pre-clamp Gaussian draw
    raw: np.ndarray         # the pre-clamp draw in normalised action units


class GaussianPolicy:
    """Diagonal Gaussian over normalised actions with a state-independent log-std.

    A normalised action ``a`` maps to the physical command
    ``clip(center + scale * a, low, high)``. Observations pass through a
    running normaliser owned by the policy.
    """

    def __init__(self, obs_dim, low, high, center, scale, hidden=(256, 128), init_log_std=-1.0,
                 min_log_std=-4.0, rng=None):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        if np.any(self.low >= self.high):
            raise ValueError("action bounds must be ordered")
        self.center = np.asarray(center, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.obs_dim = int(obs_dim)
        self.act_dim = self.low.size
        self.net = Mlp([self.obs_dim, *hidden, self.act_dim], "tanh", rng, output_gain=0.01,
                       hidden_gain=math.sqrt(2.0))
        self.log_std = np.full(self.act_dim, float(init_log_std))
        self.min_log_std = float(min_log_std)
        self.obs_norm = RunningNormalizer(self.obs_dim)

    @property
    def params(self):
        return self.net.params + [self.log_std]

    def normalize(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise DimensionMismatch(f"observation has {obs.shape[-1]} entries, policy expects {self.obs_dim}")
        return self.obs_norm(obs)

    def mean(self, obs_n):
        return self.net.forward(obs_n)

    def to_physical(self, raw):
        return np.clip(self.center + self.scale * raw, self.low, self.high)

    def log_prob(self, obs_n, raw):
        return gaussian_log_prob(raw, self.mean(obs_n), self.log_std)

    def act(self, obs, rng=None, deterministic=False, normalized=False) -> ActionSample:
        obs_n = obs if normalized else self.normalize(obs)
        mu = self.mean(obs_n)
        if deterministic:
            raw = mu
        else:
            raw = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        return ActionSample(self.to_physical(raw), gaussian_log_prob(raw, mu, self.log_std), raw)

    def entropy(self):
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + _LOG_2PI))

    def state_dict(self, prefix="policy."):
        d = self.net.state_dict(prefix + "net.")
        d.update(self.obs_norm.state_dict(prefix + "obs."))
        for name in ("log_std", "low", "high", "center", "scale"):
            d[prefix + name] = getattr(self, name)
        d[prefix + "min_log_std"] = np.array(self.min_log_std)
        return d

    def load_state_dict(self, d, prefix="policy."):
        if d[prefix + "low"].shape != self.low.shape:
            raise CheckpointMismatch("action dimension mismatch")
        self.net.load_state_dict(d, prefix + "net.")
        self.obs_norm.load_state_dict(d, prefix + "obs.")
        for name in ("log_std", "low", "high", "center", "scale"):
            getattr(self, name)[...] = d[prefix + name]
        self.min_log_std = float(d[prefix + "min_log_std"])


def gaussian_log_prob(raw, mean, log_std):
    z = (raw - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * raw.shape[-1] * _LOG_2PI


def sample_action(policy: GaussianPolicy, obs, rng):
    """``(action, log_prob)`` for raw observations ``obs``."""
    s = policy.act(obs, rng)
    return s.action, s.log_prob


def make_policy(env_cfg: EnvConfig, ppo_cfg: PpoConfig, rng) -> GaussianPolicy:
    low, high = env_cfg.action_bounds()
    center = np.concatenate([env_cfg.model.stance_pose(), np.zeros(2)])
    scale = np.concatenate([np.full(4, ppo_cfg.joint_action_scale), np.zeros(2)])
    if env_cfg.jet_mode == "ideal":
        scale[4:] = env_cfg.rate_limit
    else:
        center[4:] = 0.5 * (low[4:] + high[4:])
        scale[4:] = 0.5 * (high[4:] - low[4:])
    return GaussianPolicy(env_cfg.obs_dim, low, high, center, scale, ppo_cfg.hidden,
                          ppo_cfg.init_log_std, ppo_cfg.min_log_std, rng)


class ValueFunction:
    """State-value network whose output lives in normalised-return units.

    With ``normalize`` the network is trained on returns standardised by
    running statistics and predictions are mapped back, so the critic does
    not have to grow its output to the return scale at a small learning rate.
    """

    def __init__(self, net: Mlp, normalize=True):
        self.net = net
        self.normalize = normalize
        self.ret_norm = RunningNormalizer(1, clip=np.inf)

    @property
    def params(self):
        return self.net.params

    def _scale(self):
        if not self.normalize:
            return 0.0, 1.0
        return float(self.ret_norm.mean[0]), float(max(self.ret_norm.std[0], 1e-6))

    def forward(self, obs_n):
        """Value estimates in return units, shape (n,)."""
        mean, std = self._scale()
        return mean + std * self.net.forward(obs_n)[:, 0]

    __call__ = forward

    def update_statistics(self, returns):
        if self.normalize:
            self.ret_norm.update(np.asarray(returns, dtype=np.float64).reshape(-1, 1))

    def targets(self, returns):
        mean, std = self._scale()
        return (returns - mean) / std

    def state_dict(self, prefix="value."):
        d = self.net.state_dict(prefix + "net.")
        d.update(self.ret_norm.state_dict(prefix + "ret."))
        d[prefix + "normalize"] = np.array(self.normalize)
        return d

    def load_state_dict(self, d, prefix="value."):
        self.net.load_state_dict(d, prefix + "net.")
        self.ret_norm.load_state_dict(d, prefix + "ret.")
        self.normalize = bool(d[prefix + "normalize"])


def make_value(obs_dim, hidden=(256, 128), rng=None, normalize=True) -> ValueFunction:
    net = Mlp([obs_dim, *hidden, 1], "tanh", rng, output_gain=1.0, hidden_gain=math.sqrt(2.0))
    return ValueFunction(net, normalize)


@dataclass
class RolloutBuffer:
    """Horizon-major arrays of one rollout, shape ``(T, N, ...)``."""

    obs: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @classmethod
    def empty(cls, horizon, n, obs_dim, act_dim=ACTION_DIM):
        return cls(np.zeros((horizon, n, obs_dim)), np.zeros((horizon, n, act_dim)),
                   np.zeros((horizon, n)), np.zeros((horizon, n)), np.zeros((horizon, n)),
                   np.zeros((horizon, n), dtype=bool), np.zeros(n))

    def __len__(self):
        return self.rewards.size


def compute_gae(rewards, values, dones, last_values, gamma=0.99, lam=0.95):
    """Backward GAE recursion.

    ``dones[t]`` marks that the episode ended after step ``t``: nothing is
    bootstrapped across it. Returns ``(advantages, returns)`` with
    ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_values, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in range(T - 1, -1, -1):
        keep = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * keep - values[t]
        running = delta + gamma * lam * keep * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def surrogate_terms(ratio, adv, clip):
    """Per-sample clipped surrogate and its derivative with respect to the log-probability."""
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    obj = np.minimum(unclipped_obj, clipped_obj)
    active = unclipped_obj <= clipped_obj
    return obj, np.where(active, adv * ratio, 0.0)


def _policy_grads(policy, o, mu_cache, raw, logp, old_logp, adv, clip, entropy_coef):
    """Per-sample surrogate and the gradient of ``-mean(surrogate) - entropy_coef * entropy``."""
    mb = adv.size
    ratio = np.exp(logp - old_logp)
    obj, dobj = surrogate_terms(ratio, adv, clip)
    dlogp = -dobj / mb
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = raw - mu_cache[-1]
    g_mu = dlogp[:, None] * diff * inv_var
    g_logstd = np.sum(dlogp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - entropy_coef
    g_net, _ = policy.net.backward(o, g_mu, cache=mu_cache)
    return obj, g_net + [g_logstd]


def policy_loss(policy: GaussianPolicy, obs_n, raw, old_logp, adv, clip=0.2, entropy_coef=0.0):
    """Clipped-surrogate policy loss and its gradients for ``policy.params``."""
    cache = policy.net._forward_cache(obs_n)
    logp = gaussian_log_prob(raw, cache[-1], policy.log_std)
    obj, grads = _policy_grads(policy, obs_n, cache, raw, logp, old_logp, adv, clip, entropy_coef)
    return -float(np.mean(obj)) - entropy_coef * policy.entropy(), grads


def ppo_update(policy: GaussianPolicy, value, buffer: RolloutBuffer, cfg: PpoConfig, rng,
               pi_opt: Adam = None, v_opt: Adam = None):
    """Clipped-surrogate epochs over ``buffer`` with KL early stopping.

    The minibatch-mean approximate KL ``mean(old_logp - new_logp)`` is checked
    before each optimiser step; once it exceeds the threshold all remaining
    epochs are skipped. ``value`` is a ``ValueFunction`` or a bare ``Mlp``
    (trained directly on returns).
    """
    if isinstance(value, Mlp):
        value = ValueFunction(value, normalize=False)
    pi_opt = pi_opt or Adam(policy.params, lr=cfg.lr)
    v_opt = v_opt or Adam(value.params, lr=cfg.lr)
    if buffer.advantages is None:
        buffer.advantages, buffer.returns = compute_gae(buffer.rewards, buffer.values, buffer.dones,
                                                        buffer.last_values, cfg.gamma, cfg.lam)
    obs = buffer.obs.reshape(-1, buffer.obs.shape[-1])
    raw = buffer.raw_actions.reshape(-1, buffer.raw_actions.shape[-1])
    old_logp = buffer.log_probs.reshape(-1)
    adv = buffer.advantages.reshape(-1)
    value.update_statistics(buffer.returns)
    ret = value.targets(buffer.returns.reshape(-1))
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = adv.size
    mb = min(cfg.minibatch, n)
    pl, vl, kls = [], [], []
    epochs_ran = 0
    steps = 0
    stopped = False
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        stepped = False
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            o = obs[idx]
            mu_cache = policy.net._forward_cache(o)
            mu = mu_cache[-1]
            logp = gaussian_log_prob(raw[idx], mu, policy.log_std)
            kl = float(np.mean(old_logp[idx] - logp))
            kls.append(kl)
            if kl > cfg.kl_threshold:
                stopped = True
                break
            obj, grads = _policy_grads(policy, o, mu_cache, raw[idx], logp, old_logp[idx], adv[idx],
                                       cfg.clip, cfg.entropy_coef)
            grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
            v = value.net.forward(o)[:, 0]
            verr = v - ret[idx]
            v_grads, _ = value.net.backward(o, (2.0 * cfg.value_coef / mb * verr)[:, None])
            v_grads, _ = clip_grad_norm(v_grads, cfg.max_grad_norm)
            pi_opt.step(grads)
            v_opt.step(v_grads)
            np.maximum(policy.log_std, policy.min_log_std, out=policy.log_std)
            pl.append(-float(np.mean(obj)))
            vl.append(cfg.value_coef * float(np.mean(verr * verr)))
            steps += 1
            stepped = True
        if stepped:
            epochs_ran += 1
        if stopped:
            break
    nan = float("nan")
    return {"policy_loss": float(np.mean(pl)) if pl else nan,
            "value_loss": float(np.mean(vl)) if vl else nan,
            "entropy": policy.entropy(), "kl": float(np.mean(kls)) if kls else nan,
            "epochs_ran": epochs_ran, "minibatch_steps": steps, "early_stop": stopped}


# ---------------------------------------------------------------------------
# training loop


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


class Trainer:
    """Holds every learned object and random stream of one training run.

    Parameters
    ----------
    env_cfg : EnvConfig
    ppo_cfg : PpoConfig
    amp_cfg : AmpConfig
    priors : MotionDataset or None
        Reference transitions; ``None`` or empty disables the style reward.
    seed : int
    workers : int
        Threads for the physics kernel during rollouts.
    """

    def __init__(self, env_cfg: EnvConfig, ppo_cfg: PpoConfig = None, amp_cfg: AmpConfig = None,
                 priors=None, seed=0, workers=1):
        self.env_cfg = env_cfg
        self.ppo_cfg = (ppo_cfg or PpoConfig()).validate()
        self.amp_cfg = amp_cfg or AmpConfig()
        self.seed = int(seed)
        self.workers = int(workers)
        ss = np.random.SeedSequence(self.seed)
        init_ss, act_ss, env_ss, disc_ss, upd_ss = ss.spawn(5)
        init_rng = np.random.default_rng(init_ss)
        self.act_rng = np.random.default_rng(act_ss)
        self.disc_rng = np.random.default_rng(disc_ss)
        self.update_rng = np.random.default_rng(upd_ss)
        self.policy = make_policy(env_cfg, self.ppo_cfg, init_rng)
        self.value = make_value(env_cfg.obs_dim, self.ppo_cfg.hidden, init_rng,
                                self.ppo_cfg.normalize_value)
        self.pi_opt = Adam(self.policy.params, lr=self.ppo_cfg.lr)
        self.v_opt = Adam(self.value.params, lr=self.ppo_cfg.lr)
        self.priors = priors if priors is not None and priors.n_pairs > 0 else None
        self.disc = None
        self.amp_buffer = None
        rsi = []
        if self.priors is not None:
            a = self.amp_cfg
            self.disc = amp_mod.Discriminator(FEATURE_DIM, a.hidden, a.w_gp, a.lr, init_rng)
            self.disc.fit_normalizer(self.priors.frames())
            self.amp_buffer = amp_mod.PolicyTransitionBuffer(a.buffer_capacity)
            rsi = [(f, c.label) for c in self.priors.clips for f in c.frames]
        self.env = VecEnv(env_cfg, self.ppo_cfg.actors, int(env_ss.generate_state(1)[0]), rsi)
        self.obs = self.env.reset()
        self.policy.obs_norm.update(self.obs)
        self.iteration = 0
        self.env_steps = 0

    def style_fn(self):
        if self.disc is None or self.env.weights.w_style == 0:
            return None
        disc = self.disc
        return lambda a, b: amp_mod.softplus(disc.logit(a, b))

    def rollout(self):
        cfg = self.ppo_cfg
        T, N = cfg.horizon, self.env.n
        buf = RolloutBuffer.empty(T, N, self.env_cfg.obs_dim)
        raw_obs = np.zeros((T, N, self.env_cfg.obs_dim))
        pairs = np.zeros((T, N, 2, FEATURE_DIM))
        sums = {k: 0.0 for k in ("r_c", "r_v", "r_f", "r_T", "task", "style", "total")}
        episodes = []
        style_fn = self.style_fn()
        for t in range(T):
            raw_obs[t] = self.obs
            obs_n = self.policy.normalize(self.obs)
            s = self.policy.act(obs_n, self.act_rng, normalized=True)
            v = self.value.forward(obs_n)
            res = self.env.step(s.action, style_fn, self.workers)
            reward = res.rewards["total"].copy()
            timeout = res.reason == "timeout"
            if np.any(timeout):
                term = self.policy.normalize(res.info["terminal_observation"][timeout])
                reward[timeout] += cfg.gamma * self.value.forward(term)
            buf.obs[t] = obs_n
            buf.raw_actions[t] = s.raw
            buf.log_probs[t] = s.log_prob
            buf.values[t] = v
            buf.rewards[t] = reward
            buf.dones[t] = res.done
            pairs[t, :, 0] = res.info["chi_prev"]
            pairs[t, :, 1] = res.info["chi_next"]
            for k in sums:
                sums[k] += float(np.sum(res.rewards[k]))
            episodes += res.info["episodes"]
            self.obs = res.observation
        buf.last_values = self.value.forward(self.policy.normalize(self.obs))
        self.policy.obs_norm.update(raw_obs.reshape(-1, raw_obs.shape[-1]))
        self.env_steps += T * N
        means = {k: v / (T * N) for k, v in sums.items()}
        return buf, pairs.reshape(-1, 2, FEATURE_DIM), means, episodes

    def update_discriminator(self, pairs):
        if self.disc is None:
            return {}
        a = self.amp_cfg
        self.amp_buffer.push(pairs)
        reports = []
        for _ in range(a.updates_per_iter):
            data = self.priors.sample(a.batch, self.disc_rng)
            pol = self.amp_buffer.sample(min(a.batch, len(self.amp_buffer)), self.disc_rng)
            reports.append(amp_mod.disc_update(self.disc, data, pol))
        return {f"disc_{k}": float(np.mean([r[k] for r in reports])) for k in reports[0]}

    def iterate(self):
        buf, pairs, means, episodes = self.rollout()
        disc_report = self.update_discriminator(pairs)
        report = ppo_update(self.policy, self.value, buf, self.ppo_cfg, self.update_rng,
                            self.pi_opt, self.v_opt)
        self.iteration += 1
        row = {"iteration": self.iteration, "env_steps": self.env_steps}
        row.update({f"mean_{k}": v for k, v in means.items()})
        row["episodes"] = len(episodes)
        for key in ("task_return", "total_return", "length", "waypoints", "mean_thrust", "mean_height"):
            row[f"ep_{key}"] = float(np.mean([e[key] for e in episodes])) if episodes else float("nan")
        row["ep_falls"] = sum(e["reason"] == "fell" for e in episodes)
        row.update(disc_report)
        row.update(report)
        nets = {"policy": self.policy.params, "value": self.value.params}
        if self.disc is not None:
            nets["discriminator"] = self.disc.net.params
        bad = [name for name, ps in nets.items() if not all(np.all(np.isfinite(p)) for p in ps)]
        if bad:
            raise FloatingPointError(f"non-finite parameters after iteration {self.iteration}: {bad}")
        return _clean(row)

    def state_dict(self):
        d = self.policy.state_dict()
        d.update(self.value.state_dict())
        d.update(self.pi_opt.state_dict("pi_opt."))
        d.update(self.v_opt.state_dict("v_opt."))
        if self.disc is not None:
            d.update(self.disc.state_dict())
        d["iteration"] = np.array(self.iteration)
        d["env_steps"] = np.array(self.env_steps)
        d["obs_dim"] = np.array(self.env_cfg.obs_dim)
        return d

    def save(self, path, extra=None):
        d = self.state_dict()
        if extra:
            d.update(extra)
        save_checkpoint(path, d)


def load_agent(path, env_cfg: EnvConfig, ppo_cfg: PpoConfig = None, amp_cfg: AmpConfig = None):
    """Policy and (optional) discriminator restored from a checkpoint for ``env_cfg``."""
    d = load_checkpoint(path)
    ppo_cfg = ppo_cfg or PpoConfig()
    amp_cfg = amp_cfg or AmpConfig()
    if int(d.get("obs_dim", -1)) != env_cfg.obs_dim:
        raise CheckpointMismatch(f"checkpoint observation size {int(d.get('obs_dim', -1))} does not "
                                 f"match the environment ({env_cfg.obs_dim})")
    hidden = tuple(int(h) for h in d["policy.net.sizes"][1:-1])
    policy = make_policy(env_cfg, PpoConfig(hidden=hidden), np.random.default_rng(0))
    policy.load_state_dict(d)
    disc = None
    if "disc.net.sizes" in d:
        dh = tuple(int(h) for h in d["disc.net.sizes"][1:-1])
        disc = amp_mod.Discriminator(FEATURE_DIM, dh, amp_cfg.w_gp, amp_cfg.lr)
        disc.load_state_dict(d)
    return policy, disc


def train(env_cfg: EnvConfig, ppo_cfg: PpoConfig = None, amp_cfg: AmpConfig = None, priors=None,
          iterations=10, seed=0, out_dir=None, checkpoint_every=10, workers=1, log=None,
          trainer=None):
    """Run ``iterations`` of rollout, discriminator and policy updates.

    Writes ``metrics.jsonl`` and ``checkpoint_XXXX.npz`` / ``checkpoint_final.npz``
    to ``out_dir`` when given. Returns ``(trainer, rows)``.
    """
    trainer = trainer or Trainer(env_cfg, ppo_cfg, amp_cfg, priors, seed, workers)
    rows = []
    metrics_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        open(metrics_path, "w").close()
    for _ in range(iterations):
        try:
            row = trainer.iterate()
        except FloatingPointError:
            if out_dir is not None:
                trainer.save(os.path.join(out_dir, "diagnostic_dump.npz"))
            raise
        rows.append(row)
        if metrics_path:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        if log is not None:
            log(row)
        if out_dir is not None and checkpoint_every and trainer.iteration % checkpoint_every == 0:
            trainer.save(os.path.join(out_dir, f"checkpoint_{trainer.iteration:04d}.npz"))
    if out_dir is not None:
        trainer.save(os.path.join(out_dir, "checkpoint_final.npz"))
    return trainer, rows


TRAJECTORY_COLUMNS = ("time x z phi vx vz omega th_hip0 th_knee0 th_hip1 th_knee1 thrust0 thrust1 "
                      "target_x target_z r_c r_v r_f r_T task style total waypoint_hit").split()


def evaluate(policy: GaussianPolicy, env_cfg: EnvConfig, episodes=5, deterministic=True, seed=0,
             disc=None, trajectory_dir=None, r_bar=None):
    """Roll out ``episodes`` episodes and aggregate per-episode statistics.

    ``thrust_usage`` is ``1 - mean(T) / T_max`` (1.0 for a robot that never
    uses its jets); ``duration_fraction`` is the episode length over the
    maximum length; ``reward_fraction`` is the mean task return over
    ``r_bar`` when given.
    """
    if policy.obs_dim != env_cfg.obs_dim:
        raise CheckpointMismatch("policy and environment observation sizes differ")
    rng = np.random.default_rng(seed)
    ss = np.random.SeedSequence(seed).spawn(episodes)
    style_fn = None
    if disc is not None:
        style_fn = lambda a, b: amp_mod.softplus(disc.logit(a, b))  # noqa: E731
    rows = []
    for ep in range(episodes):
        env = VecEnv(env_cfg, 1, int(ss[ep].generate_state(1)[0]), auto_reset=False)
        obs = env.reset()
        traj = []
        while True:
            s = policy.act(obs, rng, deterministic=deterministic)
            res = env.step(s.action, style_fn)
            if trajectory_dir is not None:
                st = env.S[0]
                r = res.rewards
                traj.append([env.steps[0] * env_cfg.dt, *st[:6], *st[6:10], *st[14:16],
                             *env.targets[0], *(float(r[k][0]) for k in
                                                ("r_c", "r_v", "r_f", "r_T", "task", "style", "total")),
                             float(res.info["hit"][0])])
            obs = res.observation
            if res.done[0]:
                e = res.info["episodes"][0]
                break
        rows.append({"episode": ep, "length": e["length"], "reason": e["reason"],
                     "duration_fraction": e["duration_fraction"], "task_return": e["task_return"],
                     "total_return": e["total_return"], "waypoints": e["waypoints"],
                     "thrust_usage": 1.0 - e["mean_thrust"], "mean_height": e["mean_height"]})
        if trajectory_dir is not None:
            os.makedirs(trajectory_dir, exist_ok=True)
            np.savetxt(os.path.join(trajectory_dir, f"trajectory_{ep:03d}.txt"), np.array(traj),
                       header=" ".join(TRAJECTORY_COLUMNS), fmt="%.10g")
    keys = ("length", "duration_fraction", "task_return", "total_return", "waypoints",
            "thrust_usage", "mean_height")
    report = {f"mean_{k}": float(np.mean([r[k] for r in rows])) for k in keys}
    report["max_waypoints"] = int(max(r["waypoints"] for r in rows))
    report["episodes"] = rows
    if r_bar is not None:
        report["reward_fraction"] = report["mean_task_return"] / r_bar
    return report


def evaluate_checkpoint(path, env_cfg: EnvConfig, episodes=5, deterministic=True, seed=0, **kw):
    policy, disc = load_agent(path, env_cfg)
    return evaluate(policy, env_cfg, episodes, deterministic, seed, disc, **kw)


def config_dict(cfg):
    return asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else dict(cfg)


__all__ = ["PpoConfig", "AmpConfig", "GaussianPolicy", "RolloutBuffer", "ActionSample",
           "sample_action", "compute_gae", "ppo_update", "Trainer", "train", "evaluate",
           "evaluate_checkpoint", "load_agent", "make_policy", "make_value", "ValueFunction"]
