"""Adversarial motion prior: discriminator, its three-term objective, style reward."""
import numpy as np

from .approx import Adam, Mlp, RunningNormalizer
from .dynamics import FEATURE_DIM
from .errors import DimensionMismatch, EmptyBatch, InsufficientSamples


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


class Discriminator:
    """Scores a transition ``(chi_t, chi_{t+1})``; high logits mean "looks like the dataset".

    Parameters
    ----------
    feature_dim : int
        Length of one feature frame.
    hidden : sequence of int
        Hidden layer widths.
    w_gp : float
        Weight of the input-gradient penalty on dataset samples.
    lr : float
        Adam learning rate.
    rng : numpy.random.Generator, optional
        Initialisation stream.
    """

    def __init__(self, feature_dim=FEATURE_DIM, hidden=(128, 128), w_gp=10.0, lr=5e-5, rng=None,
                 activation="tanh"):
        if w_gp < 0:
            raise ValueError("w_gp must be non-negative")
        self.feature_dim = int(feature_dim)
        self.w_gp = float(w_gp)
        self.net = Mlp([2 * self.feature_dim, *hidden, 1], activation, rng, output_gain=1.0)
        self.normalizer = RunningNormalizer(self.feature_dim)
        self.optimizer = Adam(self.net.params, lr=lr)

    def fit_normalizer(self, frames):
        """Set the shared feature statistics from dataset frames and freeze them."""
        self.normalizer.frozen = False
        self.normalizer.update(frames)
        self.normalizer.frozen = True
        return self

    def inputs(self, chi_t, chi_next):
        chi_t = np.asarray(chi_t, dtype=np.float64)
        chi_next = np.asarray(chi_next, dtype=np.float64)
        if chi_t.shape[-1] != self.feature_dim or chi_next.shape != chi_t.shape:
            raise DimensionMismatch(f"feature frames must both have {self.feature_dim} entries")
        return np.concatenate([self.normalizer(chi_t), self.normalizer(chi_next)], axis=-1)

    def logit(self, chi_t, chi_next):
        out = self.net.forward(self.inputs(chi_t, chi_next))[..., 0]
        return float(out) if out.ndim == 0 else out

    def state_dict(self, prefix="disc."):
        d = self.net.state_dict(prefix + "net.")
        d.update(self.normalizer.state_dict(prefix + "norm."))
        d.update(self.optimizer.state_dict(prefix + "adam."))
        d[prefix + "w_gp"] = np.array(self.w_gp)
        return d

    def load_state_dict(self, d, prefix="disc."):
        self.net.load_state_dict(d, prefix + "net.")
        self.normalizer.load_state_dict(d, prefix + "norm.")
        self.optimizer.load_state_dict(d, prefix + "adam.")
        self.w_gp = float(d[prefix + "w_gp"])


def disc_logit(d: Discriminator, chi_t, chi_next):
    return d.logit(chi_t, chi_next)


def style_reward(d: Discriminator, chi_t, chi_next):
    """Non-negative style reward ``-log(1 - sigmoid(D)) = softplus(D)``."""
    return softplus(d.logit(chi_t, chi_next))


def _split(pairs):
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise DimensionMismatch("transition batches have shape (n, 2, feature_dim)")
    return pairs[:, 0], pairs[:, 1]


def disc_objective(d: Discriminator, data_pairs, policy_pairs):
    """Objective terms and parameter gradients of the total loss.

    Loss = mean softplus(-D(data)) + mean softplus(D(policy))
    + w_gp * mean ||d D / d x||^2 at the normalized dataset inputs.
    Returns ``(terms, grads)``.
    """
    data_pairs = np.asarray(data_pairs, dtype=np.float64)
    policy_pairs = np.asarray(policy_pairs, dtype=np.float64)
    if data_pairs.shape[0] == 0 or policy_pairs.shape[0] == 0:
        raise EmptyBatch("discriminator update needs non-empty dataset and policy batches")
    xd = d.inputs(*_split(data_pairs))
    xp = d.inputs(*_split(policy_pairs))
    ld = d.net.forward(xd)[:, 0]
    lp = d.net.forward(xp)[:, 0]
    nd, npol = ld.size, lp.size
    data_term = float(np.mean(softplus(-ld)))
    policy_term = float(np.mean(softplus(lp)))
    up = np.concatenate([-sigmoid(-ld) / nd, sigmoid(lp) / npol])[:, None]
    grads, _ = d.net.backward(np.concatenate([xd, xp]), up)
    penalty = 0.0
    if d.w_gp > 0:
        penalty, _, pgrads = d.net.gradient_penalty(xd)
        grads = [g + d.w_gp * pg for g, pg in zip(grads, pgrads)]
    else:
        penalty = float(d.net.gradient_penalty(xd)[0])
    terms = {"dataset": data_term, "policy": policy_term, "penalty": float(penalty),
             "total": data_term + policy_term + d.w_gp * float(penalty),
             "accuracy_dataset": float(np.mean(ld > 0)), "accuracy_policy": float(np.mean(lp < 0))}
    return terms, grads


def disc_update(d: Discriminator, data_pairs, policy_pairs):
    """One Adam step on the discriminator; returns the loss terms before the step."""
    terms, grads = disc_objective(d, data_pairs, policy_pairs)
    d.optimizer.step(grads)
    return terms


class PolicyTransitionBuffer:
    """FIFO ring buffer of agent transitions, shape ``(capacity, 2, feature_dim)``."""

    def __init__(self, capacity=100_000, feature_dim=FEATURE_DIM):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.feature_dim = int(feature_dim)
        self._data = np.zeros((self.capacity, 2, self.feature_dim))
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, pairs):
        pairs = np.asarray(pairs, dtype=np.float64)
        if pairs.ndim != 3 or pairs.shape[1:] != (2, self.feature_dim):
            raise DimensionMismatch(f"pairs must have shape (n, 2, {self.feature_dim})")
        if pairs.shape[0] > self.capacity:
            pairs = pairs[-self.capacity:]
        n = pairs.shape[0]
        idx = (self._next + np.arange(n)) % self.capacity
        self._data[idx] = pairs
        self._next = (self._next + n) % self.capacity
        self.size = min(self.capacity, self.size + n)

    def contents(self) -> np.ndarray:
        """Stored pairs from oldest to newest."""
        if self.size < self.capacity:
            return self._data[:self.size].copy()
        return np.roll(self._data, -self._next, axis=0).copy()

    def sample(self, n, rng) -> np.ndarray:
        if n > self.size:
            raise InsufficientSamples(f"requested {n} pairs, buffer holds {self.size}")
        idx = rng.choice(self.size, size=int(n), replace=False)
        if self.size == self.capacity:
            idx = (idx + self._next) % self.capacity
        return self._data[idx].copy()


def push_policy_transitions(buffer: PolicyTransitionBuffer, pairs):
    buffer.push(pairs)


def sample_policy_transitions(buffer: PolicyTransitionBuffer, n, rng):
    return buffer.sample(n, rng)
