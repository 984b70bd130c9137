"""Fully-connected networks with exact reverse-mode gradients, Adam, and a running normalizer.

Everything is float64 numpy. Besides ordinary parameter gradients, an Mlp
with scalar output can return the gradient of ``mean ||d y / d x||^2`` with
respect to its parameters (a double backward pass), which the gradient
penalty of the discriminator needs.
"""
import numpy as np

from .errors import CheckpointMismatch, DimensionMismatch

CHECKPOINT_VERSION = 1


def orthogonal(rng, rows, cols, gain=1.0):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


_ACTIVATIONS = ("tanh", "relu")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _dact(name, a):
    """Activation derivative expressed through the activation output ``a``."""
    if name == "tanh":
        return 1.0 - a * a
    return (a > 0.0).astype(a.dtype)


def _d2act(name, a):
    if name == "tanh":
        return -2.0 * a * (1.0 - a * a)
    return np.zeros_like(a)


class Mlp:
    """Affine layers with a hidden activation and identity output.

    ``weights[i]`` has shape ``(out, in)``.
    """

    def __init__(self, sizes, activation="tanh", rng=None, output_gain=1.0, hidden_gain=1.0):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = output_gain if i == len(self.sizes) - 2 else hidden_gain
            self.weights.append(orthogonal(rng, n_out, n_in, gain))
            self.biases.append(np.zeros(n_out))

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zero_(self):
        for p in self.params:
            p[...] = 0.0
        return self

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.activation = self.activation
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise DimensionMismatch(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        return x

    def forward(self, x):
        x = self._check(x)
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else _act(self.activation, z)
        return a

    __call__ = forward

    def _forward_cache(self, x):
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else _act(self.activation, z)
            acts.append(a)
        return acts

    def backward(self, x, grad_out, cache=None):
        """Gradients of ``sum(grad_out * forward(x))``.

        Returns ``(param_grads, grad_x)`` with ``param_grads`` ordered like ``params``.
        ``cache`` may carry the activations of an earlier forward pass on the same batch.
        """
        x = self._check(x)
        single = x.ndim == 1
        X = x[None, :] if single else x
        G = np.asarray(grad_out, dtype=np.float64).reshape(X.shape[0], self.sizes[-1])
        acts = self._forward_cache(X) if cache is None or single else cache
        grads = [None] * (2 * len(self.weights))
        delta = G
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            ga = delta @ self.weights[i]
            if i > 0:
                delta = ga * _dact(self.activation, acts[i])
        return grads, (ga[0] if single else ga)

    def input_gradient(self, x):
        """``d y / d x`` per row for a scalar-output network."""
        if self.sizes[-1] != 1:
            raise DimensionMismatch("input_gradient needs a scalar-output network")
        x = self._check(np.atleast_2d(x))
        return self.backward(x, np.ones((x.shape[0], 1)))[1]

    def gradient_penalty(self, x):
        """Penalty ``P = mean_n ||d y_n / d x_n||^2`` and its parameter gradients.

        Returns ``(P, grad_x, param_grads)`` for a scalar-output network.
        """
        if self.sizes[-1] != 1:
            raise DimensionMismatch("gradient_penalty needs a scalar-output network")
        X = self._check(np.atleast_2d(x))
        n = X.shape[0]
        nl = len(self.weights)
        acts = self._forward_cache(X)
        act = self.activation
        # backward pass for dy/dx: g[i] is dy/d(acts[i]), d[i] = dy/dz_i
        g = [None] * nl
        d = [None] * nl
        g[nl - 1] = np.broadcast_to(self.weights[-1][0], (n, self.sizes[-2]))
        for i in range(nl - 1, 0, -1):
            # hidden layer i has pre-activation z_i = acts[i-1] W_{i-1}^T + b; output acts[i]
            d[i] = g[i] * _dact(act, acts[i])
            g[i - 1] = d[i] @ self.weights[i - 1]
        gx = g[0]
        penalty = float(np.sum(gx * gx) / n)

        grads = [np.zeros_like(p) for p in self.params]
        gbar = 2.0 * gx / n            # adjoint of g[0]
        zbar = [None] * nl            # direct adjoints of hidden pre-activations
        for i in range(1, nl):
            # g[i-1] = d[i] @ W_{i-1}
            grads[2 * (i - 1)] += d[i].T @ gbar
            dbar = gbar @ self.weights[i - 1].T
            # d[i] = g[i] * act'(z_i)
            zbar[i] = dbar * g[i] * _d2act(act, acts[i])
            gbar = dbar * _dact(act, acts[i])
        # g[nl-1] is W_last broadcast over the batch
        grads[2 * (nl - 1)] += gbar.sum(axis=0)[None, :]
        # propagate the pre-activation adjoints through the forward graph
        carry = np.zeros_like(acts[nl - 1])
        for i in range(nl - 1, 0, -1):
            total = zbar[i] + carry * _dact(act, acts[i])
            grads[2 * (i - 1)] += total.T @ acts[i - 1]
            grads[2 * (i - 1) + 1] += total.sum(axis=0)
            carry = total @ self.weights[i - 1]
        return penalty, gx, grads

    def state_dict(self, prefix=""):
        d = {f"{prefix}sizes": np.array(self.sizes),
             f"{prefix}activation": np.array(self.activation)}
        for i, p in enumerate(self.params):
            d[f"{prefix}p{i}"] = p
        return d

    def load_state_dict(self, d, prefix=""):
        if list(d[f"{prefix}sizes"]) != self.sizes or str(d[f"{prefix}activation"]) != self.activation:
            raise CheckpointMismatch(f"network layout mismatch for {prefix or 'net'}")
        for i, p in enumerate(self.params):
            p[...] = d[f"{prefix}p{i}"]


def forward(net: Mlp, x):
    return net.forward(x)


def backward(net: Mlp, x, upstream):
    return net.backward(x, upstream)


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise DimensionMismatch("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DimensionMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return self.params

    def state_dict(self, prefix=""):
        d = {f"{prefix}t": np.array(self.t), f"{prefix}lr": np.array(self.lr)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            d[f"{prefix}m{i}"] = m
            d[f"{prefix}v{i}"] = v
        return d

    def load_state_dict(self, d, prefix=""):
        self.t = int(d[f"{prefix}t"])
        self.lr = float(d[f"{prefix}lr"])
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            m[...] = d[f"{prefix}m{i}"]
            v[...] = d[f"{prefix}v{i}"]


def adam_step(state: Adam, params, grads):
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise DimensionMismatch("Adam state tracks different parameter arrays")
    return state.step(grads)


def clip_grad_norm(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


class RunningNormalizer:
    """Streaming per-dimension mean/variance (Chan et al. merge) with clipping."""

    def __init__(self, dim, clip=5.0):
        self.dim = int(dim)
        self.clip = float(clip)
        self.mean = np.zeros(self.dim)
        self.var = np.ones(self.dim)
        self.count = 0
        self._m2 = np.zeros(self.dim)
        self.frozen = False

    @property
    def std(self):
        return np.sqrt(self.var)

    def update(self, batch):
        if self.frozen:
            return
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if batch.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {batch.shape[-1]}")
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self._m2 = self._m2 + b_m2 + delta * delta * (self.count * n / total)
        self.count = total
        self.var = self._m2 / total

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {x.shape[-1]}")
        return np.clip((x - self.mean) / np.maximum(self.std, 1e-6), -self.clip, self.clip)

    __call__ = normalize

    def state_dict(self, prefix=""):
        return {f"{prefix}mean": self.mean, f"{prefix}var": self.var, f"{prefix}m2": self._m2,
                f"{prefix}count": np.array(self.count), f"{prefix}clip": np.array(self.clip),
                f"{prefix}frozen": np.array(self.frozen)}

    def load_state_dict(self, d, prefix=""):
        if d[f"{prefix}mean"].shape != (self.dim,):
            raise CheckpointMismatch(f"normalizer dimension mismatch for {prefix or 'normalizer'}")
        self.mean = d[f"{prefix}mean"].copy()
        self.var = d[f"{prefix}var"].copy()
        self._m2 = d[f"{prefix}m2"].copy()
        self.count = int(d[f"{prefix}count"])
        self.clip = float(d[f"{prefix}clip"])
        self.frozen = bool(d[f"{prefix}frozen"])


def save_checkpoint(path, arrays: dict):
    """Write a versioned ``.npz`` of named arrays (bit-exact round trip)."""
    payload = dict(arrays)
    payload["__version__"] = np.array(CHECKPOINT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        out = {k: data[k] for k in data.files}
    if int(out.pop("__version__", -1)) != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version")
    return out
