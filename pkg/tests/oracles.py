"""Independent reference computations used by the tests.

The finite-difference oracle evaluates networks in 80-bit extended precision
(``np.longdouble``). At the step ``h = 1e-6`` the round-off of a float64
loss, about ``eps * |f| / h``, would be ~1e-10 in absolute terms and would
dominate small gradient entries; extended precision pushes it to ~1e-13 so
the comparison measures the analytic gradients rather than the oracle.
"""
import numpy as np

LD = np.longdouble
H = 1e-6


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, LD(0))


def _dact(name, z):
    return LD(1) - np.tanh(z) ** 2 if name == "tanh" else (z > 0).astype(LD)


def ld_params(net):
    return [np.ascontiguousarray(p, dtype=LD) for p in net.params]


def forward(params, x, activation="tanh"):
    """Network output for parameter list ``[W0, b0, W1, b1, ...]`` (extended precision)."""
    a = np.asarray(x, dtype=LD)
    n = len(params) // 2
    for i in range(n):
        z = a @ params[2 * i].T + params[2 * i + 1]
        a = z if i == n - 1 else _act(activation, z)
    return a


def input_gradient(params, x, activation="tanh"):
    """Rows of ``d y / d x`` for a scalar-output network, by the chain of Jacobians."""
    x = np.asarray(x, dtype=LD)
    n = len(params) // 2
    out = []
    for row in x:
        a = row
        jac = np.eye(row.size, dtype=LD)
        for i in range(n):
            z = params[2 * i] @ a + params[2 * i + 1]
            jac = params[2 * i] @ jac
            if i < n - 1:
                jac = _dact(activation, z)[:, None] * jac
                a = _act(activation, z)
            else:
                a = z
        out.append(jac[0])
    return np.array(out)


def softplus(x):
    x = np.asarray(x, dtype=LD)
    return np.where(x > 0, x + np.log1p(np.exp(-x)), np.log1p(np.exp(x)))


def finite_differences(net, loss, h=H, rng=None, max_per_array=None):
    """Central differences of ``loss(params_ld)`` for every (or a sample of) parameter entry.

    Returns a list of flat float arrays aligned with ``net.params``; entries
    not sampled are NaN.
    """
    base = ld_params(net)
    out = []
    for k, p in enumerate(base):
        flat = p.reshape(-1)  # base arrays are fresh and contiguous, so this is a view
        idx = np.arange(flat.size)
        if max_per_array and flat.size > max_per_array:
            idx = np.sort(rng.choice(flat.size, max_per_array, replace=False))
        g = np.full(flat.size, np.nan)
        for i in idx:
            old = flat[i]
            flat[i] = old + LD(h)
            fp = loss(base)
            flat[i] = old - LD(h)
            fm = loss(base)
            flat[i] = old
            g[i] = float((fp - fm) / (2 * LD(h)))
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-12):
    """Largest ``|a - n| / max(|a|, |n|)`` over the sampled entries (``floor`` only guards 0/0)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float).reshape(-1)
        mask = ~np.isnan(n)
        a, n = a[mask], n[mask]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def gae_brute_force(rewards, values, dones, last_value, gamma, lam):
    """Advantages as explicit truncated sums of ``(gamma * lam)^k * delta_{t+k}`` per episode segment."""
    T = len(rewards)
    next_values = np.append(values[1:], last_value)
    deltas = [rewards[t] + gamma * next_values[t] * (1.0 - dones[t]) - values[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        total, coef = 0.0, 1.0
        for k in range(t, T):
            total += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
        adv[t] = total
    return adv
