"""Jet thrust dynamics and identification.

Two update modes share the discrete form ``T[k] = T[k-1] + g(T[k-1], u) * dt``:

* ideal: ``u`` is a thrust rate (N/s), ``g = u``;
* lag: ``u`` is a throttle in ``[u_min, 1]`` and ``g = (T_ss(u) - T) / tau(u)``,
  a first-order lag toward a polynomial steady-state map with an affine time
  constant.
"""
import glob
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import RankDeficient


@dataclass(frozen=True)
class JetParams:
    tss_coeffs: tuple            # steady-state thrust polynomial, ascending powers of u
    tau_coeffs: tuple            # (a, b): tau(u) = a + b * u
    u_min: float = 0.15
    t_max: float = 250.0

    def __post_init__(self):
        object.__setattr__(self, "tss_coeffs", tuple(float(c) for c in self.tss_coeffs))
        object.__setattr__(self, "tau_coeffs", tuple(float(c) for c in self.tau_coeffs))
        if len(self.tau_coeffs) != 2:
            raise ValueError("tau map is affine: exactly two coefficients")

    def t_ss(self, u):
        return np.polynomial.polynomial.polyval(u, self.tss_coeffs)

    def tau(self, u):
        return self.tau_coeffs[0] + self.tau_coeffs[1] * np.asarray(u)

    def clamp_throttle(self, u):
        return np.clip(u, self.u_min, 1.0)

    def check(self, n=201):
        """Raise ``ValueError`` unless the maps satisfy the model invariants on ``[u_min, 1]``."""
        u = np.linspace(self.u_min, 1.0, n)
        if np.any(self.tau(u) <= 0):
            raise ValueError("tau(u) must be positive on [u_min, 1]")
        if np.any(np.diff(self.t_ss(u)) < -1e-9):
            raise ValueError("T_ss must be non-decreasing on [u_min, 1]")
        if self.t_ss(1.0) > self.t_max + 1e-9:
            raise ValueError("T_ss(1) exceeds t_max")
        return self

    @property
    def coefficients(self):
        return np.array(self.tss_coeffs + self.tau_coeffs)

    def to_dict(self):
        return {"tss_coeffs": list(self.tss_coeffs), "tau_coeffs": list(self.tau_coeffs),
                "u_min": self.u_min, "t_max": self.t_max}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["tss_coeffs"]), tuple(d["tau_coeffs"]), float(d.get("u_min", 0.15)),
                   float(d.get("t_max", 250.0)))


def calibrate_default() -> JetParams:
    """Default engine: 40 N at 15 % throttle, 250 N at full throttle, tau from 0.35 s to 0.15 s."""
    u0, u1 = 0.15, 1.0
    # cubic through (u0, 40) and (u1, 250) with end slopes 150 and 300 N per unit throttle
    A = np.array([[1, u0, u0 ** 2, u0 ** 3],
                  [1, u1, u1 ** 2, u1 ** 3],
                  [0, 1, 2 * u0, 3 * u0 ** 2],
                  [0, 1, 2 * u1, 3 * u1 ** 2]], dtype=float)
    c = np.linalg.solve(A, [40.0, 250.0, 150.0, 300.0])
    b = (0.15 - 0.35) / (u1 - u0)
    a = 0.35 - b * u0
    return JetParams(tuple(c), (a, b)).check()


def ideal_update(t_prev, u, dt, t_max=250.0, rate_limit=250.0):
    """Rate-commanded thrust: ``clamp(T + clamp(u, +-rate_limit) * dt, 0, t_max)``."""
    rate = np.clip(np.asarray(u, dtype=np.float64), -rate_limit, rate_limit)
    return np.clip(np.asarray(t_prev, dtype=np.float64) + rate * dt, 0.0, t_max)


def lag_update(params: JetParams, t_prev, u, dt):
    """One forward-Euler step of the throttle lag; throttle is clamped up to ``u_min``."""
    u = params.clamp_throttle(np.asarray(u, dtype=np.float64))
    t_prev = np.asarray(t_prev, dtype=np.float64)
    t = t_prev + (params.t_ss(u) - t_prev) / params.tau(u) * dt
    return np.clip(t, 0.0, params.t_max)


@dataclass
class ThrottleLog:
    time: np.ndarray
    throttle: np.ndarray
    thrust: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64)
        self.throttle = np.asarray(self.throttle, dtype=np.float64)
        self.thrust = np.asarray(self.thrust, dtype=np.float64)
        if not (self.time.shape == self.throttle.shape == self.thrust.shape):
            raise ValueError("log columns must have equal length")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return self.time.size


def save_log(log: ThrottleLog, path):
    np.savetxt(path, np.column_stack([log.time, log.throttle, log.thrust]),
               header="time_s throttle thrust_n", fmt="%.17g")


def load_log(path) -> ThrottleLog:
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns (time, throttle, thrust)")
    return ThrottleLog(data[:, 0], data[:, 1], data[:, 2])


def load_logs(pattern):
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no log files match {pattern!r}")
    return [load_log(p) for p in paths]


def random_throttle_profile(n, dt, rng, hold=(0.5, 2.0), low=0.0, high=1.0):
    """Piecewise-constant throttle with uniform levels and uniform hold times."""
    u = np.empty(n)
    k = 0
    while k < n:
        steps = max(1, int(round(rng.uniform(*hold) / dt)))
        u[k:k + steps] = rng.uniform(low, high)
        k += steps
    return u


def _integrate(params: JetParams, throttle, time, t0):
    """Model thrust along a log's throttle profile starting from ``t0``."""
    u = params.clamp_throttle(throttle)
    tss = params.t_ss(u).tolist()
    tau = params.tau(u).tolist()
    dts = np.diff(time).tolist()
    t_max = params.t_max
    out = [float(t0)]
    t = float(t0)
    for k, dt in enumerate(dts):
        t = t + (tss[k] - t) / tau[k] * dt
        if t < 0.0:
            t = 0.0
        elif t > t_max:
            t = t_max
        out.append(t)
    return np.array(out)


def simulate_log(params: JetParams, throttle, dt, noise=0.0, rng=None, t0=None) -> ThrottleLog:
    """Integrate the lag model along ``throttle`` and add Gaussian noise to the thrust channel."""
    throttle = np.asarray(throttle, dtype=np.float64)
    time = dt * np.arange(throttle.size)
    if t0 is None:
        t0 = float(params.t_ss(params.clamp_throttle(throttle[0])))
    thrust = _integrate(params, throttle, time, t0)
    if noise > 0:
        if rng is None:
            raise ValueError("a noisy log needs an explicit rng")
        thrust = thrust + rng.normal(0.0, noise, size=thrust.size)
    return ThrottleLog(time, throttle, thrust)


def validate(params: JetParams, logs):
    """MAE and RMSE (N) of the model integrated along each log versus the measured thrust."""
    res = np.concatenate([_integrate(params, log.throttle, log.time, log.thrust[0]) - log.thrust
                          for log in logs])
    return {"mae_n": float(np.mean(np.abs(res))), "rmse_n": float(np.sqrt(np.mean(res ** 2)))}


def _regression(logs, u_min, order):
    rows, rhs = [], []
    for log in logs:
        u = np.clip(log.throttle[:-1], u_min, 1.0)
        rate = np.diff(log.thrust) / np.diff(log.time)
        powers = np.vander(u, order + 1, increasing=True)
        rows.append(np.column_stack([powers, -rate, -u * rate]))
        rhs.append(log.thrust[:-1])
    return np.vstack(rows), np.concatenate(rhs)


def fit(logs, order=3, u_min=0.15, t_max=250.0, refine=True):
    """Identify ``T_ss`` and ``tau`` from throttle logs.

    The lag equation multiplied through by ``tau(u)`` is linear in all
    coefficients, which gives a least-squares starting point; ``refine``
    then minimises the simulation (output) error, the maximum-likelihood
    criterion under measurement noise.

    Returns ``(params, report)`` where ``report`` holds ``mae_n``, ``rmse_n``
    and ``coefficients``.
    """
    logs = list(logs)
    if not logs or max(len(log) for log in logs) < 100:
        raise ValueError("need at least one log with >= 100 samples")
    A, y = _regression(logs, u_min, order)
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    sv = np.linalg.svd(A / scale, compute_uv=False)
    if sv[-1] < 1e-9 * sv[0]:
        raise RankDeficient("throttle profile does not excite the operating range; "
                            "use several distinct throttle levels")
    coef = np.linalg.lstsq(A / scale, y, rcond=None)[0] / scale

    def build(c):
        return JetParams(tuple(c[:order + 1]), tuple(c[order + 1:]), u_min, t_max)

    params = build(coef)
    if refine:
        def residual(c):
            p = build(c)
            return np.concatenate([_integrate(p, log.throttle, log.time, log.thrust[0]) - log.thrust
                                   for log in logs])

        sol = least_squares(residual, coef, x_scale=np.maximum(np.abs(coef), 1e-3), method="lm",
                            xtol=1e-14, ftol=1e-14, gtol=1e-14)
        if np.sum(sol.fun ** 2) <= np.sum(residual(coef) ** 2):
            params = build(sol.x)
    report = validate(params, logs)
    report["coefficients"] = params.coefficients.tolist()
    return params, report
