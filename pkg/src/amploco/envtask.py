"""Waypoint-reaching MDP for the walking/flying robot, batched over many environments.

Observation: ``[chi (19) | terrain scan (L) | target offset in the base frame (2)]``.
Action: ``[theta_d (4) | u (2)]`` where ``u`` is a thrust rate (ideal jets) or a
throttle (lagged jets). One control step runs at 60 Hz and advances the
physics by four 240 Hz substeps.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _layout as L
from . import backend, jetdyn
from .dynamics import FEATURE_DIM, RobotModel, RobotState, features_batch
from .errors import DimensionMismatch, InvalidSpec, SteppedDoneEnv
from .terrain import TerrainSpec, generate, height_at, pack, scan_offsets

SCHEDULES = ("ground-only", "air-only", "alternating", "terrain-driven")
REASONS = ("none", "fell", "timeout")
ACTION_DIM = 6


@dataclass(frozen=True)
class RewardWeights:
    w_c: float = 0.1
    w_v: float = 0.7
    w_f: float = 0.2
    w_T: float = 0.11
    c1: float = 0.5
    c2: float = 0.5
    w_goal: float = 0.5
    w_style: float = 0.5
    w_T_lag: float = 1e-8       # thrust weight used with the lagged jet model
    facing: str = "min"         # "min": min(0, dot); "max": max(0, dot)

    def __post_init__(self):
        for name in ("w_c", "w_v", "w_f", "w_T", "w_goal", "w_style", "w_T_lag"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"reward weight {name} must be non-negative")
        if self.c1 <= 0 or self.c2 <= 0:
            raise InvalidSpec("c1 and c2 must be positive")
        if self.facing not in ("min", "max"):
            raise InvalidSpec("facing must be 'min' or 'max'")

    def for_jet_mode(self, mode):
        return replace(self, w_T=self.w_T_lag) if mode == "lag" else self


@dataclass
class WaypointTask:
    """Waypoint protocol settings plus the current target."""

    v_d: float = 0.8
    spawn_min: float = 0.7
    spawn_max: float = 2.0
    hit_radius: float = 0.3
    air_altitude: tuple = (2.0, 4.0)
    schedule: str = "ground-only"
    ground_clearance: float = 0.6      # ground targets sit at nominal base height
    target: np.ndarray = field(default_factory=lambda: np.zeros(2))
    kind: str = "ground"

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if not 0 < self.spawn_min <= self.spawn_max:
            raise InvalidSpec("spawn range must be positive and ordered")
        if self.hit_radius <= 0:
            raise InvalidSpec("hit radius must be positive")
        if self.schedule not in SCHEDULES:
            raise InvalidSpec(f"schedule must be one of {SCHEDULES}")
        if not 0 <= self.air_altitude[0] <= self.air_altitude[1]:
            raise InvalidSpec("air altitude range must be non-negative and ordered")

    def kind_for(self, index, field_, x_ahead, ground_here):
        if self.schedule == "ground-only":
            return "ground"
        if self.schedule == "air-only":
            return "air"
        if self.schedule == "alternating":
            return "ground" if index % 2 == 0 else "air"
        return "air" if height_at(field_, x_ahead) < ground_here - 0.5 else "ground"

    def spawn(self, rng, base_xz, field_, index=0):
        """Next target ahead of ``base_xz`` at a distance drawn from ``U(spawn_min, spawn_max)``.

        Returns ``(target, kind, distance)``. Ground targets sit at nominal base
        height above the terrain; their horizontal offset is chosen so the
        straight-line distance equals the draw when the height difference allows.
        """
        d = rng.uniform(self.spawn_min, self.spawn_max)
        x, z = float(base_xz[0]), float(base_xz[1])
        ground_here = float(height_at(field_, x))
        kind = self.kind_for(index, field_, x + d, ground_here)
        if kind == "air":
            alt = rng.uniform(*self.air_altitude)
            target = np.array([x + d, float(height_at(field_, x + d)) + alt])
        else:
            dz = float(height_at(field_, x + d)) + self.ground_clearance - z
            dx = np.sqrt(d * d - dz * dz) if d * d > dz * dz else d
            target = np.array([x + dx, float(height_at(field_, x + dx)) + self.ground_clearance])
        return target, kind, d


@dataclass
class EnvConfig:
    model: RobotModel = field(default_factory=RobotModel)
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    scan_cells: int = 1
    scan_cell: float = 0.3
    task: WaypointTask = field(default_factory=WaypointTask)
    weights: RewardWeights = field(default_factory=RewardWeights)
    jet_mode: str = "ideal"
    jet_params: jetdyn.JetParams = None
    rate_limit: float = 250.0
    control_hz: float = 60.0
    substeps: int = 4
    max_steps: int = 600
    min_clearance: float = 0.4
    p_rsi: float = 0.0
    rsi_height: tuple = (1.0, 3.0)     # base height above terrain for flight-frame starts

    def __post_init__(self):
        if self.jet_mode not in ("ideal", "lag"):
            raise InvalidSpec("jet mode must be 'ideal' or 'lag'")
        if self.jet_mode == "lag" and self.jet_params is None:
            self.jet_params = jetdyn.calibrate_default()
        if not 0 <= self.p_rsi <= 1:
            raise InvalidSpec("p_rsi must be in [0, 1]")
        if self.scan_cells < 1 or self.max_steps < 1 or self.substeps < 1:
            raise InvalidSpec("scan_cells, max_steps and substeps must be >= 1")

    @property
    def dt(self):
        return 1.0 / self.control_hz

    @property
    def obs_dim(self):
        return FEATURE_DIM + self.scan_cells + 2

    def action_bounds(self):
        """Physical (low, high) bounds of the 6 action entries."""
        m = self.model
        if self.jet_mode == "ideal":
            lo_u, hi_u = -self.rate_limit, self.rate_limit
        else:
            lo_u, hi_u = self.jet_params.u_min, 1.0
        low = np.concatenate([m.joint_lower, [lo_u, lo_u]])
        high = np.concatenate([m.joint_upper, [hi_u, hi_u]])
        return low, high


def observe(model: RobotModel, S, fields_, targets, scan_cells=1, scan_cell=0.3):
    """Batched observations for packed states ``S`` (N, 16) and targets (N, 2)."""
    S = np.atleast_2d(S)
    chi = features_batch(model, S)
    offs = scan_offsets(scan_cells, scan_cell)
    scan = np.empty((S.shape[0], scan_cells))
    for i, f in enumerate(fields_):
        scan[i] = height_at(f, S[i, L.X] + offs) - S[i, L.Z]
    c, s = np.cos(S[:, L.PHI]), np.sin(S[:, L.PHI])
    dx = targets[:, 0] - S[:, L.X]
    dz = targets[:, 1] - S[:, L.Z]
    task = np.column_stack([c * dx + s * dz, -s * dx + c * dz])
    return np.concatenate([chi, scan, task], axis=1)


def assemble_observation(model: RobotModel, state: RobotState, terrain, target, scan_cells=1,
                         scan_cell=0.3):
    target = np.asarray(getattr(target, "target", target), dtype=np.float64)
    return observe(model, state.to_array()[None], [terrain], target[None], scan_cells, scan_cell)[0]


def reward_terms(pos, phi, thrust, target, prev_distance, v_d, weights: RewardWeights, dt, t_max):
    """Vectorised task-reward terms; returns ``(terms, distance)``."""
    delta = target - pos
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    r_c = np.exp(-weights.c1 * dist * dist)
    approach = (prev_distance - dist) / dt
    r_v = np.exp(-weights.c2 * (v_d - approach) ** 2)
    f_x = np.sign(delta[..., 0])
    dot = f_x * np.cos(phi)
    r_f = np.minimum(0.0, dot) if weights.facing == "min" else np.maximum(0.0, dot)
    r_T = -np.sum((thrust / t_max) ** 2, axis=-1)
    return {"r_c": r_c, "r_v": r_v, "r_f": r_f, "r_T": r_T}, dist


def task_rewards(state: RobotState, prev_distance, task: WaypointTask, weights: RewardWeights, dt,
                 t_max=250.0):
    """Task-reward terms ``{r_c, r_v, r_f, r_T}`` for one robot."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    terms, _ = reward_terms(np.array([state.x, state.z]), state.phi, state.thrust, task.target,
                            prev_distance, task.v_d, weights, dt, t_max)
    return {k: float(v) for k, v in terms.items()}


def total_task_reward(terms, weights: RewardWeights):
    return (weights.w_c * terms["r_c"] + weights.w_v * terms["r_v"] + weights.w_f * terms["r_f"]
            + weights.w_T * terms["r_T"])


@dataclass
class StepResult:
    observation: np.ndarray
    rewards: dict
    done: object
    reason: object
    info: dict


def _state_from_frame(model, frame, x, ground, label, rng, rsi_height):
    phi = float(np.arctan2(frame[1], frame[0]))
    c, s = np.cos(phi), np.sin(phi)
    vbx, vbz = frame[2], frame[3]
    st = RobotState(x=x, phi=phi, vx=c * vbx - s * vbz, vz=s * vbx + c * vbz, omega=frame[4],
                    theta=frame[5:9], dtheta=frame[9:13], thrust=np.clip(frame[17:19], 0, model.t_max))
    if label == "fly":
        st.z = ground + rng.uniform(*rsi_height)
    else:
        feet_z = s * frame[[13, 15]] + c * frame[[14, 16]]
        st.z = ground - float(np.min(feet_z))
    return st


class VecEnv:
    """``n`` independent environments advanced together.

    Each environment owns a random stream spawned from ``seed``; resets,
    waypoint spawns and reference-state draws use only that stream, so
    results do not depend on how work is split across threads.

    Parameters
    ----------
    config : EnvConfig
    n : int
        Number of environments.
    seed : int
        Master seed for the per-environment streams.
    rsi_frames : sequence of (frame, label), optional
        Prior frames for reference-state initialisation.
    auto_reset : bool
        Reset finished environments inside ``step``.
    """

    def __init__(self, config: EnvConfig, n=1, seed=0, rsi_frames=None, auto_reset=True):
        self.config = config
        self.n = int(n)
        self.auto_reset = auto_reset
        self.model = config.model
        self._params = config.model.pack()
        self.fields = [generate(replace(config.terrain, seed=config.terrain.seed + i))
                       for i in range(self.n)]
        self._packed = pack(self.fields)
        self.rsi_frames = list(rsi_frames or [])
        self.weights = config.weights.for_jet_mode(config.jet_mode)
        self.S = np.zeros((self.n, L.STATE_DIM))
        self.targets = np.zeros((self.n, 2))
        self.kinds = ["ground"] * self.n
        self.prev_dist = np.zeros(self.n)
        self.steps = np.zeros(self.n, dtype=np.int64)
        self.hits = np.zeros(self.n, dtype=np.int64)
        self.wp_index = np.zeros(self.n, dtype=np.int64)
        self.done = np.zeros(self.n, dtype=bool)
        self.contacts = np.zeros((self.n, 2, 3))
        self._acc = {}
        self.seed(seed)
        self._pool = None

    # -- bookkeeping -----------------------------------------------------
    def seed(self, seed):
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(self.n)]

    def _reset_one(self, i):
        cfg = self.config
        rng = self.rngs[i]
        ground = float(height_at(self.fields[i], 0.0))
        if self.rsi_frames and rng.uniform() < cfg.p_rsi:
            frame, label = self.rsi_frames[rng.integers(len(self.rsi_frames))]
            st = _state_from_frame(self.model, frame, 0.0, ground, label, rng, cfg.rsi_height)
        else:
            st = RobotState(x=0.0, z=ground + self.model.stance_height, theta=self.model.stance_pose())
        self.S[i] = st.to_array()
        self.steps[i] = 0
        self.hits[i] = 0
        self.wp_index[i] = 0
        self.done[i] = False
        self._spawn(i)
        for k in self._acc:
            self._acc[k][i] = 0.0

    def _spawn(self, i):
        target, kind, _ = self.config.task.spawn(self.rngs[i], self.S[i, :2], self.fields[i],
                                                 int(self.wp_index[i]))
        self.targets[i] = target
        self.kinds[i] = kind
        self.wp_index[i] += 1
        self.prev_dist[i] = float(np.linalg.norm(target - self.S[i, :2]))

    def reset(self, seed=None):
        if seed is not None:
            self.seed(seed)
        self._acc = {k: np.zeros(self.n) for k in
                     ("task", "style", "total", "thrust", "height")}
        for i in range(self.n):
            self._reset_one(i)
        return self.observe()

    def observe(self, idx=None):
        idx = np.arange(self.n) if idx is None else np.asarray(idx)
        return observe(self.model, self.S[idx], [self.fields[i] for i in idx], self.targets[idx],
                       self.config.scan_cells, self.config.scan_cell)

    def features(self):
        return features_batch(self.model, self.S)

    def clearance(self):
        ground = np.array([height_at(f, x) for f, x in zip(self.fields, self.S[:, L.X])])
        return self.S[:, L.Z] - ground

    # -- stepping --------------------------------------------------------
    def _physics(self, theta_d, workers):
        cfg = self.config
        kernel = backend.kernel
        dt = 1.0 / (cfg.control_hz * cfg.substeps)
        if workers <= 1 or self.n < 2:
            kernel.integrate(self._params, self.S, theta_d, self._packed, dt, cfg.substeps,
                             self.contacts)
            return
        bounds = np.linspace(0, self.n, min(workers, self.n) + 1).astype(int)

        def run(a, b):
            sub = tuple(arr[a:b] for arr in self._packed)
            kernel.integrate(self._params, self.S[a:b], theta_d[a:b], sub, dt, cfg.substeps,
                             self.contacts[a:b])

        if self._pool is None or self._pool._max_workers != workers:
            self._pool = ThreadPoolExecutor(max_workers=workers)
        list(self._pool.map(run, bounds[:-1], bounds[1:]))

    def step(self, actions, style_fn=None, workers=1):
        """Advance every environment by one control step.

        ``style_fn(chi_t, chi_next) -> (N,)`` supplies the style reward of each
        transition; without it the style reward is zero. Finished environments
        are reset afterwards when ``auto_reset`` is set; their pre-reset
        observation is returned in ``info["terminal_observation"]``.
        """
        cfg = self.config
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n, ACTION_DIM):
            raise DimensionMismatch(f"actions must have shape ({self.n}, {ACTION_DIM})")
        if np.any(self.done):
            raise SteppedDoneEnv("an environment is done; call reset first")
        if not self._acc:
            self._acc = {k: np.zeros(self.n) for k in ("task", "style", "total", "thrust", "height")}
        chi_prev = self.features()
        thrust = self.S[:, L.THRUST:L.THRUST + 2]
        if cfg.jet_mode == "ideal":
            new_t = jetdyn.ideal_update(thrust, actions[:, 4:6], cfg.dt, self.model.t_max, cfg.rate_limit)
        else:
            new_t = jetdyn.lag_update(cfg.jet_params, thrust, actions[:, 4:6], cfg.dt)
        self.S[:, L.THRUST:L.THRUST + 2] = new_t
        theta_d = np.ascontiguousarray(np.clip(actions[:, :4], self.model.joint_lower,
                                               self.model.joint_upper))
        with np.errstate(all="ignore"):
            self._physics(theta_d, workers)
        finite = np.all(np.isfinite(self.S), axis=1)
        if not np.all(finite):
            # a diverged robot ends its episode as a fall; keep arrays finite
            self.S[~finite] = np.nan_to_num(self.S[~finite], nan=0.0, posinf=0.0, neginf=0.0)
        chi_next = self.features()

        terms, dist = reward_terms(self.S[:, :2], self.S[:, L.PHI], self.S[:, L.THRUST:L.THRUST + 2],
                                   self.targets, self.prev_dist, cfg.task.v_d, self.weights, cfg.dt,
                                   self.model.t_max)
        task = total_task_reward(terms, self.weights)
        style = np.zeros(self.n) if style_fn is None else np.asarray(style_fn(chi_prev, chi_next),
                                                                       dtype=np.float64)
        total = self.weights.w_goal * task + self.weights.w_style * style
        rewards = dict(terms, task=task, style=style, total=total)

        hit = dist < cfg.task.hit_radius
        self.prev_dist = dist
        for i in np.flatnonzero(hit):
            self.hits[i] += 1
            self._spawn(i)
        self.steps += 1
        clear = self.clearance()
        fell = (clear < cfg.min_clearance) | ~finite
        timeout = ~fell & (self.steps >= cfg.max_steps)
        self.done = fell | timeout
        reason = np.where(fell, "fell", np.where(timeout, "timeout", "none"))

        usage = np.mean(self.S[:, L.THRUST:L.THRUST + 2], axis=1) / self.model.t_max
        acc = self._acc
        acc["task"] += task
        acc["style"] += style
        acc["total"] += total
        acc["thrust"] += usage
        acc["height"] += clear
        info = {"waypoints_hit": self.hits.copy(), "thrust_usage": usage, "hit": hit,
                "chi_prev": chi_prev, "chi_next": chi_next, "episodes": []}
        obs = self.observe()
        info["terminal_observation"] = obs.copy()
        for i in np.flatnonzero(self.done):
            length = int(self.steps[i])
            info["episodes"].append({
                "env": int(i), "length": length, "reason": str(reason[i]),
                "task_return": float(acc["task"][i]), "style_return": float(acc["style"][i]),
                "total_return": float(acc["total"][i]), "waypoints": int(self.hits[i]),
                "mean_thrust": float(acc["thrust"][i] / length),
                "mean_height": float(acc["height"][i] / length),
                "duration_fraction": length / cfg.max_steps})
        done = self.done.copy()
        if self.auto_reset and np.any(done):
            idx = np.flatnonzero(done)
            for i in idx:
                self._reset_one(i)
            obs[idx] = self.observe(idx)
        return StepResult(obs, rewards, done, reason, info)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def vector_step(envs: VecEnv, actions, style_fn=None, workers=1) -> StepResult:
    return envs.step(actions, style_fn=style_fn, workers=workers)


class Env:
    """A single environment; stepping after termination raises ``SteppedDoneEnv``."""

    def __init__(self, config: EnvConfig = None, seed=0, rsi_frames=None):
        self.config = config or EnvConfig()
        self._vec = VecEnv(self.config, 1, seed, rsi_frames, auto_reset=False)
        self._vec.reset()

    @property
    def state(self) -> RobotState:
        return RobotState.from_array(self._vec.S[0])

    @state.setter
    def state(self, st: RobotState):
        self._vec.S[0] = st.to_array()
        self._vec.prev_dist[0] = float(np.linalg.norm(self._vec.targets[0] - self._vec.S[0, :2]))

    @property
    def target(self):
        return self._vec.targets[0].copy()

    @target.setter
    def target(self, xz):
        self._vec.targets[0] = xz
        self._vec.prev_dist[0] = float(np.linalg.norm(self._vec.targets[0] - self._vec.S[0, :2]))

    @property
    def terrain(self):
        return self._vec.fields[0]

    @property
    def done(self):
        return bool(self._vec.done[0])

    @property
    def steps(self):
        return int(self._vec.steps[0])

    def reset(self, seed=None):
        return self._vec.reset(seed)[0]

    def observe(self):
        return self._vec.observe()[0]

    def step(self, action, style_fn=None) -> StepResult:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACTION_DIM,):
            raise DimensionMismatch(f"action must have {ACTION_DIM} entries")
        res = self._vec.step(action[None], style_fn)
        rewards = {k: float(v[0]) for k, v in res.rewards.items()}
        info = {"waypoints_hit": int(res.info["waypoints_hit"][0]),
                "thrust_usage": float(res.info["thrust_usage"][0]),
                "episodes": res.info["episodes"]}
        return StepResult(res.observation[0], rewards, bool(res.done[0]), str(res.reason[0]), info)


def step(env: Env, action, style_fn=None) -> StepResult:
    return env.step(action, style_fn)


def reset(env: Env, seed=None):
    return env.reset(seed)
