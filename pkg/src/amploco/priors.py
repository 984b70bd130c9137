"""Motion-prior datasets: procedural walk clips, quintic flight clips, file I/O.

A clip is a sequence of 19-entry feature frames sampled at the control rate.
Clips also carry the world base trajectory they were built from (``root``:
columns x, z, vx, vz); it is kept in memory for checks and initial-state
sampling but is not written to dataset files.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dynamics import FEATURE_DIM, FEATURE_LAYOUT, RobotModel, leg_ik, rotation
from .errors import CorruptFile, EmptyDataset, InfeasibleThrust, SchemaMismatch

__all__ = ["leg_ik", "MotionClip", "MotionDataset", "FlightBoundary", "generate_walk_clip",
           "generate_flight_clip", "sample_transitions", "save_dataset", "load_dataset",
           "default_priors", "TUCK_POSE", "CONTROL_HZ", "DATASET_VERSION"]

CONTROL_HZ = 60.0
DATASET_VERSION = 1
_MAGIC = b"AMPPRIOR"
LABELS = ("walk", "fly")
#: joint pose held during flight: hips forward, knees folded
TUCK_POSE = np.array([0.9, -1.8, 0.9, -1.8])


@dataclass
class MotionClip:
    frames: np.ndarray
    label: str = "walk"
    rate_hz: float = CONTROL_HZ
    root: np.ndarray = field(default=None, repr=False, compare=False)
    acceleration: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise SchemaMismatch(f"frames must have shape (n, {FEATURE_DIM}), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValueError("a clip needs at least 2 frames")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")
        if self.label == "walk" and np.any(self.frames[:, 17:19] != 0.0):
            raise ValueError("walk clips carry zero thrust")

    def __len__(self):
        return self.frames.shape[0]

    def pairs(self) -> np.ndarray:
        """Consecutive frame pairs, shape (n - 1, 2, 19)."""
        return np.stack([self.frames[:-1], self.frames[1:]], axis=1)


class MotionDataset:
    """Immutable collection of clips with uniform transition sampling."""

    def __init__(self, clips):
        self.clips = tuple(clips)
        if self.clips:
            self._pairs = np.concatenate([c.pairs() for c in self.clips])
        else:
            self._pairs = np.empty((0, 2, FEATURE_DIM))
        self._pairs.flags.writeable = False

    def __len__(self):
        return len(self.clips)

    @property
    def n_pairs(self):
        return self._pairs.shape[0]

    @property
    def pairs(self):
        return self._pairs

    def frames(self) -> np.ndarray:
        if not self.clips:
            return np.empty((0, FEATURE_DIM))
        return np.concatenate([c.frames for c in self.clips])

    def sample(self, batch_size, rng) -> np.ndarray:
        return sample_transitions(self, batch_size, rng)

    def __add__(self, other):
        return MotionDataset(self.clips + other.clips)


def sample_transitions(dataset: MotionDataset, batch_size: int, rng) -> np.ndarray:
    """``batch_size`` pairs drawn uniformly (with replacement) over all consecutive pairs.

    Returns an array of shape (batch_size, 2, 19): ``[:, 0]`` is chi_t and
    ``[:, 1]`` is chi_{t+1}.
    """
    if dataset.n_pairs == 0:
        raise EmptyDataset("dataset holds no transitions")
    idx = rng.integers(0, dataset.n_pairs, size=int(batch_size))
    return dataset.pairs[idx]


def _frames_from_kinematics(model, phi, v_world, omega, theta, dtheta, thrust):
    """Assemble feature frames from per-frame base and joint quantities."""
    n = theta.shape[0]
    out = np.zeros((n, FEATURE_DIM))
    c, s = np.cos(phi), np.sin(phi)
    out[:, 0] = c
    out[:, 1] = s
    out[:, 2] = c * v_world[:, 0] + s * v_world[:, 1]
    out[:, 3] = -s * v_world[:, 0] + c * v_world[:, 1]
    out[:, 4] = omega
    out[:, 5:9] = theta
    out[:, 9:13] = dtheta
    for leg in range(2):
        h = theta[:, 2 * leg]
        hk = h + theta[:, 2 * leg + 1]
        out[:, 13 + 2 * leg] = model.hip_offsets[2 * leg] + model.l1 * np.sin(h) + model.l2 * np.sin(hk)
        out[:, 14 + 2 * leg] = model.hip_offsets[2 * leg + 1] - model.l1 * np.cos(h) - model.l2 * np.cos(hk)
    out[:, 17:19] = thrust
    return out


def walk_foot_positions(t, stride, cycle, duty, swing_height, phase):
    """World foot trajectory of one leg whose base moves at ``stride / cycle``.

    During stance the foot rests at the base position reached at mid-stance,
    so it sweeps from ``+duty * stride / 2`` to ``-duty * stride / 2`` under
    the hip. During swing it follows a cycloid to the next foothold.
    """
    v = stride / cycle
    u = t / cycle + phase
    c = np.floor(u)
    s = u - c
    anchor = v * (c - phase + duty / 2.0) * cycle
    x = anchor.copy()
    z = np.zeros_like(t)
    swing = s >= duty
    sig = (s[swing] - duty) / (1.0 - duty)
    x[swing] = anchor[swing] + stride * (sig - np.sin(2 * np.pi * sig) / (2 * np.pi))
    z[swing] = swing_height * 0.5 * (1.0 - np.cos(2 * np.pi * sig))
    return np.column_stack([x, z]), ~swing


def generate_walk_clip(model: RobotModel, stride=0.4, cycle=1.0, duty=0.6, base_height=0.6,
                       n_cycles=1, rate_hz=CONTROL_HZ, swing_ratio=0.2, phase=0.0) -> MotionClip:
    """Procedural two-leg walk on flat ground with thrusts at zero.

    Legs are half a cycle apart. Joint angles come from closed-form IK of the
    foot targets; joint velocities are forward differences at the frame rate.
    Raises ``Unreachable`` if a foot target leaves the leg workspace.
    """
    if not 0.5 < duty < 1.0:
        raise ValueError("duty factor must be in (0.5, 1)")
    if cycle <= 0 or n_cycles <= 0 or stride < 0:
        raise ValueError("cycle and n_cycles must be positive, stride non-negative")
    n = int(round(n_cycles * cycle * rate_hz))
    n = max(n, 2)
    t = np.arange(n + 1) / rate_hz
    v = stride / cycle
    base = np.column_stack([v * t, np.full_like(t, base_height)])
    theta = np.empty((n + 1, 4))
    for leg in range(2):
        feet, _ = walk_foot_positions(t, stride, cycle, duty, swing_ratio * stride, phase + 0.5 * leg)
        rel = feet - base - model.hip(leg)
        for k in range(n + 1):
            theta[k, 2 * leg:2 * leg + 2] = leg_ik(rel[k], model.l1, model.l2)
    dtheta = np.diff(theta, axis=0) * rate_hz
    vel = np.diff(base, axis=0) * rate_hz
    frames = _frames_from_kinematics(model, np.zeros(n), vel, np.zeros(n), theta[:-1], dtheta,
                                     np.zeros((n, 2)))
    root = np.column_stack([base[:-1], vel])
    return MotionClip(frames, "walk", rate_hz, root)


def stance_foot_drift(model: RobotModel, clip: MotionClip, duty=0.6, cycle=1.0, phase=0.0):
    """Largest world displacement of a foot within any single stance phase of a walk clip."""
    t = np.arange(len(clip)) / clip.rate_hz
    worst = 0.0
    for leg in range(2):
        feet = clip.frames[:, 13 + 2 * leg:15 + 2 * leg] + clip.root[:, :2]
        u = t / cycle + phase + 0.5 * leg
        cyc = np.floor(u)
        stance = (u - cyc) < duty
        for c in np.unique(cyc[stance]):
            sel = stance & (cyc == c)
            pts = feet[sel]
            worst = max(worst, float(np.max(np.linalg.norm(pts - pts[0], axis=1))))
    return worst


@dataclass
class FlightBoundary:
    """Base position, velocity and acceleration at one end of a flight clip (world frame)."""

    position: tuple
    velocity: tuple = (0.0, 0.0)
    acceleration: tuple = (0.0, 0.0)


def quintic_coefficients(p0, v0, a0, p1, v1, a1, T):
    """Ascending coefficients of the quintic meeting position/velocity/acceleration at 0 and T."""
    A = np.array([[T ** 3, T ** 4, T ** 5],
                  [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
                  [6 * T, 12 * T ** 2, 20 * T ** 3]])
    rhs = np.array([p1 - p0 - v0 * T - 0.5 * a0 * T ** 2,
                    v1 - v0 - a0 * T,
                    a1 - a0])
    c345 = np.linalg.solve(A, rhs)
    return np.concatenate([[p0, v0, 0.5 * a0], c345])


def _smoothstep(r):
    r = np.clip(r, 0.0, 1.0)
    return r ** 3 * (10 - 15 * r + 6 * r * r), 30 * r * r * (1 - r) ** 2


def generate_flight_clip(model: RobotModel, start: FlightBoundary, goal: FlightBoundary,
                         duration: float, rate_hz=CONTROL_HZ, start_pose=None,
                         tuck_pose=TUCK_POSE, blend=0.5) -> MotionClip:
    """Minimum-jerk base flight with inverse-dynamics pitch and thrust.

    ``duration`` is rounded to a whole number of frames so the last frame
    lands exactly on the goal. The pitch tilts the body-up axis along the
    required force ``m * (a + g)``; that force is split evenly over the two
    jets. Joints blend from ``start_pose`` (default: stance) to the tucked
    pose over ``blend`` seconds.
    Raises ``InfeasibleThrust`` if any frame needs more than ``t_max`` per jet
    or a downward force.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = max(2, int(round(duration * rate_hz)))
    T = n / rate_hz
    t = np.arange(n + 1) / rate_hz
    pos, vel, acc, jerk = (np.empty((n + 1, 2)) for _ in range(4))
    P = np.polynomial.polynomial
    for ax in range(2):
        c = quintic_coefficients(start.position[ax], start.velocity[ax], start.acceleration[ax],
                                 goal.position[ax], goal.velocity[ax], goal.acceleration[ax], T)
        pos[:, ax] = P.polyval(t, c)
        vel[:, ax] = P.polyval(t, P.polyder(c))
        acc[:, ax] = P.polyval(t, P.polyder(c, 2))
        jerk[:, ax] = P.polyval(t, P.polyder(c, 3))
    fx = model.mass * acc[:, 0]
    fz = model.mass * (acc[:, 1] + model.gravity)
    if np.any(fz <= 0):
        raise InfeasibleThrust("trajectory requires a downward net force")
    total = np.hypot(fx, fz)
    if np.any(total > 2 * model.t_max + 1e-9):
        raise InfeasibleThrust(f"peak thrust {total.max():.1f} N exceeds {2 * model.t_max:.1f} N")
    phi = np.arctan2(-fx, fz)
    # d/dt atan2(-ax, az + g)
    omega = (-(acc[:, 1] + model.gravity) * jerk[:, 0] + acc[:, 0] * jerk[:, 1]) / (
        acc[:, 0] ** 2 + (acc[:, 1] + model.gravity) ** 2)
    per_jet = np.clip(total / 2.0, 0.0, model.t_max)
    thrust = np.column_stack([per_jet, per_jet])

    pose0 = model.stance_pose() if start_pose is None else np.asarray(start_pose, dtype=float)
    tuck = np.asarray(tuck_pose, dtype=float)
    tb = min(blend, T / 2.0)
    sm, dsm = _smoothstep(t / tb)
    theta = pose0 + np.outer(sm, tuck - pose0)
    dtheta = np.outer(dsm / tb, tuck - pose0)
    frames = _frames_from_kinematics(model, phi, vel, omega, theta, dtheta, thrust)
    return MotionClip(frames, "fly", rate_hz, np.column_stack([pos, vel]), acc)


def random_flight_clip(model: RobotModel, rng, altitude=(0.6, 4.0), forward=(0.5, 4.0),
                       duration=(2.0, 5.0), max_tries=100) -> MotionClip:
    """Rest-to-rest flight between random altitudes, resampled until thrust-feasible."""
    for _ in range(max_tries):
        z0, z1 = rng.uniform(*altitude, size=2)
        dx = rng.uniform(*forward)
        T = rng.uniform(*duration)
        try:
            return generate_flight_clip(model, FlightBoundary((0.0, z0)), FlightBoundary((dx, z1)), T)
        except InfeasibleThrust:
            continue
    raise InfeasibleThrust("no feasible flight found; widen the duration range")


def default_priors(model: RobotModel, n_walk=20, n_fly=20, seed=0):
    """Walk and fly datasets: ``n_walk`` one-cycle walks, ``n_fly`` random flights.

    Walk clips vary stride by +-10 % around 0.4 m and the starting phase.
    """
    rng = np.random.default_rng(seed)
    walk = []
    for _ in range(n_walk):
        stride = 0.4 * rng.uniform(0.9, 1.1)
        walk.append(generate_walk_clip(model, stride=stride, phase=rng.uniform(0.0, 1.0)))
    fly = [random_flight_clip(model, rng) for _ in range(n_fly)]
    return MotionDataset(walk), MotionDataset(fly)


def _header(feature_dim, n_clips):
    return {"version": DATASET_VERSION, "feature_dim": int(feature_dim), "rate_hz": CONTROL_HZ,
            "layout": FEATURE_LAYOUT, "n_clips": int(n_clips)}


def save_dataset(dataset, path):
    """Write clips to ``path``.

    Layout: magic, u32 header length, JSON header, then per clip a u32 label
    length, the label, a u32 frame count and ``count * feature_dim``
    little-endian float64 values.
    """
    clips = dataset.clips if isinstance(dataset, MotionDataset) else tuple(dataset)
    head = json.dumps(_header(FEATURE_DIM, len(clips)), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for clip in clips:
            label = clip.label.encode()
            fh.write(struct.pack("<I", len(label)))
            fh.write(label)
            fh.write(struct.pack("<I", len(clip)))
            fh.write(clip.frames.astype("<f8").tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptFile(f"{self.path}: truncated dataset file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_dataset(path) -> MotionDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(len(_MAGIC)) != _MAGIC:
        raise CorruptFile(f"{path}: not a motion dataset file")
    try:
        head = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    if head.get("version") != DATASET_VERSION:
        raise SchemaMismatch(f"{path}: dataset version {head.get('version')}, expected {DATASET_VERSION}")
    if head.get("feature_dim") != FEATURE_DIM or head.get("layout") != FEATURE_LAYOUT:
        raise SchemaMismatch(f"{path}: feature dimension {head.get('feature_dim')}, expected {FEATURE_DIM}")
    if head.get("rate_hz") != CONTROL_HZ:
        raise SchemaMismatch(f"{path}: frame rate {head.get('rate_hz')}, expected {CONTROL_HZ}")
    n_clips = head.get("n_clips", 0)
    if n_clips == 0:
        raise EmptyDataset(f"{path}: no clips")
    clips = []
    for _ in range(n_clips):
        label = r.take(r.u32()).decode()
        count = r.u32()
        frames = np.frombuffer(r.take(8 * count * FEATURE_DIM), dtype="<f8")
        clips.append(MotionClip(frames.reshape(count, FEATURE_DIM).astype(np.float64), label))
    if r.pos != len(data):
        raise CorruptFile(f"{path}: trailing bytes after last clip")
    return MotionDataset(clips)


def base_height_for_frame(model: RobotModel, frame, ground=0.0):
    """Base height placing the lowest foot of ``frame`` on ``ground``."""
    R = rotation(np.arctan2(frame[1], frame[0]))
    feet = frame[13:17].reshape(2, 2) @ R.T
    return ground - float(np.min(feet[:, 1]))

