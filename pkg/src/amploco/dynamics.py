"""Planar floating-base robot: base rigid body, two massless 2-link legs, two body jets.

Conventions: world x forward, z up; pitch ``phi`` counter-clockwise; body-up
axis is ``R(phi) @ (0, 1)``. Joint order is ``[hip0, knee0, hip1, knee1]``.
A hip angle of zero points the leg straight down the body ``-z`` axis and a
positive hip angle swings the foot forward; knees bend backward (negative).
"""
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np
import yaml

from . import _layout as L
from . import backend
from .errors import NonFiniteState, Unreachable


def _arr(*values):
    return field(default_factory=lambda: np.array(values, dtype=np.float64))


@dataclass
class RobotModel:
    """Physical parameters of the planar robot (SI units).

    Loaded from / saved to a flat YAML mapping whose keys are these field
    names; list-valued entries give one value per leg, jet or joint.
    """

    mass: float = 44.0
    inertia: float = 4.0
    gravity: float = 9.81
    l1: float = 0.3
    l2: float = 0.3
    hip_offsets: np.ndarray = _arr(0.0, -0.1, 0.0, -0.1)      # (x, z) per leg, body frame
    jet_offsets: np.ndarray = _arr(-0.15, 0.1, 0.15, 0.1)     # (x, z) per jet, body frame
    t_max: float = 250.0
    joint_lower: np.ndarray = _arr(-1.6, -2.6, -1.6, -2.6)
    joint_upper: np.ndarray = _arr(1.6, 0.0, 1.6, 0.0)
    kp: np.ndarray = _arr(150.0, 150.0, 150.0, 150.0)
    kd: np.ndarray = _arr(5.0, 5.0, 5.0, 5.0)
    torque_limit: float = 100.0
    joint_inertia: float = 0.05
    joint_damping: float = 0.1
    contact_stiffness: float = 1e4
    contact_damping: float = 200.0
    tangential_damping: float = 300.0
    friction: float = 0.8
    stance_height: float = 0.6
    stance_foot_x: float = 0.12

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple, np.ndarray)):
                setattr(self, f.name, np.asarray(v, dtype=np.float64).copy())
            else:
                setattr(self, f.name, float(v))
        self.validate()

    def validate(self):
        if not (self.mass > 0 and self.inertia > 0 and self.l1 > 0 and self.l2 > 0 and self.t_max > 0):
            raise ValueError("mass, inertia, link lengths and t_max must be positive")
        if np.any(self.kp < 0) or np.any(self.kd < 0) or self.friction < 0:
            raise ValueError("gains and friction must be non-negative")
        if np.any(self.joint_lower >= self.joint_upper):
            raise ValueError("joint lower limits must be below upper limits")
        for name, size in (("hip_offsets", 4), ("jet_offsets", 4), ("joint_lower", 4),
                           ("joint_upper", 4), ("kp", 4), ("kd", 4)):
            if getattr(self, name).shape != (size,):
                raise ValueError(f"{name} needs {size} entries")

    def pack(self) -> np.ndarray:
        p = np.zeros(L.PARAM_DIM)
        p[L.P_MASS] = self.mass
        p[L.P_INERTIA] = self.inertia
        p[L.P_G] = self.gravity
        p[L.P_L1] = self.l1
        p[L.P_L2] = self.l2
        p[L.P_HIP:L.P_HIP + 4] = self.hip_offsets
        p[L.P_JET:L.P_JET + 4] = self.jet_offsets
        p[L.P_KP:L.P_KP + 4] = self.kp
        p[L.P_KD:L.P_KD + 4] = self.kd
        p[L.P_TAU_LIM] = self.torque_limit
        p[L.P_IJOINT] = self.joint_inertia
        p[L.P_JDAMP] = self.joint_damping
        p[L.P_LO:L.P_LO + 4] = self.joint_lower
        p[L.P_HI:L.P_HI + 4] = self.joint_upper
        p[L.P_KN] = self.contact_stiffness
        p[L.P_CN] = self.contact_damping
        p[L.P_CT] = self.tangential_damping
        p[L.P_MU] = self.friction
        return p

    def hip(self, leg):
        return self.hip_offsets[2 * leg:2 * leg + 2]

    def stance_pose(self) -> np.ndarray:
        """Joint angles putting the feet at ``(+-stance_foot_x, -stance_height)`` in the base frame.

        Leg 0 is the front foot, leg 1 the rear one.
        """
        theta = np.empty(4)
        for leg, sign in ((0, 1.0), (1, -1.0)):
            target = np.array([sign * self.stance_foot_x, -self.stance_height])
            theta[2 * leg:2 * leg + 2] = leg_ik(target - self.hip(leg), self.l1, self.l2)
        return theta

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def load_model(path) -> RobotModel:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    unknown = set(data) - {f.name for f in fields(RobotModel)}
    if unknown:
        raise ValueError(f"unknown robot model keys: {sorted(unknown)}")
    return RobotModel(**data)


def save_model(model: RobotModel, path):
    with open(path, "w") as fh:
        yaml.safe_dump(model.to_dict(), fh, sort_keys=False)


@dataclass
class RobotState:
    x: float = 0.0
    z: float = 0.0
    phi: float = 0.0
    vx: float = 0.0
    vz: float = 0.0
    omega: float = 0.0
    theta: np.ndarray = _arr(0.0, 0.0, 0.0, 0.0)
    dtheta: np.ndarray = _arr(0.0, 0.0, 0.0, 0.0)
    thrust: np.ndarray = _arr(0.0, 0.0)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()
        self.dtheta = np.asarray(self.dtheta, dtype=np.float64).copy()
        self.thrust = np.asarray(self.thrust, dtype=np.float64).copy()

    def to_array(self) -> np.ndarray:
        a = np.empty(L.STATE_DIM)
        a[:L.TH] = (self.x, self.z, self.phi, self.vx, self.vz, self.omega)
        a[L.TH:L.TH + 4] = self.theta
        a[L.DTH:L.DTH + 4] = self.dtheta
        a[L.THRUST:L.THRUST + 2] = self.thrust
        return a

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64)
        return cls(*(float(v) for v in a[:L.TH]), theta=a[L.TH:L.TH + 4],
                   dtheta=a[L.DTH:L.DTH + 4], thrust=a[L.THRUST:L.THRUST + 2])

    def copy(self):
        return replace(self)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.to_array())))


def standing_state(model: RobotModel, height=None, x=0.0) -> RobotState:
    """Robot upright with feet at the stance pose, base at ``height`` (default: feet on z=0)."""
    return RobotState(x=x, z=model.stance_height if height is None else height, theta=model.stance_pose())


@dataclass
class ContactPoint:
    foot: int
    position: np.ndarray
    penetration: float
    normal_force: float
    tangential_force: float

    @property
    def in_contact(self):
        return self.penetration > 0.0


class FootPositions(NamedTuple):
    base: np.ndarray    # (2, 2): per foot (x, z) in the base frame
    world: np.ndarray   # (2, 2)


def rotation(phi) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def leg_fk(theta_leg, l1, l2) -> np.ndarray:
    """Foot position relative to the hip for ``(hip, knee)`` angles."""
    h, k = theta_leg
    return np.array([l1 * np.sin(h) + l2 * np.sin(h + k), -l1 * np.cos(h) - l2 * np.cos(h + k)])


def leg_ik(target, l1, l2) -> np.ndarray:
    """Closed-form ``(hip, knee)`` reaching ``target`` (relative to the hip), knee bent backward.

    Raises ``Unreachable`` outside the annulus ``|l1 - l2| <= |target| <= l1 + l2``.
    """
    tx, tz = float(target[0]), float(target[1])
    d2 = tx * tx + tz * tz
    d = np.sqrt(d2)
    tol = 1e-12
    if d > l1 + l2 + tol or d < abs(l1 - l2) - tol:
        raise Unreachable(f"target at distance {d:.6f} outside [{abs(l1 - l2):.6f}, {l1 + l2:.6f}]")
    cos_k = np.clip((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0)
    knee = -np.arccos(cos_k)
    # hip angle: direction to target measured from straight down, minus the
    # angle the bent shank adds
    hip = np.arctan2(tx, -tz) - np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    return np.array([hip, knee])


def forward_kinematics(model: RobotModel, state: RobotState) -> FootPositions:
    base = np.empty((2, 2))
    for leg in range(2):
        base[leg] = model.hip(leg) + leg_fk(state.theta[2 * leg:2 * leg + 2], model.l1, model.l2)
    world = base @ rotation(state.phi).T + np.array([state.x, state.z])
    return FootPositions(base, world)


def foot_velocities(model: RobotModel, state: RobotState) -> np.ndarray:
    """World-frame foot velocities (2, 2) including base motion and joint rates."""
    R = rotation(state.phi)
    feet = forward_kinematics(model, state).base
    out = np.empty((2, 2))
    for leg in range(2):
        h, k = state.theta[2 * leg:2 * leg + 2]
        dh, dk = state.dtheta[2 * leg:2 * leg + 2]
        rel = np.array([model.l1 * np.cos(h) * dh + model.l2 * np.cos(h + k) * (dh + dk),
                        model.l1 * np.sin(h) * dh + model.l2 * np.sin(h + k) * (dh + dk)])
        r = R @ feet[leg]
        out[leg] = np.array([state.vx, state.vz]) + state.omega * np.array([-r[1], r[0]]) + R @ rel
    return out


def pd_torques(model: RobotModel, state: RobotState, theta_d) -> np.ndarray:
    tau = model.kp * (np.asarray(theta_d, dtype=np.float64) - state.theta) - model.kd * state.dtheta
    return np.clip(tau, -model.torque_limit, model.torque_limit)


def jet_world_forces(model: RobotModel, state: RobotState):
    """Per-jet world force vectors (2, 2) and pitch torques about the base (2,)."""
    R = rotation(state.phi)
    forces = np.outer(state.thrust, R @ np.array([0.0, 1.0]))
    torques = np.empty(2)
    for i in range(2):
        r = R @ model.jet_offsets[2 * i:2 * i + 2]
        torques[i] = r[0] * forces[i, 1] - r[1] * forces[i, 0]
    return forces, torques


def contact_forces(model: RobotModel, state: RobotState, terrain) -> list:
    """Penalty spring-damper contact at each foot against ``terrain``."""
    feet = forward_kinematics(model, state).world
    vel = foot_velocities(model, state)
    out = []
    for leg in range(2):
        pen = max(0.0, float(terrain.height_at(feet[leg, 0])) - feet[leg, 1])
        normal = tangential = 0.0
        if pen > 0.0:
            normal = max(0.0, model.contact_stiffness * pen - model.contact_damping * vel[leg, 1])
            lim = model.friction * normal
            tangential = float(np.clip(-model.tangential_damping * vel[leg, 0], -lim, lim))
        out.append(ContactPoint(leg, feet[leg].copy(), pen, normal, tangential))
    return out


def step_dynamics(model: RobotModel, state: RobotState, theta_d, dt: float, terrain=None,
                  n_substeps: int = 1, kernel=None) -> RobotState:
    """Advance one robot by ``n_substeps`` semi-implicit Euler steps of ``dt``.

    Thrusts are held constant; they are advanced by ``jetdyn``.
    Raises ``NonFiniteState`` if the result contains NaN or inf.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if terrain is None:
        from .terrain import flat
        terrain = flat()
    from .terrain import pack
    kernel = kernel or backend.kernel
    st = state.to_array()[None, :].copy()
    th = np.ascontiguousarray(np.asarray(theta_d, dtype=np.float64).reshape(1, 4))
    contact = np.zeros((1, 2, 3))
    kernel.integrate(model.pack(), st, th, pack([terrain]), float(dt), int(n_substeps), contact)
    if not np.all(np.isfinite(st)):
        raise NonFiniteState("non-finite state after integration; reduce dt")
    return RobotState.from_array(st[0])


def base_energy(model: RobotModel, state: RobotState) -> float:
    """Kinetic plus gravitational potential energy of the base body."""
    return (0.5 * model.mass * (state.vx ** 2 + state.vz ** 2)
            + 0.5 * model.inertia * state.omega ** 2 + model.mass * model.gravity * state.z)


FEATURE_LAYOUT = ("cos_phi,sin_phi,vbx,vbz,omega,"
                  "th_hip0,th_knee0,th_hip1,th_knee1,dth_hip0,dth_knee0,dth_hip1,dth_knee1,"
                  "foot0_x,foot0_z,foot1_x,foot1_z,thrust0,thrust1")
FEATURE_DIM = 19


def features_batch(model: RobotModel, S) -> np.ndarray:
    """Discriminator/robot feature vectors for packed states ``S`` (N, 16) -> (N, 19)."""
    S = np.atleast_2d(S)
    c = np.cos(S[:, L.PHI])
    s = np.sin(S[:, L.PHI])
    out = np.empty((S.shape[0], FEATURE_DIM))
    out[:, 0] = c
    out[:, 1] = s
    # world velocity expressed in the base frame: R(phi)^T v
    out[:, 2] = c * S[:, L.VX] + s * S[:, L.VZ]
    out[:, 3] = -s * S[:, L.VX] + c * S[:, L.VZ]
    out[:, 4] = S[:, L.OMEGA]
    out[:, 5:9] = S[:, L.TH:L.TH + 4]
    out[:, 9:13] = S[:, L.DTH:L.DTH + 4]
    for leg in range(2):
        h = S[:, L.TH + 2 * leg]
        hk = h + S[:, L.TH + 2 * leg + 1]
        out[:, 13 + 2 * leg] = model.hip_offsets[2 * leg] + model.l1 * np.sin(h) + model.l2 * np.sin(hk)
        out[:, 14 + 2 * leg] = model.hip_offsets[2 * leg + 1] - model.l1 * np.cos(h) - model.l2 * np.cos(hk)
    out[:, 17:19] = S[:, L.THRUST:L.THRUST + 2]
    return out


def features(model: RobotModel, state: RobotState) -> np.ndarray:
    return features_batch(model, state.to_array())[0]
