"""Kinematic articulated human model.

22 single-axis rotational DOFs in a chain/tree (torso 3, neck 3, each arm
clavicle 2 + shoulder 3 + elbow 1 + wrist 2); the 11 actuated ones are torso
plus the right arm.  The root is fixed to the origin.  Forward kinematics
produces world positions for the dressed-limb joint chain (listed distal to
proximal with a fingertip dummy first), for the capsule collision geometry,
and for the 22 haptic sensor centers placed along capsule medial axes.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidActionError, LimitViolationError

N_DOF = 22
N_ACTUATED = 11
N_SENSORS = 22


def _rodrigues(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass
class BodyModel:
    """Immutable skeleton description; build one with :func:`default_body`."""

    dof_parent: np.ndarray        # (22,) parent DOF index, -1 attaches to the fixed root
    dof_offset: np.ndarray        # (22, 3) anchor offset in the parent frame
    dof_axis: np.ndarray          # (22, 3) unit rotation axis in the local frame
    actuated: np.ndarray          # (22,) bool mask, exactly 11 true
    q_lo: np.ndarray
    q_hi: np.ndarray
    vel_limit: np.ndarray         # (22,) rad/s
    accel_scale: float            # rad/s^2 per unit action
    damping: float                # 1/s velocity damping in the actuation model
    site_names: list
    site_dof: np.ndarray          # (S,) DOF whose frame carries each site
    site_offset: np.ndarray       # (S, 3)
    capsule_names: list
    capsule_sites: np.ndarray     # (C, 2) site ids for the two capsule ends
    capsule_radius: np.ndarray    # (C,)
    arm_chain_sites: np.ndarray   # (4,) site ids p_0..p_3, distal to proximal
    hand_capsule: int             # capsule id of the end effector
    torso_dofs: np.ndarray        # (3,) DOF ids of the torso
    sensor_capsule: np.ndarray    # (22,)
    sensor_frac: np.ndarray       # (22,) position along the capsule axis in [0, 1]

    def __post_init__(self):
        if len(self.dof_parent) != N_DOF:
            raise ConfigError(f"expected {N_DOF} DOFs, got {len(self.dof_parent)}")
        if int(self.actuated.sum()) != N_ACTUATED:
            raise ConfigError(f"expected {N_ACTUATED} actuated DOFs, got {int(self.actuated.sum())}")
        if len(self.sensor_capsule) != N_SENSORS:
            raise ConfigError(f"expected {N_SENSORS} sensors, got {len(self.sensor_capsule)}")
        if np.any(self.q_lo >= self.q_hi):
            raise ConfigError("empty joint limit interval")
        if np.any(self.capsule_radius <= 0.0):
            raise ConfigError("capsule radius must be positive")
        for d, p in enumerate(self.dof_parent):
            if p >= d:
                raise ConfigError("dof_parent must reference earlier DOFs only")

    @property
    def actuated_indices(self):
        return np.flatnonzero(self.actuated)


@dataclass
class BodyState:
    """Posed body: angles, velocities, and world-space geometry."""

    q: np.ndarray                 # (22,)
    qdot: np.ndarray              # (22,)
    joint_world: np.ndarray       # (4, 3) limb chain p_0..p_3, p_0 = fingertip dummy
    site_world: np.ndarray        # (S, 3)
    sensor_world: np.ndarray      # (22, 3)
    capsule_a: np.ndarray         # (C, 3)
    capsule_b: np.ndarray         # (C, 3)
    capsule_radius: np.ndarray    # (C,)

    @property
    def end_effector(self):
        return self.joint_world[0]


def forward_kinematics(model, q, qdot=None):
    """Pose the body at joint angles ``q``; raises on out-of-limit entries."""
    q = np.asarray(q, dtype=float)
    if q.shape != (N_DOF,):
        raise InvalidActionError(f"q must have {N_DOF} entries")
    for d in range(N_DOF):
        if q[d] < model.q_lo[d] or q[d] > model.q_hi[d]:
            raise LimitViolationError(d, q[d], model.q_lo[d], model.q_hi[d])
    if qdot is None:
        qdot = np.zeros(N_DOF)
    rot = np.empty((N_DOF, 3, 3))
    org = np.empty((N_DOF, 3))
    for d in range(N_DOF):
        p = model.dof_parent[d]
        if p < 0:
            r_p, o_p = np.eye(3), np.zeros(3)
        else:
            r_p, o_p = rot[p], org[p]
        org[d] = o_p + r_p @ model.dof_offset[d]
        rot[d] = r_p @ _rodrigues(model.dof_axis[d], q[d])
    site_world = np.empty((len(model.site_dof), 3))
    for s, (d, off) in enumerate(zip(model.site_dof, model.site_offset)):
        site_world[s] = org[d] + rot[d] @ off
    cap_a = site_world[model.capsule_sites[:, 0]]
    cap_b = site_world[model.capsule_sites[:, 1]]
    axis = cap_b - cap_a
    sensor_world = cap_a[model.sensor_capsule] + model.sensor_frac[:, None] * axis[model.sensor_capsule]
    return BodyState(
        q=q.copy(),
        qdot=np.asarray(qdot, dtype=float).copy(),
        joint_world=site_world[model.arm_chain_sites].copy(),
        site_world=site_world,
        sensor_world=sensor_world,
        capsule_a=cap_a.copy(),
        capsule_b=cap_b.copy(),
        capsule_radius=model.capsule_radius.copy(),
    )


def integrate_action(model, state, action, dt):
    """Advance the pose with a clamped 11-dim action over one substep.

    Actuated DOFs follow damped acceleration control: the action scales a
    fixed angular acceleration, velocities decay with the damping constant and
    are clipped to the velocity limit, and positions clip to the joint limits
    (zeroing the velocity when a position clamp triggers).  Unactuated DOFs
    hold their angle with zero velocity.
    """
    action = np.asarray(action, dtype=float)
    if action.shape != (N_ACTUATED,):
        raise InvalidActionError(f"action must have {N_ACTUATED} entries")
    if not np.all(np.isfinite(action)):
        raise InvalidActionError("action has non-finite entries")
    a = np.clip(action, -1.0, 1.0)
    q = state.q.copy()
    qdot = np.zeros(N_DOF)
    idx = model.actuated_indices
    vnew = state.qdot[idx] + (a * model.accel_scale - model.damping * state.qdot[idx]) * dt
    vnew = np.clip(vnew, -model.vel_limit[idx], model.vel_limit[idx])
    qnew = q[idx] + vnew * dt
    qclip = np.clip(qnew, model.q_lo[idx], model.q_hi[idx])
    vnew[qclip != qnew] = 0.0
    q[idx] = qclip
    qdot[idx] = vnew
    return forward_kinematics(model, q, qdot)


def bone_segments(state):
    """Limb bone segments b_1..b_m as an (m, 2, 3) array of (p_i, p_{i-1})."""
    p = state.joint_world
    m = len(p) - 1
    out = np.empty((m, 2, 3))
    for i in range(1, m + 1):
        out[i - 1, 0] = p[i]
        out[i - 1, 1] = p[i - 1]
    return out


def _allocate_sensors(capsule_lengths, total=N_SENSORS):
    """Largest-remainder allocation proportional to length, at least 1 each."""
    lengths = np.asarray(capsule_lengths, dtype=float)
    quota = lengths / lengths.sum() * total
    counts = np.maximum(np.floor(quota).astype(int), 1)
    while counts.sum() > total:
        over = np.flatnonzero(counts > 1)
        worst = over[np.argmin((quota - counts)[over])]
        counts[worst] -= 1
    rema = quota - counts
    while counts.sum() < total:
        best = int(np.argmax(rema))
        counts[best] += 1
        rema[best] -= 1.0
    return counts


def default_body(accel_scale=10.0, damping=2.0, vel_limit=4.0):
    """Built-in 50th-percentile-proportioned model (dimensions in meters)."""
    X, Y, Z = np.eye(3)
    ZERO = np.zeros(3)
    dofs = []  # (name, parent, offset, axis, actuated, lo, hi)
    dofs += [
        ("torso_rx", -1, ZERO, X, True, -0.6, 0.6),
        ("torso_ry", 0, ZERO, Y, True, -0.6, 0.6),
        ("torso_rz", 1, ZERO, Z, True, -0.6, 0.6),
        ("neck_rx", 2, np.array([0.0, 0.42, 0.0]), X, False, -0.8, 0.8),
        ("neck_ry", 3, ZERO, Y, False, -0.8, 0.8),
        ("neck_rz", 4, ZERO, Z, False, -0.8, 0.8),
    ]

    def arm(side, sign, act):
        return [
            (f"{side}_clav_ry", 2, np.array([0.0, 0.40, 0.0]), Y, act, -0.5, 0.5),
            (f"{side}_clav_rz", None, ZERO, Z, act, -0.5, 0.5),
            (f"{side}_shoulder_rx", None, np.array([sign * 0.19, 0.03, 0.0]), X, act, -2.3, 0.6),
            (f"{side}_shoulder_ry", None, ZERO, Y, act, -1.6, 1.6),
            (f"{side}_shoulder_rz", None, ZERO, Z, act, -0.6 if sign > 0 else -2.2, 2.2 if sign > 0 else 0.6),
            (f"{side}_elbow", None, np.array([0.0, -0.30, 0.0]), -X, act, -0.05, 2.6),
            (f"{side}_wrist_rx", None, np.array([0.0, -0.26, 0.0]), X, act, -0.8, 0.8),
            (f"{side}_wrist_rz", None, ZERO, Z, act, -0.6, 0.6),
        ]

    dofs += arm("r", +1, True)
    dofs += arm("l", -1, False)
    parent = []
    for i, (_, p, *_rest) in enumerate(dofs):
        parent.append(i - 1 if p is None else p)

    r0, l0 = 6, 14  # first DOF of each arm block
    sites = [
        ("pelvis", 2, ZERO),
        ("chest", 2, np.array([0.0, 0.42, 0.0])),
        ("head_top", 5, np.array([0.0, 0.22, 0.0])),
        ("r_shoulder", r0 + 2, ZERO),
        ("r_elbow", r0 + 5, ZERO),
        ("r_wrist", r0 + 6, ZERO),
        ("r_fingertip", r0 + 7, np.array([0.0, -0.18, 0.0])),
        ("l_shoulder", l0 + 2, ZERO),
        ("l_elbow", l0 + 5, ZERO),
        ("l_wrist", l0 + 6, ZERO),
        ("l_fingertip", l0 + 7, np.array([0.0, -0.18, 0.0])),
    ]
    site_id = {name: i for i, (name, *_r) in enumerate(sites)}
    capsules = [
        ("torso", "pelvis", "chest", 0.13),
        ("head", "chest", "head_top", 0.09),
        ("r_clav", "chest", "r_shoulder", 0.05),
        ("r_upper_arm", "r_shoulder", "r_elbow", 0.045),
        ("r_forearm", "r_elbow", "r_wrist", 0.04),
        ("r_hand", "r_wrist", "r_fingertip", 0.035),
        ("l_clav", "chest", "l_shoulder", 0.05),
        ("l_upper_arm", "l_shoulder", "l_elbow", 0.045),
        ("l_forearm", "l_elbow", "l_wrist", 0.04),
        ("l_hand", "l_wrist", "l_fingertip", 0.035),
    ]

    model = BodyModel(
        dof_parent=np.asarray(parent, dtype=np.int32),
        dof_offset=np.asarray([d[2] for d in dofs], dtype=float),
        dof_axis=np.asarray([d[3] for d in dofs], dtype=float),
        actuated=np.asarray([d[4] for d in dofs], dtype=bool),
        q_lo=np.asarray([d[5] for d in dofs], dtype=float),
        q_hi=np.asarray([d[6] for d in dofs], dtype=float),
        vel_limit=np.full(N_DOF, float(vel_limit)),
        accel_scale=float(accel_scale),
        damping=float(damping),
        site_names=[s[0] for s in sites],
        site_dof=np.asarray([s[1] for s in sites], dtype=np.int32),
        site_offset=np.asarray([s[2] for s in sites], dtype=float),
        capsule_names=[c[0] for c in capsules],
        capsule_sites=np.asarray([[site_id[c[1]], site_id[c[2]]] for c in capsules], dtype=np.int32),
        capsule_radius=np.asarray([c[3] for c in capsules], dtype=float),
        arm_chain_sites=np.asarray(
            [site_id["r_fingertip"], site_id["r_wrist"], site_id["r_elbow"], site_id["r_shoulder"]],
            dtype=np.int32,
        ),
        hand_capsule=[c[0] for c in capsules].index("r_hand"),
        torso_dofs=np.asarray([0, 1, 2], dtype=np.int32),
        sensor_capsule=np.zeros(N_SENSORS, dtype=np.int32),  # filled below
        sensor_frac=np.zeros(N_SENSORS),
    )
    # sensor layout: per-capsule counts proportional to rest length, >= 1 each,
    # centers at the midpoints of equal subdivisions of the medial axis
    rest = forward_kinematics(model, np.zeros(N_DOF))
    lengths = np.linalg.norm(rest.capsule_b - rest.capsule_a, axis=1)
    counts = _allocate_sensors(lengths)
    cap_ids, fracs = [], []
    for c, n in enumerate(counts):
        for i in range(n):
            cap_ids.append(c)
            fracs.append((i + 0.5) / n)
    model.sensor_capsule = np.asarray(cap_ids, dtype=np.int32)
    model.sensor_frac = np.asarray(fracs, dtype=float)
    return model


# -- JSON description ----------------------------------------------------------

_ARRAY_FIELDS = [
    "dof_parent", "dof_offset", "dof_axis", "actuated", "q_lo", "q_hi", "vel_limit",
    "site_dof", "site_offset", "capsule_sites", "capsule_radius", "arm_chain_sites",
    "torso_dofs", "sensor_capsule", "sensor_frac",
]
_ARRAY_DTYPES = {
    "dof_parent": np.int32, "actuated": bool, "site_dof": np.int32,
    "capsule_sites": np.int32, "arm_chain_sites": np.int32,
    "torso_dofs": np.int32, "sensor_capsule": np.int32,
}


def body_to_json(model):
    doc = {name: getattr(model, name).tolist() for name in _ARRAY_FIELDS}
    doc["accel_scale"] = model.accel_scale
    doc["damping"] = model.damping
    doc["site_names"] = model.site_names
    doc["capsule_names"] = model.capsule_names
    doc["hand_capsule"] = model.hand_capsule
    return doc


def body_from_json(doc):
    kwargs = {
        name: np.asarray(doc[name], dtype=_ARRAY_DTYPES.get(name, float))
        for name in _ARRAY_FIELDS
    }
    return BodyModel(
        accel_scale=float(doc["accel_scale"]),
        damping=float(doc["damping"]),
        site_names=list(doc["site_names"]),
        capsule_names=list(doc["capsule_names"]),
        hand_capsule=int(doc["hand_capsule"]),
        **kwargs,
    )


def save_body(model, path):
    Path(path).write_text(json.dumps(body_to_json(model), indent=1) + "\n")


def load_body(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"body file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    return body_from_json(doc)
