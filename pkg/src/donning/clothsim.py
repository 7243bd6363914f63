"""Position-based-dynamics cloth with capsule collision and gripper pins.

One solver step per 0.01 s simulation substep: semi-implicit predict under
gravity, sequential Gauss-Seidel projection of edge distance constraints
(plus optional cross-edge bending constraints), capsule pushout, exact pin
enforcement, then velocities from the position delta.  Constraint order is
fixed, so trajectories are bit-reproducible.  Collision corrections double as
the haptic force estimate, f = m * dx / dt^2 per vertex-capsule pair.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigError, SolverDivergenceError

GRAVITY = 9.81
FRAME_MAGIC = b"DONF"

N_SENSORS = 22


@dataclass
class ClothParams:
    iterations: int = 10
    stretch_stiffness: float = 1.0
    bend_stiffness: float = 0.0
    thickness: float = 0.005
    damping: float = 0.0          # 1/s velocity decay; 0 keeps free fall exact
    mass_total: float = 0.3
    collision_passes: int = 4     # repeats of the capsule loop (joint overlaps)


@dataclass
class ContactRecord:
    cloth_vertex: int
    point: np.ndarray
    force: np.ndarray
    body_capsule: int
    sensor_bin: int


@dataclass
class ClothState:
    positions: np.ndarray
    prev_positions: np.ndarray
    velocities: np.ndarray
    pin_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    contacts: list = field(default_factory=list)


def rest_cloth(mesh, pin_ids=()):
    """Cloth at the mesh rest shape with zero velocity."""
    pos = np.array(mesh.vertices, dtype=float)
    return ClothState(
        positions=pos,
        prev_positions=pos.copy(),
        velocities=np.zeros_like(pos),
        pin_ids=np.asarray(sorted(pin_ids), dtype=np.int64),
    )


@njit(cache=True)
def _project_distance(pos, invm, e0, e1, rest, stiffness, iterations):
    for _ in range(iterations):
        for i in range(e0.size):
            a = e0[i]
            b = e1[i]
            wsum = invm[a] + invm[b]
            if wsum == 0.0:
                continue
            dx = pos[b, 0] - pos[a, 0]
            dy = pos[b, 1] - pos[a, 1]
            dz = pos[b, 2] - pos[a, 2]
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            if d < 1e-12:
                continue
            s = stiffness * (d - rest[i]) / (d * wsum)
            pos[a, 0] += invm[a] * s * dx
            pos[a, 1] += invm[a] * s * dy
            pos[a, 2] += invm[a] * s * dz
            pos[b, 0] -= invm[b] * s * dx
            pos[b, 1] -= invm[b] * s * dy
            pos[b, 2] -= invm[b] * s * dz


@njit(cache=True)
def _push_out_capsules(pos, invm, cap_a, cap_b, cap_r, margin, passes, disp):
    # disp: (V, C, 3) accumulated pushout per vertex-capsule pair
    nv = pos.shape[0]
    nc = cap_a.shape[0]
    for _ in range(passes):
        for v in range(nv):
            if invm[v] == 0.0:
                continue
            for c in range(nc):
                ax = cap_b[c, 0] - cap_a[c, 0]
                ay = cap_b[c, 1] - cap_a[c, 1]
                az = cap_b[c, 2] - cap_a[c, 2]
                px = pos[v, 0] - cap_a[c, 0]
                py = pos[v, 1] - cap_a[c, 1]
                pz = pos[v, 2] - cap_a[c, 2]
                denom = ax * ax + ay * ay + az * az
                t = 0.0
                if denom > 0.0:
                    t = (px * ax + py * ay + pz * az) / denom
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                rx = px - t * ax
                ry = py - t * ay
                rz = pz - t * az
                d = np.sqrt(rx * rx + ry * ry + rz * rz)
                r = cap_r[c] + margin
                if d >= r:
                    continue
                if d < 1e-12:
                    # on the axis: push along a fixed direction for determinism
                    mx, my, mz = 0.0, r, 0.0
                else:
                    s = (r - d) / d
                    mx = rx * s
                    my = ry * s
                    mz = rz * s
                pos[v, 0] += mx
                pos[v, 1] += my
                pos[v, 2] += mz
                disp[v, c, 0] += mx
                disp[v, c, 1] += my
                disp[v, c, 2] += mz


def step_cloth(mesh, cloth, body, gripper_targets, dt, params=None):
    """Advance the cloth one substep; returns a new ClothState.

    ``gripper_targets`` is a (P, 3) array of world positions aligned with
    ``cloth.pin_ids``.  Raises SolverDivergenceError if positions go
    non-finite; the caller is expected to terminate the episode.
    """
    if params is None:
        params = ClothParams()
    pos0 = cloth.positions
    nv = pos0.shape[0]
    pins = cloth.pin_ids
    targets = np.asarray(gripper_targets, dtype=float).reshape(len(pins), 3)

    mass = params.mass_total / nv
    invm = np.full(nv, 1.0 / mass)
    invm[pins] = 0.0

    vel = cloth.velocities + np.array([0.0, -GRAVITY, 0.0]) * dt
    if params.damping > 0.0:
        vel = vel * max(0.0, 1.0 - params.damping * dt)
    pos = pos0 + vel * dt
    pos[pins] = targets

    _project_distance(pos, invm, mesh.edges[:, 0], mesh.edges[:, 1],
                      mesh.edge_rest_lengths, params.stretch_stiffness,
                      params.iterations)
    if params.bend_stiffness > 0.0 and len(mesh.bend_pairs):
        _project_distance(pos, invm, mesh.bend_pairs[:, 0], mesh.bend_pairs[:, 1],
                          mesh.bend_rest_lengths, params.bend_stiffness,
                          params.iterations)

    ncap = len(body.capsule_radius)
    disp = np.zeros((nv, ncap, 3))
    _push_out_capsules(pos, invm, body.capsule_a, body.capsule_b,
                       body.capsule_radius, params.thickness,
                       params.collision_passes, disp)
    pos[pins] = targets

    if not np.all(np.isfinite(pos)):
        raise SolverDivergenceError("cloth positions diverged")

    new_vel = (pos - pos0) / dt
    contacts = []
    vid, cid = np.nonzero(np.any(disp != 0.0, axis=2))
    if len(vid):
        forces = mass * disp[vid, cid] / (dt * dt)
        bins = _nearest_sensor(pos[vid], body.sensor_world)
        for k in range(len(vid)):
            contacts.append(ContactRecord(
                cloth_vertex=int(vid[k]),
                point=pos[vid[k]].copy(),
                force=forces[k],
                body_capsule=int(cid[k]),
                sensor_bin=int(bins[k]),
            ))
    return ClothState(
        positions=pos,
        prev_positions=pos0.copy(),
        velocities=new_vel,
        pin_ids=pins.copy(),
        contacts=contacts,
    )


def _nearest_sensor(points, sensor_world):
    d2 = np.sum((points[:, None, :] - sensor_world[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def bin_contacts(contacts, body):
    """Sum contact forces into the nearest haptic sensor; (22, 3) result."""
    out = np.zeros((N_SENSORS, 3))
    if not contacts:
        return out
    pts = np.array([c.point for c in contacts])
    bins = _nearest_sensor(pts, body.sensor_world)
    for c, b in zip(contacts, bins):
        out[b] += c.force
    return out


def surface_sign(contacts, mesh, cloth, body):
    """Per-sensor surface indicator in {-1, 0, 1}.

    Sums dot(force, outward vertex normal) over the contacts binned to each
    sensor; a negative total means the cloth is being pushed against its
    outward normal, i.e. touched from outside, giving -1.  Positive means
    inner-surface contact (+1); no contact or an exact zero gives 0.
    """
    out = np.zeros(N_SENSORS)
    if not contacts:
        return out
    normals = mesh.vertex_normals(cloth.positions)
    pts = np.array([c.point for c in contacts])
    bins = _nearest_sensor(pts, body.sensor_world)
    for c, b in zip(contacts, bins):
        out[b] += float(np.dot(c.force, normals[c.cloth_vertex]))
    return np.sign(out)


# -- frame export ---------------------------------------------------------------

def write_frames(path, frames):
    """Binary snapshot file: magic, vertex count, frame count, float32 LE xyz."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise ConfigError("frames must have shape (n_frames, n_vertices, 3)")
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<II", frames.shape[1], frames.shape[0]))
        fh.write(frames.astype("<f4").tobytes())


def read_frames(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != FRAME_MAGIC:
        raise ConfigError(f"{path}: not a frame file (bad magic)")
    nv, nf = struct.unpack("<II", raw[4:12])
    body = np.frombuffer(raw[12:], dtype="<f4")
    if body.size != nf * nv * 3:
        raise ConfigError(f"{path}: truncated frame file")
    return body.reshape(nf, nv, 3).astype(np.float64)
