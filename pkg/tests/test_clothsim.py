from types import SimpleNamespace

import numpy as np
import pytest

from donning import clothsim
from donning.clothsim import ClothParams, ClothState, ContactRecord
from donning.errors import ConfigError, SolverDivergenceError


def particle_mesh(n_edges=0, edges=None, rest=None):
    """Edge-only stand-in for GarmentMesh, enough for the solver."""
    if edges is None:
        edges = np.zeros((n_edges, 2), dtype=np.int32)
        rest = np.zeros(n_edges)
    return SimpleNamespace(
        edges=np.asarray(edges, dtype=np.int32).reshape(-1, 2),
        edge_rest_lengths=np.asarray(rest, dtype=float),
        bend_pairs=np.zeros((0, 2), dtype=np.int32),
        bend_rest_lengths=np.zeros(0),
    )


def capsule_body(caps=(), sensors=None):
    """BodyState stand-in: capsules plus 22 sensor centers."""
    caps = list(caps)
    if sensors is None:
        sensors = np.full((22, 3), 1e6)
    return SimpleNamespace(
        capsule_a=np.array([c[0] for c in caps], dtype=float).reshape(-1, 3),
        capsule_b=np.array([c[1] for c in caps], dtype=float).reshape(-1, 3),
        capsule_radius=np.array([c[2] for c in caps], dtype=float),
        sensor_world=np.asarray(sensors, dtype=float),
    )


def particles(positions, pins=()):
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    return ClothState(
        positions=pos.copy(),
        prev_positions=pos.copy(),
        velocities=np.zeros_like(pos),
        pin_ids=np.asarray(sorted(pins), dtype=np.int64),
    )


def test_free_fall_matches_kinematics():
    mesh = particle_mesh()
    body = capsule_body()
    cloth = particles([[0.0, 0.0, 0.0]])
    dt, t_end = 1e-4, 1.0
    for _ in range(int(round(t_end / dt))):
        cloth = clothsim.step_cloth(mesh, cloth, body, np.zeros((0, 3)), dt)
    drop = -cloth.positions[0, 1]
    assert abs(drop - 0.5 * clothsim.GRAVITY * t_end**2) < 1e-3


def test_two_particle_momentum_conserved(monkeypatch):
    monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
    mesh = particle_mesh(edges=[[0, 1]], rest=[1.0])
    body = capsule_body()
    cloth = particles([[0.0, 0, 0], [2.0, 0, 0]])  # stretched to 2x rest
    cloth.velocities[:] = [[0.1, 0, 0], [0.1, 0, 0]]
    mid0 = cloth.positions.mean(axis=0)
    for k in range(20):
        cloth = clothsim.step_cloth(mesh, cloth, body, np.zeros((0, 3)), 0.01)
        drift = cloth.positions.mean(axis=0) - (mid0 + 0.1 * (k + 1) * 0.01 * np.array([1, 0, 0]))
        assert np.max(np.abs(drift)) < 1e-12
        assert np.allclose(cloth.velocities.mean(axis=0), [0.1, 0, 0], atol=1e-10)
    gap = np.linalg.norm(cloth.positions[1] - cloth.positions[0])
    assert abs(gap - 1.0) < 1e-9


def test_single_constraint_projects_exactly(monkeypatch):
    monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
    mesh = particle_mesh(edges=[[0, 1]], rest=[0.5])
    cloth = particles([[0.0, 0, 0], [1.0, 0, 0]])
    cloth = clothsim.step_cloth(mesh, cloth, capsule_body(), np.zeros((0, 3)), 0.01)
    assert np.isclose(np.linalg.norm(cloth.positions[1] - cloth.positions[0]), 0.5, atol=1e-12)
    # symmetric correction for equal masses
    assert np.allclose(cloth.positions[0], [0.25, 0, 0], atol=1e-12)


def test_pins_are_exact_and_drag_the_free_end(monkeypatch):
    monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
    mesh = particle_mesh(edges=[[0, 1]], rest=[0.5])
    cloth = particles([[0.0, 0, 0], [0.5, 0, 0]], pins=[0])
    target = np.array([[0.3, 0.2, -0.1]])
    cloth = clothsim.step_cloth(mesh, cloth, capsule_body(), target, 0.01)
    assert np.array_equal(cloth.positions[0], target[0])
    assert np.isclose(np.linalg.norm(cloth.positions[1] - cloth.positions[0]), 0.5, atol=1e-12)
    assert np.all(cloth.velocities[0] == (target[0] - 0.0) / 0.01)


def test_capsule_pushout_force_and_binning(monkeypatch):
    monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
    sensors = np.full((22, 3), 1e6)
    sensors[7] = [0.0, 0.2, 0.0]
    body = capsule_body([((-1.0, 0, 0), (1.0, 0, 0), 0.1)], sensors)
    cloth = particles([[0.0, 0.05, 0.0]])
    dt = 0.01
    out = clothsim.step_cloth(particle_mesh(), cloth, body, np.zeros((0, 3)), dt)
    r = 0.1 + ClothParams().thickness
    assert np.allclose(out.positions[0], [0.0, r, 0.0], atol=1e-12)
    assert len(out.contacts) == 1
    c = out.contacts[0]
    assert c.cloth_vertex == 0 and c.body_capsule == 0 and c.sensor_bin == 7
    mass = ClothParams().mass_total / 1
    assert np.allclose(c.force, mass * np.array([0.0, r - 0.05, 0.0]) / dt**2)


def test_on_axis_pushout_is_deterministic(monkeypatch):
    monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
    body = capsule_body([((-1.0, 0, 0), (1.0, 0, 0), 0.1)])
    cloth = particles([[0.2, 0.0, 0.0]])
    out = clothsim.step_cloth(particle_mesh(), cloth, body, np.zeros((0, 3)), 0.01)
    assert np.allclose(out.positions[0], [0.2, 0.105, 0.0], atol=1e-12)


def test_pinned_vertices_ignore_collision(monkeypatch):
    monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
    body = capsule_body([((-1.0, 0, 0), (1.0, 0, 0), 0.1)])
    cloth = particles([[0.0, 0.05, 0.0]], pins=[0])
    target = np.array([[0.0, 0.05, 0.0]])
    out = clothsim.step_cloth(particle_mesh(), cloth, body, target, 0.01)
    assert np.array_equal(out.positions[0], target[0])
    assert out.contacts == []


def test_divergence_raises():
    cloth = particles([[0.0, 0, 0]])
    cloth.velocities[0, 0] = np.inf
    with pytest.raises(SolverDivergenceError):
        clothsim.step_cloth(particle_mesh(), cloth, capsule_body(), np.zeros((0, 3)), 0.01)


def test_bin_contacts_sums_by_nearest_sensor():
    sensors = np.full((22, 3), 1e6)
    sensors[3] = [0.0, 0, 0]
    sensors[11] = [1.0, 0, 0]
    body = capsule_body([], sensors)
    mk = lambda p, f: ContactRecord(0, np.array(p, dtype=float), np.array(f, dtype=float), 0, -1)
    contacts = [
        mk([0.1, 0, 0], [1.0, 0, 0]),
        mk([0.2, 0, 0], [0.0, 2.0, 0]),
        mk([0.9, 0, 0], [0.0, 0, 3.0]),
    ]
    out = clothsim.bin_contacts(contacts, body)
    assert np.allclose(out[3], [1.0, 2.0, 0.0])
    assert np.allclose(out[11], [0.0, 0.0, 3.0])
    assert np.all(out[[i for i in range(22) if i not in (3, 11)]] == 0.0)
    assert np.all(clothsim.bin_contacts([], body) == 0.0)


def test_surface_sign_tracks_force_direction(sleeve, rest_state):
    v = 40
    normal = sleeve.vertex_normals()[v]
    sensors = np.full((22, 3), 1e6)
    sensors[5] = rest_state.positions[v]
    body = capsule_body([], sensors)
    push_in = [ContactRecord(v, rest_state.positions[v], -0.4 * normal, 0, 5)]
    push_out = [ContactRecord(v, rest_state.positions[v], 0.4 * normal, 0, 5)]
    s_in = clothsim.surface_sign(push_in, sleeve, rest_state, body)
    s_out = clothsim.surface_sign(push_out, sleeve, rest_state, body)
    assert s_in[5] == -1.0 and s_out[5] == 1.0
    assert np.all(s_in[np.arange(22) != 5] == 0.0)
    assert np.all(clothsim.surface_sign([], sleeve, rest_state, body) == 0.0)


def test_sleeve_normals_point_outward(sleeve):
    normals = sleeve.vertex_normals()
    radial = sleeve.vertices.copy()
    radial[:, 2] = 0.0
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    assert np.all(np.einsum("ij,ij->i", normals, radial) > 0.7)


def test_frames_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(3, 5, 3))
    path = tmp_path / "roll.frames"
    clothsim.write_frames(path, frames)
    back = clothsim.read_frames(path)
    assert back.shape == (3, 5, 3)
    assert np.array_equal(back, frames.astype(np.float32).astype(np.float64))


def test_frames_reject_bad_files(tmp_path):
    bad = tmp_path / "bad.frames"
    bad.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ConfigError, match="magic"):
        clothsim.read_frames(bad)
    short = tmp_path / "short.frames"
    clothsim.write_frames(short, np.zeros((2, 4, 3)))
    short.write_bytes(short.read_bytes()[:-8])
    with pytest.raises(ConfigError, match="truncated"):
        clothsim.read_frames(short)
