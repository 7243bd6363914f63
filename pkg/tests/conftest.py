import numpy as np
import pytest

from donning import body, clothsim, garment


@pytest.fixture(scope="session")
def sleeve():
    """Default tube sleeve with its geodesic field attached."""
    mesh = garment.sleeve_mesh()
    return garment.build_geodesic_field(mesh)


@pytest.fixture(scope="session")
def model():
    return body.default_body()


@pytest.fixture(scope="session")
def zero_state(model):
    return body.forward_kinematics(model, np.zeros(body.N_DOF), np.zeros(body.N_DOF))


@pytest.fixture()
def rest_state(sleeve):
    return clothsim.rest_cloth(sleeve)


def make_chain_state(joints, q=None, qdot=None, n_sensors=22):
    """Minimal BodyState carrying only an arm chain, for reward unit tests."""
    from donning.body import N_DOF, BodyState

    joints = np.asarray(joints, dtype=float)
    return BodyState(
        q=np.zeros(N_DOF) if q is None else np.asarray(q, dtype=float),
        qdot=np.zeros(N_DOF) if qdot is None else np.asarray(qdot, dtype=float),
        joint_world=joints,
        site_world=np.zeros((0, 3)),
        sensor_world=np.zeros((n_sensors, 3)),
        capsule_a=np.zeros((0, 3)),
        capsule_b=np.zeros((0, 3)),
        capsule_radius=np.zeros(0),
    )
