"""163-dimensional observation assembly.

Layout (offset, length): proprio (0, 66) = [cos q | sin q | qdot] over 22
DOFs; feature_loc (66, 6) = [centroid | fingertip - centroid]; haptics
(72, 66) = 22 binned sensor forces; surface (138, 22) = per-sensor side
indicator; task (160, 3) = unit guidance vector.  No normalization is applied
here; entries stay in physical units.
"""

from dataclasses import dataclass

import numpy as np

from .clothsim import bin_contacts, surface_sign
from .errors import ObservationError
from .garment import geodesic_gradient

OBS_DIM = 163
N_DOF = 22

SEGMENTS = {
    "proprio": (0, 66),
    "feature_loc": (66, 6),
    "haptics": (72, 66),
    "surface": (138, 22),
    "task": (160, 3),
}

# task-vector cases: 1 free approach, 2 limb contained, 3 contact following
CASE_APPROACH = 1
CASE_CONTAINED = 2
CASE_CONTACT = 3


@dataclass
class Observation:
    proprio: np.ndarray
    feature_loc: np.ndarray
    haptics: np.ndarray
    surface: np.ndarray
    task: np.ndarray
    task_case: int

    @property
    def vector(self):
        v = np.concatenate([self.proprio, self.feature_loc, self.haptics,
                            self.surface, self.task])
        assert v.shape == (OBS_DIM,)
        return v


def task_vector(body, feature, mesh, cloth, hand_contacts, k_int):
    """Unit guidance vector plus the case id that produced it.

    Contained limb: the feature plane normal (inward).  No end-effector
    contact: unit vector from the fingertip to the loop centroid (normal as
    the fallback if they coincide).  Otherwise: geodesic descent direction at
    the touched vertex with the smallest geodesic value.
    """
    if k_int != 0:
        return feature.plane_normal.copy(), CASE_CONTAINED
    if not hand_contacts:
        d = feature.plane_point - body.joint_world[0]
        n = np.linalg.norm(d)
        if n < 1e-12:
            return feature.plane_normal.copy(), CASE_APPROACH
        return d / n, CASE_APPROACH
    touched = sorted({c.cloth_vertex for c in hand_contacts})
    g = mesh.geodesic[touched]
    v_star = touched[int(np.argmin(g))]
    return geodesic_gradient(mesh, v_star, positions=cloth.positions), CASE_CONTACT


def build_observation(body, mesh, cloth, feature, contacts, k_int,
                      hand_capsule):
    """Assemble the full observation for one control step."""
    q, qdot = body.q, body.qdot
    proprio = np.concatenate([np.cos(q), np.sin(q), qdot])
    c = feature.plane_point
    p0 = body.joint_world[0]
    feature_loc = np.concatenate([c, p0 - c])
    haptics = bin_contacts(contacts, body).ravel()
    surface = surface_sign(contacts, mesh, cloth, body)
    hand = [ct for ct in contacts if ct.body_capsule == hand_capsule]
    task, case = task_vector(body, feature, mesh, cloth, hand, k_int)
    obs = Observation(proprio=proprio, feature_loc=feature_loc, haptics=haptics,
                      surface=surface, task=task, task_case=case)
    if not np.all(np.isfinite(obs.vector)):
        raise ObservationError("non-finite observation entries")
    return obs


def apply_ablation(vector, mode):
    """Zero observation segments for the two baselines; length stays 163."""
    if mode in (None, "none"):
        return vector
    out = np.array(vector, dtype=float)
    if mode == "no_haptics":
        for name in ("haptics", "surface"):
            off, n = SEGMENTS[name]
            out[off:off + n] = 0.0
    elif mode == "no_task":
        off, n = SEGMENTS["task"]
        out[off:off + n] = 0.0
    else:
        raise ValueError(f"unknown ablation mode: {mode!r}")
    return out
