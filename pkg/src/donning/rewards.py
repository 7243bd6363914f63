"""Shaped dressing reward: progress, deformation, geodesic contact, upright.

total = w1 * r_p + w2 * r_d + w3 * r_g + w_u * r_u with defaults (5, 6, 2, 1).
Containment scans limb bones distal to proximal for the first one crossing the
projected feature polygon; r_p is then the limb length threaded past the
plane, otherwise the negative end-effector distance to the polygon centroid.
"""

from dataclasses import dataclass

import numpy as np

from .body import bone_segments
from .errors import UsageError
from .garment import points_in_polygon, triangle_deformation

DEFORM_THRESH = 15.0
DEFORM_SCALE = 0.7


@dataclass
class RewardWeights:
    progress: float = 5.0
    deformation: float = 6.0
    geodesic: float = 2.0
    upright: float = 1.0


@dataclass
class RewardBreakdown:
    r_p: float
    r_d: float
    r_g: float
    r_u: float
    total: float
    k_int: int
    containment_depth: float
    max_deformation: float


def containment(body, feature):
    """First bone (distal to proximal, 1-based) crossing the feature polygon.

    Returns (k_int, intersection point); (0, None) when no bone intersects.
    """
    if not feature.fitted:
        raise UsageError("feature plane not fitted")
    segs = bone_segments(body)
    n = feature.plane_normal
    p0 = feature.plane_point
    for i in range(len(segs)):
        a, b = segs[i, 0], segs[i, 1]  # (p_i, p_{i-1})
        sa = float(np.dot(a - p0, n))
        sb = float(np.dot(b - p0, n))
        if sa == 0.0 and sb == 0.0:
            continue  # segment lies in the plane; treat as non-crossing
        if sa * sb > 0.0:
            continue
        t = sa / (sa - sb)
        point = a + t * (b - a)
        uv = feature.project(point[None, :])
        if points_in_polygon(uv, feature.polygon2d)[0]:
            return i + 1, point
    return 0, None


def progress_reward(body, feature):
    """(r_p, k_int, depth): containment depth, or -distance to the centroid."""
    k_int, point = containment(body, feature)
    if k_int == 0:
        c = feature.plane_point
        r_p = -float(np.linalg.norm(c - body.joint_world[0]))
        return r_p, 0, 0.0
    segs = bone_segments(body)
    depth = float(np.linalg.norm(segs[k_int - 1, 1] - point))
    for i in range(k_int - 1):
        depth += float(np.linalg.norm(segs[i, 0] - segs[i, 1]))
    return depth, k_int, depth


def deformation_penalty(mesh, cloth):
    """(r_d, max_deformation) from the per-triangle area ratio field."""
    d = triangle_deformation(mesh, cloth.positions)
    max_d = float(d.max())
    r_d = float(np.tanh(DEFORM_SCALE * (DEFORM_THRESH - max_d + 2.0)) - 1.0)
    return r_d, max_d


def end_effector_contacts(contacts, hand_capsule):
    return [c for c in contacts if c.body_capsule == hand_capsule]


def geodesic_reward(mesh, cloth, contacts, k_int):
    """Contact-guidance term in [0, 1].

    ``contacts`` must already be filtered to end-effector (hand capsule)
    contacts.  1 while any bone is contained, 0 with no contact and no
    containment, else 1 minus the smallest geodesic value among touched
    vertices.
    """
    if k_int != 0:
        return 1.0
    if not contacts:
        return 0.0
    if mesh.geodesic is None:
        raise UsageError("geodesic field not built")
    touched = np.array(sorted({c.cloth_vertex for c in contacts}), dtype=int)
    return float(1.0 - mesh.geodesic[touched].min())


def upright_reward(body, torso_dofs=(0, 1, 2)):
    q = body.q[list(torso_dofs)]
    return -float(np.dot(q, q))


def total_reward(r_p, r_d, r_g, r_u, k_int=0, containment_depth=0.0,
                 max_deformation=1.0, weights=None):
    w = weights or RewardWeights()
    total = w.progress * r_p + w.deformation * r_d + w.geodesic * r_g + w.upright * r_u
    return RewardBreakdown(
        r_p=r_p, r_d=r_d, r_g=r_g, r_u=r_u, total=total,
        k_int=k_int, containment_depth=containment_depth,
        max_deformation=max_deformation,
    )


def full_reward(mesh, feature, cloth, body, hand_capsule, weights=None,
                torso_dofs=(0, 1, 2)):
    """Evaluate every term on one state and assemble the breakdown."""
    r_p, k_int, depth = progress_reward(body, feature)
    r_d, max_d = deformation_penalty(mesh, cloth)
    hand = end_effector_contacts(cloth.contacts, hand_capsule)
    r_g = geodesic_reward(mesh, cloth, hand, k_int)
    r_u = upright_reward(body, torso_dofs)
    return total_reward(r_p, r_d, r_g, r_u, k_int=k_int, containment_depth=depth,
                        max_deformation=max_d, weights=weights)
