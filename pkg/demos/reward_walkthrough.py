"""Reward anatomy on hand-built poses: containment, deformation, guidance, posture.

Every term is computed on geometry small enough to verify by eye.
Run with `python3 demos/reward_walkthrough.py`.
"""

from types import SimpleNamespace

import numpy as np

from donning.body import default_body
from donning.clothsim import ContactRecord
from donning.garment import build_geodesic_field, fit_feature_plane, sleeve_mesh
from donning.rewards import (RewardWeights, containment, deformation_penalty,
                             geodesic_reward, progress_reward, total_reward,
                             upright_reward)

mesh = build_geodesic_field(sleeve_mesh())
feature = fit_feature_plane(mesh, mesh.active_feature)
print(f"opening at {np.round(feature.plane_point, 3)}, "
      f"normal {np.round(feature.plane_normal, 3)}\n")


def chain(*joints):
    """Fingertip-to-shoulder joint chain posed directly in world space."""
    return SimpleNamespace(joint_world=np.asarray(joints, dtype=float),
                           q=np.zeros(22))


# 1. containment: scan bones distal to proximal for the first polygon crossing
inside = chain([0.0, 0.0, 0.12], [0.0, 0.0, -0.08], [0.0, 0.0, -0.3], [0.0, 0.0, -0.6])
r_p, k_int, depth = progress_reward(inside, feature)
print(f"hand through the opening: k_int={k_int}, depth={depth:.3f} m, r_p={r_p:+.3f}")

deeper = chain([0.0, 0.0, 0.3], [0.0, 0.0, 0.1], [0.0, 0.0, -0.2], [0.0, 0.0, -0.5])
r_p, k_int, depth = progress_reward(deeper, feature)
print(f"forearm through:          k_int={k_int}, depth={depth:.3f} m, r_p={r_p:+.3f} "
      "(crossing-to-wrist plus the whole hand bone)")

outside = chain([0.3, 0.2, -0.4], [0.3, 0.2, -0.6], [0.3, 0.2, -0.8], [0.3, 0.2, -1.0])
r_p, k_int, _ = progress_reward(outside, feature)
print(f"arm far away:             k_int={k_int}, r_p={r_p:+.3f} "
      "(minus the fingertip-to-opening distance)\n")

# 2. deformation: tanh barrier on the worst triangle-area ratio
rest = np.array(mesh.vertices)
for max_d in (1.0, 15.0, 17.0, 20.0):
    r_d, measured = deformation_penalty(
        mesh, SimpleNamespace(positions=rest * np.sqrt(max_d)))
    print(f"max area ratio {measured:5.1f} -> r_d = {r_d:+.6f}")
print("(the penalty is flat near rest, crosses -1 at ratio 17, saturates at -2)\n")

# 3. contact guidance: geodesic value of the best end-effector contact
cloth = SimpleNamespace(positions=rest)
rim_vertex = int(mesh.active_feature.vertex_indices[0])
far_vertex = int(np.argmax(mesh.geodesic))
hand = default_body().hand_capsule
for name, v in (("rim", rim_vertex), ("far end", far_vertex)):
    touch = [ContactRecord(cloth_vertex=v, point=rest[v], force=np.zeros(3),
                           body_capsule=hand, sensor_bin=0)]
    r_g = geodesic_reward(mesh, cloth, touch, k_int=0)
    print(f"touching the {name:8s} (g={mesh.geodesic[v]:.2f}) -> r_g = {r_g:.2f}")
print(f"no contact -> r_g = {geodesic_reward(mesh, cloth, [], k_int=0):.2f}, "
      f"contained -> r_g = {geodesic_reward(mesh, cloth, [], k_int=1):.2f}\n")

# 4. posture: quadratic cost on the three torso angles
slouched = SimpleNamespace(q=np.r_[0.2, -0.1, 0.3, np.zeros(19)])
print(f"torso (0.2, -0.1, 0.3) -> r_u = {upright_reward(slouched):+.3f}")

# 5. the weighted sum: 5 r_p + 6 r_d + 2 r_g + 1 r_u
w = RewardWeights()
print(f"weights: progress {w.progress}, deformation {w.deformation}, "
      f"geodesic {w.geodesic}, upright {w.upright}")
print(f"total for (r_p=0.3, r_d=-0.1, r_g=1, r_u=-0.05): "
      f"{total_reward(0.3, -0.1, 1.0, -0.05).total:+.3f}")
