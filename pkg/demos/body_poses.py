"""Articulated character tour: kinematic chain, actuation, haptic sensor layout.

Run with `python3 demos/body_poses.py`.
"""

import numpy as np

from donning.body import (N_DOF, default_body, forward_kinematics,
                          integrate_action)

model = default_body()
print(f"{N_DOF} degrees of freedom, {int(model.actuated.sum())} actuated "
      f"(torso 3 + right arm 8)")
counts = np.bincount(model.sensor_capsule)
print(f"{counts.sum()} haptic sensors over {len(counts)} capsules: {counts.tolist()} "
      "(largest remainder by length, min 1 each)")

# zero pose: the right arm hangs straight down from the shoulder
state = forward_kinematics(model, np.zeros(N_DOF))
for name, p in zip(("fingertip", "wrist", "elbow", "shoulder"), state.joint_world):
    print(f"  {name:10s} {np.round(p, 3)}")

# raise the arm: shoulder flexion -pi/2 swings the whole chain to +z
q = np.zeros(N_DOF)
q[8] = -np.pi / 2
raised = forward_kinematics(model, q)
print(f"arm raised: fingertip {np.round(raised.joint_world[0], 3)} "
      "(0.74 m in front of the shoulder)")

# velocity-command actuation: a constant command integrates toward the limit
state = forward_kinematics(model, np.zeros(N_DOF))
channel = int(np.flatnonzero(model.actuated).tolist().index(8))
action = np.zeros(11)
action[channel] = 0.5  # shoulder flexion
for k in range(100):
    state = integrate_action(model, state, action, 0.01)
print(f"after 1 s of a 0.5 command: q[8] = {state.q[8]:.3f} rad, "
      f"qdot[8] = {state.qdot[8]:.3f} rad/s (accel 10x, damping 2/s, |qdot| <= 4)")
