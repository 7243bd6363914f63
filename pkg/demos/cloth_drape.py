"""Drop the sleeve onto the raised arm and watch the contact bookkeeping.

The tube starts loosely around the horizontal arm, falls under gravity, and
settles on the capsules.  Prints the contact census every 0.2 s and exports
the motion as a frame file.  Run with `python3 demos/cloth_drape.py`.
"""

import tempfile
from pathlib import Path

import numpy as np

from donning.body import default_body, forward_kinematics
from donning.clothsim import (bin_contacts, read_frames, rest_cloth, step_cloth,
                              surface_sign, write_frames)
from donning.garment import sleeve_mesh

mesh = sleeve_mesh()
rest = np.array(mesh.vertices)

model = default_body()
q = np.zeros(22)
q[8] = -np.pi / 2  # arm forward, along the tube axis
body = forward_kinematics(model, q)

# tube around the forearm; pin the four highest vertices so it cannot slide off
cloth = rest_cloth(mesh, pin_ids=np.argsort(rest[:, 1])[-4:])
cloth.positions = rest + np.array([0.19, 0.43, 0.10])
cloth.prev_positions = cloth.positions.copy()
targets = cloth.positions[cloth.pin_ids].copy()

frames = [cloth.positions.copy()]
for k in range(120):
    cloth = step_cloth(mesh, cloth, body, targets, 0.01)
    if (k + 1) % 20 == 0:
        forces = bin_contacts(cloth.contacts, body)
        sides = surface_sign(cloth.contacts, mesh, cloth, body)
        print(f"t={0.01 * (k + 1):.1f}s  contacts {len(cloth.contacts):3d}  "
              f"total |force| {np.linalg.norm(forces.sum(axis=0)):7.3f} N  "
              f"sensors touched {int(np.count_nonzero(sides))}/22")
        frames.append(cloth.positions.copy())

drop = rest[:, 1].mean() + 0.43 - cloth.positions[:, 1].mean()
print(f"cloth settled {drop:.3f} m below its start height")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "drape.frames"
    write_frames(path, frames)
    back = read_frames(path)
    print(f"exported {len(back)} frames of {back[0].shape[0]} vertices "
          f"({path.stat().st_size} bytes, float32)")
