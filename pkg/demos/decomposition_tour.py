"""
Degeneracy of the six quadric primitives
========================================

Each primitive is composed from a typed state, observed from a robot, and
split into its constraint tuple.  The indicator masks say which rotation
axes, constraining planes and semi-axes an observation can pin down.
"""

import numpy as np

from quadric_slam import Pose, QuadricState, QuadricType, compose, decompose, so3, to_body_frame
from quadric_slam.quadric import taubin_distance

rng = np.random.default_rng(0)
robot = Pose(so3.rot_z(0.4), [-3.0, 0.5, 0.2])

# one landmark of every type, sharing a pose but not a shape
R = so3.exp([0.1, -0.2, 0.3])
t = np.array([1.0, 0.5, 0.3])
axes = np.array([0.3, 0.5, 0.8])

print(f"{'type':10s} {'I_R':9s} {'I_t':9s} {'I_s':9s} eigenvalues")
for qtype in QuadricType:
    state = QuadricState.from_semi_axes(qtype, R, t, axes)
    c = decompose(to_body_frame(compose(state), robot), qtype)
    print(f"{qtype.value:10s} {str(c.I_R):9s} {str(c.I_t):9s} {str(c.I_s):9s} "
          f"{np.array2string(c.eigenvalues, precision=3)}")

# the constraining planes hold the centre, seen from the robot
state = QuadricState.from_semi_axes(QuadricType.CYLINDER, R, t, axes)
c = decompose(to_body_frame(compose(state), robot), QuadricType.CYLINDER)
t_body = robot.rotation.T @ (t - robot.translation)
print("\ncylinder plane residuals at the true centre:",
      c.I_t * (c.eigenvalues * (c.V.T @ t_body) + c.V.T @ c.l))

# sliding the centre along the axis leaves every active plane satisfied
slid = t_body + 0.7 * (robot.rotation.T @ R[:, 2])
print("after sliding 0.7 m along the axis:         ",
      c.I_t * (c.eigenvalues * (c.V.T @ slid) + c.V.T @ c.l))

# Taubin distance: first-order distance from a point to the surface
sphere = np.diag([1, 1, 1, -1.0])
for p in ([1, 0, 0], [1.1, 0, 0], [2, 0, 0]):
    print(f"Taubin distance from {p} to the unit sphere: {taubin_distance(p, sphere):.4f}")
