"""Small SO(3) toolbox.

All functions broadcast over leading batch dimensions, so ``hat`` accepts
``(..., 3)`` and returns ``(..., 3, 3)`` and so on.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def hat(w):
    w = np.asarray(w, dtype=float)
    S = np.zeros(w.shape[:-1] + (3, 3))
    S[..., 0, 1] = -w[..., 2]
    S[..., 0, 2] = w[..., 1]
    S[..., 1, 0] = w[..., 2]
    S[..., 1, 2] = -w[..., 0]
    S[..., 2, 0] = -w[..., 1]
    S[..., 2, 1] = w[..., 0]
    return S


def vee(S):
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def exp(w):
    """Rodrigues formula, exact for any angle."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = hat(w)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * (K @ K)


def log(R):
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    w = Rotation.from_matrix(flat).as_rotvec()
    return w.reshape(R.shape[:-2] + (3,))


def right_jacobian_inv(w):
    """Inverse right Jacobian of SO(3), used for prior factors."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = hat(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def angle(R):
    """Geodesic rotation angle, arccos((tr R - 1) / 2).

    Evaluated as atan2(sin, cos) with the sine taken from the skew part, which
    stays accurate near 0 where arccos loses half the digits.
    """
    R = np.asarray(R, dtype=float)
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    skew = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0],
                     R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    s = 0.5 * np.linalg.norm(skew, axis=-1)
    return np.arctan2(s, c)


def from_quaternion(q):
    """Rotation matrix from a w-first unit quaternion."""
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def to_quaternion(R):
    """w-first unit quaternion with w >= 0."""
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0:
        q = -q
    return q


def rot_x(a):
    return exp(np.array([a, 0.0, 0.0]))


def rot_y(a):
    return exp(np.array([0.0, a, 0.0]))


def rot_z(a):
    return exp(np.array([0.0, 0.0, a]))


def project_to_rotation(M):
    """Closest proper rotation to M in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt
