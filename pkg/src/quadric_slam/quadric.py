"""Quadric matrix algebra for the six supported primitives.

A quadric is the zero set of ``x^T Q x`` with ``x`` homogeneous and ``Q`` a
symmetric 4x4 matrix.  The upper-left 3x3 block is called ``E``, the upper
right column ``l`` and the bottom-right scalar ``k``.

Landmark states store *inverse* semi-axis lengths (``inv_scale``); anything
that faces a user (files, reports) uses semi-axes in meters.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


class QuadricError(ValueError):
    pass


class Unclassifiable(QuadricError):
    """Eigenvalue pattern does not match any supported primitive."""


class DegenerateGradient(QuadricError):
    """Implicit-function gradient vanishes at the query point."""


class QuadricType(enum.Enum):
    POINT = "POINT"
    LINE = "LINE"
    PLANE = "PLANE"
    CYLINDER = "CYLINDER"
    CONE = "CONE"
    ELLIPSOID = "ELLIPSOID"

    @classmethod
    def parse(cls, name):
        try:
            return cls[name.upper()]
        except KeyError:
            raise QuadricError(f"unknown quadric type {name!r}") from None


_CANONICAL = {
    QuadricType.POINT: (1.0, 1.0, 1.0, 0.0),
    QuadricType.LINE: (1.0, 1.0, 0.0, 0.0),
    QuadricType.PLANE: (1.0, 0.0, 0.0, 0.0),
    QuadricType.CYLINDER: (1.0, 1.0, 0.0, -1.0),
    QuadricType.CONE: (1.0, 1.0, -1.0, 0.0),
    QuadricType.ELLIPSOID: (1.0, 1.0, 1.0, -1.0),
}

_SCALE_MASK = {
    QuadricType.POINT: (0, 0, 0),
    QuadricType.LINE: (0, 0, 0),
    QuadricType.PLANE: (0, 0, 0),
    QuadricType.CYLINDER: (1, 1, 0),
    QuadricType.CONE: (1, 1, 0),
    QuadricType.ELLIPSOID: (1, 1, 1),
}

# inertia (positive, negative, zero) of E and of Q, after the sign of Q is
# fixed so that E has at least as many positive as negative eigenvalues
_INERTIA = {
    ((3, 0, 0), (3, 1, 0)): QuadricType.ELLIPSOID,
    ((3, 0, 0), (3, 0, 1)): QuadricType.POINT,
    ((2, 0, 1), (2, 1, 1)): QuadricType.CYLINDER,
    ((2, 0, 1), (2, 0, 2)): QuadricType.LINE,
    ((2, 1, 0), (2, 1, 1)): QuadricType.CONE,
    ((1, 0, 2), (1, 0, 3)): QuadricType.PLANE,
}


def canonical_matrix(qtype):
    return np.diag(_CANONICAL[qtype])


def scale_mask(qtype):
    return np.array(_SCALE_MASK[qtype], dtype=int)


@dataclass(frozen=True)
class ToleranceConfig:
    """Relative thresholds, both scaled by the largest |eigenvalue| of E."""

    zero_rel: float = 1e-8
    equal_rel: float = 1e-6


DEFAULT_TOL = ToleranceConfig()


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def is_valid(self, tol=1e-10):
        R = self.rotation
        return (np.allclose(R.T @ R, np.eye(3), atol=tol)
                and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True)
class QuadricState:
    qtype: QuadricType
    rotation: np.ndarray
    translation: np.ndarray
    inv_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "inv_scale", np.array(self.inv_scale, dtype=float).reshape(3))

    @classmethod
    def from_semi_axes(cls, qtype, rotation, translation, semi_axes):
        mask = scale_mask(qtype).astype(bool)
        a = np.asarray(semi_axes, dtype=float)
        s = np.ones(3)
        s[mask] = 1.0 / a[mask]
        return cls(qtype, rotation, translation, s)

    @property
    def semi_axes(self):
        """Semi-axis lengths; inactive axes are reported as 0."""
        mask = scale_mask(self.qtype).astype(bool)
        return np.where(mask, 1.0 / self.inv_scale, 0.0)

    @property
    def pose(self):
        return Pose(self.rotation, self.translation)


@dataclass(frozen=True)
class ConstraintTuple:
    I_R: np.ndarray
    I_t: np.ndarray
    I_s: np.ndarray
    V: np.ndarray
    eigenvalues: np.ndarray
    l: np.ndarray


# ---------------------------------------------------------------------------
# 10-vector <-> matrix

_IDX = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3), (3, 3)]
_ROWS = np.array([i for i, _ in _IDX])
_COLS = np.array([j for _, j in _IDX])


def wedge(q):
    """10-vector (A..J) to symmetric 4x4 matrix; broadcasts over leading dims."""
    q = np.asarray(q, dtype=float)
    Q = np.zeros(q.shape[:-1] + (4, 4))
    Q[..., _ROWS, _COLS] = q
    Q[..., _COLS, _ROWS] = q
    return Q


def vee(Q, check=True):
    Q = np.asarray(Q, dtype=float)
    if check and np.max(np.abs(Q - np.swapaxes(Q, -1, -2)), initial=0.0) > 1e-9:
        raise QuadricError("quadric matrix is not symmetric")
    return Q[..., _ROWS, _COLS].copy()


def symmetrize(Q):
    return 0.5 * (Q + np.swapaxes(Q, -1, -2))


def blocks(Q):
    Q = np.asarray(Q, dtype=float)
    return Q[:3, :3], Q[:3, 3], Q[3, 3]


def unit_vector(q, sign_tol=1e-9):
    """Scale a 10-vector to unit norm, first non-negligible entry positive."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    big = np.abs(q) > sign_tol
    first = np.argmax(big, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return q * np.where(lead < 0, -1.0, 1.0)


# ---------------------------------------------------------------------------
# composition and transforms

def compose(state):
    """Q = T^-T S^T C S T^-1 for a landmark state."""
    R, t, s = state.rotation, state.translation, state.inv_scale
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
        raise QuadricError("non-finite quadric state")
    return compose_arrays(R, t, s, scale_mask(state.qtype), np.array(_CANONICAL[state.qtype]))


def compose_arrays(R, t, s, mask, canon):
    """Batched composition; ``mask`` and ``canon`` broadcast against the batch.

    Uses the closed block form: E = R D R^T, l = -E t, k = t^T E t + d.
    """
    s_eff = np.where(np.asarray(mask) > 0, s, 1.0)
    canon = np.asarray(canon, dtype=float)
    D = canon[..., :3] * s_eff**2
    d = canon[..., 3]
    E = np.einsum("...ij,...j,...kj->...ik", R, D, R)
    E = 0.5 * (E + np.swapaxes(E, -1, -2))
    l = -np.einsum("...ij,...j->...i", E, t)
    k = np.einsum("...i,...i->...", t, -l) + d
    shape = np.broadcast_shapes(E.shape[:-2], np.shape(k))
    Q = np.zeros(shape + (4, 4))
    Q[..., :3, :3] = E
    Q[..., :3, 3] = l
    Q[..., 3, :3] = l
    Q[..., 3, 3] = k
    return Q


def transform(Q, T):
    """Express Q after moving it by the rigid transform T: T^-T Q T^-1."""
    Ti = T.inverse().matrix() if isinstance(T, Pose) else np.linalg.inv(T)
    return symmetrize(Ti.T @ Q @ Ti)


def to_body_frame(Q_world, robot):
    """Quadric seen from a robot whose pose (body to world) is ``robot``."""
    T = robot.matrix()
    return symmetrize(T.T @ Q_world @ T)


# ---------------------------------------------------------------------------
# eigen analysis

def _inertia(w, tol_abs):
    return (int(np.sum(w > tol_abs)), int(np.sum(w < -tol_abs)),
            int(np.sum(np.abs(w) <= tol_abs)))


def _sign_fix(Q, tol=DEFAULT_TOL):
    wE = np.linalg.eigvalsh(Q[:3, :3])
    ref = np.max(np.abs(wE))
    pos, neg, _ = _inertia(wE, tol.zero_rel * ref)
    return -Q if neg > pos else Q


def normalize(Q, qtype, tol=DEFAULT_TOL):
    """Remove the projective scale of Q so E carries the metric eigenvalues.

    Ellipsoids and cylinders use the pseudo-determinant ratio of E and Q.
    Cones pin the negative eigenvalue of E to -1.  Points, lines and planes
    (whose canonical constant term is 0, so the ratio is not invariant to
    translation) pin the mean nonzero eigenvalue of E to 1.
    """
    Q = symmetrize(np.asarray(Q, dtype=float))
    wE = np.linalg.eigvalsh(Q[:3, :3])
    if np.max(np.abs(wE)) == 0.0:
        raise QuadricError("E block is identically zero")
    Q = _sign_fix(Q, tol)
    wE = np.linalg.eigvalsh(Q[:3, :3])
    canon = np.array(_CANONICAL[qtype])
    rank_E = int(np.count_nonzero(canon[:3]))
    by_mag = np.sort(np.abs(wE))[::-1]
    if qtype in (QuadricType.ELLIPSOID, QuadricType.CYLINDER):
        rank_Q = int(np.count_nonzero(canon))
        wQ = np.sort(np.abs(np.linalg.eigvalsh(Q)))[::-1]
        scale = abs(np.prod(by_mag[:rank_E]) / np.prod(wQ[:rank_Q]))
    elif qtype is QuadricType.CONE:
        scale = 1.0 / abs(wE.min())
    else:
        scale = 1.0 / np.mean(by_mag[:rank_E])
    return scale * Q


def classify(Q, tol=DEFAULT_TOL):
    Q = symmetrize(np.asarray(Q, dtype=float))
    if not np.any(Q):
        raise Unclassifiable("zero matrix")
    Q = _sign_fix(Q, tol)
    wE = np.linalg.eigvalsh(Q[:3, :3])
    wQ = np.linalg.eigvalsh(Q)
    refE = np.max(np.abs(wE))
    if refE == 0.0:
        raise Unclassifiable("E block is zero")
    key = (_inertia(wE, tol.zero_rel * refE),
           _inertia(wQ, tol.zero_rel * np.max(np.abs(wQ))))
    try:
        return _INERTIA[key]
    except KeyError:
        raise Unclassifiable(f"eigenvalue pattern {key} is not a supported primitive") from None


def degeneration_indicators(eigenvalues, tol=DEFAULT_TOL):
    """Rotation and translation activation masks from ordered eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float)
    ref = np.max(np.abs(lam))
    if ref == 0.0:
        return np.zeros(3, dtype=int), np.zeros(3, dtype=int)
    I_t = (np.abs(lam) > tol.zero_rel * ref).astype(int)
    eq = tol.equal_rel * ref
    e01 = bool(abs(lam[0] - lam[1]) <= eq)
    e12 = bool(abs(lam[1] - lam[2]) <= eq)
    e02 = bool(abs(lam[0] - lam[2]) <= eq)
    n_eq = int(e01) + int(e12) + int(e02)
    if n_eq == 0:
        I_R = np.ones(3, dtype=int)
    elif n_eq == 1:
        I_R = np.zeros(3, dtype=int)
        I_R[2 if e01 else 0 if e12 else 1] = 1
    else:
        I_R = np.zeros(3, dtype=int)
    return I_R, I_t


def _ordered_eigen(E, qtype, tol):
    """Eigen-decompose E with eigenvalues placed in the canonical slots."""
    w, U = np.linalg.eigh(E)
    ref = np.max(np.abs(w))
    zero = np.abs(w) <= tol.zero_rel * ref
    pos = (w > 0) & ~zero
    neg = (w < 0) & ~zero
    canon = np.array(_CANONICAL[qtype][:3])
    if (pos.sum(), neg.sum(), zero.sum()) != (np.sum(canon > 0), np.sum(canon < 0), np.sum(canon == 0)):
        raise Unclassifiable(f"eigenvalues {w} do not match a {qtype.value.lower()}")
    order = np.empty(3, dtype=int)
    for slot_sel, eig_sel in ((canon > 0, pos), (canon < 0, neg), (canon == 0, zero)):
        idx = np.flatnonzero(eig_sel)
        idx = idx[np.argsort(-np.abs(w[idx]), kind="stable")]
        order[np.flatnonzero(slot_sel)] = idx
    return w[order], U[:, order]


def _canonical_basis(V, I_R):
    """Replace the arbitrary basis of a repeated eigenspace by a canonical one.

    With all eigenvalues equal V becomes the identity.  With one distinct
    axis, the first free column is the world axis least aligned with it,
    projected onto its orthogonal plane; the second completes the frame.
    """
    distinct = np.flatnonzero(I_R)
    if distinct.size == 3:
        return V
    if distinct.size == 0:
        return np.eye(3)
    V = V.copy()
    k = distinct[0]
    i, j = [c for c in range(3) if c != k]
    axis = V[:, k]
    e = np.eye(3)[np.argmin(np.abs(axis))]
    u = e - (e @ axis) * axis
    V[:, i] = u / np.linalg.norm(u)
    V[:, j] = np.cross(axis, V[:, i])
    return V


def _canonical_signs(V, I_R):
    V = V.copy()
    for i in range(3):
        j = np.argmax(np.abs(V[:, i]))
        if V[j, i] < 0:
            V[:, i] = -V[:, i]
    if np.linalg.det(V) < 0:
        free = np.flatnonzero(I_R == 0)
        col = free[-1] if free.size else 2
        V[:, col] = -V[:, col]
    return V


def decompose(Q, qtype, tol=DEFAULT_TOL):
    """Constraint tuple (I_R, I_t, I_s, V, eigenvalues, l) of an observation."""
    Qn = normalize(Q, qtype, tol)
    E, l, _ = blocks(Qn)
    lam, V = _ordered_eigen(E, qtype, tol)
    I_R, I_t = degeneration_indicators(lam, tol)
    V = _canonical_signs(_canonical_basis(V, I_R), I_R)
    return ConstraintTuple(I_R=I_R, I_t=I_t, I_s=scale_mask(qtype), V=V,
                           eigenvalues=lam, l=l.copy())


def recover_scale(Q, qtype=None, tol=DEFAULT_TOL):
    """Semi-axes ``sqrt(|1/lambda|)`` and a mask that is 0 on zero eigenvalues.

    With ``qtype`` the axes follow the canonical slot order used by
    :func:`decompose`; without it nonzero eigenvalues come first, by
    decreasing magnitude (so semi-axes are increasing).
    """
    E = np.asarray(Q, dtype=float)[:3, :3]
    if qtype is not None:
        lam = decompose(Q, qtype, tol).eigenvalues
    else:
        lam = np.linalg.eigvalsh(symmetrize(E))
        lam = lam[np.argsort(-np.abs(lam), kind="stable")]
    ref = np.max(np.abs(lam))
    mask = (np.abs(lam) > tol.zero_rel * ref).astype(int)
    axes = np.zeros(3)
    axes[mask > 0] = np.sqrt(np.abs(1.0 / lam[mask > 0]))
    return axes, mask


def recover_state(Q, qtype, tol=DEFAULT_TOL):
    """Landmark state consistent with Q; unconstrained components are chosen
    canonically (minimum-norm centre, eigenvector frame, unit scale)."""
    c = decompose(Q, qtype, tol)
    return state_from_tuple(c, qtype)


def state_from_tuple(c, qtype):
    lam = c.eigenvalues
    active = c.I_t > 0
    t = -c.V[:, active] @ ((c.V[:, active].T @ c.l) / lam[active])
    s = np.ones(3)
    s[c.I_s > 0] = np.sqrt(np.abs(lam[c.I_s > 0]))
    return QuadricState(qtype, c.V, t, s)


def taubin_distance(point, Q):
    """First-order distance |f(x)| / ||grad f(x)|| from a point to the surface."""
    Q = np.asarray(Q, dtype=float)
    p = np.asarray(point, dtype=float)
    x = np.append(p, 1.0)
    E, l, _ = blocks(Q)
    grad = 2.0 * (E @ p + l)
    g = np.linalg.norm(grad)
    if g < 1e-12:
        raise DegenerateGradient(f"gradient vanishes at {p}")
    return abs(x @ Q @ x) / g


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()
