"""Pose-quadric observation factors.

Three residual models are provided:

* decomposed (``D``): 15-d geometric residual built from the constraint tuple
  of an observation (rotation alignment, constraining planes, eigenvalues);
* full (``F``): 10-d algebraic residual on a free quadric vector;
* regularized full (``RF``): same algebraic residual, but the quadric is
  composed from a typed landmark state.

The array-level functions (``*_batch``) take stacked inputs with a leading
observation axis and are what the solver calls; the per-observation wrappers
exist for clarity and testing.
"""

from dataclasses import dataclass

import numpy as np

from . import so3
from .quadric import (DEFAULT_TOL, Pose, QuadricError, QuadricState, _CANONICAL,
                      compose_arrays, decompose, scale_mask, unit_vector, vee, wedge)

RESIDUAL_DIM = 15
POSE_DIM = 6
LANDMARK_DIM = 9
FULL_DIM = 10

_UNIT = np.eye(3)


def shape_weight(point_count):
    if point_count < 0:
        raise ValueError("point count must be nonnegative")
    return float(np.tanh(point_count))


@dataclass(frozen=True)
class DecomposedObservation:
    tuple: object
    omega: np.ndarray

    @property
    def qtype_mask(self):
        return self.tuple.I_s


WEIGHTINGS = ("metric", "unit")


def metric_scaling(eigenvalues):
    """Per-row factors that turn e_t and e_s into meters.

    e_t_i / lambda_i is the distance from the landmark centre to the i-th
    constraining plane, and for a semi-axis a = lambda^(-1/2) a small error
    gives e_s_i ~ 2 lambda_i^(3/2) da.  Rows with lambda_i = 0 are inactive
    anyway and keep a factor of 1.
    """
    lam = np.abs(np.asarray(eigenvalues, dtype=float))
    safe = np.where(lam > 0, lam, 1.0)
    return 1.0 / safe**2, 1.0 / (4.0 * safe**3)


def information_diagonal(c, weight=1.0, info_rot=None, info_trans=None, info_scale=None,
                         weighting="metric"):
    """15-entry diagonal of the information matrix; inactive rows are zero.

    ``info_*`` are the diagonal inverse covariances of rotation (rad),
    translation and scale.  With ``weighting="metric"`` translation and scale
    are expressed in meters (see :func:`metric_scaling`); ``"unit"`` applies
    them to the raw residual rows.
    """
    info_rot = np.ones(3) if info_rot is None else np.asarray(info_rot, dtype=float)
    info_trans = np.ones(3) if info_trans is None else np.asarray(info_trans, dtype=float)
    info_scale = np.ones(3) if info_scale is None else np.asarray(info_scale, dtype=float)
    if weighting == "metric":
        kt, ks = metric_scaling(c.eigenvalues)
        info_trans, info_scale = info_trans * kt, info_scale * ks
    elif weighting != "unit":
        raise ValueError(f"unknown weighting {weighting!r}; choose from {WEIGHTINGS}")
    rot = np.repeat(info_rot * c.I_R, 3)
    return weight * np.concatenate([rot, info_trans * c.I_t, info_scale * c.I_s])


def make_observation(Q_body, qtype, weight=1.0, tol=DEFAULT_TOL, **info):
    c = decompose(Q_body, qtype, tol)
    return DecomposedObservation(c, information_diagonal(c, weight, **info))


@dataclass(frozen=True)
class FactorJacobians:
    J_r: np.ndarray
    J_q: np.ndarray


# ---------------------------------------------------------------------------
# decomposed factor

def decomposed_residual_batch(Rr, tr, Rq, tq, sq, V, lam, l, I_R, I_t, I_s, form="observed"):
    """15-d residual [e_R (row-major 3x3), e_t, e_s].

    ``form`` selects the directions of the constraining planes in e_t:
    ``"observed"`` uses the observed eigenvectors (D V^T dt + V^T l);
    ``"state"`` uses the landmark's own axes R_r^T R_q u_i in their place,
    which is the form whose Jacobian has a landmark-rotation block.
    """
    dR = np.swapaxes(Rr, -1, -2) @ Rq
    # row i of e_R is v_i x (dR u_i)
    e_R = np.cross(np.swapaxes(V, -1, -2), np.swapaxes(dR, -1, -2)) * I_R[..., None]
    d = tq - tr
    if form == "observed":
        dt = np.einsum("...ji,...j->...i", Rr, d)
        e_t = I_t * (lam * np.einsum("...ji,...j->...i", V, dt)
                     + np.einsum("...ji,...j->...i", V, l))
    elif form == "state":
        Rl = np.einsum("...ij,...j->...i", Rr, l)
        e_t = I_t * (lam * np.einsum("...ji,...j->...i", Rq, d)
                     + np.einsum("...ji,...j->...i", Rq, Rl))
    else:
        raise ValueError(f"unknown translation form {form!r}")
    e_s = I_s * (sq**2 - lam)
    return np.concatenate([e_R.reshape(e_R.shape[:-2] + (9,)), e_t, e_s], axis=-1)


def decomposed_jacobians_batch(Rr, tr, Rq, tq, sq, V, lam, l, I_R, I_t, I_s, form="observed"):
    """Analytic Jacobians w.r.t. [w_r, t_r] and [w_q, t_q, s_q].

    Rotations are perturbed on the right (R <- R exp(w)); translations and
    inverse scales additively.
    """
    batch = Rr.shape[:-2]
    J_r = np.zeros(batch + (RESIDUAL_DIM, POSE_DIM))
    J_q = np.zeros(batch + (RESIDUAL_DIM, LANDMARK_DIM))
    dR = np.swapaxes(Rr, -1, -2) @ Rq
    RqT = np.swapaxes(Rq, -1, -2)
    d = tq - tr
    if form == "observed":
        hat_dt = so3.hat(np.einsum("...ji,...j->...i", Rr, d))
        RrV = Rr @ V
    elif form == "state":
        hat_l = so3.hat(l)
        Rl = np.einsum("...ij,...j->...i", Rr, l)
        hat_d = so3.hat(np.einsum("...ij,...j->...i", RqT, d))
        hat_Rl = so3.hat(np.einsum("...ij,...j->...i", RqT, Rl))
        RqT_Rr = RqT @ Rr
    else:
        raise ValueError(f"unknown translation form {form!r}")
    for i in range(3):
        vi = so3.hat(V[..., :, i])
        rows = slice(3 * i, 3 * i + 3)
        mR = I_R[..., i, None, None]
        J_r[..., rows, 0:3] = mR * (vi @ so3.hat(dR[..., :, i]))
        J_q[..., rows, 0:3] = mR * -(vi @ dR @ so3.hat(_UNIT[i]))

        row = 9 + i
        mt = I_t[..., i, None]
        lam_i = lam[..., i, None]
        if form == "observed":
            J_r[..., row, 0:3] = mt * lam_i * np.einsum("...j,...jk->...k", V[..., :, i], hat_dt)
            J_r[..., row, 3:6] = mt * -lam_i * RrV[..., :, i]
            J_q[..., row, 3:6] = mt * lam_i * RrV[..., :, i]
        else:
            J_r[..., row, 0:3] = mt * -np.einsum("...j,...jk->...k", RqT_Rr[..., i, :], hat_l)
            J_r[..., row, 3:6] = mt * -lam_i * RqT[..., i, :]
            J_q[..., row, 0:3] = mt * (lam_i * hat_d[..., i, :] + hat_Rl[..., i, :])
            J_q[..., row, 3:6] = mt * lam_i * RqT[..., i, :]

        J_q[..., 12 + i, 6 + i] = I_s[..., i] * 2.0 * sq[..., i]
    return J_r, J_q


def _tuple_arrays(obs):
    c = obs.tuple
    return (c.V, c.eigenvalues, c.l, c.I_R.astype(float), c.I_t.astype(float),
            c.I_s.astype(float))


def _check_match(landmark, obs):
    if not np.array_equal(scale_mask(landmark.qtype), obs.tuple.I_s):
        raise QuadricError(f"observation indicators do not match a {landmark.qtype.value.lower()}")


def error_decomposed(robot, landmark, obs, form="observed"):
    _check_match(landmark, obs)
    return decomposed_residual_batch(robot.rotation, robot.translation, landmark.rotation,
                                     landmark.translation, landmark.inv_scale,
                                     *_tuple_arrays(obs), form=form)


def analytic_jacobians(robot, landmark, obs, form="observed"):
    _check_match(landmark, obs)
    J_r, J_q = decomposed_jacobians_batch(robot.rotation, robot.translation, landmark.rotation,
                                          landmark.translation, landmark.inv_scale,
                                          *_tuple_arrays(obs), form=form)
    return FactorJacobians(J_r, J_q)


# ---------------------------------------------------------------------------
# algebraic baselines

def _pose_matrices(Rr, tr):
    T = np.zeros(Rr.shape[:-2] + (4, 4))
    T[..., :3, :3] = Rr
    T[..., :3, 3] = tr
    T[..., 3, 3] = 1.0
    return T


def body_vector_batch(Rr, tr, Q_world):
    """Unit, sign-canonical 10-vector of T_r^T Q T_r."""
    T = _pose_matrices(Rr, tr)
    Qb = np.swapaxes(T, -1, -2) @ Q_world @ T
    return unit_vector(vee(Qb, check=False))


def full_residual_batch(Rr, tr, q, q_obs):
    return unit_vector(q_obs) - body_vector_batch(Rr, tr, wedge(q))


def regularized_residual_batch(Rr, tr, Rq, tq, sq, mask, canon, q_obs):
    Q = compose_arrays(Rq, tq, sq, mask, canon)
    return unit_vector(q_obs) - body_vector_batch(Rr, tr, Q)


def error_full(robot, landmark_q, observed_q):
    return full_residual_batch(robot.rotation, robot.translation,
                               np.asarray(landmark_q, dtype=float),
                               np.asarray(observed_q, dtype=float))


def error_regularized(robot, landmark, observed_q):
    return regularized_residual_batch(robot.rotation, robot.translation, landmark.rotation,
                                      landmark.translation, landmark.inv_scale,
                                      scale_mask(landmark.qtype),
                                      np.array(_CANONICAL[landmark.qtype]),
                                      np.asarray(observed_q, dtype=float))


# ---------------------------------------------------------------------------
# finite differences

def _retract_pose(robot, delta):
    return Pose(robot.rotation @ so3.exp(delta[:3]), robot.translation + delta[3:6])


def _retract_landmark(landmark, delta):
    if isinstance(landmark, QuadricState):
        return QuadricState(landmark.qtype, landmark.rotation @ so3.exp(delta[:3]),
                            landmark.translation + delta[3:6], landmark.inv_scale + delta[6:9])
    return np.asarray(landmark, dtype=float) + delta


def numeric_jacobian(error_fn, robot, landmark, step=1e-6):
    """Central differences of ``error_fn(robot, landmark)`` on the manifold.

    ``landmark`` is either a :class:`QuadricState` (9-d tangent) or a raw
    10-vector (additive tangent).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    dim_q = LANDMARK_DIM if isinstance(landmark, QuadricState) else len(landmark)
    e0 = np.asarray(error_fn(robot, landmark))
    J_r = np.zeros((e0.size, POSE_DIM))
    J_q = np.zeros((e0.size, dim_q))
    for k in range(POSE_DIM):
        d = np.zeros(POSE_DIM)
        d[k] = step
        J_r[:, k] = (error_fn(_retract_pose(robot, d), landmark)
                     - error_fn(_retract_pose(robot, -d), landmark)) / (2 * step)
    for k in range(dim_q):
        d = np.zeros(dim_q)
        d[k] = step
        J_q[:, k] = (error_fn(robot, _retract_landmark(landmark, d))
                     - error_fn(robot, _retract_landmark(landmark, -d))) / (2 * step)
    return FactorJacobians(J_r, J_q)


def numeric_jacobian_batch(fn, Rr, tr, lm, step=1e-6):
    """Batched central differences.

    ``lm`` is a tuple ``(Rq, tq, sq)`` for typed landmarks or a single
    ``(K, 10)`` array for free quadric vectors; ``fn(Rr, tr, *lm)`` returns
    ``(K, m)`` residuals.
    """
    typed = isinstance(lm, tuple)
    lm_args = lm if typed else (lm,)
    cols_r, cols_q = [], []
    for k in range(POSE_DIM):
        d = np.zeros(3)
        d[k % 3] = step
        if k < 3:
            plus = fn(Rr @ so3.exp(d), tr, *lm_args)
            minus = fn(Rr @ so3.exp(-d), tr, *lm_args)
        else:
            plus = fn(Rr, tr + d, *lm_args)
            minus = fn(Rr, tr - d, *lm_args)
        cols_r.append((plus - minus) / (2 * step))
    if typed:
        Rq, tq, sq = lm
        for k in range(LANDMARK_DIM):
            d = np.zeros(3)
            d[k % 3] = step
            if k < 3:
                plus = fn(Rr, tr, Rq @ so3.exp(d), tq, sq)
                minus = fn(Rr, tr, Rq @ so3.exp(-d), tq, sq)
            elif k < 6:
                plus = fn(Rr, tr, Rq, tq + d, sq)
                minus = fn(Rr, tr, Rq, tq - d, sq)
            else:
                plus = fn(Rr, tr, Rq, tq, sq + d)
                minus = fn(Rr, tr, Rq, tq, sq - d)
            cols_q.append((plus - minus) / (2 * step))
    else:
        for k in range(lm.shape[-1]):
            d = np.zeros(lm.shape[-1])
            d[k] = step
            cols_q.append((fn(Rr, tr, lm + d) - fn(Rr, tr, lm - d)) / (2 * step))
    return np.stack(cols_r, axis=-1), np.stack(cols_q, axis=-1)
