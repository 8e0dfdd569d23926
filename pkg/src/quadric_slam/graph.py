"""Factor graph container and a Levenberg-Marquardt solver.

Variables are ordered poses first, landmarks second.  A pose contributes a
6-d tangent block ``[w, t]``; a typed landmark a 9-d block ``[w, t, s]``; a
free quadric vector (full parameterization) a 10-d additive block.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse

from . import so3
from .factors import (POSE_DIM, LANDMARK_DIM, FULL_DIM, decomposed_jacobians_batch,
                      decomposed_residual_batch, full_residual_batch, information_diagonal,
                      numeric_jacobian_batch, regularized_residual_batch)
from .quadric import (DEFAULT_TOL, Pose, QuadricState, _CANONICAL, compose, decompose,
                      scale_mask, unit_vector, vee, wedge)

PARAMETERIZATIONS = ("D", "F", "RF")
MIN_INV_SCALE = 1e-6


class SolverError(RuntimeError):
    pass


class FactorizationFailed(SolverError):
    pass


class NoProgress(SolverError):
    def __init__(self, message, graph=None, report=None):
        super().__init__(message)
        self.graph = graph
        self.report = report


@dataclass(frozen=True)
class Observation:
    pose: int
    landmark: int
    q: np.ndarray       # raw 10-vector of the quadric in the robot frame
    weight: float = 1.0


@dataclass(frozen=True)
class Prior:
    pose_index: int
    pose: Pose
    information: np.ndarray = field(default_factory=lambda: np.full(6, 1e6))


@dataclass
class FactorGraph:
    poses: list
    landmarks: list
    observations: list = field(default_factory=list)
    priors: list = field(default_factory=list)
    # free quadric vectors, only set by a full-parameterization solve
    quadric_vectors: list = None
    meta: dict = field(default_factory=dict)

    def validate(self, require_prior=True):
        n, m = len(self.poses), len(self.landmarks)
        for k, o in enumerate(self.observations):
            if not (0 <= o.pose < n and 0 <= o.landmark < m):
                raise SolverError(f"observation {k} references a missing variable")
        for p in self.priors:
            if not 0 <= p.pose_index < n:
                raise SolverError("prior references a missing pose")
        if require_prior and not self.priors:
            raise SolverError("graph needs at least one prior to fix the gauge")

    def state_dim(self, param="D"):
        dq = FULL_DIM if param == "F" else LANDMARK_DIM
        return POSE_DIM * len(self.poses) + dq * len(self.landmarks)

    def landmark_matrices(self):
        """World-frame quadric matrix of every landmark estimate."""
        if self.quadric_vectors is not None:
            return [wedge(q) for q in self.quadric_vectors]
        return [compose(s) for s in self.landmarks]


@dataclass
class SolverConfig:
    max_iters: int = 100
    cost_tol: float = 1e-9
    delta_tol: float = 1e-10
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_min: float = 1e-6
    max_rejections: int = 25


@dataclass
class SolveReport:
    iterations: int = 0
    cost_trace: list = field(default_factory=list)   # (iteration, cost, lambda, accepted)
    converged: bool = False
    final_lambda: float = 0.0

    @property
    def final_cost(self):
        return self.cost_trace[-1][1]

    def iterations_to_within(self, fraction=0.01):
        """First iteration whose cost is within ``fraction`` of the final cost."""
        final = self.final_cost
        for it, cost, _, _ in self.cost_trace:
            if cost <= final * (1.0 + fraction) + 1e-300:
                return it
        return self.cost_trace[-1][0]


# ---------------------------------------------------------------------------
# packed state

@dataclass
class State:
    pose_R: np.ndarray
    pose_t: np.ndarray
    lm_R: np.ndarray = None
    lm_t: np.ndarray = None
    lm_s: np.ndarray = None
    lm_q: np.ndarray = None

    def copy(self):
        return State(*(None if a is None else a.copy() for a in
                       (self.pose_R, self.pose_t, self.lm_R, self.lm_t, self.lm_s, self.lm_q)))


class Problem:
    """Graph packed into arrays for one parameterization."""

    def __init__(self, graph, param="D", tol=DEFAULT_TOL, form="observed", weighting="metric"):
        if param not in PARAMETERIZATIONS:
            raise ValueError(f"unknown parameterization {param!r}")
        graph.validate(require_prior=False)
        self.graph = graph
        self.param = param
        self.form = form
        self.weighting = weighting
        self.n_poses = len(graph.poses)
        self.n_landmarks = len(graph.landmarks)
        self.lm_dim = FULL_DIM if param == "F" else LANDMARK_DIM
        self.dim = POSE_DIM * self.n_poses + self.lm_dim * self.n_landmarks
        obs = graph.observations
        self.pi = np.array([o.pose for o in obs], dtype=int)
        self.li = np.array([o.landmark for o in obs], dtype=int)
        types = [s.qtype for s in graph.landmarks]
        self.masks = np.array([scale_mask(t) for t in types], dtype=float).reshape(-1, 3)
        self.canon = np.array([_CANONICAL[t] for t in types], dtype=float).reshape(-1, 4)
        weights = np.array([o.weight for o in obs], dtype=float)
        if param == "D":
            tuples = []
            for k, o in enumerate(obs):
                try:
                    tuples.append(decompose(wedge(o.q), types[o.landmark], tol))
                except ValueError as err:
                    raise SolverError(f"observation {k}: {err}") from err
            self.V = np.array([c.V for c in tuples]).reshape(-1, 3, 3)
            self.lam = np.array([c.eigenvalues for c in tuples]).reshape(-1, 3)
            self.l = np.array([c.l for c in tuples]).reshape(-1, 3)
            self.I_R = np.array([c.I_R for c in tuples], dtype=float).reshape(-1, 3)
            self.I_t = np.array([c.I_t for c in tuples], dtype=float).reshape(-1, 3)
            self.I_s = np.array([c.I_s for c in tuples], dtype=float).reshape(-1, 3)
            self.omega = np.array([information_diagonal(c, w, weighting=weighting)
                                   for c, w in zip(tuples, weights)])
            self.omega = self.omega.reshape(-1, 15)
        else:
            self.q_obs = np.array([o.q for o in obs], dtype=float).reshape(-1, 10)
            self.omega = np.repeat(weights[:, None], 10, axis=1)
        self.priors = graph.priors

    # -- state packing ------------------------------------------------------
    def pack(self, graph=None):
        g = self.graph if graph is None else graph
        st = State(np.array([p.rotation for p in g.poses]).reshape(-1, 3, 3),
                   np.array([p.translation for p in g.poses]).reshape(-1, 3))
        if self.param == "F":
            if g.quadric_vectors is not None:
                q = np.array(g.quadric_vectors, dtype=float)
            else:
                q = np.array([vee(compose(s)) for s in g.landmarks])
            st.lm_q = unit_vector(q.reshape(-1, 10))
        else:
            st.lm_R = np.array([s.rotation for s in g.landmarks]).reshape(-1, 3, 3)
            st.lm_t = np.array([s.translation for s in g.landmarks]).reshape(-1, 3)
            st.lm_s = np.array([s.inv_scale for s in g.landmarks]).reshape(-1, 3)
        return st

    def unpack(self, st):
        g = self.graph
        poses = [Pose(R, t) for R, t in zip(st.pose_R, st.pose_t)]
        if self.param == "F":
            return replace(g, poses=poses, quadric_vectors=[q.copy() for q in st.lm_q])
        landmarks = [QuadricState(s.qtype, R, t, sc)
                     for s, R, t, sc in zip(g.landmarks, st.lm_R, st.lm_t, st.lm_s)]
        return replace(g, poses=poses, landmarks=landmarks, quadric_vectors=None)

    # -- residuals ------------------------------------------------------------
    def _gather(self, st):
        Rr, tr = st.pose_R[self.pi], st.pose_t[self.pi]
        if self.param == "F":
            return Rr, tr, st.lm_q[self.li]
        return Rr, tr, (st.lm_R[self.li], st.lm_t[self.li], st.lm_s[self.li])

    def residuals(self, st):
        Rr, tr, lm = self._gather(st)
        if self.param == "D":
            return decomposed_residual_batch(Rr, tr, *lm, self.V, self.lam, self.l,
                                             self.I_R, self.I_t, self.I_s, self.form)
        if self.param == "F":
            return full_residual_batch(Rr, tr, lm, self.q_obs)
        return regularized_residual_batch(Rr, tr, *lm, self.masks[self.li],
                                          self.canon[self.li], self.q_obs)

    def jacobians(self, st, step=1e-6):
        Rr, tr, lm = self._gather(st)
        if self.param == "D":
            return decomposed_jacobians_batch(Rr, tr, *lm, self.V, self.lam, self.l,
                                              self.I_R, self.I_t, self.I_s, self.form)
        if self.param == "F":
            return numeric_jacobian_batch(
                lambda a, b, q: full_residual_batch(a, b, q, self.q_obs), Rr, tr, lm, step)
        masks, canon = self.masks[self.li], self.canon[self.li]
        return numeric_jacobian_batch(
            lambda a, b, R, t, s: regularized_residual_batch(a, b, R, t, s, masks, canon,
                                                             self.q_obs), Rr, tr, lm, step)

    def prior_terms(self, st):
        """Residuals and Jacobians (w.r.t. the pose tangent) of every prior."""
        out = []
        for p in self.priors:
            R, t = st.pose_R[p.pose_index], st.pose_t[p.pose_index]
            phi = so3.log(p.pose.rotation.T @ R)
            e = np.concatenate([phi, t - p.pose.translation])
            J = np.zeros((6, 6))
            J[:3, :3] = so3.right_jacobian_inv(phi)
            J[3:, 3:] = np.eye(3)
            out.append((p.pose_index, e, J, np.asarray(p.information, dtype=float)))
        return out

    def cost(self, st):
        e = self.residuals(st)
        f = float(np.sum(self.omega * e * e))
        for _, ep, _, info in self.prior_terms(st):
            f += float(ep @ (info * ep))
        return f

    # -- update ---------------------------------------------------------------
    def retract(self, st, delta):
        new = st.copy()
        n = self.n_poses
        dp = delta[:POSE_DIM * n].reshape(n, POSE_DIM)
        new.pose_R = st.pose_R @ so3.exp(dp[:, :3])
        new.pose_t = st.pose_t + dp[:, 3:]
        dl = delta[POSE_DIM * n:].reshape(self.n_landmarks, self.lm_dim)
        if self.param == "F":
            q = st.lm_q + dl
            new.lm_q = q / np.linalg.norm(q, axis=1, keepdims=True)
        else:
            new.lm_R = st.lm_R @ so3.exp(dl[:, :3])
            new.lm_t = st.lm_t + dl[:, 3:6]
            s = st.lm_s + dl[:, 6:9]
            new.lm_s = np.where(self.masks > 0, np.maximum(s, MIN_INV_SCALE), s)
        return new

    def pose_offset(self, i):
        return POSE_DIM * i

    def landmark_offset(self, j):
        return POSE_DIM * self.n_poses + self.lm_dim * j


# ---------------------------------------------------------------------------
# normal equations

@dataclass
class NormalEquations:
    dim: int
    pose_dim: int
    lm_dim: int
    n_poses: int
    pose_blocks: np.ndarray      # (N, 6, 6)
    landmark_blocks: np.ndarray  # (M, d, d)
    pairs: np.ndarray            # (P, 2) distinct (pose, landmark) index pairs
    pair_blocks: np.ndarray      # (P, 6, d), the pose-row / landmark-column block
    prior_blocks: list           # [(pose_index, 6x6)]
    b: np.ndarray
    pose_seen: np.ndarray
    landmark_seen: np.ndarray

    def _lo(self, j):
        return self.pose_dim * self.n_poses + self.lm_dim * j

    def block_count(self):
        """Stored nonzero blocks: diagonals, both off-diagonal halves, priors."""
        return (int(self.pose_seen.sum()) + int(self.landmark_seen.sum())
                + 2 * len(self.pairs) + len(self.prior_blocks))

    def _blocks(self):
        """(row offset, column offset, block) for every stored block."""
        pd = self.pose_dim
        for i in np.flatnonzero(self.pose_seen):
            yield pd * i, pd * i, self.pose_blocks[i]
        for j in np.flatnonzero(self.landmark_seen):
            yield self._lo(j), self._lo(j), self.landmark_blocks[j]
        for (i, j), B in zip(self.pairs, self.pair_blocks):
            yield pd * i, self._lo(j), B
            yield self._lo(j), pd * i, B.T
        for i, B in self.prior_blocks:
            yield pd * i, pd * i, B

    def to_sparse(self):
        rows, cols, vals = [], [], []
        for r0, c0, B in self._blocks():
            r, c = np.indices(B.shape)
            rows.append((r + r0).ravel())
            cols.append((c + c0).ravel())
            vals.append(B.ravel())
        if not rows:
            return scipy.sparse.csr_matrix((self.dim, self.dim))
        return scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, self.dim)).tocsr()

    def to_dense(self):
        # cached: the damping loop re-solves the same system many times
        if getattr(self, "_dense", None) is None:
            H = np.zeros((self.dim, self.dim))
            for r0, c0, B in self._blocks():
                H[r0:r0 + B.shape[0], c0:c0 + B.shape[1]] += B
            self._dense = H
        return self._dense


def linearize(problem, st):
    e = problem.residuals(st)
    J_r, J_q = problem.jacobians(st)
    if not (np.all(np.isfinite(J_r)) and np.all(np.isfinite(J_q))):
        bad = np.flatnonzero(~(np.isfinite(J_r).all(axis=(1, 2)) & np.isfinite(J_q).all(axis=(1, 2))))
        raise SolverError(f"non-finite Jacobian in observation {int(bad[0])}")
    W = problem.omega
    JrW = np.swapaxes(J_r, 1, 2) * W[:, None, :]
    JqW = np.swapaxes(J_q, 1, 2) * W[:, None, :]
    n, m, d = problem.n_poses, problem.n_landmarks, problem.lm_dim

    pose_blocks = np.zeros((n, POSE_DIM, POSE_DIM))
    landmark_blocks = np.zeros((m, d, d))
    np.add.at(pose_blocks, problem.pi, JrW @ J_r)
    np.add.at(landmark_blocks, problem.li, JqW @ J_q)
    pair_id = problem.pi * max(m, 1) + problem.li
    uniq, inverse = np.unique(pair_id, return_inverse=True)
    pair_blocks = np.zeros((len(uniq), POSE_DIM, d))
    np.add.at(pair_blocks, inverse, JrW @ J_q)
    pairs = np.stack([uniq // max(m, 1), uniq % max(m, 1)], axis=1) if len(uniq) else np.zeros((0, 2), int)

    b = np.zeros(problem.dim)
    b_pose = np.zeros((n, POSE_DIM))
    b_lm = np.zeros((m, d))
    np.add.at(b_pose, problem.pi, np.einsum("kij,kj->ki", JrW, e))
    np.add.at(b_lm, problem.li, np.einsum("kij,kj->ki", JqW, e))
    prior_blocks = []
    for i, ep, J, info in problem.prior_terms(st):
        JtW = J.T * info
        prior_blocks.append((i, JtW @ J))
        b_pose[i] += JtW @ ep
    b[:POSE_DIM * n] = b_pose.ravel()
    b[POSE_DIM * n:] = b_lm.ravel()

    pose_seen = np.zeros(n, dtype=bool)
    pose_seen[problem.pi] = True
    lm_seen = np.zeros(m, dtype=bool)
    lm_seen[problem.li] = True
    return NormalEquations(problem.dim, POSE_DIM, d, n, pose_blocks, landmark_blocks, pairs,
                           pair_blocks, prior_blocks, b, pose_seen, lm_seen)


def dense_normal_equations(problem, st):
    """Reference assembly: full stacked Jacobian, J^T W J and J^T W e."""
    e = problem.residuals(st)
    J_r, J_q = problem.jacobians(st)
    rows = e.shape[1]
    K = len(e)
    priors = problem.prior_terms(st)
    J = np.zeros((K * rows + 6 * len(priors), problem.dim))
    r = np.zeros(J.shape[0])
    w = np.zeros(J.shape[0])
    for k in range(K):
        sl = slice(k * rows, (k + 1) * rows)
        po = problem.pose_offset(problem.pi[k])
        lo = problem.landmark_offset(problem.li[k])
        J[sl, po:po + POSE_DIM] = J_r[k]
        J[sl, lo:lo + problem.lm_dim] = J_q[k]
        r[sl] = e[k]
        w[sl] = problem.omega[k]
    for p, (i, ep, Jp, info) in enumerate(priors):
        sl = slice(K * rows + 6 * p, K * rows + 6 * (p + 1))
        po = problem.pose_offset(i)
        J[sl, po:po + POSE_DIM] = Jp
        r[sl] = ep
        w[sl] = info
    return J.T @ (w[:, None] * J), J.T @ (w * r)


def lm_step(neq, damping):
    """Solve (H + damping I) delta = -b by Cholesky factorization."""
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    H = neq.to_dense() if isinstance(neq, NormalEquations) else np.asarray(neq[0], dtype=float)
    b = neq.b if isinstance(neq, NormalEquations) else np.asarray(neq[1], dtype=float)
    A = H + damping * np.eye(len(b))
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as err:
        raise FactorizationFailed(str(err)) from err
    return -scipy.linalg.cho_solve(factor, b)


def total_cost(graph, param="D", tol=DEFAULT_TOL):
    problem = Problem(graph, param, tol)
    return problem.cost(problem.pack())


def retract(graph, delta, param="D"):
    problem = Problem(graph, param)
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (problem.dim,):
        raise ValueError(f"update has shape {delta.shape}, expected ({problem.dim},)")
    return problem.unpack(problem.retract(problem.pack(), delta))


def optimize(graph, param="D", config=None, tol=DEFAULT_TOL, problem=None):
    """Levenberg-Marquardt with accept/reject damping control.

    Returns the optimized graph and a :class:`SolveReport`.  The cost trace
    has one row per outer iteration (row 0 is the initial cost); rejected
    trials carry the cost from before the trial.
    """
    config = config or SolverConfig()
    graph.validate(require_prior=True)
    problem = problem or Problem(graph, param, tol)
    st = problem.pack()
    cost = problem.cost(st)
    lam = config.lambda0
    report = SolveReport(cost_trace=[(0, cost, lam, True)])
    rejections = 0
    neq = None
    for it in range(1, config.max_iters + 1):
        report.iterations = it
        if neq is None:
            neq = linearize(problem, st)
        try:
            delta = lm_step(neq, lam)
        except FactorizationFailed:
            lam *= config.lambda_up
            rejections += 1
            report.cost_trace.append((it, cost, lam, False))
            continue
        # a tiny step only means convergence when it is not the product of
        # damping inflated by rejected trials
        if rejections == 0 and np.linalg.norm(delta) < config.delta_tol:
            report.cost_trace.append((it, cost, lam, False))
            report.converged = True
            break
        trial = problem.retract(st, delta)
        new_cost = problem.cost(trial)
        if np.isfinite(new_cost) and new_cost < cost:
            rel = (cost - new_cost) / cost
            st, cost, neq = trial, new_cost, None
            lam = max(lam / config.lambda_down, config.lambda_min)
            rejections = 0
            report.cost_trace.append((it, cost, lam, True))
            if rel < config.cost_tol:
                report.converged = True
                break
        else:
            lam *= config.lambda_up
            rejections += 1
            report.cost_trace.append((it, cost, lam, False))
            if rejections >= config.max_rejections:
                report.final_lambda = lam
                raise NoProgress(f"{rejections} consecutive rejected steps",
                                 problem.unpack(st), report)
    report.final_lambda = lam
    return problem.unpack(st), report
