"""Trajectory and quadric error metrics, and per-cell aggregation."""

from dataclasses import dataclass, field

import numpy as np

from . import so3
from .quadric import DEFAULT_TOL, classify, normalize, unit_vector, vee


def ate(estimated, ground_truth):
    """RMS rotation angle (rad) and RMS translation error (m), no alignment."""
    if len(estimated) != len(ground_truth):
        raise ValueError(f"trajectory lengths differ: {len(estimated)} vs {len(ground_truth)}")
    if not estimated:
        return 0.0, 0.0
    R_est = np.array([p.rotation for p in estimated])
    R_gt = np.array([p.rotation for p in ground_truth])
    t_est = np.array([p.translation for p in estimated])
    t_gt = np.array([p.translation for p in ground_truth])
    angles = so3.angle(np.swapaxes(R_est, 1, 2) @ R_gt)
    rot = float(np.sqrt(np.mean(angles**2)))
    trans = float(np.sqrt(np.mean(np.sum((t_est - t_gt) ** 2, axis=1))))
    return rot, trans


def quadric_vector_error(Q_est, Q_gt, qtype=None, tol=DEFAULT_TOL):
    """Distance between normalized, unit-length quadric vectors.

    ``qtype`` defaults to each matrix's own classification.  The distance is
    taken to the nearer of ``+v`` and ``-v`` so that it stays a metric on
    projective classes even when the sign convention is ill-conditioned.
    """
    t_est = qtype or classify(Q_est, tol)
    t_gt = qtype or classify(Q_gt, tol)
    a = unit_vector(vee(normalize(Q_est, t_est, tol), check=False))
    b = unit_vector(vee(normalize(Q_gt, t_gt, tol), check=False))
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def map_error(estimated_graph, truth_graph):
    """Mean quadric-vector error over landmarks, using the true types."""
    errs = [quadric_vector_error(Qe, Qg, s.qtype)
            for Qe, Qg, s in zip(estimated_graph.landmark_matrices(),
                                 truth_graph.landmark_matrices(), truth_graph.landmarks)]
    return float(np.mean(errs)) if errs else 0.0


@dataclass
class RunReport:
    preset_obs: str
    preset_init: str
    param: str
    seed: int
    ate_rot: float
    ate_trans: float
    quadric_err: float
    cost_trace: list = field(default_factory=list)
    converged: bool = True
    iterations_to_1pct: int = 0

    def __post_init__(self):
        for name in ("ate_rot", "ate_trans", "quadric_err"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def evaluate(estimated_graph, truth_graph, preset_obs="", preset_init="", param="", seed=0,
             report=None):
    rot, trans = ate(estimated_graph.poses, truth_graph.poses)
    return RunReport(preset_obs, preset_init, param, seed, rot, trans,
                     map_error(estimated_graph, truth_graph),
                     cost_trace=list(report.cost_trace) if report else [],
                     converged=report.converged if report else True,
                     iterations_to_1pct=report.iterations_to_within(0.01) if report else 0)


METRIC_FIELDS = ("ate_rot", "ate_trans", "quadric_err")


def aggregate(reports):
    """Mean metrics per (preset_obs, preset_init, param) cell, first-seen order."""
    cells = {}
    for r in reports:
        cells.setdefault((r.preset_obs, r.preset_init, r.param), []).append(r)
    if not cells:
        raise ValueError("no reports to aggregate")
    rows = []
    for (obs, init, param), group in cells.items():
        row = {"preset_obs": obs, "preset_init": init, "param": param, "runs": len(group)}
        for name in METRIC_FIELDS:
            row[name] = float(np.mean([getattr(r, name) for r in group]))
        row["iterations_to_1pct"] = float(np.mean([r.iterations_to_1pct for r in group]))
        rows.append(row)
    return rows
