"""Quadric landmarks for factor-graph SLAM.

Quadrics represent points, lines, planes, ellipsoids, cylinders and cones
with one symmetric 4x4 matrix.  The decomposed observation factor turns an
observed quadric into explicit rotation, translation and scale constraints;
two algebraic baselines (full and regularized-full) are included for
comparison, together with a synthetic benchmark.
"""

from .quadric import (DEFAULT_TOL, ConstraintTuple, DegenerateGradient, Pose, QuadricError,
                      QuadricState, QuadricType, ToleranceConfig, Unclassifiable,
                      canonical_matrix, classify, compose, decompose, degeneration_indicators,
                      normalize, recover_scale, recover_state, scale_mask, taubin_distance,
                      to_body_frame, transform, vee, wedge)
from .factors import (analytic_jacobians, error_decomposed, error_full, error_regularized,
                      information_diagonal, make_observation, numeric_jacobian, shape_weight)
from .graph import (FactorGraph, FactorizationFailed, NoProgress, Observation, Prior, Problem,
                    SolveReport, SolverConfig, SolverError, dense_normal_equations, linearize,
                    lm_step, optimize, retract, total_cost)
from .sim import (PRESETS, NoisePreset, WorldConfig, generate_world, observe,
                  perturb_initialization, perturb_observation, preset, simulate)
from .metrics import RunReport, aggregate, ate, evaluate, quadric_vector_error
from .io import GraphFormatError, parse_graph, read_graph, serialize_graph, write_graph

__version__ = "0.1.0"
