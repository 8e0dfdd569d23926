"""Synthetic Manhattan-like quadric world and noise models.

Randomness comes from one :class:`numpy.random.SeedSequence` per seed, split
into three independent streams: world generation, initial-guess noise and
observation noise.  Changing, say, the number of landmarks therefore does not
shift the initialization noise of the trajectory.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .factors import shape_weight
from .graph import FactorGraph, Observation, Prior
from .quadric import (DEFAULT_TOL, Pose, QuadricError, QuadricState, QuadricType, classify,
                      compose, decompose, normalize, scale_mask, state_from_tuple,
                      to_body_frame, vee)

MAX_REGENERATIONS = 100


@dataclass(frozen=True)
class NoisePreset:
    """Standard deviations; angles in degrees, translations and semi-axes in m."""

    name: str
    rot_robot: float
    trans_robot: float
    rot_quadric: float
    trans_quadric: float
    scale_quadric: float
    obs_rot: float
    obs_trans: float
    obs_scale: float


PRESETS = {
    "0": NoisePreset("0", 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    "L": NoisePreset("L", 1.0, 0.1, 1.0, 0.1, 0.01, 1.0, 0.1, 0.01),
    "M": NoisePreset("M", 5.0, 0.5, 5.0, 0.5, 0.02, 2.0, 0.2, 0.02),
    "H": NoisePreset("H", 50.0, 5.0, 50.0, 5.0, 0.05, 5.0, 0.5, 0.05),
}


def preset(name):
    try:
        return PRESETS[str(name).upper()]
    except KeyError:
        raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class WorldConfig:
    seed: int = 0
    num_landmarks: int = 15
    bounds: tuple = ((-3.0, 3.0), (-3.0, 3.0), (0.0, 1.0))
    num_frames: int = 50
    k_nearest: int = 10
    type_mix: tuple = tuple((t, 1.0) for t in QuadricType)
    radius: float = 4.0
    height: float = 0.5
    yaw_jitter_deg: float = 10.0
    scale_range: tuple = (0.1, 0.5)
    points_per_shape: int = 1000
    prior_information: tuple = (1e6,) * 6

    def validate(self):
        if self.num_landmarks < 1:
            raise ValueError("need at least one landmark")
        if not 1 <= self.k_nearest <= self.num_landmarks:
            raise ValueError(f"k ({self.k_nearest}) exceeds landmark count ({self.num_landmarks})")
        if self.num_frames < 1:
            raise ValueError("need at least one frame")


def rng_streams(seed):
    """Independent generators for (world, init noise, observation noise)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def _axis_aligned_rotations():
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            P = np.zeros((3, 3))
            P[list(perm), range(3)] = signs
            if np.linalg.det(P) > 0:
                out.append(P)
    return out


_AXIS_ALIGNED = _axis_aligned_rotations()


def facing_origin(position):
    """Rotation whose x-axis points from ``position`` to the world origin."""
    x = -np.asarray(position, dtype=float)
    x /= np.linalg.norm(x)
    y = np.cross([0.0, 0.0, 1.0], x)
    if np.linalg.norm(y) < 1e-9:
        y = np.cross([0.0, 1.0, 0.0], x)
    y /= np.linalg.norm(y)
    return np.column_stack([x, y, np.cross(x, y)])


def trajectory(config):
    poses = []
    for k in range(config.num_frames):
        a = 2.0 * np.pi * k / config.num_frames
        t = np.array([config.radius * np.cos(a), config.radius * np.sin(a), config.height])
        poses.append(Pose(facing_origin(t), t))
    return poses


def random_landmark(qtype, config, rng):
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])
    center = rng.uniform(lo, hi)
    base = _AXIS_ALIGNED[rng.integers(len(_AXIS_ALIGNED))]
    yaw = np.deg2rad(rng.uniform(-config.yaw_jitter_deg, config.yaw_jitter_deg))
    R = so3.rot_z(yaw) @ base
    axes = np.sort(rng.uniform(*config.scale_range, size=3))
    mask = scale_mask(qtype).astype(bool)
    # canonical order wants increasing semi-axes over the active slots
    axes[mask] = np.sort(axes[mask])
    return QuadricState.from_semi_axes(qtype, R, center, axes)


def generate_world(config, rng=None):
    """Ground-truth trajectory and landmarks; deterministic in ``config.seed``."""
    config.validate()
    if rng is None:
        rng = rng_streams(config.seed)[0]
    types = [t for t, _ in config.type_mix]
    weights = np.array([w for _, w in config.type_mix], dtype=float)
    weights /= weights.sum()
    landmarks = []
    for _ in range(config.num_landmarks):
        qtype = types[rng.choice(len(types), p=weights)]
        landmarks.append(random_landmark(qtype, config, rng))
    return trajectory(config), landmarks


def observe(pose, landmarks, k):
    """The ``k`` nearest landmarks (by centre distance, ties by index) in the body frame."""
    if k > len(landmarks):
        raise ValueError("k exceeds the number of landmarks")
    dist = np.array([np.linalg.norm(s.translation - pose.translation) for s in landmarks])
    order = np.argsort(dist, kind="stable")[:k]
    return [(int(j), to_body_frame(compose(landmarks[j]), pose)) for j in order]


def _perturb_rotation(R, sigma_deg, rng, mask=None):
    w = rng.normal(scale=np.deg2rad(sigma_deg), size=3)
    if mask is not None:
        w = w * mask
    return R @ so3.exp(w)


def perturb_initialization(poses, landmarks, preset, rng, min_semi_axis=1e-2):
    """Initial guess: every pose and landmark perturbed by the preset's init noise."""
    new_poses = []
    for p in poses:
        R = _perturb_rotation(p.rotation, preset.rot_robot, rng)
        t = p.translation + rng.normal(scale=preset.trans_robot, size=3)
        new_poses.append(Pose(R, t))
    new_landmarks = []
    for s in landmarks:
        R = _perturb_rotation(s.rotation, preset.rot_quadric, rng)
        t = s.translation + rng.normal(scale=preset.trans_quadric, size=3)
        noise = rng.normal(scale=preset.scale_quadric, size=3)
        mask = scale_mask(s.qtype).astype(bool)
        a = np.where(mask, 1.0 / s.inv_scale, 1.0)
        a = np.where(mask, np.maximum(a + noise, min_semi_axis), 1.0)
        new_landmarks.append(QuadricState(s.qtype, R, t, np.where(mask, 1.0 / a, s.inv_scale)))
    return new_poses, new_landmarks


def _rotation_noise_mask(I_R):
    active = np.flatnonzero(I_R)
    if active.size == 3:
        return np.ones(3)
    if active.size == 1:
        mask = np.ones(3)
        mask[active[0]] = 0.0
        return mask
    return np.zeros(3)


def perturb_observation(Q, qtype, preset, rng, tol=DEFAULT_TOL, stats=None):
    """Noisy copy of a body-frame observation, perturbed in the decomposed domain.

    Draws that produce a nonpositive semi-axis or a matrix that no longer
    classifies as ``qtype`` are redrawn; ``stats["regenerated"]`` counts them.
    """
    c = decompose(Q, qtype, tol)
    base = state_from_tuple(c, qtype)
    mask_s = c.I_s.astype(bool)
    a = np.where(mask_s, 1.0 / base.inv_scale, 1.0)
    for attempt in range(MAX_REGENERATIONS):
        R = _perturb_rotation(base.rotation, preset.obs_rot, rng, _rotation_noise_mask(c.I_R))
        dt = rng.normal(scale=preset.obs_trans, size=3) * c.I_t
        t = base.translation + base.rotation @ dt
        a_new = a + rng.normal(scale=preset.obs_scale, size=3) * mask_s
        if np.any(a_new[mask_s] <= 0):
            _count(stats)
            continue
        state = QuadricState.from_semi_axes(qtype, R, t, a_new)
        Qn = normalize(compose(state), qtype, tol)
        try:
            ok = classify(Qn, tol) is qtype
        except QuadricError:
            ok = False
        if ok:
            return Qn
        _count(stats)
    raise QuadricError(f"no valid perturbed {qtype.value.lower()} after {MAX_REGENERATIONS} draws")


def _count(stats):
    if stats is not None:
        stats["regenerated"] = stats.get("regenerated", 0) + 1


def simulate(config, init_preset="L", obs_preset="L"):
    """Noisy graph (initial guess + noisy observations) and its ground truth.

    The ground-truth graph carries the true states and noise-free
    observations; both share the first-pose prior at the true pose.
    """
    config.validate()
    init_p = preset(init_preset) if isinstance(init_preset, str) else init_preset
    obs_p = preset(obs_preset) if isinstance(obs_preset, str) else obs_preset
    world_rng, init_rng, obs_rng = rng_streams(config.seed)
    poses, landmarks = generate_world(config, world_rng)
    weight = shape_weight(config.points_per_shape)
    stats = {"regenerated": 0}
    noisy_obs, true_obs = [], []
    for i, pose in enumerate(poses):
        for j, Q in observe(pose, landmarks, config.k_nearest):
            qtype = landmarks[j].qtype
            Qn = perturb_observation(Q, qtype, obs_p, obs_rng, stats=stats)
            noisy_obs.append(Observation(i, j, vee(Qn), weight))
            true_obs.append(Observation(i, j, vee(normalize(Q, qtype)), weight))
    init_poses, init_landmarks = perturb_initialization(poses, landmarks, init_p, init_rng)
    prior = [Prior(0, poses[0], np.array(config.prior_information, dtype=float))]
    meta = {"seed": str(config.seed), "preset_init": init_p.name, "preset_obs": obs_p.name,
            "regenerated": str(stats["regenerated"])}
    noisy = FactorGraph(init_poses, init_landmarks, noisy_obs, prior, meta=dict(meta))
    truth = FactorGraph(list(poses), list(landmarks), true_obs, list(prior),
                        meta=dict(meta, ground_truth="1"))
    return noisy, truth
