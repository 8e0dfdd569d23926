"""Line-oriented text format for factor graphs.

Records (whitespace separated, ``#`` starts a comment, any order)::

    POSE <id> <tx> <ty> <tz> <qw> <qx> <qy> <qz>
    QUADRIC <id> <TYPE> <tx> <ty> <tz> <qw> <qx> <qy> <qz> <a> <b> <c>
    OBS <pose_id> <quadric_id> <A..J> <weight>
    PRIOR <pose_id> <tx> <ty> <tz> <qw> <qx> <qy> <qz> <6 information entries>
    META key=value

Floats are written with 17 significant digits so every double survives a
round trip.  Quaternions are w-first.  Poses and landmarks read from a file
remember the exact numbers they were read from, so writing an untouched
graph back out reproduces the input byte for byte even though the
quaternion/matrix conversion is not bit-exact.
"""

import numpy as np

from . import so3
from .graph import FactorGraph, Observation, Prior
from .quadric import Pose, QuadricState, QuadricType, scale_mask

QUAT_TOL = 1e-6
QVEC_PREFIX = "qvec."
_DISK = "_disk_values"


class GraphFormatError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def fmt(x):
    return "%.17g" % float(x)


def _join(values):
    return " ".join(fmt(v) for v in values)


def _remember(obj, values):
    object.__setattr__(obj, _DISK, tuple(values))
    return obj


def _pose_numbers(pose):
    cached = getattr(pose, _DISK, None)
    if cached is not None:
        return cached
    return tuple(pose.translation) + tuple(so3.to_quaternion(pose.rotation))


def _landmark_numbers(state):
    cached = getattr(state, _DISK, None)
    if cached is not None:
        return cached
    return (tuple(state.translation) + tuple(so3.to_quaternion(state.rotation))
            + tuple(state.semi_axes))


def serialize_graph(graph):
    lines = []
    for i, p in enumerate(graph.poses):
        lines.append(f"POSE {i} {_join(_pose_numbers(p))}")
    for j, s in enumerate(graph.landmarks):
        lines.append(f"QUADRIC {j} {s.qtype.value} {_join(_landmark_numbers(s))}")
    for o in graph.observations:
        lines.append(f"OBS {o.pose} {o.landmark} {_join(o.q)} {fmt(o.weight)}")
    for p in graph.priors:
        lines.append(f"PRIOR {p.pose_index} {_join(_pose_numbers(p.pose))} "
                     f"{_join(p.information)}")
    meta = dict(graph.meta)
    if graph.quadric_vectors is not None:
        for j, q in enumerate(graph.quadric_vectors):
            meta[f"{QVEC_PREFIX}{j}"] = ",".join(fmt(v) for v in q)
    for key in meta:
        lines.append(f"META {key}={meta[key]}")
    return "\n".join(lines) + "\n" if lines else ""


def _floats(tokens, n, lineno, what):
    if len(tokens) != n:
        raise GraphFormatError(lineno, f"{what} expects {n} numbers, got {len(tokens)}")
    try:
        vals = [float(t) for t in tokens]
    except ValueError as err:
        raise GraphFormatError(lineno, f"bad number in {what}: {err}") from None
    if not np.all(np.isfinite(vals)):
        raise GraphFormatError(lineno, f"non-finite value in {what}")
    return vals


def _index(token, lineno):
    try:
        i = int(token)
    except ValueError:
        raise GraphFormatError(lineno, f"bad id {token!r}") from None
    if i < 0:
        raise GraphFormatError(lineno, f"negative id {i}")
    return i


def _pose(vals, lineno):
    t, q = np.array(vals[:3]), np.array(vals[3:7])
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise GraphFormatError(lineno, f"quaternion norm {np.linalg.norm(q):.9g} is not 1")
    return _remember(Pose(so3.from_quaternion(q / np.linalg.norm(q)), t), vals[:7])


def _dense(records, kind):
    ids = sorted(records)
    if ids != list(range(len(ids))):
        raise GraphFormatError(0, f"{kind} ids must be dense from 0")
    return [records[i] for i in ids]


def parse_graph(text):
    poses, landmarks, observations, priors, meta = {}, {}, [], [], {}
    qvecs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *tok = line.split()
        if kind == "POSE":
            if not tok:
                raise GraphFormatError(lineno, "POSE needs an id")
            i = _index(tok[0], lineno)
            if i in poses:
                raise GraphFormatError(lineno, f"duplicate pose id {i}")
            poses[i] = _pose(_floats(tok[1:], 7, lineno, "POSE"), lineno)
        elif kind == "QUADRIC":
            if len(tok) < 2:
                raise GraphFormatError(lineno, "QUADRIC needs an id and a type")
            j = _index(tok[0], lineno)
            if j in landmarks:
                raise GraphFormatError(lineno, f"duplicate quadric id {j}")
            try:
                qtype = QuadricType.parse(tok[1])
            except ValueError:
                raise GraphFormatError(lineno, f"unknown quadric type {tok[1]!r}") from None
            vals = _floats(tok[2:], 10, lineno, "QUADRIC")
            pose = _pose(vals[:7], lineno)
            axes = np.array(vals[7:])
            mask = scale_mask(qtype).astype(bool)
            if np.any(axes[mask] <= 0):
                raise GraphFormatError(lineno, "active semi-axes must be positive")
            state = QuadricState.from_semi_axes(qtype, pose.rotation, pose.translation, axes)
            landmarks[j] = _remember(state, vals)
        elif kind == "OBS":
            if len(tok) != 13:
                raise GraphFormatError(lineno, f"OBS expects 13 fields, got {len(tok)}")
            vals = _floats(tok[2:], 11, lineno, "OBS")
            observations.append(Observation(_index(tok[0], lineno), _index(tok[1], lineno),
                                            np.array(vals[:10]), vals[10]))
        elif kind == "PRIOR":
            if not tok:
                raise GraphFormatError(lineno, "PRIOR needs a pose id")
            vals = _floats(tok[1:], 13, lineno, "PRIOR")
            info = np.array(vals[7:])
            if np.any(info < 0):
                raise GraphFormatError(lineno, "prior information must be nonnegative")
            priors.append(Prior(_index(tok[0], lineno), _pose(vals[:7], lineno), info))
        elif kind == "META":
            body = line[len("META"):].strip()
            if "=" not in body:
                raise GraphFormatError(lineno, "META expects key=value")
            key, value = body.split("=", 1)
            if key.startswith(QVEC_PREFIX):
                qvecs[_index(key[len(QVEC_PREFIX):], lineno)] = _floats(
                    value.split(","), 10, lineno, key)
            else:
                meta[key] = value
        else:
            raise GraphFormatError(lineno, f"unknown record {kind!r}")
    graph = FactorGraph(_dense(poses, "POSE"), _dense(landmarks, "QUADRIC"), observations,
                        priors, meta=meta)
    if qvecs:
        if sorted(qvecs) != list(range(len(graph.landmarks))):
            raise GraphFormatError(0, "quadric vectors must cover every landmark")
        graph.quadric_vectors = [np.array(qvecs[j]) for j in range(len(qvecs))]
    try:
        graph.validate(require_prior=False)
    except (ValueError, RuntimeError) as err:
        raise GraphFormatError(0, str(err)) from None
    return graph


def write_graph(path, graph):
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(serialize_graph(graph))


def read_graph(path):
    with open(path, encoding="ascii") as f:
        return parse_graph(f.read())
