"""Quaternion and camera-pose geometry.

Conventions used throughout the package:

- Quaternions are float64 arrays ``[w, x, y, z]`` (scalar part first).
- The canonical representative of a rotation has ``w >= 0`` (``q`` and
  ``-q`` encode the same rotation; :func:`canonicalize` picks one).
- Log-quaternions are 3-vectors, rotation axis scaled by the half-angle
  in radians.
- A camera pose is ``(q, t)``: ``q`` rotates camera coordinates into
  world coordinates and ``t`` is the camera position in world
  coordinates. World points map into the camera frame as
  ``p_cam = R(q)^-1 (p_world - t)`` (see ``scenes.observe``).
- Pose vectors are rotation-first: ``[q, t]`` (7 entries) in quaternion
  mode, ``[log q, t]`` (6 entries) in log-quaternion mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MODE_QUAT = "quat"
MODE_LOGQ = "logq"
MODES = (MODE_QUAT, MODE_LOGQ)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class NearZeroQuaternion(ValueError):
    """Raw quaternion too close to zero to normalize (degenerate output)."""


def rotation_dim(mode: str) -> int:
    _check_mode(mode)
    return 4 if mode == MODE_QUAT else 3


def pose_dim(mode: str) -> int:
    return rotation_dim(mode) + 3


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown parameterization mode {mode!r}, expected one of {MODES}")


def normalize(q_raw: np.ndarray) -> np.ndarray:
    """Scale a raw 4-vector onto the unit sphere.

    Raises :class:`NearZeroQuaternion` when the norm is at or below 1e-12;
    callers that need a total function substitute the identity and log.
    """
    q_raw = np.asarray(q_raw, dtype=np.float64)
    n = float(np.linalg.norm(q_raw))
    if n <= 1e-12:
        raise NearZeroQuaternion(f"quaternion norm {n:.3e} <= 1e-12")
    return q_raw / n


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip sign so the scalar part is non-negative."""
    q = np.asarray(q, dtype=np.float64)
    return -q if q[0] < 0.0 else q


def quat_log(q: np.ndarray) -> np.ndarray:
    """Logarithm of a unit quaternion: axis scaled by half-angle.

    The angle is evaluated as atan2(|u|, w), which equals arccos(w) on the
    unit sphere but stays accurate near the identity where arccos loses all
    precision. Inputs with |u| ~ 0 fall back to the first-order limit u.
    """
    q = np.asarray(q, dtype=np.float64)
    w = float(np.clip(q[0], -1.0, 1.0))
    u = q[1:]
    un = float(np.linalg.norm(u))
    if un < 1e-12:
        return u.copy()
    return u * (math.atan2(un, w) / un)


def quat_exp(v: np.ndarray) -> np.ndarray:
    """Recover the unit quaternion from a log-quaternion 3-vector."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < 1e-8:
        # first-order limit [1, v], renormalized
        q = np.concatenate(([1.0], v))
        return q / float(np.linalg.norm(q))
    return np.concatenate(([math.cos(n)], v * (math.sin(n) / n)))


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate((q[:1], -q[1:]))


def rotate_vector(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Apply the rotation R(q) to one point (3,) or a stack (n, 3)."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    w, u = q[0], q[1:]
    uxp = np.cross(u, p)
    return p + 2.0 * (w * uxp + np.cross(u, uxp))


def tangent_project(q: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Project a 4-vector onto the tangent space of the unit sphere at q."""
    q = np.asarray(q, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    return grad - float(np.dot(grad, q)) * q


def tangent_project_literal(grad: np.ndarray) -> np.ndarray:
    """Alternative update direction (I - g g^T) g = g (1 - |g|^2).

    Not a tangent projection at the base point; kept behind a config switch
    for comparison runs.
    """
    grad = np.asarray(grad, dtype=np.float64)
    return grad * (1.0 - float(np.dot(grad, grad)))


def geodesic_step(q: np.ndarray, v: np.ndarray, step: float) -> np.ndarray:
    """Move from q along tangent direction v by arc length |v|*step.

    Requires q unit and v orthogonal to q. The result is renormalized so
    chained updates never drift off the sphere. For |v| -> 0 the closed form
    is 0/0; the first-order step q + v*step is used instead.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    gamma = float(np.linalg.norm(v))
    if gamma < 1e-10:
        out = q + v * step
    else:
        ang = gamma * step
        out = q * math.cos(ang) + v * (math.sin(ang) / gamma)
    return out / float(np.linalg.norm(out))


def rotation_error_deg(q1: np.ndarray, q2: np.ndarray) -> float:
    """Angular distance between two unit quaternions in degrees.

    Sign-flip invariant: uses |<q1, q2>|.
    """
    d = abs(float(np.dot(q1, q2)))
    return math.degrees(2.0 * math.acos(min(1.0, d)))


def translation_error(t1: np.ndarray, t2: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64)))


def random_unit_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation, canonical representative."""
    q = rng.normal(size=4)
    return canonicalize(normalize(q))


@dataclass
class Pose:
    """Camera pose: unit quaternion q (canonical storage) and translation t."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)

    def rotation_vector(self, mode: str) -> np.ndarray:
        """The rotation part as the mode's network-facing vector."""
        _check_mode(mode)
        return self.q.copy() if mode == MODE_QUAT else quat_log(self.q)

    def as_vector(self, mode: str) -> np.ndarray:
        return np.concatenate((self.rotation_vector(mode), self.t))


def pose_from_vector(vec: np.ndarray, mode: str) -> Pose:
    """Inverse of Pose.as_vector; the quaternion part is normalized."""
    vec = np.asarray(vec, dtype=np.float64)
    k = rotation_dim(mode)
    if vec.shape != (k + 3,):
        raise ValueError(f"pose vector for mode {mode!r} must have length {k + 3}, got {vec.shape}")
    if mode == MODE_QUAT:
        return Pose(normalize(vec[:4]), vec[4:])
    return Pose(quat_exp(vec[:3]), vec[3:])
